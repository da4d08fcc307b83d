// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "plab/finite_diff.hpp"
#include "plab/model.hpp"

using namespace plab;
using namespace plab::model;

namespace {

using Mat = std::vector<std::vector<double>>;

// Reference scorer: plain-loop reimplementation for single-head configs,
// sharing no code with the graph path. Returns per-step target log-probs.
struct RefScorer {
    const ModelConfig& cfg;
    const ParamSet<double>& P;

    Mat mat(const std::string& name) const {
        const auto& t = P.at(name);
        Mat out(static_cast<std::size_t>(t.shape[0]),
                std::vector<double>(static_cast<std::size_t>(t.shape[1])));
        for (int r = 0; r < t.shape[0]; ++r)
            for (int c = 0; c < t.shape[1]; ++c) out[r][c] = t.at(r, c);
        return out;
    }

    static Mat mul(const Mat& a, const Mat& b) {
        Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j)
                for (std::size_t k = 0; k < b[0].size(); ++k) out[i][k] += a[i][j] * b[j][k];
        return out;
    }

    static void add_inplace(Mat& a, const Mat& b) {
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < a[0].size(); ++j) a[i][j] += b[i][j];
    }

    Mat layer_norm(const Mat& x, const std::string& base) const {
        const auto& g = P.at(base + ".g").data;
        const auto& b = P.at(base + ".b").data;
        Mat out = x;
        for (auto& row : out) {
            double mu = 0.0;
            for (const double v : row) mu += v;
            mu /= static_cast<double>(row.size());
            double var = 0.0;
            for (const double v : row) var += (v - mu) * (v - mu);
            var /= static_cast<double>(row.size());
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            for (std::size_t c = 0; c < row.size(); ++c)
                row[c] = (row[c] - mu) * inv * g[c] + b[c];
        }
        return out;
    }

    Mat attention(const Mat& q_in, const Mat& kv_in, const std::string& base, bool causal) const {
        const Mat q = mul(q_in, mat(base + ".wq"));
        const Mat k = mul(kv_in, mat(base + ".wk"));
        const Mat v = mul(kv_in, mat(base + ".wv"));
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
        Mat weights(q.size(), std::vector<double>(k.size(), 0.0));
        for (std::size_t i = 0; i < q.size(); ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < k.size(); ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < q[0].size(); ++c) s += q[i][c] * k[j][c];
                s *= scale;
                if (causal && j > i) s = -1e30;
                weights[i][j] = s;
                mx = std::max(mx, s);
            }
            double total = 0.0;
            for (auto& w : weights[i]) {
                w = std::exp(w - mx);
                total += w;
            }
            for (auto& w : weights[i]) w /= total;
        }
        return mul(mul(weights, v), mat(base + ".wo"));
    }

    Mat feed_forward(const Mat& x, const std::string& base) const {
        Mat h = mul(x, mat(base + ".w1"));
        const auto& b1 = P.at(base + ".b1").data;
        for (auto& row : h)
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::tanh(row[c] + b1[c]);
        Mat out = mul(h, mat(base + ".w2"));
        const auto& b2 = P.at(base + ".b2").data;
        for (auto& row : out)
            for (std::size_t c = 0; c < row.size(); ++c) row[c] += b2[c];
        return out;
    }

    Mat embed(const std::vector<int>& ids, const std::string& pos_name) const {
        const auto& tok = P.at("tok_emb");
        const auto& pos = P.at(pos_name);
        Mat out(ids.size(), std::vector<double>(static_cast<std::size_t>(cfg.embed_dim)));
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (int c = 0; c < cfg.embed_dim; ++c)
                out[i][c] = tok.at(ids[i], c) + pos.at(static_cast<int>(i), c);
        return out;
    }

    std::vector<double> per_step_logprobs(const std::vector<int>& src,
                                          const std::vector<int>& tgt) const {
        Mat x = embed(src, "pos_src");
        for (int i = 0; i < cfg.num_layers; ++i) {
            const std::string p = "enc" + std::to_string(i) + ".";
            const Mat n1 = layer_norm(x, p + "ln1");
            add_inplace(x, attention(n1, n1, p + "attn", false));
            add_inplace(x, feed_forward(layer_norm(x, p + "ln2"), p + "ff"));
        }
        x = layer_norm(x, "enc.lnf");

        std::vector<int> dec_in(tgt.size());
        dec_in[0] = 0;
        for (std::size_t i = 1; i < tgt.size(); ++i) dec_in[i] = tgt[i - 1];
        Mat y = embed(dec_in, "pos_tgt");
        for (int i = 0; i < cfg.num_layers; ++i) {
            const std::string p = "dec" + std::to_string(i) + ".";
            const Mat n1 = layer_norm(y, p + "ln1");
            add_inplace(y, attention(n1, n1, p + "self", true));
            add_inplace(y, attention(layer_norm(y, p + "ln2"), x, p + "cross", false));
            add_inplace(y, feed_forward(layer_norm(y, p + "ln3"), p + "ff"));
        }
        y = layer_norm(y, "dec.lnf");
        const Mat logits = mul(y, mat("out_proj"));

        std::vector<double> out(tgt.size());
        for (std::size_t t = 0; t < tgt.size(); ++t) {
            double mx = logits[t][0];
            for (const double v : logits[t]) mx = std::max(mx, v);
            double lse = 0.0;
            for (const double v : logits[t]) lse += std::exp(v - mx);
            lse = mx + std::log(lse);
            out[t] = logits[t][static_cast<std::size_t>(tgt[t])] - lse;
        }
        return out;
    }
};

ModelConfig tiny_config(PromptDepth depth = PromptDepth::none) {
    ModelConfig c;
    c.vocab_size = 6;
    c.embed_dim = 4;
    c.num_layers = 1;
    c.num_heads = 1;
    c.max_source_len = 10;
    c.max_target_len = 4;
    c.prompt_len = 2;
    c.ff_mult = 2;
    c.prompt_depth = depth;
    return c;
}

}  // namespace

TEST_CASE("parameter initialization is deterministic") {
    ModelConfig c;
    c.prompt_depth = PromptDepth::shallow;
    const auto a = init_params<float>(c, 42);
    const auto b = init_params<float>(c, 42);
    CHECK(bitwise_equal(a, b));
    const auto other = init_params<float>(c, 43);
    CHECK_FALSE(bitwise_equal(a, other));
}

TEST_CASE("prompt mask covers exactly the prompt coordinates") {
    SECTION("no prompt -> all-zero mask") {
        ModelConfig c;
        c.prompt_depth = PromptDepth::none;
        const auto params = init_params<double>(c, 1);
        const auto mask = prompt_mask(params);
        double total = 0.0;
        for (const auto& [name, t] : mask)
            for (const double v : t.data) total += v;
        CHECK(total == 0.0);
    }
    SECTION("shallow L=20 d=8 -> 160 prompt entries") {
        ModelConfig c;
        c.prompt_depth = PromptDepth::shallow;
        c.embed_dim = 8;
        c.num_heads = 2;
        c.prompt_len = 20;
        const auto params = init_params<double>(c, 1);
        CHECK(params.at("prompt.embed").numel() == 160);
        const auto mask = prompt_mask(params);
        double on_prompt = 0.0, elsewhere = 0.0;
        for (const auto& [name, t] : mask)
            for (const double v : t.data)
                (model::detail::is_prompt_param(name) ? on_prompt : elsewhere) += v;
        CHECK(on_prompt == 160.0);
        CHECK(elsewhere == 0.0);
    }
    SECTION("deep covers one prefix per layer per side") {
        ModelConfig c;
        c.prompt_depth = PromptDepth::deep;
        const auto params = init_params<double>(c, 1);
        const auto mask = prompt_mask(params);
        double total = 0.0;
        for (const auto& [name, t] : mask)
            for (const double v : t.data) total += v;
        CHECK(total == static_cast<double>(2 * c.num_layers * c.prompt_len * c.embed_dim));
    }
}

TEST_CASE("embedded source length and prompt rows") {
    ModelConfig c;
    c.prompt_depth = PromptDepth::shallow;
    const auto params = init_params<double>(c, 3);
    const std::vector<int> src{5, 6, 7, 8, 9};

    SECTION("shallow prepends L rows") {
        const auto emb = embed_source(c, params, src);
        REQUIRE(emb.shape == Shape{25, c.embed_dim});
        const auto& prompt = params.at("prompt.embed");
        for (int r = 0; r < c.prompt_len; ++r)
            for (int col = 0; col < c.embed_dim; ++col)
                CHECK(emb.at(r, col) == prompt.at(r, col));
    }
    SECTION("no prompt keeps token length") {
        ModelConfig plain = c;
        plain.prompt_depth = PromptDepth::none;
        const auto emb = embed_source(plain, init_params<double>(plain, 3), src);
        CHECK(emb.shape == Shape{5, plain.embed_dim});
    }
    SECTION("out-of-vocabulary token names the position") {
        CHECK_THROWS_WITH(embed_source(c, params, {5, 99, 7}), Catch::Contains("position 1"));
    }
}

TEST_CASE("score_pair degenerate and determinism cases") {
    SECTION("vocabulary of one: log-score is exactly zero") {
        ModelConfig c = tiny_config();
        c.vocab_size = 1;
        const auto params = init_params<double>(c, 5);
        CHECK(score_pair(c, params, {0, 0}, {0}) == 0.0);
    }
    SECTION("identical calls give identical scores") {
        const auto c = tiny_config(PromptDepth::deep);
        const auto params = init_params<double>(c, 5);
        const auto a = score_pair(c, params, {1, 2, 3}, {4, 5});
        const auto b = score_pair(c, params, {1, 2, 3}, {4, 5});
        CHECK(a == b);
    }
    SECTION("mean-normalized scores are log-probabilities, never positive") {
        const auto c = tiny_config(PromptDepth::shallow);
        const auto params = init_params<double>(c, 6);
        for (const auto scored : score_example(c, params, {{1, 2}, {{3}, {4, 4}, {5}}, 1, "", "", ""}))
            CHECK(scored.log_score <= 0.0);
    }
    SECTION("sequence overflow fails") {
        const auto c = tiny_config();
        const auto params = init_params<double>(c, 5);
        const std::vector<int> long_src(static_cast<std::size_t>(c.max_source_len) + 1, 1);
        CHECK_THROWS_WITH(score_pair(c, params, long_src, {1}), Catch::Contains("exceeds"));
    }
}

TEST_CASE("score_pair matches the hand-rolled per-step trace") {
    for (const std::uint64_t seed : {11u, 12u, 13u}) {
        ModelConfig c = tiny_config();
        c.vocab_size = 2;  // two-token vocabulary
        const auto params = init_params<double>(c, seed);
        const RefScorer ref{c, params};

        const std::vector<int> src{1, 0, 1};
        const auto steps1 = ref.per_step_logprobs(src, {1});
        const auto steps2 = ref.per_step_logprobs(src, {1, 1});

        CHECK(score_pair(c, params, src, {1}) == Approx(steps1[0]).epsilon(1e-10));
        CHECK(score_pair(c, params, src, {1, 1}) ==
              Approx((steps2[0] + steps2[1]) / 2.0).epsilon(1e-10));

        ModelConfig sum_cfg = c;
        sum_cfg.score_norm = ScoreNorm::sum;
        // Doubling the target changes the summed score while each per-step
        // term still matches the trace; the first step is shared.
        CHECK(score_pair(sum_cfg, params, src, {1, 1}) ==
              Approx(steps2[0] + steps2[1]).epsilon(1e-10));
        CHECK(steps2[0] == Approx(steps1[0]).epsilon(1e-12));
    }
}

TEST_CASE("predict picks the argmax with low-index tie break") {
    const auto c = tiny_config();
    const auto params = init_params<double>(c, 9);

    TemplatizedExample ex;
    ex.source_tokens = {1, 2, 3};
    ex.choices = {{4}, {5}, {4, 5}};
    ex.gold = 0;

    const auto scores = score_choices(c, params, ex.source_tokens, ex.choices);
    int expected = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i)
        if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(expected)]) expected = i;
    CHECK(predict(c, params, ex) == expected);

    SECTION("single choice") {
        TemplatizedExample solo = ex;
        solo.choices = {{4, 5}};
        solo.gold = 0;
        CHECK(predict(c, params, solo) == 0);
    }
    SECTION("exact tie favors the lower index") {
        TemplatizedExample tie = ex;
        tie.choices = {{4, 5}, {4, 5}};  // identical sequences score identically
        tie.gold = 0;
        CHECK(predict(c, params, tie) == 0);
    }
    SECTION("argmax is invariant to a constant shift") {
        std::vector<double> shifted(scores.begin(), scores.end());
        for (auto& s : shifted) s += 7.25;
        int shifted_best = 0;
        for (int i = 1; i < static_cast<int>(shifted.size()); ++i)
            if (shifted[static_cast<std::size_t>(i)] > shifted[static_cast<std::size_t>(shifted_best)])
                shifted_best = i;
        CHECK(shifted_best == expected);
    }
    SECTION("empty choice list fails") {
        TemplatizedExample bad = ex;
        bad.choices.clear();
        CHECK_THROWS(predict(c, params, bad));
    }
}

TEST_CASE("prompt parameters participate in the forward pass") {
    TemplatizedExample ex;
    ex.source_tokens = {1, 2, 3, 4};
    ex.choices = {{5}, {4}};
    ex.gold = 1;
    const std::vector<TemplatizedExample> batch{ex};

    SECTION("shallow prompt receives nonzero gradients") {
        const auto c = tiny_config(PromptDepth::shallow);
        const auto params = init_params<double>(c, 21);
        const auto lg = model::batch_loss_and_grads<double>(c, params, batch);
        double norm = 0.0;
        for (const double v : lg.grads.at("prompt.embed").data) norm += v * v;
        CHECK(norm > 0.0);
    }
    SECTION("every deep prefix moves its layer's output") {
        ModelConfig c = tiny_config(PromptDepth::deep);
        c.num_layers = 2;
        const auto params = init_params<double>(c, 22);
        const double base = score_pair(c, params, ex.source_tokens, ex.choices[1]);
        for (const std::string side : {"prompt.enc", "prompt.dec"}) {
            for (int layer = 0; layer < c.num_layers; ++layer) {
                auto bumped = params;
                bumped.at(side + std::to_string(layer)).data[1] += 0.05;
                const double moved = score_pair(c, bumped, ex.source_tokens, ex.choices[1]);
                INFO(side << layer);
                CHECK(std::abs(moved - base) > 0.0);
            }
        }
    }
}

TEST_CASE("model gradients agree with finite differences") {
    for (const auto depth : {PromptDepth::none, PromptDepth::shallow, PromptDepth::deep}) {
        TemplatizedExample ex;
        ex.source_tokens = {1, 2, 3};
        ex.choices = {{4, 5}, {2}};
        ex.gold = 0;
        TemplatizedExample ex2;
        ex2.source_tokens = {5, 1};
        ex2.choices = {{3}, {2, 2}};
        ex2.gold = 1;
        const std::vector<TemplatizedExample> batch{ex, ex2};

        for (const int heads : {1, 2}) {
            ModelConfig c = tiny_config(depth);
            c.num_heads = heads;
            const auto params = init_params<double>(c, 31 + static_cast<std::uint64_t>(depth));
            const auto lg = model::batch_loss_and_grads<double>(c, params, batch);
            const auto fd = finite_difference_gradient<double>(
                [&](const ParamSet<double>& p) {
                    return model::batch_loss_value<double>(c, p, batch);
                },
                params);
            INFO("prompt depth " << prompt_depth_name(depth) << ", heads " << heads);
            CHECK(max_relative_error(lg.grads, fd) < 1e-4);
        }
    }
}
