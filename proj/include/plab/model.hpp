// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "plab/example.hpp"
#include "plab/graph.hpp"
#include "plab/params.hpp"
#include "plab/rng.hpp"

namespace plab::model {

enum class PromptDepth { none, shallow, deep };
enum class ScoreNorm { mean_per_token, sum };

inline const char* prompt_depth_name(PromptDepth p) {
    switch (p) {
        case PromptDepth::none: return "none";
        case PromptDepth::shallow: return "shallow";
        case PromptDepth::deep: return "deep";
    }
    return "?";
}

// Miniature encoder-decoder scorer. The decoder consumes a start-of-sequence
// token (id 0) followed by the shifted target; scores are per-token
// log-probabilities of the target aggregated per `score_norm`.
struct ModelConfig {
    int vocab_size = 64;
    int embed_dim = 32;
    int num_layers = 2;  // per side
    int num_heads = 2;
    int max_source_len = 48;
    int max_target_len = 8;
    int prompt_len = 20;
    int ff_mult = 4;
    PromptDepth prompt_depth = PromptDepth::none;
    ScoreNorm score_norm = ScoreNorm::mean_per_token;

    int ff_dim() const { return ff_mult * embed_dim; }
    int head_dim() const { return embed_dim / num_heads; }

    void validate() const {
        PLAB_CHECK(vocab_size >= 1, "vocab_size must be positive");
        PLAB_CHECK(embed_dim >= 1 && num_layers >= 1 && num_heads >= 1, "model dims must be positive");
        PLAB_CHECK(embed_dim % num_heads == 0, "embed_dim ", embed_dim,
                   " not divisible by num_heads ", num_heads);
        PLAB_CHECK(max_source_len >= 1 && max_target_len >= 1, "sequence limits must be positive");
        PLAB_CHECK(prompt_len >= 0, "prompt_len must be nonnegative");
        PLAB_CHECK(ff_mult >= 1, "ff_mult must be positive");
    }
};

constexpr int kBosToken = 0;

namespace detail {

enum class Init { embed, fanin, one, zero };

// Single source of truth for parameter names, shapes, and init families.
// Everything that walks the parameter layout (init, graph declaration,
// checkpointing) goes through here so orders always agree.
template <class Fn>
void for_each_param_spec(const ModelConfig& c, Fn&& fn) {
    const int d = c.embed_dim;
    const int f = c.ff_dim();
    fn("tok_emb", Shape{c.vocab_size, d}, Init::embed, d);
    fn("pos_src", Shape{c.max_source_len, d}, Init::embed, d);
    fn("pos_tgt", Shape{c.max_target_len, d}, Init::embed, d);
    for (int i = 0; i < c.num_layers; ++i) {
        const std::string p = "enc" + std::to_string(i) + ".";
        fn(p + "ln1.g", Shape{d}, Init::one, d);
        fn(p + "ln1.b", Shape{d}, Init::zero, d);
        fn(p + "attn.wq", Shape{d, d}, Init::fanin, d);
        fn(p + "attn.wk", Shape{d, d}, Init::fanin, d);
        fn(p + "attn.wv", Shape{d, d}, Init::fanin, d);
        fn(p + "attn.wo", Shape{d, d}, Init::fanin, d);
        fn(p + "ln2.g", Shape{d}, Init::one, d);
        fn(p + "ln2.b", Shape{d}, Init::zero, d);
        fn(p + "ff.w1", Shape{d, f}, Init::fanin, d);
        fn(p + "ff.b1", Shape{f}, Init::zero, d);
        fn(p + "ff.w2", Shape{f, d}, Init::fanin, f);
        fn(p + "ff.b2", Shape{d}, Init::zero, d);
    }
    fn("enc.lnf.g", Shape{d}, Init::one, d);
    fn("enc.lnf.b", Shape{d}, Init::zero, d);
    for (int i = 0; i < c.num_layers; ++i) {
        const std::string p = "dec" + std::to_string(i) + ".";
        fn(p + "ln1.g", Shape{d}, Init::one, d);
        fn(p + "ln1.b", Shape{d}, Init::zero, d);
        fn(p + "self.wq", Shape{d, d}, Init::fanin, d);
        fn(p + "self.wk", Shape{d, d}, Init::fanin, d);
        fn(p + "self.wv", Shape{d, d}, Init::fanin, d);
        fn(p + "self.wo", Shape{d, d}, Init::fanin, d);
        fn(p + "ln2.g", Shape{d}, Init::one, d);
        fn(p + "ln2.b", Shape{d}, Init::zero, d);
        fn(p + "cross.wq", Shape{d, d}, Init::fanin, d);
        fn(p + "cross.wk", Shape{d, d}, Init::fanin, d);
        fn(p + "cross.wv", Shape{d, d}, Init::fanin, d);
        fn(p + "cross.wo", Shape{d, d}, Init::fanin, d);
        fn(p + "ln3.g", Shape{d}, Init::one, d);
        fn(p + "ln3.b", Shape{d}, Init::zero, d);
        fn(p + "ff.w1", Shape{d, f}, Init::fanin, d);
        fn(p + "ff.b1", Shape{f}, Init::zero, d);
        fn(p + "ff.w2", Shape{f, d}, Init::fanin, f);
        fn(p + "ff.b2", Shape{d}, Init::zero, d);
    }
    fn("dec.lnf.g", Shape{d}, Init::one, d);
    fn("dec.lnf.b", Shape{d}, Init::zero, d);
    fn("out_proj", Shape{d, c.vocab_size}, Init::fanin, d);
    // Prompt parameters last so transformer blobs form a stable prefix.
    if (c.prompt_len > 0) {
        if (c.prompt_depth == PromptDepth::shallow) {
            fn("prompt.embed", Shape{c.prompt_len, d}, Init::embed, d);
        } else if (c.prompt_depth == PromptDepth::deep) {
            for (int i = 0; i < c.num_layers; ++i)
                fn("prompt.enc" + std::to_string(i), Shape{c.prompt_len, d}, Init::embed, d);
            for (int i = 0; i < c.num_layers; ++i)
                fn("prompt.dec" + std::to_string(i), Shape{c.prompt_len, d}, Init::embed, d);
        }
    }
}

inline bool is_prompt_param(const std::string& name) {
    return name.rfind("prompt.", 0) == 0;
}

}  // namespace detail

// Deterministic initialization; prompt rows are drawn from the same scaled
// normal family as token embeddings.
template <class T>
ParamSet<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, "model_init"));
    ParamSet<T> params;
    detail::for_each_param_spec(config, [&](const std::string& name, Shape shape,
                                            detail::Init kind, int fan_in) {
        Tensor<T> t(shape);
        switch (kind) {
            case detail::Init::embed:
            case detail::Init::fanin: {
                const T stddev = T(1) / std::sqrt(static_cast<T>(fan_in));
                for (T& v : t.data) v = static_cast<T>(rng.next_normal()) * stddev;
                break;
            }
            case detail::Init::one:
                for (T& v : t.data) v = T(1);
                break;
            case detail::Init::zero:
                break;
        }
        params.add(name, std::move(t));
    });
    return params;
}

// Indicator over prompt coordinates: 1 on every prompt tensor, 0 elsewhere.
template <class T>
ParamSet<T> prompt_mask(const ParamSet<T>& params) {
    return mask_where(params, detail::is_prompt_param);
}

template <class T>
bool has_prompt(const ParamSet<T>& params) {
    for (const auto& [name, t] : params)
        if (detail::is_prompt_param(name)) return true;
    return false;
}

// Builds scoring graphs against a fixed parameter layout. One instance holds
// one graph; several examples may be appended before evaluating once.
template <class T>
class ScorerGraph {
public:
    using NodeId = typename Graph<T>::NodeId;

    explicit ScorerGraph(const ModelConfig& config) : cfg_(config) {
        cfg_.validate();
        detail::for_each_param_spec(cfg_, [&](const std::string& name, Shape shape,
                                              detail::Init, int) {
            param_node_.emplace(name, g_.param(name, std::move(shape)));
        });
    }

    Graph<T>& graph() { return g_; }
    const ModelConfig& config() const { return cfg_; }

    // Embedded source: token embeddings plus learned positions, with the
    // shallow prompt rows prepended when configured.
    NodeId source_embedding(const std::vector<int>& source) {
        check_tokens(source, "source");
        PLAB_CHECK(!source.empty(), "source sequence is empty");
        PLAB_CHECK(static_cast<int>(source.size()) <= cfg_.max_source_len,
                   "source length ", source.size(), " exceeds limit ", cfg_.max_source_len);
        const int n = static_cast<int>(source.size());
        NodeId tokens = g_.add(g_.embed(pid("tok_emb"), source),
                               g_.slice(pid("pos_src"), 0, 0, n));
        if (cfg_.prompt_depth == PromptDepth::shallow && cfg_.prompt_len > 0)
            return g_.concat({pid("prompt.embed"), tokens}, 0);
        return tokens;
    }

    // Full encoder stack; returns the final normalized memory.
    NodeId encode(const std::vector<int>& source) {
        NodeId x = source_embedding(source);
        for (int i = 0; i < cfg_.num_layers; ++i) {
            const std::string p = "enc" + std::to_string(i) + ".";
            const NodeId normed = ln(x, p + "ln1");
            const NodeId attn = attention(normed, normed, p + "attn", deep_prefix("prompt.enc", i),
                                          /*causal=*/false);
            x = g_.add(x, attn);
            const NodeId normed2 = ln(x, p + "ln2");
            x = g_.add(x, feed_forward(normed2, p + "ff"));
        }
        return ln(x, "enc.lnf");
    }

    // Teacher-forced per-token log-probabilities of `target` given the
    // encoder memory; returns a [len(target)] node.
    NodeId target_logprobs(NodeId memory, const std::vector<int>& target) {
        check_tokens(target, "target");
        PLAB_CHECK(!target.empty(), "target sequence is empty");
        PLAB_CHECK(static_cast<int>(target.size()) <= cfg_.max_target_len,
                   "target length ", target.size(), " exceeds limit ", cfg_.max_target_len);
        const int m = static_cast<int>(target.size());
        std::vector<int> dec_in(target.size());
        dec_in[0] = kBosToken;
        for (int i = 1; i < m; ++i) dec_in[static_cast<std::size_t>(i)] = target[static_cast<std::size_t>(i - 1)];

        NodeId x = g_.add(g_.embed(pid("tok_emb"), dec_in), g_.slice(pid("pos_tgt"), 0, 0, m));
        for (int i = 0; i < cfg_.num_layers; ++i) {
            const std::string p = "dec" + std::to_string(i) + ".";
            const NodeId normed = ln(x, p + "ln1");
            const NodeId self_attn = attention(normed, normed, p + "self",
                                               deep_prefix("prompt.dec", i), /*causal=*/true);
            x = g_.add(x, self_attn);
            const NodeId normed2 = ln(x, p + "ln2");
            x = g_.add(x, attention(normed2, memory, p + "cross", -1, /*causal=*/false));
            const NodeId normed3 = ln(x, p + "ln3");
            x = g_.add(x, feed_forward(normed3, p + "ff"));
        }
        x = ln(x, "dec.lnf");
        const NodeId logits = g_.matmul(x, pid("out_proj"));
        return g_.pick(g_.log_softmax(logits), target);
    }

    NodeId score(NodeId logprobs) {
        return cfg_.score_norm == ScoreNorm::mean_per_token ? g_.mean(logprobs) : g_.sum(logprobs);
    }

private:
    NodeId pid(const std::string& name) const {
        const auto it = param_node_.find(name);
        PLAB_CHECK(it != param_node_.end(), "unknown model parameter '", name, "'");
        return it->second;
    }

    int deep_prefix(const char* base, int layer) {
        if (cfg_.prompt_depth != PromptDepth::deep || cfg_.prompt_len == 0) return -1;
        return pid(base + std::to_string(layer));
    }

    NodeId ln(NodeId x, const std::string& base) {
        return g_.layer_norm(x, pid(base + ".g"), pid(base + ".b"));
    }

    NodeId feed_forward(NodeId x, const std::string& base) {
        const NodeId hidden = g_.tanh(g_.add(g_.matmul(x, pid(base + ".w1")), pid(base + ".b1")));
        return g_.add(g_.matmul(hidden, pid(base + ".w2")), pid(base + ".b2"));
    }

    // Multi-head attention. `prefix` (a [prompt_len, d] parameter node, or -1)
    // contributes extra key/value positions that every query may attend to;
    // causal masking applies to the token positions only.
    NodeId attention(NodeId queries, NodeId keys_from, const std::string& base, NodeId prefix,
                     bool causal) {
        const int dh = cfg_.head_dim();
        NodeId q = g_.matmul(queries, pid(base + ".wq"));
        NodeId k = g_.matmul(keys_from, pid(base + ".wk"));
        NodeId v = g_.matmul(keys_from, pid(base + ".wv"));
        int prefix_len = 0;
        if (prefix >= 0) {
            prefix_len = g_.node(prefix).shape[0];
            k = g_.concat({g_.matmul(prefix, pid(base + ".wk")), k}, 0);
            v = g_.concat({g_.matmul(prefix, pid(base + ".wv")), v}, 0);
        }
        const int n_q = g_.node(q).shape[0];
        const int n_k = g_.node(k).shape[0];

        NodeId mask = -1;
        if (causal) {
            Tensor<T> m({n_q, n_k});
            for (int i = 0; i < n_q; ++i)
                for (int j = prefix_len; j < n_k; ++j)
                    if (j - prefix_len > i) m.at(i, j) = T(-1e30);
            mask = g_.constant(std::move(m));
        }

        std::vector<NodeId> head_outputs;
        head_outputs.reserve(static_cast<std::size_t>(cfg_.num_heads));
        for (int h = 0; h < cfg_.num_heads; ++h) {
            const int c0 = h * dh, c1 = (h + 1) * dh;
            const NodeId qh = g_.slice(q, 1, c0, c1);
            const NodeId kh = g_.slice(k, 1, c0, c1);
            const NodeId vh = g_.slice(v, 1, c0, c1);
            NodeId scores = g_.scale(g_.matmul(qh, g_.transpose(kh)),
                                     1.0 / std::sqrt(static_cast<double>(dh)));
            if (mask >= 0) scores = g_.add(scores, mask);
            head_outputs.push_back(g_.matmul(g_.softmax(scores), vh));
        }
        const NodeId merged = cfg_.num_heads == 1 ? head_outputs[0] : g_.concat(head_outputs, 1);
        return g_.matmul(merged, pid(base + ".wo"));
    }

    void check_tokens(const std::vector<int>& toks, const char* what) const {
        for (std::size_t i = 0; i < toks.size(); ++i)
            PLAB_CHECK(0 <= toks[i] && toks[i] < cfg_.vocab_size, what, " token ", toks[i],
                       " at position ", i, " outside vocabulary of size ", cfg_.vocab_size);
    }

    ModelConfig cfg_;
    Graph<T> g_;
    std::unordered_map<std::string, NodeId> param_node_;
};

// Standalone embedded-source view (shallow prompt rows first when present).
template <class T>
Tensor<T> embed_source(const ModelConfig& config, const ParamSet<T>& params,
                       const std::vector<int>& source) {
    ScorerGraph<T> sg(config);
    const auto out = sg.source_embedding(source);
    const auto ctx = evaluate(sg.graph(), params);
    return ctx.value[static_cast<std::size_t>(out)];
}

// Log-score of one (source, target) pair.
template <class T>
T score_pair(const ModelConfig& config, const ParamSet<T>& params, const std::vector<int>& source,
             const std::vector<int>& target) {
    ScorerGraph<T> sg(config);
    const auto memory = sg.encode(source);
    const auto s = sg.score(sg.target_logprobs(memory, target));
    const auto ctx = evaluate(sg.graph(), params);
    return ctx.value[static_cast<std::size_t>(s)].data[0];
}

// Scores of all answer choices against a shared encoder pass.
template <class T>
std::vector<T> score_choices(const ModelConfig& config, const ParamSet<T>& params,
                             const std::vector<int>& source,
                             const std::vector<std::vector<int>>& choices) {
    PLAB_CHECK(!choices.empty(), "no answer choices to score");
    ScorerGraph<T> sg(config);
    const auto memory = sg.encode(source);
    std::vector<typename Graph<T>::NodeId> nodes;
    nodes.reserve(choices.size());
    for (const auto& choice : choices) nodes.push_back(sg.score(sg.target_logprobs(memory, choice)));
    const auto ctx = evaluate(sg.graph(), params);
    std::vector<T> out;
    out.reserve(choices.size());
    for (const auto id : nodes) out.push_back(ctx.value[static_cast<std::size_t>(id)].data[0]);
    return out;
}

template <class T>
struct ScoredChoice {
    int choice_index = 0;
    T log_score = T(0);
};

template <class T>
std::vector<ScoredChoice<T>> score_example(const ModelConfig& config, const ParamSet<T>& params,
                                           const TemplatizedExample& ex) {
    const auto scores = score_choices(config, params, ex.source_tokens, ex.choices);
    std::vector<ScoredChoice<T>> out;
    out.reserve(scores.size());
    for (int i = 0; i < static_cast<int>(scores.size()); ++i)
        out.push_back({i, scores[static_cast<std::size_t>(i)]});
    return out;
}

// Highest-scoring choice; ties break toward the lowest index.
template <class T>
int predict(const ModelConfig& config, const ParamSet<T>& params, const TemplatizedExample& ex) {
    const auto scored = score_example(config, params, ex);
    int best = 0;
    for (int i = 1; i < static_cast<int>(scored.size()); ++i)
        if (scored[static_cast<std::size_t>(i)].log_score > scored[static_cast<std::size_t>(best)].log_score)
            best = i;
    return best;
}

template <class T>
struct LossGrad {
    T loss = T(0);
    ParamSet<T> grads;
};

namespace detail {

template <class T>
typename Graph<T>::NodeId batch_loss_node(ScorerGraph<T>& sg,
                                          std::span<const TemplatizedExample> batch) {
    PLAB_CHECK(!batch.empty(), "empty training batch");
    std::vector<typename Graph<T>::NodeId> per_example;
    per_example.reserve(batch.size());
    for (const auto& ex : batch) {
        ex.validate(sg.config().vocab_size);
        const auto memory = sg.encode(ex.source_tokens);
        const auto logprobs = sg.target_logprobs(memory, ex.choices[static_cast<std::size_t>(ex.gold)]);
        per_example.push_back(sg.graph().scale(sg.graph().mean(logprobs), -1.0));
    }
    return sg.graph().mean(sg.graph().concat(per_example, 0));
}

}  // namespace detail

// Mean cross-entropy of the gold choice sequences over a batch.
template <class T>
T batch_loss_value(const ModelConfig& config, const ParamSet<T>& params,
                   std::span<const TemplatizedExample> batch) {
    ScorerGraph<T> sg(config);
    const auto loss = detail::batch_loss_node(sg, batch);
    const auto ctx = evaluate(sg.graph(), params);
    return ctx.value[static_cast<std::size_t>(loss)].data[0];
}

template <class T>
LossGrad<T> batch_loss_and_grads(const ModelConfig& config, const ParamSet<T>& params,
                                 std::span<const TemplatizedExample> batch) {
    ScorerGraph<T> sg(config);
    const auto loss = detail::batch_loss_node(sg, batch);
    const auto ctx = evaluate(sg.graph(), params);
    LossGrad<T> out;
    out.loss = ctx.value[static_cast<std::size_t>(loss)].data[0];
    out.grads = backward(sg.graph(), ctx, loss);
    return out;
}

}  // namespace plab::model
