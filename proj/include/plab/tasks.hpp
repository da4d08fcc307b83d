// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "plab/example.hpp"
#include "plab/rng.hpp"

namespace plab::tasks {

// Raw task instance before templating: named integer-sequence fields plus a
// label index.
struct RawExample {
    std::map<std::string, std::vector<int>> fields;
    int label = 0;
};

// One piece of a pattern: literal tokens or a reference to a raw field.
struct Piece {
    std::vector<int> literal;
    std::string field;

    static Piece lit(std::vector<int> tokens) { return {std::move(tokens), {}}; }
    static Piece ref(std::string name) { return {{}, std::move(name)}; }
};

struct Template {
    std::string template_id;
    std::string dataset_id;
    std::string task_group;
    std::vector<Piece> source_pattern;
    std::vector<std::vector<Piece>> choice_patterns;  // one per label
};

namespace detail {
inline void render(const Template& t, const std::vector<Piece>& pattern, const RawExample& raw,
                   std::vector<int>& out) {
    for (const auto& piece : pattern) {
        if (piece.field.empty()) {
            out.insert(out.end(), piece.literal.begin(), piece.literal.end());
        } else {
            const auto it = raw.fields.find(piece.field);
            PLAB_CHECK(it != raw.fields.end(), "template '", t.template_id, "' expects field '",
                       piece.field, "' missing from raw example");
            out.insert(out.end(), it->second.begin(), it->second.end());
        }
    }
}
}  // namespace detail

inline TemplatizedExample apply_template(const Template& t, const RawExample& raw) {
    PLAB_CHECK(!t.choice_patterns.empty(), "template '", t.template_id, "' has no choice patterns");
    PLAB_CHECK(0 <= raw.label && raw.label < static_cast<int>(t.choice_patterns.size()),
               "label ", raw.label, " out of range for template '", t.template_id, "' with ",
               t.choice_patterns.size(), " choices");
    TemplatizedExample ex;
    ex.template_id = t.template_id;
    ex.dataset_id = t.dataset_id;
    ex.task_group = t.task_group;
    ex.gold = raw.label;
    detail::render(t, t.source_pattern, raw, ex.source_tokens);
    ex.choices.resize(t.choice_patterns.size());
    for (std::size_t i = 0; i < t.choice_patterns.size(); ++i)
        detail::render(t, t.choice_patterns[i], raw, ex.choices[i]);
    return ex;
}

struct MixtureSpec {
    int per_dataset_cap = 2000;
    std::uint64_t epoch_seed = 0;
    int source_limit = 48;
    int target_limit = 8;

    void validate() const {
        PLAB_CHECK(per_dataset_cap >= 1, "per_dataset_cap must be >= 1");
        PLAB_CHECK(source_limit >= 1 && target_limit >= 1, "truncation limits must be >= 1");
    }
};

// Right-truncation of the source and every choice; idempotent.
inline TemplatizedExample truncate(TemplatizedExample ex, const MixtureSpec& spec) {
    spec.validate();
    if (static_cast<int>(ex.source_tokens.size()) > spec.source_limit)
        ex.source_tokens.resize(static_cast<std::size_t>(spec.source_limit));
    for (auto& choice : ex.choices)
        if (static_cast<int>(choice.size()) > spec.target_limit)
            choice.resize(static_cast<std::size_t>(spec.target_limit));
    return ex;
}

// ---------------------------------------------------------------------------
// Synthetic suite
// ---------------------------------------------------------------------------

struct SuiteSpec {
    int train_groups = 4;
    int heldout_groups = 2;
    int datasets_per_group = 2;
    int train_examples = 2000;  // raw training examples per dataset
    int fewshot_pool = 64;      // raw few-shot pool per held-out dataset
    int eval_examples = 1000;   // raw evaluation examples per held-out dataset
    MixtureSpec mixture;
};

struct Dataset {
    std::string dataset_id;
    std::string task_group;
    int num_choices = 2;
    std::vector<Template> templates;
    std::vector<TemplatizedExample> train;  // templatized, shuffled, capped
    std::vector<RawExample> fewshot_raw;    // held-out only
    std::vector<RawExample> eval_raw;       // held-out only
};

struct Suite {
    std::vector<Dataset> train;
    std::vector<Dataset> heldout;
};

namespace detail {

// Token map: 0 start-of-sequence; 1..8 template markers; 9 separator;
// 10..15 and 48..63 verbalizers; 16..47 payload alphabet.
constexpr int kSep = 9;

enum class Family { parity, majority, contains, copy_match, most_frequent, ends_with };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::parity: return "parity";
        case Family::majority: return "majority";
        case Family::contains: return "contains";
        case Family::copy_match: return "copy_match";
        case Family::most_frequent: return "most_frequent";
        case Family::ends_with: return "ends_with";
    }
    return "?";
}

struct DatasetPlan {
    Family family;
    std::string dataset_id;
    int alpha_start = 16;  // payload alphabet slice
    int alpha_size = 12;
    int num_choices = 2;
    int len_min = 8;
    int len_max = 20;
    int num_templates = 2;
};

inline int pick_symbol(Rng& rng, const DatasetPlan& p) {
    return p.alpha_start + rng.next_int(p.alpha_size);
}

inline std::vector<int> pick_distinct(Rng& rng, const DatasetPlan& p, int count) {
    std::vector<int> out;
    while (static_cast<int>(out.size()) < count) {
        const int s = pick_symbol(rng, p);
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    }
    return out;
}

inline RawExample gen_raw(Rng& rng, const DatasetPlan& p) {
    RawExample raw;
    const int len = p.len_min + rng.next_int(p.len_max - p.len_min + 1);
    switch (p.family) {
        case Family::parity: {
            const int marked = pick_symbol(rng, p);
            std::vector<int> payload(static_cast<std::size_t>(len));
            int count = 0;
            for (auto& t : payload) {
                t = pick_symbol(rng, p);
                if (t == marked) ++count;
            }
            raw.fields["marked"] = {marked};
            raw.fields["payload"] = std::move(payload);
            raw.label = count % 2;  // 0 = even, 1 = odd
            break;
        }
        case Family::majority: {
            const auto ab = pick_distinct(rng, p, 2);
            const int odd_len = len | 1;  // no ties
            std::vector<int> payload(static_cast<std::size_t>(odd_len));
            const double bias = 0.3 + 0.4 * rng.next_double();
            int count_a = 0;
            for (auto& t : payload) {
                const bool is_a = rng.next_double() < bias;
                t = is_a ? ab[0] : ab[1];
                if (is_a) ++count_a;
            }
            raw.fields["payload"] = std::move(payload);
            raw.fields["option0"] = {ab[0]};
            raw.fields["option1"] = {ab[1]};
            raw.label = count_a > odd_len - count_a ? 0 : 1;
            break;
        }
        case Family::contains: {
            const auto cands = pick_distinct(rng, p, p.num_choices);
            const int present = rng.next_int(p.num_choices);
            std::vector<int> payload;
            payload.reserve(static_cast<std::size_t>(len) + 2);
            for (int i = 0; i < len; ++i) {
                int s = pick_symbol(rng, p);
                while (std::find(cands.begin(), cands.end(), s) != cands.end())
                    s = pick_symbol(rng, p);
                payload.push_back(s);
            }
            const int copies = 1 + rng.next_int(2);
            for (int c = 0; c < copies; ++c)
                payload.insert(payload.begin() + rng.next_int(static_cast<int>(payload.size()) + 1),
                               cands[static_cast<std::size_t>(present)]);
            raw.fields["payload"] = std::move(payload);
            for (int i = 0; i < p.num_choices; ++i)
                raw.fields["option" + std::to_string(i)] = {cands[static_cast<std::size_t>(i)]};
            raw.label = present;
            break;
        }
        case Family::copy_match: {
            std::vector<int> payload(static_cast<std::size_t>(len));
            for (auto& t : payload) t = pick_symbol(rng, p);
            const std::vector<int> highlight(payload.end() - 2, payload.end());
            std::vector<std::vector<int>> options;
            options.push_back(highlight);
            while (static_cast<int>(options.size()) < p.num_choices) {
                auto distractor = highlight;
                distractor[static_cast<std::size_t>(rng.next_int(2))] = pick_symbol(rng, p);
                if (std::find(options.begin(), options.end(), distractor) == options.end())
                    options.push_back(std::move(distractor));
            }
            const int gold_slot = rng.next_int(p.num_choices);
            std::swap(options[0], options[static_cast<std::size_t>(gold_slot)]);
            raw.fields["payload"] = std::move(payload);
            for (int i = 0; i < p.num_choices; ++i)
                raw.fields["option" + std::to_string(i)] = options[static_cast<std::size_t>(i)];
            raw.label = gold_slot;
            break;
        }
        case Family::most_frequent: {
            const auto cands = pick_distinct(rng, p, p.num_choices);
            std::vector<int> payload(static_cast<std::size_t>(len));
            std::vector<int> counts(cands.size(), 0);
            for (auto& t : payload) {
                const int pick = rng.next_int(p.num_choices);
                t = cands[static_cast<std::size_t>(pick)];
                ++counts[static_cast<std::size_t>(pick)];
            }
            int best = 0;
            bool tie = false;
            for (int i = 1; i < p.num_choices; ++i) {
                if (counts[static_cast<std::size_t>(i)] > counts[static_cast<std::size_t>(best)]) {
                    best = i;
                    tie = false;
                } else if (counts[static_cast<std::size_t>(i)] == counts[static_cast<std::size_t>(best)]) {
                    tie = true;
                }
            }
            if (tie) {  // force a strict winner
                payload.push_back(cands[static_cast<std::size_t>(best)]);
                payload.push_back(cands[static_cast<std::size_t>(best)]);
            }
            raw.fields["payload"] = std::move(payload);
            for (int i = 0; i < p.num_choices; ++i)
                raw.fields["option" + std::to_string(i)] = {cands[static_cast<std::size_t>(i)]};
            raw.label = best;
            break;
        }
        case Family::ends_with: {
            const auto cands = pick_distinct(rng, p, p.num_choices);
            const int winner = rng.next_int(p.num_choices);
            std::vector<int> payload(static_cast<std::size_t>(len));
            for (auto& t : payload) t = pick_symbol(rng, p);
            // Keep non-winning candidates away from the final position.
            for (auto& t : payload)
                while (std::find(cands.begin(), cands.end(), t) != cands.end())
                    t = pick_symbol(rng, p);
            payload.back() = cands[static_cast<std::size_t>(winner)];
            raw.fields["payload"] = std::move(payload);
            for (int i = 0; i < p.num_choices; ++i)
                raw.fields["option" + std::to_string(i)] = {cands[static_cast<std::size_t>(i)]};
            raw.label = winner;
            break;
        }
    }
    return raw;
}

inline std::vector<Template> make_templates(const DatasetPlan& p) {
    std::vector<Template> out;
    for (int t = 0; t < p.num_templates; ++t) {
        Template tpl;
        tpl.dataset_id = p.dataset_id;
        tpl.task_group = family_name(p.family);
        tpl.template_id = p.dataset_id + ":t" + std::to_string(t);
        const int marker = 1 + (t * 2) % 8;

        if (p.family == Family::parity) {
            tpl.source_pattern = {Piece::lit({marker}), Piece::ref("marked"), Piece::lit({kSep}),
                                  Piece::ref("payload")};
            const int verb = t % 3;
            const int even_tok = verb == 0 ? 10 : (verb == 1 ? 12 : 48);
            const int odd_tok = verb == 0 ? 11 : (verb == 1 ? 13 : 49);
            tpl.choice_patterns = {{Piece::lit({even_tok})}, {Piece::lit({odd_tok})}};
        } else {
            std::vector<Piece> candidates;
            for (int i = 0; i < p.num_choices; ++i)
                candidates.push_back(Piece::ref("option" + std::to_string(i)));
            std::vector<Piece> source{Piece::lit({marker, marker})};
            if (t % 2 == 0) {  // candidates listed before the payload
                source.insert(source.end(), candidates.begin(), candidates.end());
                source.push_back(Piece::lit({kSep}));
                source.push_back(Piece::ref("payload"));
            } else {  // candidates listed after the payload
                source.push_back(Piece::ref("payload"));
                source.push_back(Piece::lit({kSep}));
                source.insert(source.end(), candidates.begin(), candidates.end());
            }
            tpl.source_pattern = std::move(source);
            for (int i = 0; i < p.num_choices; ++i)
                tpl.choice_patterns.push_back({Piece::ref("option" + std::to_string(i))});
        }
        out.push_back(std::move(tpl));
    }
    return out;
}

inline std::vector<DatasetPlan> plan_datasets(Family family, int variants) {
    std::vector<DatasetPlan> out;
    for (int v = 0; v < variants; ++v) {
        DatasetPlan p;
        p.family = family;
        p.dataset_id = std::string(family_name(family)) + "_" + static_cast<char>('a' + v);
        p.alpha_start = 16 + 8 * v;
        p.alpha_size = 10 + 4 * v;
        p.num_templates = 2 + (v % 3);
        switch (family) {
            case Family::parity:
                p.num_choices = 2;
                p.len_min = 6;
                p.len_max = 16 + 4 * v;
                break;
            case Family::majority:
                p.num_choices = 2;
                p.len_min = 7;
                p.len_max = 17 + 2 * v;
                break;
            case Family::contains:
                p.num_choices = 2 + v;
                p.len_min = 8;
                p.len_max = 18;
                break;
            case Family::copy_match:
                p.num_choices = 3 + v;
                p.len_min = 6;
                p.len_max = 14;
                break;
            case Family::most_frequent:
                p.num_choices = 3 + v;
                p.len_min = 10;
                p.len_max = 22;
                break;
            case Family::ends_with:
                p.num_choices = 2 + v;
                p.len_min = 6;
                p.len_max = 14;
                break;
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline Dataset build_dataset(const DatasetPlan& plan, bool heldout, std::uint64_t seed,
                             const SuiteSpec& spec) {
    Dataset d;
    d.dataset_id = plan.dataset_id;
    d.task_group = family_name(plan.family);
    d.num_choices = plan.num_choices;
    d.templates = make_templates(plan);

    Rng rng(derive_seed(seed, "dataset:" + plan.dataset_id));
    if (!heldout) {
        std::vector<TemplatizedExample> all;
        all.reserve(static_cast<std::size_t>(spec.train_examples) * d.templates.size());
        for (int i = 0; i < spec.train_examples; ++i) {
            const RawExample raw = gen_raw(rng, plan);
            for (const auto& tpl : d.templates)
                all.push_back(truncate(apply_template(tpl, raw), spec.mixture));
        }
        rng.shuffle(all);
        if (static_cast<int>(all.size()) > spec.mixture.per_dataset_cap)
            all.resize(static_cast<std::size_t>(spec.mixture.per_dataset_cap));
        d.train = std::move(all);
    } else {
        d.fewshot_raw.reserve(static_cast<std::size_t>(spec.fewshot_pool));
        for (int i = 0; i < spec.fewshot_pool; ++i) d.fewshot_raw.push_back(gen_raw(rng, plan));
        d.eval_raw.reserve(static_cast<std::size_t>(spec.eval_examples));
        for (int i = 0; i < spec.eval_examples; ++i) d.eval_raw.push_back(gen_raw(rng, plan));
    }
    return d;
}

}  // namespace detail

// Deterministic suite of algorithmic token tasks. Held-out task groups share
// no generator family with the training groups.
inline Suite generate_synthetic_suite(std::uint64_t seed, const SuiteSpec& spec) {
    spec.mixture.validate();
    PLAB_CHECK(spec.train_groups >= 4, "need at least 4 training task groups, got ",
               spec.train_groups);
    PLAB_CHECK(spec.heldout_groups >= 2, "need at least 2 held-out task groups, got ",
               spec.heldout_groups);
    PLAB_CHECK(spec.train_groups <= 4 && spec.heldout_groups <= 2,
               "suite defines 4 training and 2 held-out task families");
    PLAB_CHECK(spec.datasets_per_group >= 1 && spec.datasets_per_group <= 4,
               "datasets_per_group must be in [1,4]");
    PLAB_CHECK(spec.train_examples >= 1 && spec.fewshot_pool >= 1 && spec.eval_examples >= 1,
               "suite sizes must be positive");

    using detail::Family;
    Suite suite;
    for (const auto family : {Family::parity, Family::majority, Family::contains, Family::copy_match})
        for (const auto& plan : detail::plan_datasets(family, spec.datasets_per_group))
            suite.train.push_back(detail::build_dataset(plan, false, seed, spec));
    for (const auto family : {Family::most_frequent, Family::ends_with})
        for (const auto& plan : detail::plan_datasets(family, spec.datasets_per_group))
            suite.heldout.push_back(detail::build_dataset(plan, true, seed, spec));
    return suite;
}

// Caps each dataset, pools everything, and shuffles with the epoch seed.
inline std::vector<TemplatizedExample> build_mixture(
    const MixtureSpec& spec, const std::vector<std::vector<TemplatizedExample>>& datasets) {
    PLAB_CHECK(!datasets.empty(), "mixture needs at least one dataset");
    spec.validate();
    std::vector<TemplatizedExample> stream;
    for (const auto& dataset : datasets) {
        const std::size_t take =
            std::min(dataset.size(), static_cast<std::size_t>(spec.per_dataset_cap));
        stream.insert(stream.end(), dataset.begin(), dataset.begin() + take);
    }
    Rng rng(derive_seed(spec.epoch_seed, "mixture_order"));
    rng.shuffle(stream);
    return stream;
}

inline std::vector<TemplatizedExample> build_mixture(const MixtureSpec& spec, const Suite& suite) {
    std::vector<std::vector<TemplatizedExample>> datasets;
    datasets.reserve(suite.train.size());
    for (const auto& d : suite.train) datasets.push_back(d.train);
    return build_mixture(spec, datasets);
}

// Applies one template to a raw split, with truncation.
inline std::vector<TemplatizedExample> templatize_all(const std::vector<RawExample>& raws,
                                                      const Template& tpl,
                                                      const MixtureSpec& mix) {
    std::vector<TemplatizedExample> out;
    out.reserve(raws.size());
    for (const auto& raw : raws) out.push_back(truncate(apply_template(tpl, raw), mix));
    return out;
}

// ---------------------------------------------------------------------------
// Dataset interchange: one JSON object per line.
// ---------------------------------------------------------------------------

inline void write_examples_jsonl(std::ostream& out, const std::vector<TemplatizedExample>& examples) {
    for (const auto& ex : examples) {
        nlohmann::ordered_json j;
        j["source_tokens"] = ex.source_tokens;
        j["choices"] = ex.choices;
        j["gold"] = ex.gold;
        j["template_id"] = ex.template_id;
        j["dataset_id"] = ex.dataset_id;
        j["task_group"] = ex.task_group;
        out << j.dump() << "\n";
    }
}

inline void write_examples_jsonl(const std::string& path,
                                 const std::vector<TemplatizedExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    PLAB_CHECK(out.good(), "cannot open '", path, "' for writing");
    write_examples_jsonl(out, examples);
}

inline std::vector<TemplatizedExample> read_examples_jsonl(std::istream& in, int vocab_size) {
    std::vector<TemplatizedExample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        TemplatizedExample ex;
        try {
            const auto j = nlohmann::json::parse(line);
            ex.source_tokens = j.at("source_tokens").get<std::vector<int>>();
            ex.choices = j.at("choices").get<std::vector<std::vector<int>>>();
            ex.gold = j.at("gold").get<int>();
            ex.template_id = j.at("template_id").get<std::string>();
            ex.dataset_id = j.at("dataset_id").get<std::string>();
            ex.task_group = j.at("task_group").get<std::string>();
            ex.validate(vocab_size);
        } catch (const std::exception& e) {
            PLAB_CHECK(false, "line ", line_no, ": malformed example record: ", e.what());
        }
        out.push_back(std::move(ex));
    }
    return out;
}

inline std::vector<TemplatizedExample> read_examples_jsonl(const std::string& path, int vocab_size) {
    std::ifstream in(path, std::ios::binary);
    PLAB_CHECK(in.good(), "cannot open '", path, "' for reading");
    return read_examples_jsonl(in, vocab_size);
}

}  // namespace plab::tasks
