// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "plab/common.hpp"

namespace plab {

// One templatized task instance: tokenized source, one tokenized target
// sequence per answer choice, and the gold choice index.
struct TemplatizedExample {
    std::vector<int> source_tokens;
    std::vector<std::vector<int>> choices;
    int gold = 0;
    std::string template_id;
    std::string dataset_id;
    std::string task_group;

    void validate(int vocab_size) const {
        PLAB_CHECK(!choices.empty(), "example has no answer choices");
        PLAB_CHECK(0 <= gold && gold < static_cast<int>(choices.size()), "gold index ", gold,
                   " out of range for ", choices.size(), " choices");
        const auto check_tokens = [&](const std::vector<int>& toks, const char* what) {
            for (std::size_t i = 0; i < toks.size(); ++i)
                PLAB_CHECK(0 <= toks[i] && toks[i] < vocab_size, what, " token ", toks[i],
                           " at position ", i, " outside vocabulary of size ", vocab_size);
        };
        check_tokens(source_tokens, "source");
        for (const auto& c : choices) {
            PLAB_CHECK(!c.empty(), "empty choice sequence");
            check_tokens(c, "choice");
        }
    }
};

}  // namespace plab
