// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace plab {

namespace detail {
template <class... Args>
std::string cat(Args&&... args) {
    std::ostringstream out;
    (out << ... << args);
    return out.str();
}
}  // namespace detail

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

template <class T>
bool is_finite_value(T v) {
    return std::isfinite(static_cast<double>(v));
}

}  // namespace plab

#define PLAB_CHECK(cond, ...)                                 \
    do {                                                      \
        if (!(cond)) ::plab::fail(::plab::detail::cat(__VA_ARGS__)); \
    } while (0)
