// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "plab/common.hpp"
#include "plab/params.hpp"
#include "plab/tensor.hpp"

namespace plab {

enum class Op {
    input,
    param,
    constant,
    add,        // same shape, or b is a vector broadcast over the rows of a
    mul,        // elementwise, same shape
    scale,      // multiply by a fixed scalar
    matmul,     // [a,b] x [b,c]
    transpose,  // 2-D
    concat,     // axis 0 or 1
    slice,      // axis 0 or 1, rows/cols [start, stop)
    softmax,    // per row over the last axis
    log_softmax,
    layer_norm,  // inputs: x, gain, bias; per row
    tanh_fn,
    embed,  // input: table [V,d]; ids attribute -> [n,d]
    pick,   // input: [n,m]; ids attribute -> out[i] = x[i, ids[i]]
    sum_all,
    mean_all,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::input: return "input";
        case Op::param: return "param";
        case Op::constant: return "constant";
        case Op::add: return "add";
        case Op::mul: return "mul";
        case Op::scale: return "scale";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::concat: return "concat";
        case Op::slice: return "slice";
        case Op::softmax: return "softmax";
        case Op::log_softmax: return "log_softmax";
        case Op::layer_norm: return "layer_norm";
        case Op::tanh_fn: return "tanh";
        case Op::embed: return "embed";
        case Op::pick: return "pick";
        case Op::sum_all: return "sum";
        case Op::mean_all: return "mean";
    }
    return "?";
}

// Static computation graph over dense tensors with reverse-mode gradients.
// Nodes are appended in topological order by construction and the graph is
// immutable once built; evaluations keep all per-node state in a separate
// context, so one graph can serve concurrent evaluations.
template <class T>
class Graph {
public:
    using NodeId = int;

    struct Node {
        Op op = Op::constant;
        std::vector<NodeId> inputs;
        Shape shape;
        std::string name;       // input/param leaves
        Tensor<T> value;        // constant leaves
        std::vector<int> ids;   // embed / pick
        double factor = 1.0;    // scale
        int axis = 0;           // concat / slice
        int start = 0, stop = 0;  // slice
        double eps = 0.0;       // layer_norm
    };

    NodeId input(std::string name, Shape shape) {
        Node n;
        n.op = Op::input;
        n.name = std::move(name);
        n.shape = std::move(shape);
        shape_numel(n.shape);
        return push(std::move(n));
    }

    NodeId param(std::string name, Shape shape) {
        PLAB_CHECK(!param_index_.count(name), "duplicate graph parameter '", name, "'");
        Node n;
        n.op = Op::param;
        n.name = name;
        n.shape = std::move(shape);
        shape_numel(n.shape);
        const NodeId id = push(std::move(n));
        param_index_.emplace(std::move(name), id);
        param_ids_.push_back(id);
        return id;
    }

    NodeId constant(Tensor<T> value) {
        Node n;
        n.op = Op::constant;
        n.shape = value.shape;
        n.value = std::move(value);
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) {
        const Shape& sa = node(a).shape;
        const Shape& sb = node(b).shape;
        const bool broadcast = sa.size() == 2 && sb.size() == 1 && sb[0] == sa[1];
        PLAB_CHECK(sa == sb || broadcast, "add: shape mismatch ", shape_str(sa), " vs ",
                   shape_str(sb), " at ", label(a), "+", label(b));
        Node n;
        n.op = Op::add;
        n.inputs = {a, b};
        n.shape = sa;
        return push(std::move(n));
    }

    NodeId mul(NodeId a, NodeId b) {
        PLAB_CHECK(node(a).shape == node(b).shape, "mul: shape mismatch ",
                   shape_str(node(a).shape), " vs ", shape_str(node(b).shape));
        Node n;
        n.op = Op::mul;
        n.inputs = {a, b};
        n.shape = node(a).shape;
        return push(std::move(n));
    }

    NodeId scale(NodeId a, double factor) {
        Node n;
        n.op = Op::scale;
        n.inputs = {a};
        n.factor = factor;
        n.shape = node(a).shape;
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const Shape& sa = node(a).shape;
        const Shape& sb = node(b).shape;
        PLAB_CHECK(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0],
                   "matmul: incompatible shapes ", shape_str(sa), " x ", shape_str(sb), " at ",
                   label(a), "*", label(b));
        Node n;
        n.op = Op::matmul;
        n.inputs = {a, b};
        n.shape = {sa[0], sb[1]};
        return push(std::move(n));
    }

    NodeId transpose(NodeId a) {
        const Shape& s = node(a).shape;
        PLAB_CHECK(s.size() == 2, "transpose: need rank 2, got ", shape_str(s));
        Node n;
        n.op = Op::transpose;
        n.inputs = {a};
        n.shape = {s[1], s[0]};
        return push(std::move(n));
    }

    NodeId concat(const std::vector<NodeId>& parts, int axis) {
        PLAB_CHECK(!parts.empty(), "concat: empty part list");
        const Shape& first = node(parts[0]).shape;
        PLAB_CHECK(axis == 0 || (axis == 1 && first.size() == 2), "concat: bad axis ", axis);
        Shape out = first;
        for (std::size_t i = 1; i < parts.size(); ++i) {
            const Shape& s = node(parts[i]).shape;
            PLAB_CHECK(s.size() == first.size(), "concat: rank mismatch");
            if (axis == 0) {
                PLAB_CHECK(s.size() == 1 || s[1] == first[1], "concat: column mismatch");
                out[0] += s[0];
            } else {
                PLAB_CHECK(s[0] == first[0], "concat: row mismatch");
                out[1] += s[1];
            }
        }
        Node n;
        n.op = Op::concat;
        n.inputs = parts;
        n.axis = axis;
        n.shape = std::move(out);
        return push(std::move(n));
    }

    NodeId slice(NodeId a, int axis, int start, int stop) {
        const Shape& s = node(a).shape;
        PLAB_CHECK(axis == 0 || (axis == 1 && s.size() == 2), "slice: bad axis ", axis);
        const int extent = axis == 0 ? s[0] : s[1];
        PLAB_CHECK(0 <= start && start < stop && stop <= extent, "slice: range [", start, ",",
                   stop, ") out of extent ", extent, " at ", label(a));
        Node n;
        n.op = Op::slice;
        n.inputs = {a};
        n.axis = axis;
        n.start = start;
        n.stop = stop;
        n.shape = s;
        n.shape[axis] = stop - start;
        return push(std::move(n));
    }

    NodeId softmax(NodeId a) { return rowwise(Op::softmax, a); }
    NodeId log_softmax(NodeId a) { return rowwise(Op::log_softmax, a); }

    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5) {
        const Shape& s = node(x).shape;
        PLAB_CHECK(s.size() == 2, "layer_norm: need rank 2, got ", shape_str(s));
        PLAB_CHECK(node(gain).shape == Shape{s[1]} && node(bias).shape == Shape{s[1]},
                   "layer_norm: gain/bias must be [", s[1], "]");
        Node n;
        n.op = Op::layer_norm;
        n.inputs = {x, gain, bias};
        n.eps = eps;
        n.shape = s;
        return push(std::move(n));
    }

    NodeId tanh(NodeId a) {
        Node n;
        n.op = Op::tanh_fn;
        n.inputs = {a};
        n.shape = node(a).shape;
        return push(std::move(n));
    }

    NodeId embed(NodeId table, std::vector<int> ids) {
        const Shape& s = node(table).shape;
        PLAB_CHECK(s.size() == 2, "embed: table must be rank 2");
        PLAB_CHECK(!ids.empty(), "embed: empty id list");
        for (std::size_t i = 0; i < ids.size(); ++i)
            PLAB_CHECK(0 <= ids[i] && ids[i] < s[0], "embed: id ", ids[i], " at position ", i,
                       " outside table of ", s[0], " rows");
        Node n;
        n.op = Op::embed;
        n.inputs = {table};
        n.shape = {static_cast<int>(ids.size()), s[1]};
        n.ids = std::move(ids);
        return push(std::move(n));
    }

    NodeId pick(NodeId a, std::vector<int> ids) {
        const Shape& s = node(a).shape;
        PLAB_CHECK(s.size() == 2, "pick: need rank 2");
        PLAB_CHECK(static_cast<int>(ids.size()) == s[0], "pick: need one index per row");
        for (const int id : ids) PLAB_CHECK(0 <= id && id < s[1], "pick: column ", id, " out of range");
        Node n;
        n.op = Op::pick;
        n.inputs = {a};
        n.shape = {s[0]};
        n.ids = std::move(ids);
        return push(std::move(n));
    }

    NodeId sum(NodeId a) { return reduce(Op::sum_all, a); }
    NodeId mean(NodeId a) { return reduce(Op::mean_all, a); }

    void mark_output(std::string name, NodeId id) {
        node(id);
        outputs_.emplace(std::move(name), id);
    }

    NodeId output_id(const std::string& name) const {
        const auto it = outputs_.find(name);
        PLAB_CHECK(it != outputs_.end(), "unknown graph output '", name, "'");
        return it->second;
    }

    const Node& node(NodeId id) const {
        PLAB_CHECK(0 <= id && id < static_cast<NodeId>(nodes_.size()), "bad node id ", id);
        return nodes_[static_cast<std::size_t>(id)];
    }

    int node_count() const { return static_cast<int>(nodes_.size()); }
    const std::vector<NodeId>& param_ids() const { return param_ids_; }

    std::string label(NodeId id) const {
        const Node& n = node(id);
        std::string out = "node#" + std::to_string(id) + ":" + op_name(n.op);
        if (!n.name.empty()) out += "(" + n.name + ")";
        return out;
    }

private:
    NodeId rowwise(Op op, NodeId a) {
        PLAB_CHECK(node(a).shape.size() == 2, op_name(op), ": need rank 2");
        Node n;
        n.op = op;
        n.inputs = {a};
        n.shape = node(a).shape;
        return push(std::move(n));
    }

    NodeId reduce(Op op, NodeId a) {
        Node n;
        n.op = op;
        n.inputs = {a};
        n.shape = {1};
        return push(std::move(n));
    }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::vector<NodeId> param_ids_;
    std::unordered_map<std::string, NodeId> param_index_;
    std::unordered_map<std::string, NodeId> outputs_;
};

// Per-evaluation buffers; never shared between evaluations.
template <class T>
struct EvalContext {
    std::vector<Tensor<T>> value;
};

namespace detail {

template <class T>
void matmul_into(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, bool accumulate) {
    const int n = a.shape[0], k = a.shape[1], m = b.shape[1];
    if (!accumulate) std::fill(out.data.begin(), out.data.end(), T(0));
    for (int i = 0; i < n; ++i) {
        const T* arow = a.data.data() + static_cast<std::size_t>(i) * k;
        T* orow = out.data.data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < k; ++j) {
            const T aij = arow[j];
            const T* brow = b.data.data() + static_cast<std::size_t>(j) * m;
            for (int c = 0; c < m; ++c) orow[c] += aij * brow[c];
        }
    }
}

// out += a^T * b, where a is [n,k] and b is [n,m]; out is [k,m].
template <class T>
void matmul_at_b(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
    const int n = a.shape[0], k = a.shape[1], m = b.shape[1];
    for (int i = 0; i < n; ++i) {
        const T* arow = a.data.data() + static_cast<std::size_t>(i) * k;
        const T* brow = b.data.data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < k; ++j) {
            const T aij = arow[j];
            T* orow = out.data.data() + static_cast<std::size_t>(j) * m;
            for (int c = 0; c < m; ++c) orow[c] += aij * brow[c];
        }
    }
}

// out += a * b^T, where a is [n,m] and b is [k,m]; out is [n,k].
template <class T>
void matmul_a_bt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
    const int n = a.shape[0], m = a.shape[1], k = b.shape[0];
    for (int i = 0; i < n; ++i) {
        const T* arow = a.data.data() + static_cast<std::size_t>(i) * m;
        T* orow = out.data.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const T* brow = b.data.data() + static_cast<std::size_t>(j) * m;
            T acc = T(0);
            for (int c = 0; c < m; ++c) acc += arow[c] * brow[c];
            orow[j] += acc;
        }
    }
}

}  // namespace detail

// Deterministic forward pass. `bindings` supplies every input and parameter
// leaf by name; shapes must match the declarations.
template <class T>
EvalContext<T> evaluate(const Graph<T>& g, const ParamSet<T>& bindings) {
    EvalContext<T> ctx;
    ctx.value.resize(static_cast<std::size_t>(g.node_count()));
    for (int id = 0; id < g.node_count(); ++id) {
        const auto& n = g.node(id);
        Tensor<T>& out = ctx.value[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::input:
            case Op::param: {
                PLAB_CHECK(bindings.has(n.name), "missing binding for ", g.label(id));
                const Tensor<T>& bound = bindings.at(n.name);
                PLAB_CHECK(bound.shape == n.shape, "binding shape ", shape_str(bound.shape),
                           " does not match declared ", shape_str(n.shape), " at ", g.label(id));
                out = bound;
                break;
            }
            case Op::constant:
                out = n.value;
                break;
            case Op::add: {
                const auto& a = ctx.value[n.inputs[0]];
                const auto& b = ctx.value[n.inputs[1]];
                out = a;
                if (same_shape(a, b)) {
                    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
                } else {
                    const int rows = a.shape[0], cols = a.shape[1];
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c)
                            out.data[static_cast<std::size_t>(r) * cols + c] += b.data[c];
                }
                break;
            }
            case Op::mul: {
                const auto& a = ctx.value[n.inputs[0]];
                const auto& b = ctx.value[n.inputs[1]];
                out = a;
                for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
                break;
            }
            case Op::scale: {
                out = ctx.value[n.inputs[0]];
                const T f = static_cast<T>(n.factor);
                for (T& v : out.data) v *= f;
                break;
            }
            case Op::matmul: {
                out = Tensor<T>(n.shape);
                detail::matmul_into(ctx.value[n.inputs[0]], ctx.value[n.inputs[1]], out, true);
                break;
            }
            case Op::transpose: {
                const auto& a = ctx.value[n.inputs[0]];
                out = Tensor<T>(n.shape);
                for (int r = 0; r < a.shape[0]; ++r)
                    for (int c = 0; c < a.shape[1]; ++c) out.at(c, r) = a.at(r, c);
                break;
            }
            case Op::concat: {
                out = Tensor<T>(n.shape);
                if (n.axis == 0) {
                    std::size_t pos = 0;
                    for (const auto in : n.inputs) {
                        const auto& part = ctx.value[in];
                        std::copy(part.data.begin(), part.data.end(), out.data.begin() + pos);
                        pos += part.data.size();
                    }
                } else {
                    const int rows = n.shape[0];
                    int col0 = 0;
                    for (const auto in : n.inputs) {
                        const auto& part = ctx.value[in];
                        const int pc = part.shape[1];
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < pc; ++c) out.at(r, col0 + c) = part.at(r, c);
                        col0 += pc;
                    }
                }
                break;
            }
            case Op::slice: {
                const auto& a = ctx.value[n.inputs[0]];
                out = Tensor<T>(n.shape);
                if (n.axis == 0) {
                    const std::size_t cols = a.data.size() / static_cast<std::size_t>(a.shape[0]);
                    std::copy(a.data.begin() + n.start * cols, a.data.begin() + n.stop * cols,
                              out.data.begin());
                } else {
                    for (int r = 0; r < n.shape[0]; ++r)
                        for (int c = n.start; c < n.stop; ++c) out.at(r, c - n.start) = a.at(r, c);
                }
                break;
            }
            case Op::softmax:
            case Op::log_softmax: {
                const auto& a = ctx.value[n.inputs[0]];
                out = Tensor<T>(n.shape);
                const int rows = a.shape[0], cols = a.shape[1];
                for (int r = 0; r < rows; ++r) {
                    T mx = a.at(r, 0);
                    for (int c = 1; c < cols; ++c) mx = std::max(mx, a.at(r, c));
                    T total = T(0);
                    for (int c = 0; c < cols; ++c) total += std::exp(a.at(r, c) - mx);
                    if (n.op == Op::softmax) {
                        for (int c = 0; c < cols; ++c) out.at(r, c) = std::exp(a.at(r, c) - mx) / total;
                    } else {
                        const T lse = mx + std::log(total);
                        for (int c = 0; c < cols; ++c) out.at(r, c) = a.at(r, c) - lse;
                    }
                }
                break;
            }
            case Op::layer_norm: {
                const auto& x = ctx.value[n.inputs[0]];
                const auto& gain = ctx.value[n.inputs[1]];
                const auto& bias = ctx.value[n.inputs[2]];
                out = Tensor<T>(n.shape);
                const int rows = x.shape[0], cols = x.shape[1];
                for (int r = 0; r < rows; ++r) {
                    T mu = T(0);
                    for (int c = 0; c < cols; ++c) mu += x.at(r, c);
                    mu /= static_cast<T>(cols);
                    T var = T(0);
                    for (int c = 0; c < cols; ++c) {
                        const T d = x.at(r, c) - mu;
                        var += d * d;
                    }
                    var /= static_cast<T>(cols);
                    const T inv = T(1) / std::sqrt(var + static_cast<T>(n.eps));
                    for (int c = 0; c < cols; ++c)
                        out.at(r, c) = (x.at(r, c) - mu) * inv * gain.data[c] + bias.data[c];
                }
                break;
            }
            case Op::tanh_fn: {
                out = ctx.value[n.inputs[0]];
                for (T& v : out.data) v = std::tanh(v);
                break;
            }
            case Op::embed: {
                const auto& table = ctx.value[n.inputs[0]];
                out = Tensor<T>(n.shape);
                const int d = table.shape[1];
                for (std::size_t i = 0; i < n.ids.size(); ++i)
                    std::copy(table.data.begin() + static_cast<std::size_t>(n.ids[i]) * d,
                              table.data.begin() + static_cast<std::size_t>(n.ids[i] + 1) * d,
                              out.data.begin() + i * static_cast<std::size_t>(d));
                break;
            }
            case Op::pick: {
                const auto& a = ctx.value[n.inputs[0]];
                out = Tensor<T>(n.shape);
                for (std::size_t i = 0; i < n.ids.size(); ++i)
                    out.data[i] = a.at(static_cast<int>(i), n.ids[i]);
                break;
            }
            case Op::sum_all:
            case Op::mean_all: {
                const auto& a = ctx.value[n.inputs[0]];
                T total = T(0);
                for (const T v : a.data) total += v;
                if (n.op == Op::mean_all) total /= static_cast<T>(a.data.size());
                out = Tensor<T>::scalar(total);
                break;
            }
        }
        PLAB_CHECK(out.all_finite(), "non-finite values produced at ", g.label(id));
    }
    return ctx;
}

// Reverse-mode gradients of a scalar output with respect to every declared
// parameter. Parameters with no path to the loss get exact zeros.
template <class T>
ParamSet<T> backward(const Graph<T>& g, const EvalContext<T>& ctx,
                     typename Graph<T>::NodeId loss) {
    const auto& loss_node = g.node(loss);
    PLAB_CHECK(loss_node.shape == Shape{1}, "backward: loss must be scalar, got ",
               shape_str(loss_node.shape), " at ", g.label(loss));

    // Reachability sweep so untouched subgraphs never allocate gradients.
    std::vector<char> needed(static_cast<std::size_t>(g.node_count()), 0);
    needed[static_cast<std::size_t>(loss)] = 1;
    for (int id = loss; id >= 0; --id) {
        if (!needed[static_cast<std::size_t>(id)]) continue;
        for (const auto in : g.node(id).inputs) needed[static_cast<std::size_t>(in)] = 1;
    }

    std::vector<Tensor<T>> grad(static_cast<std::size_t>(g.node_count()));
    const auto ensure = [&](int id) -> Tensor<T>& {
        auto& t = grad[static_cast<std::size_t>(id)];
        if (t.data.empty()) t = Tensor<T>(g.node(id).shape);
        return t;
    };
    ensure(loss).data[0] = T(1);

    for (int id = loss; id >= 0; --id) {
        if (!needed[static_cast<std::size_t>(id)] || grad[static_cast<std::size_t>(id)].data.empty())
            continue;
        const auto& n = g.node(id);
        const Tensor<T>& gz = grad[static_cast<std::size_t>(id)];
        const auto val = [&](int in) -> const Tensor<T>& { return ctx.value[static_cast<std::size_t>(in)]; };
        switch (n.op) {
            case Op::input:
            case Op::param:
            case Op::constant:
                break;
            case Op::add: {
                auto& ga = ensure(n.inputs[0]);
                auto& gb = ensure(n.inputs[1]);
                for (std::size_t i = 0; i < gz.data.size(); ++i) ga.data[i] += gz.data[i];
                if (same_shape(ga, gb)) {
                    for (std::size_t i = 0; i < gz.data.size(); ++i) gb.data[i] += gz.data[i];
                } else {
                    const int rows = n.shape[0], cols = n.shape[1];
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c)
                            gb.data[c] += gz.data[static_cast<std::size_t>(r) * cols + c];
                }
                break;
            }
            case Op::mul: {
                auto& ga = ensure(n.inputs[0]);
                auto& gb = ensure(n.inputs[1]);
                const auto& a = val(n.inputs[0]);
                const auto& b = val(n.inputs[1]);
                for (std::size_t i = 0; i < gz.data.size(); ++i) {
                    ga.data[i] += gz.data[i] * b.data[i];
                    gb.data[i] += gz.data[i] * a.data[i];
                }
                break;
            }
            case Op::scale: {
                auto& ga = ensure(n.inputs[0]);
                const T f = static_cast<T>(n.factor);
                for (std::size_t i = 0; i < gz.data.size(); ++i) ga.data[i] += f * gz.data[i];
                break;
            }
            case Op::matmul: {
                detail::matmul_a_bt(gz, val(n.inputs[1]), ensure(n.inputs[0]));
                detail::matmul_at_b(val(n.inputs[0]), gz, ensure(n.inputs[1]));
                break;
            }
            case Op::transpose: {
                auto& ga = ensure(n.inputs[0]);
                for (int r = 0; r < n.shape[0]; ++r)
                    for (int c = 0; c < n.shape[1]; ++c) ga.at(c, r) += gz.at(r, c);
                break;
            }
            case Op::concat: {
                if (n.axis == 0) {
                    std::size_t pos = 0;
                    for (const auto in : n.inputs) {
                        auto& gi = ensure(in);
                        for (std::size_t i = 0; i < gi.data.size(); ++i) gi.data[i] += gz.data[pos + i];
                        pos += gi.data.size();
                    }
                } else {
                    const int rows = n.shape[0];
                    int col0 = 0;
                    for (const auto in : n.inputs) {
                        auto& gi = ensure(in);
                        const int pc = gi.shape[1];
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < pc; ++c) gi.at(r, c) += gz.at(r, col0 + c);
                        col0 += pc;
                    }
                }
                break;
            }
            case Op::slice: {
                auto& ga = ensure(n.inputs[0]);
                if (n.axis == 0) {
                    const std::size_t cols = ga.data.size() / static_cast<std::size_t>(ga.shape[0]);
                    for (std::size_t i = 0; i < gz.data.size(); ++i)
                        ga.data[static_cast<std::size_t>(n.start) * cols + i] += gz.data[i];
                } else {
                    for (int r = 0; r < n.shape[0]; ++r)
                        for (int c = 0; c < n.shape[1]; ++c) ga.at(r, n.start + c) += gz.at(r, c);
                }
                break;
            }
            case Op::softmax: {
                auto& ga = ensure(n.inputs[0]);
                const Tensor<T>& y = ctx.value[static_cast<std::size_t>(id)];
                const int rows = n.shape[0], cols = n.shape[1];
                for (int r = 0; r < rows; ++r) {
                    T dot = T(0);
                    for (int c = 0; c < cols; ++c) dot += gz.at(r, c) * y.at(r, c);
                    for (int c = 0; c < cols; ++c) ga.at(r, c) += y.at(r, c) * (gz.at(r, c) - dot);
                }
                break;
            }
            case Op::log_softmax: {
                auto& ga = ensure(n.inputs[0]);
                const Tensor<T>& y = ctx.value[static_cast<std::size_t>(id)];
                const int rows = n.shape[0], cols = n.shape[1];
                for (int r = 0; r < rows; ++r) {
                    T total = T(0);
                    for (int c = 0; c < cols; ++c) total += gz.at(r, c);
                    for (int c = 0; c < cols; ++c)
                        ga.at(r, c) += gz.at(r, c) - std::exp(y.at(r, c)) * total;
                }
                break;
            }
            case Op::layer_norm: {
                auto& gx = ensure(n.inputs[0]);
                auto& gg = ensure(n.inputs[1]);
                auto& gb = ensure(n.inputs[2]);
                const auto& x = val(n.inputs[0]);
                const auto& gain = val(n.inputs[1]);
                const int rows = n.shape[0], cols = n.shape[1];
                for (int r = 0; r < rows; ++r) {
                    T mu = T(0);
                    for (int c = 0; c < cols; ++c) mu += x.at(r, c);
                    mu /= static_cast<T>(cols);
                    T var = T(0);
                    for (int c = 0; c < cols; ++c) {
                        const T d = x.at(r, c) - mu;
                        var += d * d;
                    }
                    var /= static_cast<T>(cols);
                    const T inv = T(1) / std::sqrt(var + static_cast<T>(n.eps));
                    T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
                    for (int c = 0; c < cols; ++c) {
                        const T xhat = (x.at(r, c) - mu) * inv;
                        const T dxhat = gz.at(r, c) * gain.data[c];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                        gg.data[c] += gz.at(r, c) * xhat;
                        gb.data[c] += gz.at(r, c);
                    }
                    mean_dxhat /= static_cast<T>(cols);
                    mean_dxhat_xhat /= static_cast<T>(cols);
                    for (int c = 0; c < cols; ++c) {
                        const T xhat = (x.at(r, c) - mu) * inv;
                        const T dxhat = gz.at(r, c) * gain.data[c];
                        gx.at(r, c) += (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv;
                    }
                }
                break;
            }
            case Op::tanh_fn: {
                auto& ga = ensure(n.inputs[0]);
                const Tensor<T>& y = ctx.value[static_cast<std::size_t>(id)];
                for (std::size_t i = 0; i < gz.data.size(); ++i)
                    ga.data[i] += gz.data[i] * (T(1) - y.data[i] * y.data[i]);
                break;
            }
            case Op::embed: {
                auto& gt = ensure(n.inputs[0]);
                const int d = gt.shape[1];
                for (std::size_t i = 0; i < n.ids.size(); ++i)
                    for (int c = 0; c < d; ++c)
                        gt.at(n.ids[i], c) += gz.data[i * static_cast<std::size_t>(d) + c];
                break;
            }
            case Op::pick: {
                auto& ga = ensure(n.inputs[0]);
                for (std::size_t i = 0; i < n.ids.size(); ++i)
                    ga.at(static_cast<int>(i), n.ids[i]) += gz.data[i];
                break;
            }
            case Op::sum_all: {
                auto& ga = ensure(n.inputs[0]);
                for (T& v : ga.data) v += gz.data[0];
                break;
            }
            case Op::mean_all: {
                auto& ga = ensure(n.inputs[0]);
                const T f = gz.data[0] / static_cast<T>(ga.data.size());
                for (T& v : ga.data) v += f;
                break;
            }
        }
    }

    ParamSet<T> out;
    for (const auto pid : g.param_ids()) {
        const auto& n = g.node(pid);
        Tensor<T>& gp = grad[static_cast<std::size_t>(pid)];
        if (gp.data.empty()) gp = Tensor<T>(n.shape);
        PLAB_CHECK(gp.all_finite(), "non-finite gradient at ", g.label(pid));
        out.add(n.name, std::move(gp));
    }
    return out;
}

}  // namespace plab
