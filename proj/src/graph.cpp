#include "mfdmeta/graph.hpp"
#include "mfdmeta/kernels.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mfd {

namespace {

using K = kernels::Binary;
using U = kernels::Unary;

void check_finite(const Tensor& t, Op op) {
    for (int64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i]))
            throw std::runtime_error(std::string("non-finite value in op ") + op_name(op) +
                                     " shape " + t.shape_str());
    }
}

std::shared_ptr<Node> make_node(Op op, std::vector<std::shared_ptr<Node>> inputs, Tensor value) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    check_finite(value, op);
    n->value = std::move(value);
    return n;
}

// Broadcast classification for elementwise binaries.
enum class BCast { Equal, ScalarLeft, ScalarRight, RowRight, RowLeft };

BCast classify(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return BCast::Equal;
    if (a.is_scalar()) return BCast::ScalarLeft;
    if (b.is_scalar()) return BCast::ScalarRight;
    // Row vectors must be rank 1 so adjoint shapes stay stable.
    if (a.rank() == 2 && b.rank() == 1 && b.numel() == a.dim(1)) return BCast::RowRight;
    if (b.rank() == 2 && a.rank() == 1 && a.numel() == b.dim(1)) return BCast::RowLeft;
    throw std::invalid_argument("elementwise op: incompatible shapes " + a.shape_str() + " and " +
                                b.shape_str());
}

Var binary(Op op, K k, const Var& a, const Var& b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    switch (classify(ta, tb)) {
        case BCast::Equal: {
            Tensor out(ta.shape());
            kernels::ewise(k, ta.data(), tb.data(), out.data(), ta.numel());
            return Var(make_node(op, {a.node(), b.node()}, std::move(out)));
        }
        case BCast::ScalarLeft: {
            Tensor out(tb.shape());
            kernels::ewise_scalar(k, tb.data(), ta.item(), true, out.data(), tb.numel());
            return Var(make_node(op, {a.node(), b.node()}, std::move(out)));
        }
        case BCast::ScalarRight: {
            Tensor out(ta.shape());
            kernels::ewise_scalar(k, ta.data(), tb.item(), false, out.data(), ta.numel());
            return Var(make_node(op, {a.node(), b.node()}, std::move(out)));
        }
        case BCast::RowRight: {
            Tensor out(ta.shape());
            kernels::ewise_row(k, ta.data(), tb.data(), out.data(), ta.dim(0), ta.dim(1));
            return Var(make_node(op, {a.node(), b.node()}, std::move(out)));
        }
        case BCast::RowLeft: {
            // row op matrix: materialize the row across rows, then apply.
            Tensor lhs(tb.shape());
            kernels::broadcast_rows(ta.data(), lhs.data(), tb.dim(0), tb.dim(1));
            Tensor out(tb.shape());
            kernels::ewise(k, lhs.data(), tb.data(), out.data(), tb.numel());
            return Var(make_node(op, {a.node(), b.node()}, std::move(out)));
        }
    }
    throw std::logic_error("unreachable");
}

Var unary(Op op, U k, const Var& a) {
    Tensor out(a.value().shape());
    kernels::unary(k, a.value().data(), out.data(), a.value().numel());
    return Var(make_node(op, {a.node()}, std::move(out)));
}

Var ones_like(const Tensor& t) { return Var::constant(Tensor::full(t.shape(), 1.0)); }

// Reduce an adjoint to the shape the input had under the broadcast that the
// forward pass applied.
Var reduce_to(const Var& g, const Tensor& target) {
    const Tensor& tg = g.value();
    if (tg.same_shape(target)) return g;
    if (target.is_scalar()) return sum(g);
    if (tg.rank() == 2 && target.rank() == 1 && target.numel() == tg.dim(1)) return sum_rows(g);
    throw std::logic_error("reduce_to: unsupported adjoint reduction");
}

} // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Neg: return "neg";
        case Op::Matmul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Softplus: return "softplus";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Sqrt: return "sqrt";
        case Op::Softmax: return "softmax";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::SumRows: return "sum_rows";
        case Op::BroadcastRows: return "broadcast_rows";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::PadEmbed: return "pad_embed";
        case Op::Select: return "select";
        case Op::Dropout: return "dropout";
    }
    return "?";
}

Var Var::leaf(Tensor value, bool requires_grad, std::string name) {
    auto n = std::make_shared<Node>();
    n->op = Op::Leaf;
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    check_finite(value, Op::Leaf);
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::constant(Tensor value) { return leaf(std::move(value), false); }

Var add(const Var& a, const Var& b) { return binary(Op::Add, K::Add, a, b); }
Var sub(const Var& a, const Var& b) { return binary(Op::Sub, K::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(Op::Mul, K::Mul, a, b); }
Var div(const Var& a, const Var& b) { return binary(Op::Div, K::Div, a, b); }

Var neg(const Var& a) { return unary(Op::Neg, U::Neg, a); }
Var relu(const Var& a) { return unary(Op::Relu, U::Relu, a); }
Var sigmoid(const Var& a) { return unary(Op::Sigmoid, U::Sigmoid, a); }
Var softplus(const Var& a) { return unary(Op::Softplus, U::Softplus, a); }
Var exp(const Var& a) { return unary(Op::Exp, U::Exp, a); }
Var log(const Var& a) { return unary(Op::Log, U::Log, a); }
Var square(const Var& a) { return unary(Op::Square, U::Square, a); }
Var sqrt(const Var& a) { return unary(Op::Sqrt, U::Sqrt, a); }

Var matmul(const Var& a, const Var& b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw std::invalid_argument("matmul: need [m,k]x[k,n], got " + ta.shape_str() + " x " +
                                    tb.shape_str());
    Tensor out({ta.dim(0), tb.dim(1)});
    kernels::matmul(ta.data(), tb.data(), out.data(), ta.dim(0), ta.dim(1), tb.dim(1));
    return Var(make_node(Op::Matmul, {a.node(), b.node()}, std::move(out)));
}

Var transpose(const Var& a) {
    const Tensor& ta = a.value();
    if (ta.rank() != 2) throw std::invalid_argument("transpose: need rank 2");
    Tensor out({ta.dim(1), ta.dim(0)});
    kernels::transpose(ta.data(), out.data(), ta.dim(0), ta.dim(1));
    return Var(make_node(Op::Transpose, {a.node()}, std::move(out)));
}

Var softmax(const Var& a) {
    const Tensor& ta = a.value();
    if (ta.rank() != 1) throw std::invalid_argument("softmax: need rank 1");
    Tensor out(ta.shape());
    double mx = ta[0];
    for (int64_t i = 1; i < ta.numel(); ++i) mx = std::max(mx, ta[i]);
    double z = 0.0;
    for (int64_t i = 0; i < ta.numel(); ++i) {
        out[i] = std::exp(ta[i] - mx);
        z += out[i];
    }
    for (int64_t i = 0; i < ta.numel(); ++i) out[i] /= z;
    return Var(make_node(Op::Softmax, {a.node()}, std::move(out)));
}

Var sum(const Var& a) {
    Tensor out = Tensor::scalar(kernels::sum(a.value().data(), a.value().numel()));
    return Var(make_node(Op::Sum, {a.node()}, std::move(out)));
}

Var mean(const Var& a) {
    if (a.value().numel() == 0) throw std::invalid_argument("mean of empty tensor");
    Tensor out = Tensor::scalar(kernels::sum(a.value().data(), a.value().numel()) /
                                static_cast<double>(a.value().numel()));
    return Var(make_node(Op::Mean, {a.node()}, std::move(out)));
}

Var sum_rows(const Var& a) {
    const Tensor& ta = a.value();
    if (ta.rank() != 2) throw std::invalid_argument("sum_rows: need rank 2");
    Tensor out({ta.dim(1)});
    kernels::sum_rows(ta.data(), out.data(), ta.dim(0), ta.dim(1));
    return Var(make_node(Op::SumRows, {a.node()}, std::move(out)));
}

Var broadcast_rows(const Var& a, int64_t rows) {
    const Tensor& ta = a.value();
    if (ta.rank() != 1) throw std::invalid_argument("broadcast_rows: need rank 1");
    Tensor out({rows, ta.numel()});
    kernels::broadcast_rows(ta.data(), out.data(), rows, ta.numel());
    auto n = make_node(Op::BroadcastRows, {a.node()}, std::move(out));
    n->i0 = rows;
    return Var(std::move(n));
}

Var concat(const Var& a, const Var& b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    if (ta.rank() != 1 || tb.rank() != 1) throw std::invalid_argument("concat: need rank 1");
    Tensor out({ta.numel() + tb.numel()});
    for (int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i];
    for (int64_t i = 0; i < tb.numel(); ++i) out[ta.numel() + i] = tb[i];
    return Var(make_node(Op::Concat, {a.node(), b.node()}, std::move(out)));
}

Var slice(const Var& a, int64_t offset, int64_t len) {
    const Tensor& ta = a.value();
    if (ta.rank() != 1 || offset < 0 || len < 0 || offset + len > ta.numel())
        throw std::invalid_argument("slice: out of range");
    Tensor out({len});
    for (int64_t i = 0; i < len; ++i) out[i] = ta[offset + i];
    auto n = make_node(Op::Slice, {a.node()}, std::move(out));
    n->i0 = offset;
    n->i1 = len;
    return Var(std::move(n));
}

Var pad_embed(const Var& a, int64_t offset, int64_t total) {
    const Tensor& ta = a.value();
    if (ta.rank() != 1 || offset < 0 || offset + ta.numel() > total)
        throw std::invalid_argument("pad_embed: out of range");
    Tensor out({total});
    for (int64_t i = 0; i < ta.numel(); ++i) out[offset + i] = ta[i];
    auto n = make_node(Op::PadEmbed, {a.node()}, std::move(out));
    n->i0 = offset;
    n->i1 = total;
    return Var(std::move(n));
}

Var select(const Var& cond, const Var& a, const Var& b) {
    const Tensor& tc = cond.value();
    const Tensor& ta = a.value();
    if (!tc.same_shape(ta) || !ta.same_shape(b.value()))
        throw std::invalid_argument("select: shapes must match");
    Tensor mask(tc.shape());
    Tensor out(ta.shape());
    for (int64_t i = 0; i < tc.numel(); ++i) {
        mask[i] = tc[i] > 0.0 ? 1.0 : 0.0;
        out[i] = mask[i] > 0.0 ? ta[i] : b.value()[i];
    }
    auto n = make_node(Op::Select, {a.node(), b.node()}, std::move(out));
    n->aux = std::move(mask);
    return Var(std::move(n));
}

Var dropout(const Var& a, double rate, uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (rate == 0.0) return a;
    const Tensor& ta = a.value();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double scale = 1.0 / (1.0 - rate);
    Tensor mask(ta.shape());
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) {
        mask[i] = u(rng) >= rate ? scale : 0.0;
        out[i] = ta[i] * mask[i];
    }
    auto n = make_node(Op::Dropout, {a.node()}, std::move(out));
    n->aux = std::move(mask);
    return Var(std::move(n));
}

namespace {

// Adjoint contributions per op, expressed through the primitive ops so that
// the adjoint graph is itself differentiable.
void accumulate(std::unordered_map<Node*, Var>& adj, const std::shared_ptr<Node>& in, Var contrib) {
    if (!in->requires_grad) return;
    auto it = adj.find(in.get());
    if (it == adj.end())
        adj.emplace(in.get(), std::move(contrib));
    else
        it->second = add(it->second, contrib);
}

void backprop_node(const std::shared_ptr<Node>& n, const Var& g,
                   std::unordered_map<Node*, Var>& adj) {
    const Var out(n);
    auto in = [&](size_t i) { return Var(n->inputs[i]); };
    switch (n->op) {
        case Op::Leaf:
            return;
        case Op::Add:
            accumulate(adj, n->inputs[0], reduce_to(g, n->inputs[0]->value));
            accumulate(adj, n->inputs[1], reduce_to(g, n->inputs[1]->value));
            return;
        case Op::Sub:
            accumulate(adj, n->inputs[0], reduce_to(g, n->inputs[0]->value));
            accumulate(adj, n->inputs[1], reduce_to(neg(g), n->inputs[1]->value));
            return;
        case Op::Mul:
            accumulate(adj, n->inputs[0], reduce_to(mul(g, in(1)), n->inputs[0]->value));
            accumulate(adj, n->inputs[1], reduce_to(mul(g, in(0)), n->inputs[1]->value));
            return;
        case Op::Div:
            accumulate(adj, n->inputs[0], reduce_to(div(g, in(1)), n->inputs[0]->value));
            accumulate(adj, n->inputs[1],
                       reduce_to(neg(div(mul(g, in(0)), square(in(1)))), n->inputs[1]->value));
            return;
        case Op::Neg:
            accumulate(adj, n->inputs[0], neg(g));
            return;
        case Op::Matmul:
            accumulate(adj, n->inputs[0], matmul(g, transpose(in(1))));
            accumulate(adj, n->inputs[1], matmul(transpose(in(0)), g));
            return;
        case Op::Transpose:
            accumulate(adj, n->inputs[0], transpose(g));
            return;
        case Op::Relu: {
            Tensor m(n->inputs[0]->value.shape());
            for (int64_t i = 0; i < m.numel(); ++i)
                m[i] = n->inputs[0]->value[i] > 0.0 ? 1.0 : 0.0;
            accumulate(adj, n->inputs[0], mul(g, Var::constant(std::move(m))));
            return;
        }
        case Op::Sigmoid:
            accumulate(adj, n->inputs[0], mul(g, mul(out, sub(Var::scalar(1.0), out))));
            return;
        case Op::Softplus:
            accumulate(adj, n->inputs[0], mul(g, sigmoid(in(0))));
            return;
        case Op::Exp:
            accumulate(adj, n->inputs[0], mul(g, out));
            return;
        case Op::Log:
            accumulate(adj, n->inputs[0], div(g, in(0)));
            return;
        case Op::Square:
            accumulate(adj, n->inputs[0], mul(g, mul(Var::scalar(2.0), in(0))));
            return;
        case Op::Sqrt:
            accumulate(adj, n->inputs[0], div(g, mul(Var::scalar(2.0), out)));
            return;
        case Op::Softmax:
            // g_x = y * (g - sum(g*y))
            accumulate(adj, n->inputs[0], mul(out, sub(g, sum(mul(g, out)))));
            return;
        case Op::Sum:
            accumulate(adj, n->inputs[0], mul(g, ones_like(n->inputs[0]->value)));
            return;
        case Op::Mean:
            accumulate(adj, n->inputs[0],
                       mul(g, Var::constant(Tensor::full(
                                  n->inputs[0]->value.shape(),
                                  1.0 / static_cast<double>(n->inputs[0]->value.numel())))));
            return;
        case Op::SumRows:
            accumulate(adj, n->inputs[0], broadcast_rows(g, n->inputs[0]->value.dim(0)));
            return;
        case Op::BroadcastRows:
            accumulate(adj, n->inputs[0], sum_rows(g));
            return;
        case Op::Concat: {
            const int64_t na = n->inputs[0]->value.numel();
            const int64_t nb = n->inputs[1]->value.numel();
            accumulate(adj, n->inputs[0], slice(g, 0, na));
            accumulate(adj, n->inputs[1], slice(g, na, nb));
            return;
        }
        case Op::Slice:
            accumulate(adj, n->inputs[0], pad_embed(g, n->i0, n->inputs[0]->value.numel()));
            return;
        case Op::PadEmbed:
            accumulate(adj, n->inputs[0], slice(g, n->i0, n->inputs[0]->value.numel()));
            return;
        case Op::Select: {
            Var m = Var::constant(n->aux);
            accumulate(adj, n->inputs[0], mul(g, m));
            accumulate(adj, n->inputs[1], mul(g, sub(Var::scalar(1.0), m)));
            return;
        }
        case Op::Dropout:
            accumulate(adj, n->inputs[0], mul(g, Var::constant(n->aux)));
            return;
    }
}

} // namespace

std::vector<Var> grad_vars(const Var& loss, std::span<const Var> wrt) {
    if (!loss.defined()) throw std::invalid_argument("grad: undefined loss");
    if (!loss.value().is_scalar())
        throw std::invalid_argument("grad: loss must be scalar, got shape " +
                                    loss.value().shape_str());

    // Post-order over the requires-grad subgraph, iterative to keep deep
    // unrolled graphs off the call stack.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    if (loss.node()->requires_grad) {
        std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack{{loss.node(), 0}};
        seen.insert(loss.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            bool descended = false;
            while (next < node->inputs.size()) {
                auto& in = node->inputs[next++];
                if (in->requires_grad && seen.insert(in.get()).second) {
                    stack.emplace_back(in, 0);
                    descended = true;
                    break;
                }
            }
            if (!descended && next >= node->inputs.size()) {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::unordered_map<Node*, Var> adj;
    if (!order.empty()) {
        adj.emplace(loss.node().get(), Var::scalar(1.0));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            auto found = adj.find(it->get());
            if (found == adj.end()) continue; // not on a path to the loss
            backprop_node(*it, found->second, adj);
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const Var& w : wrt) {
        auto it = adj.find(w.node().get());
        if (it != adj.end())
            result.push_back(it->second);
        else
            result.push_back(Var::constant(Tensor::zeros_like(w.value())));
    }
    return result;
}

} // namespace mfd
