#pragma once

#include "mfdmeta/tensor.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mfd {

enum class Op {
    Leaf,
    Add, Sub, Mul, Div,
    Neg, Matmul, Transpose,
    Relu, Sigmoid, Softplus, Exp, Log, Square, Sqrt,
    Softmax,
    Sum, Mean, SumRows, BroadcastRows,
    Concat, Slice, PadEmbed,
    Select, Dropout,
};

const char* op_name(Op op);

struct Node {
    Op op = Op::Leaf;
    std::vector<std::shared_ptr<Node>> inputs;
    Tensor value;
    bool requires_grad = false;
    std::string name; // leaves only, for diagnostics
    Tensor aux;       // dropout/select mask, captured at construction
    int64_t i0 = 0;   // slice offset / broadcast row count
    int64_t i1 = 0;   // slice length / pad total
};

/// Handle to a node in the eagerly-evaluated computation graph. Values are
/// computed at construction; backward passes build adjoints out of the same
/// primitive ops, so gradients can be differentiated again (needed for the
/// second-order meta updates).
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad, std::string name = {});
    static Var constant(Tensor value);
    static Var scalar(double v) { return constant(Tensor::scalar(v)); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const std::vector<int64_t>& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Elementwise binaries; equal shapes, scalar against anything, or matrix
// against a matching row vector.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& a);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);

Var softmax(const Var& a); // 1-D

Var sum(const Var& a);  // -> scalar
Var mean(const Var& a); // -> scalar
Var sum_rows(const Var& a);                    // [N,D] -> [D]
Var broadcast_rows(const Var& a, int64_t rows); // [D] -> [rows,D]

Var concat(const Var& a, const Var& b);                   // 1-D
Var slice(const Var& a, int64_t offset, int64_t len);     // 1-D
Var pad_embed(const Var& a, int64_t offset, int64_t total); // 1-D

/// cond's values pick a (where cond > 0) or b elementwise; no gradient flows
/// into cond.
Var select(const Var& cond, const Var& a, const Var& b);

/// Inverted dropout with an explicit seed; rate 0 returns the input untouched.
Var dropout(const Var& a, double rate, uint64_t seed);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double b) { return add(a, Var::scalar(b)); }
inline Var operator+(double a, const Var& b) { return add(Var::scalar(a), b); }
inline Var operator-(const Var& a, double b) { return sub(a, Var::scalar(b)); }
inline Var operator-(double a, const Var& b) { return sub(Var::scalar(a), b); }
inline Var operator*(const Var& a, double b) { return mul(a, Var::scalar(b)); }
inline Var operator*(double a, const Var& b) { return mul(Var::scalar(a), b); }
inline Var operator/(const Var& a, double b) { return div(a, Var::scalar(b)); }
inline Var operator/(double a, const Var& b) { return div(Var::scalar(a), b); }

/// Adjoints of `loss` (scalar) with respect to `wrt`, as graph nodes built
/// from primitive ops. Vars not reachable from the loss get zero adjoints.
std::vector<Var> grad_vars(const Var& loss, std::span<const Var> wrt);

} // namespace mfd
