#pragma once

#include "mfdmeta/graph.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mfd {

/// Ordered, named collection of trainable tensors. Copying is a deep clone
/// (tensors are value types); iteration order is insertion order.
class ParameterSet {
public:
    void add(std::string name, Tensor t);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    ParameterSet clone() const { return *this; }
    bool same_keys(const ParameterSet& o) const;

    uint64_t rng_seed = 0;

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, size_t> index_;
};

/// Graph leaves bound from a ParameterSet, in the same order.
struct BoundParams {
    std::vector<std::pair<std::string, Var>> vars;

    const Var& at(const std::string& name) const;
    std::vector<Var> var_list() const;
};

BoundParams bind_params(const ParameterSet& params, bool requires_grad = true);

/// Numeric gradient of a scalar loss w.r.t. bound parameters; parameters the
/// loss never touches get zero gradients.
ParameterSet grad(const Var& loss, const BoundParams& wrt);

/// params - lr * grads, as a new set.
ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, double lr);

struct AdamState {
    ParameterSet m;
    ParameterSet v;
    int64_t step = 0;
};

std::pair<ParameterSet, AdamState> adam_step(const ParameterSet& params, const ParameterSet& grads,
                                             AdamState state, double lr, double beta1 = 0.9,
                                             double beta2 = 0.999, double eps = 1e-8);

enum class MetaOrder { SecondOrder, FirstOrder };

using LossBuilder = std::function<Var(const BoundParams&)>;
using StepLossBuilder = std::function<Var(int step, const BoundParams&)>;

struct UpdateTrace {
    std::vector<double> inner_losses; // one per inner step
    double meta_loss = 0.0;
};

/// Gradient of meta_loss(theta') w.r.t. theta, where theta' results from
/// n_steps of SGD on inner_loss at rate alpha. SecondOrder differentiates
/// through the unrolled updates; FirstOrder evaluates the meta gradient at
/// the adapted parameters, treating the updates as constants.
ParameterSet grad_through_update(const StepLossBuilder& inner_loss, const LossBuilder& meta_loss,
                                 const ParameterSet& theta, double alpha, int n_steps,
                                 MetaOrder order, UpdateTrace* trace = nullptr);

/// Same inner and meta objective (the toy/ablation form).
ParameterSet grad_through_update(const LossBuilder& loss, const ParameterSet& theta, double alpha,
                                 int n_steps, MetaOrder order);

/// Layer initialization: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Tensor init_uniform_fanin(std::vector<int64_t> shape, int64_t fan_in, std::mt19937_64& rng);

} // namespace mfd
