#include "mfdmeta/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace mfd {

void ParameterSet::add(std::string name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("ParameterSet: duplicate name " + name);
    index_.emplace(name, items_.size());
    items_.emplace_back(std::move(name), std::move(t));
}

Tensor& ParameterSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParameterSet: no parameter " + name);
    return items_[it->second].second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
}

bool ParameterSet::same_keys(const ParameterSet& o) const {
    if (items_.size() != o.items_.size()) return false;
    for (size_t i = 0; i < items_.size(); ++i)
        if (items_[i].first != o.items_[i].first) return false;
    return true;
}

const Var& BoundParams::at(const std::string& name) const {
    for (const auto& [n, v] : vars)
        if (n == name) return v;
    throw std::out_of_range("BoundParams: no parameter " + name);
}

std::vector<Var> BoundParams::var_list() const {
    std::vector<Var> out;
    out.reserve(vars.size());
    for (const auto& [n, v] : vars) out.push_back(v);
    return out;
}

BoundParams bind_params(const ParameterSet& params, bool requires_grad) {
    BoundParams bp;
    bp.vars.reserve(params.size());
    for (const auto& [name, t] : params)
        bp.vars.emplace_back(name, Var::leaf(t, requires_grad, name));
    return bp;
}

ParameterSet grad(const Var& loss, const BoundParams& wrt) {
    auto vars = wrt.var_list();
    auto gs = grad_vars(loss, vars);
    ParameterSet out;
    for (size_t i = 0; i < wrt.vars.size(); ++i) out.add(wrt.vars[i].first, gs[i].value());
    return out;
}

ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, double lr) {
    if (!params.same_keys(grads)) throw std::invalid_argument("sgd_step: key mismatch");
    ParameterSet out;
    for (const auto& [name, t] : params) {
        const Tensor& g = grads.at(name);
        if (!g.same_shape(t)) throw std::invalid_argument("sgd_step: shape mismatch at " + name);
        Tensor nt = t;
        for (int64_t i = 0; i < nt.numel(); ++i) nt[i] -= lr * g[i];
        out.add(name, std::move(nt));
    }
    out.rng_seed = params.rng_seed;
    return out;
}

std::pair<ParameterSet, AdamState> adam_step(const ParameterSet& params, const ParameterSet& grads,
                                             AdamState state, double lr, double beta1, double beta2,
                                             double eps) {
    if (!params.same_keys(grads)) throw std::invalid_argument("adam_step: key mismatch");
    if (state.step == 0) {
        state.m = ParameterSet();
        state.v = ParameterSet();
        for (const auto& [name, t] : params) {
            state.m.add(name, Tensor(t.shape()));
            state.v.add(name, Tensor(t.shape()));
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    ParameterSet out;
    for (const auto& [name, t] : params) {
        const Tensor& g = grads.at(name);
        Tensor& m = state.m.at(name);
        Tensor& v = state.v.at(name);
        Tensor nt = t;
        for (int64_t i = 0; i < nt.numel(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            nt[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
        out.add(name, std::move(nt));
    }
    out.rng_seed = params.rng_seed;
    return {std::move(out), std::move(state)};
}

ParameterSet grad_through_update(const StepLossBuilder& inner_loss, const LossBuilder& meta_loss,
                                 const ParameterSet& theta, double alpha, int n_steps,
                                 MetaOrder order, UpdateTrace* trace) {
    if (n_steps < 0) throw std::invalid_argument("grad_through_update: n_steps < 0");
    if (alpha <= 0.0 && n_steps > 0)
        throw std::invalid_argument("grad_through_update: alpha must be positive");

    if (order == MetaOrder::SecondOrder) {
        BoundParams leaves = bind_params(theta, true);
        BoundParams cur = leaves;
        const Var a = Var::scalar(alpha);
        for (int s = 0; s < n_steps; ++s) {
            Var l = inner_loss(s, cur);
            if (trace) trace->inner_losses.push_back(l.value().item());
            auto gs = grad_vars(l, cur.var_list());
            for (size_t i = 0; i < cur.vars.size(); ++i)
                cur.vars[i].second = sub(cur.vars[i].second, mul(a, gs[i]));
        }
        Var ml = meta_loss(cur);
        if (trace) trace->meta_loss = ml.value().item();
        return grad(ml, leaves);
    }

    // FirstOrder: run the inner loop numerically, then take the meta gradient
    // at the adapted parameters as if they were fresh leaves.
    ParameterSet adapted = theta.clone();
    for (int s = 0; s < n_steps; ++s) {
        BoundParams bp = bind_params(adapted, true);
        Var l = inner_loss(s, bp);
        if (trace) trace->inner_losses.push_back(l.value().item());
        ParameterSet g = grad(l, bp);
        adapted = sgd_step(adapted, g, alpha);
    }
    BoundParams bp = bind_params(adapted, true);
    Var ml = meta_loss(bp);
    if (trace) trace->meta_loss = ml.value().item();
    return grad(ml, bp);
}

ParameterSet grad_through_update(const LossBuilder& loss, const ParameterSet& theta, double alpha,
                                 int n_steps, MetaOrder order) {
    return grad_through_update([&loss](int, const BoundParams& p) { return loss(p); }, loss, theta,
                               alpha, n_steps, order);
}

Tensor init_uniform_fanin(std::vector<int64_t> shape, int64_t fan_in, std::mt19937_64& rng) {
    if (fan_in <= 0) throw std::invalid_argument("init_uniform_fanin: fan_in must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
    return t;
}

} // namespace mfd
