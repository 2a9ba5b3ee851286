#include "mfdmeta/biparabolic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mfd {

namespace {

double softplus_val(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double inv_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

constexpr double kA2Floor = 1e-12;

std::vector<double> softmax_weights(const Tensor& logits) {
    std::vector<double> w(static_cast<size_t>(logits.numel()));
    double mx = logits[0];
    for (int64_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, logits[i]);
    double z = 0;
    for (int64_t i = 0; i < logits.numel(); ++i) {
        w[static_cast<size_t>(i)] = std::exp(logits[i] - mx);
        z += w[static_cast<size_t>(i)];
    }
    for (auto& x : w) x /= z;
    return w;
}

// Type-7 empirical quantile (linear interpolation) on unsorted data.
double quantile(std::vector<double> v, double p) {
    if (v.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

struct LossGraph {
    Var total;
    BiParabolicLoss components;
};

// Eager graph for one epoch. Regime masks and the vertex-height target come
// from the current numeric x_cd; they re-enter as constants, so gradients
// treat them as fixed (counts have no useful gradient anyway).
LossGraph build_loss(const BoundParams& bp, const std::vector<double>& anchors,
                     const MfdSeries& series, double alpha, double beta) {
    const int64_t n = static_cast<int64_t>(series.points.size());
    Tensor xs({n}), fs({n});
    for (int64_t i = 0; i < n; ++i) {
        xs[i] = series.points[static_cast<size_t>(i)].occupancy;
        fs[i] = series.points[static_cast<size_t>(i)].flow;
    }
    Var x_const = Var::constant(xs);
    Var f_const = Var::constant(fs);
    Var anchors_const = Var::constant(Tensor({(int64_t)anchors.size()}, anchors));

    Var w = softmax(bp.at("logits"));
    Var x_cd = sum(mul(w, anchors_const));
    Var f_vertex = bp.at("f_vertex");
    Var a2 = add(softplus(bp.at("a2_raw")), Var::scalar(kA2Floor));
    Var a1 = div(f_vertex, square(x_cd));

    const double xcd_val = x_cd.value().item();

    Var dx2 = square(sub(x_const, x_cd));
    Var pred1 = sub(f_vertex, mul(a1, dx2));
    Var pred2 = sub(f_vertex, mul(a2, dx2));

    Tensor mask1(xs.shape()), mask2(xs.shape());
    int64_t n1 = 0, n2 = 0;
    for (int64_t i = 0; i < n; ++i) {
        const bool uncongested = xs[i] <= xcd_val;
        mask1[i] = uncongested ? 1.0 : 0.0;
        mask2[i] = uncongested ? 0.0 : 1.0;
        (uncongested ? n1 : n2) += 1;
    }

    LossGraph g;
    g.components.regime1_empty = n1 == 0;
    g.components.regime2_empty = n2 == 0;

    // Per-regime means implement the inverse-frequency weighting: each point
    // carries weight 1/n_regime.
    Var l1 = n1 > 0 ? div(sum(mul(Var::constant(mask1), square(sub(f_const, pred1)))),
                          Var::scalar(static_cast<double>(n1)))
                    : Var::scalar(0.0);
    Var l2 = n2 > 0 ? div(sum(mul(Var::constant(mask2), square(sub(f_const, pred2)))),
                          Var::scalar(static_cast<double>(n2)))
                    : Var::scalar(0.0);

    // Smooth surrogate for "count of observations above the vertex flow".
    Var l_lambda = mean(relu(sub(f_const, f_vertex)));

    // Vertex height anchored near (not at) the top of the flows around x_cd.
    std::vector<double> near_flows;
    for (int64_t i = 0; i < n; ++i)
        if (std::abs(xs[i] - xcd_val) <= 0.05) near_flows.push_back(fs[i]);
    if (near_flows.empty()) near_flows.assign(fs.data(), fs.data() + n);
    const double q95 = quantile(near_flows, 0.95);
    Var l_beta = square(sub(f_vertex, Var::scalar(q95)));

    g.total = add(add(l1, l2), add(mul(Var::scalar(alpha), l_lambda), mul(Var::scalar(beta), l_beta)));
    g.components.l1 = l1.value().item();
    g.components.l2 = l2.value().item();
    g.components.l_lambda = l_lambda.value().item();
    g.components.l_beta = l_beta.value().item();
    g.components.total = g.total.value().item();
    return g;
}

} // namespace

double BiParabolicParams::x_cd() const {
    auto w = softmax_weights(values.at("logits"));
    double acc = 0;
    for (size_t i = 0; i < w.size(); ++i) acc += w[i] * anchors[i];
    return acc;
}

double BiParabolicParams::a2() const { return softplus_val(values.at("a2_raw").item()) + kA2Floor; }

double predict(const BiParabolicParams& params, double x) {
    if (x < 0) throw std::invalid_argument("predict: occupancy must be nonnegative");
    const double xcd = params.x_cd();
    const double fv = params.f_vertex();
    const double a1 = fv / (xcd * xcd);
    const double a = x <= xcd ? a1 : params.a2();
    const double dx = x - xcd;
    return fv - a * (dx * dx); // same association as the training graph
}

BiParabolicParams init_biparabolic(const MfdSeries& normalized, int max_anchors) {
    if (normalized.points.empty()) throw std::invalid_argument("init_biparabolic: empty series");

    // Deduplicated sorted occupancies, uniformly subsampled past the cap.
    std::vector<std::pair<double, double>> sorted; // (occ, flow)
    sorted.reserve(normalized.points.size());
    for (const auto& p : normalized.points) sorted.emplace_back(p.occupancy, p.flow);
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> xs;
    for (size_t i = 0; i < sorted.size();) {
        size_t j = i;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) ++j;
        xs.push_back(sorted[i].first);
        i = j;
    }
    std::vector<double> anchors;
    if (static_cast<int>(xs.size()) <= max_anchors) {
        anchors = xs;
    } else {
        for (int k = 0; k < max_anchors; ++k) {
            const size_t idx = static_cast<size_t>(
                static_cast<double>(k) * static_cast<double>(xs.size() - 1) /
                static_cast<double>(max_anchors - 1));
            anchors.push_back(xs[idx]);
        }
    }

    double fmax = 0;
    for (const auto& p : normalized.points) fmax = std::max(fmax, p.flow);
    if (fmax <= 0) throw std::invalid_argument("init_biparabolic: flows are all zero");

    // Least-squares width of the congested branch for a fixed vertex:
    // fv - a2*dx^2 ~= f  =>  a2 = sum(dx^2 (fv-f)) / sum(dx^4).
    auto ls_a2 = [&](double xcd) {
        double num = 0, den = 0;
        for (const auto& p : normalized.points) {
            if (p.occupancy <= xcd) continue;
            const double dx2 = (p.occupancy - xcd) * (p.occupancy - xcd);
            num += dx2 * (fmax - p.flow);
            den += dx2 * dx2;
        }
        return den > 0 ? std::clamp(num / den, 1e-2, 1e3) : fmax / (xcd * xcd);
    };

    // Coarse vertex search over the anchors; gradient descent refines from
    // there. Counting both regimes equally mirrors the training loss.
    auto sse_at = [&](double xcd) {
        const double a1 = fmax / (xcd * xcd);
        const double a2 = ls_a2(xcd);
        double s1 = 0, s2 = 0;
        int64_t n1 = 0, n2 = 0;
        for (const auto& p : normalized.points) {
            const double dx = p.occupancy - xcd;
            const double pred = fmax - (p.occupancy <= xcd ? a1 : a2) * dx * dx;
            const double e = p.flow - pred;
            if (p.occupancy <= xcd) {
                s1 += e * e;
                ++n1;
            } else {
                s2 += e * e;
                ++n2;
            }
        }
        return (n1 > 0 ? s1 / static_cast<double>(n1) : 0.0) +
               (n2 > 0 ? s2 / static_cast<double>(n2) : 0.0);
    };

    const size_t stride = std::max<size_t>(1, anchors.size() / 96);
    double best_x = anchors[anchors.size() / 2];
    double best_sse = sse_at(best_x);
    for (size_t i = 0; i < anchors.size(); i += stride) {
        if (anchors[i] <= 0) continue;
        const double s = sse_at(anchors[i]);
        if (s < best_sse) {
            best_sse = s;
            best_x = anchors[i];
        }
    }

    // Softmax mass concentrated around the chosen vertex.
    const double range = std::max(anchors.back() - anchors.front(), 1e-6);
    const double width = 0.05 * range;
    Tensor logits({(int64_t)anchors.size()});
    for (size_t i = 0; i < anchors.size(); ++i) {
        const double d = (anchors[i] - best_x) / width;
        logits[(int64_t)i] = -d * d;
    }

    BiParabolicParams params;
    params.anchors = std::move(anchors);
    params.values.add("logits", std::move(logits));
    params.values.add("f_vertex", Tensor::scalar(fmax));
    params.values.add("a2_raw", Tensor::scalar(inv_softplus(ls_a2(params.x_cd()))));
    return params;
}

BiParabolicLoss composite_loss(const BiParabolicParams& params, const MfdSeries& normalized,
                               double alpha, double beta) {
    BoundParams bp = bind_params(params.values, false);
    return build_loss(bp, params.anchors, normalized, alpha, beta).components;
}

BiParabolicFit fit_biparabolic(const MfdSeries& normalized, const BiParabolicHyper& hyper,
                               std::optional<BiParabolicParams> start) {
    if (!normalized.norm) throw std::invalid_argument("fit_biparabolic: series must be normalized");
    if (normalized.points.size() < 10)
        throw std::invalid_argument("fit_biparabolic: need at least 10 points");

    BiParabolicFit fit;
    fit.params = start ? std::move(*start) : init_biparabolic(normalized, hyper.max_anchors);
    fit.loss_trace.reserve(static_cast<size_t>(hyper.epochs));

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        BoundParams bp = bind_params(fit.params.values, true);
        LossGraph g = build_loss(bp, fit.params.anchors, normalized, hyper.alpha, hyper.beta);
        if (!std::isfinite(g.components.total))
            throw std::runtime_error("fit_biparabolic: diverged at epoch " + std::to_string(epoch));
        fit.loss_trace.push_back(g.components);

        ParameterSet grads = grad(g.total, bp);
        fit.params.values = sgd_step(fit.params.values, grads, hyper.lr);

        const int w = hyper.early_stop_window;
        if (epoch >= w) {
            const double prev = fit.loss_trace[static_cast<size_t>(epoch - w)].total;
            const double cur = g.components.total;
            if (std::abs(prev - cur) <= hyper.early_stop_rel * std::max(std::abs(prev), 1e-300)) {
                fit.converged_early = true;
                break;
            }
        }
    }
    return fit;
}

PredictionBand prediction_interval(const BiParabolicFit& fit, const MfdSeries& normalized,
                                   double level) {
    if (level <= 0 || level >= 1) throw std::invalid_argument("prediction_interval: bad level");
    const double xcd = fit.params.x_cd();

    std::vector<double> res1, res2;
    for (const auto& p : normalized.points) {
        const double r = p.flow - predict(fit.params, p.occupancy);
        (p.occupancy <= xcd ? res1 : res2).push_back(r);
    }

    const double plo = (1.0 - level) / 2.0, phi = 1.0 - plo;
    PredictionBand band;
    band.uncongested_ok = res1.size() >= 20;
    band.congested_ok = res2.size() >= 20;
    const double q1lo = band.uncongested_ok ? quantile(res1, plo) : 0.0;
    const double q1hi = band.uncongested_ok ? quantile(res1, phi) : 0.0;
    const double q2lo = band.congested_ok ? quantile(res2, plo) : 0.0;
    const double q2hi = band.congested_ok ? quantile(res2, phi) : 0.0;

    std::vector<double> xs;
    for (const auto& p : normalized.points) xs.push_back(p.occupancy);
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    for (double x : xs) {
        const double f = predict(fit.params, x);
        const bool unc = x <= xcd;
        band.x.push_back(x);
        band.lo.push_back(f + (unc ? q1lo : q2lo));
        band.hi.push_back(f + (unc ? q1hi : q2hi));
    }
    return band;
}

} // namespace mfd
