#include "mfdmeta/mtpinn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mfd {

namespace {

double inv_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

void add_linear(ParameterSet& ps, const std::string& prefix, int in, int out,
                std::mt19937_64& rng) {
    ps.add(prefix + ".w", init_uniform_fanin({in, out}, in, rng));
    ps.add(prefix + ".b", init_uniform_fanin({out}, in, rng));
}

void add_branch(ParameterSet& ps, const std::string& name, const MtpinnConfig& cfg,
                std::mt19937_64& rng) {
    int in = cfg.hidden_sizes.back();
    for (size_t i = 0; i < cfg.branch_sizes.size(); ++i) {
        add_linear(ps, name + "." + std::to_string(i), in, cfg.branch_sizes[i], rng);
        in = cfg.branch_sizes[i];
    }
    add_linear(ps, name + ".out", in, 1, rng);
}

Var linear(const BoundParams& bp, const std::string& prefix, const Var& x) {
    return add(matmul(x, bp.at(prefix + ".w")), bp.at(prefix + ".b"));
}

Var branch(const MtpinnConfig& cfg, const BoundParams& bp, const std::string& name, const Var& h) {
    Var g = h;
    for (size_t i = 0; i < cfg.branch_sizes.size(); ++i)
        g = relu(linear(bp, name + "." + std::to_string(i), g));
    return linear(bp, name + ".out", g);
}

} // namespace

MtpinnModel init_mtpinn(const MtpinnConfig& config) {
    if (config.hidden_sizes.empty()) throw std::invalid_argument("init_mtpinn: empty trunk");
    if (config.dropout < 0 || config.dropout >= 1)
        throw std::invalid_argument("init_mtpinn: dropout must be in [0,1)");

    MtpinnModel model;
    model.config = config;
    std::mt19937_64 rng(config.seed);
    model.params.rng_seed = config.seed;

    int in = 1;
    for (size_t i = 0; i < config.hidden_sizes.size(); ++i) {
        add_linear(model.params, "trunk." + std::to_string(i), in, config.hidden_sizes[i], rng);
        in = config.hidden_sizes[i];
    }
    add_branch(model.params, "flow", config, rng);
    if (!config.single_head) {
        add_branch(model.params, "xcd", config, rng);
        add_branch(model.params, "fmax", config, rng);
        model.params.add("offset", Tensor::scalar(config.init_offset));
        model.params.add("scaler_raw", Tensor::scalar(inv_softplus(config.init_scaler - 1.0)));
        // Output biases start the heads in the plausible range for normalized
        // MFDs (flows peak at 1), instead of spending the first chunk of
        // training escaping sigmoid midpoints.
        model.params.at("fmax.out.b")[0] = std::log(0.85 / 0.15); // sigmoid -> 0.85
    }
    model.params.at("flow.out.b")[0] = 0.5;
    return model;
}

namespace {

MtpinnOutputs heads_from_features(const MtpinnConfig& config, const BoundParams& params,
                                  const Var& h) {
    MtpinnOutputs out;
    out.flow = branch(config, params, "flow", h);
    if (!config.single_head) {
        out.x_cd = mean(sigmoid(branch(config, params, "xcd", h)));
        out.f_max = mean(sigmoid(branch(config, params, "fmax", h)));
        out.offset = params.at("offset");
        out.scaler = add(Var::scalar(1.0), softplus(params.at("scaler_raw")));
    }
    return out;
}

} // namespace

MtpinnOutputs mtpinn_forward(const MtpinnConfig& config, const BoundParams& params,
                             const Tensor& x_col, double dropout_rate, uint64_t dropout_seed) {
    if (x_col.rank() != 2 || x_col.dim(1) != 1)
        throw std::invalid_argument("mtpinn_forward: x must be [N,1]");

    Var h = Var::constant(x_col);
    for (size_t i = 0; i < config.hidden_sizes.size(); ++i) {
        h = relu(linear(params, "trunk." + std::to_string(i), h));
        if (dropout_rate > 0) h = dropout(h, dropout_rate, dropout_seed + i);
    }
    return heads_from_features(config, params, h);
}

PhysicsLossParts physics_loss(const MtpinnOutputs& out, const Tensor& x_col, const Tensor& f_col,
                              double w1, double w2) {
    if (!out.x_cd.defined())
        throw std::invalid_argument("physics_loss: model has no physics heads");
    const int64_t n = x_col.dim(0);

    PhysicsLossParts parts;
    Var x_cd = out.x_cd;
    double xcd_val = x_cd.value().item();
    if (xcd_val < 1e-6) {
        // Degenerate head output; shift away from zero and flag it.
        x_cd = add(x_cd, Var::scalar(1e-6));
        xcd_val = x_cd.value().item();
        parts.clamped_xcd = true;
    }

    Var height = sub(out.f_max, out.offset); // vertex height f_max - f_offset
    Var a1 = neg(div(height, square(x_cd)));
    Var half_width2 = square(mul(sub(out.scaler, Var::scalar(1.0)), x_cd));
    Var a2 = neg(div(height, half_width2));

    Var x_const = Var::constant(x_col);
    Var dx2 = square(sub(x_const, x_cd));
    Var f1 = add(mul(a1, dx2), height);
    Var f2 = add(mul(a2, dx2), height);

    Tensor mask1(x_col.shape()), mask2(x_col.shape());
    int64_t n1 = 0, n2 = 0;
    for (int64_t i = 0; i < n; ++i) {
        const bool unc = x_col[i] <= xcd_val;
        mask1[i] = unc ? 1.0 : 0.0;
        mask2[i] = unc ? 0.0 : 1.0;
        (unc ? n1 : n2) += 1;
    }
    parts.regime1_empty = n1 == 0;
    parts.regime2_empty = n2 == 0;

    Var f_const = Var::constant(f_col);
    Var l1 = n1 > 0 ? div(sum(mul(Var::constant(mask1), square(sub(f_const, f1)))),
                          Var::scalar(static_cast<double>(n1)))
                    : Var::scalar(0.0);
    Var l2 = n2 > 0 ? div(sum(mul(Var::constant(mask2), square(sub(f_const, f2)))),
                          Var::scalar(static_cast<double>(n2)))
                    : Var::scalar(0.0);

    // Vertex alignment: observed flows around the argmax-flow occupancy must
    // not exceed the vertex height.
    int64_t peak = 0;
    for (int64_t i = 1; i < n; ++i)
        if (f_col[i] > f_col[peak]) peak = i;
    const double x_peak = x_col[peak];
    std::vector<double> window_flows;
    for (int64_t i = 0; i < n; ++i)
        if (std::abs(x_col[i] - x_peak) <= 0.05) window_flows.push_back(f_col[i]);
    Var wf = Var::constant(Tensor({(int64_t)window_flows.size()}, window_flows));
    Var lam_offset = mean(relu(sub(wf, height)));

    // Congested width between 1x and 4x the uncongested one.
    Var sm1 = sub(out.scaler, Var::scalar(1.0));
    Var lam_scale = add(square(relu(sub(Var::scalar(1.0), sm1))),
                        square(relu(sub(sm1, Var::scalar(4.0)))));

    // Flow predictions above the model's own max flow.
    Var lam_max = mean(square(relu(sub(out.flow, out.f_max))));

    parts.total = add(add(mul(Var::scalar(w1), l1), mul(Var::scalar(w2), l2)),
                      add(lam_offset, add(lam_scale, lam_max)));
    parts.l1 = l1.value().item();
    parts.l2 = l2.value().item();
    parts.lam_offset = lam_offset.value().item();
    parts.lam_scale = lam_scale.value().item();
    parts.lam_max = lam_max.value().item();
    return parts;
}

TotalLossParts total_loss(const MtpinnConfig& config, const MtpinnOutputs& out, const Tensor& x_col,
                          const Tensor& f_col) {
    if (x_col.dim(0) == 0) throw std::invalid_argument("total_loss: empty batch");
    TotalLossParts parts;
    Var mse_v = mean(square(sub(out.flow, Var::constant(f_col))));
    parts.mse = mse_v.value().item();
    if (config.single_head || config.alpha == 0.0) {
        parts.total = mse_v;
        return parts;
    }
    parts.physics = physics_loss(out, x_col, f_col, config.w1, config.w2);
    parts.total = add(mse_v, mul(Var::scalar(config.alpha), parts.physics.total));
    return parts;
}

MtpinnModel train_mtpinn(const MtpinnModel& model, const MfdSeries& normalized,
                         const MtpinnConfig& config, TrainTrace* trace,
                         const TrainOptions& options) {
    if (!normalized.norm) throw std::invalid_argument("train_mtpinn: series must be normalized");
    const size_t n = normalized.points.size();
    if (n == 0) throw std::invalid_argument("train_mtpinn: empty series");
    if (config.batch_size <= 0) throw std::invalid_argument("train_mtpinn: bad batch size");

    MtpinnModel out = model;
    out.config = config;
    out.norm = *normalized.norm;
    if (config.epochs == 0) return out;

    std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + 1);

    // Interval split: shuffle once, then carve off validation and test tails.
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t n_val = static_cast<size_t>(config.val_fraction * static_cast<double>(n));
    const size_t n_test = static_cast<size_t>(config.test_fraction * static_cast<double>(n));
    const size_t n_train = n - n_val - n_test;
    if (n_train == 0) throw std::invalid_argument("train_mtpinn: split leaves no training data");
    std::vector<size_t> train_idx(idx.begin(), idx.begin() + n_train);
    std::vector<size_t> val_idx(idx.begin() + n_train, idx.begin() + n_train + n_val);

    auto gather = [&](const std::vector<size_t>& which, Tensor& xs, Tensor& fs) {
        xs = Tensor({(int64_t)which.size(), 1});
        fs = Tensor({(int64_t)which.size(), 1});
        for (size_t i = 0; i < which.size(); ++i) {
            xs[(int64_t)i] = normalized.points[which[i]].occupancy;
            fs[(int64_t)i] = normalized.points[which[i]].flow;
        }
    };

    Tensor val_x, val_f;
    if (!val_idx.empty()) gather(val_idx, val_x, val_f);

    ParameterSet params = out.params.clone();

    // Frozen trunk: features never change, so compute them once and train
    // the branches on cached rows.
    Tensor features_all;
    if (options.freeze_trunk) {
        if (config.dropout > 0)
            throw std::invalid_argument("train_mtpinn: dropout with a frozen trunk is unsupported");
        Tensor all_x({(int64_t)n, 1});
        for (size_t i = 0; i < n; ++i) all_x[(int64_t)i] = normalized.points[i].occupancy;
        BoundParams bp = bind_params(params, false);
        Var h = Var::constant(all_x);
        for (size_t i = 0; i < config.hidden_sizes.size(); ++i)
            h = relu(linear(bp, "trunk." + std::to_string(i), h));
        features_all = h.value();
    }
    const int64_t feat_dim = options.freeze_trunk ? features_all.dim(1) : 0;
    ParameterSet best = params.clone();
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    AdamState adam;

    uint64_t dropout_counter = config.seed * 1315423911ULL;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double epoch_loss = 0;
        size_t batches = 0;
        for (size_t start = 0; start < train_idx.size();
             start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(train_idx.size(), start + static_cast<size_t>(config.batch_size));
            std::vector<size_t> batch(train_idx.begin() + start, train_idx.begin() + end);
            Tensor bx, bf;
            gather(batch, bx, bf);

            BoundParams bp = bind_params(params, true);
            MtpinnOutputs fwd;
            if (options.freeze_trunk) {
                Tensor bh({(int64_t)batch.size(), feat_dim});
                for (size_t i = 0; i < batch.size(); ++i)
                    for (int64_t j = 0; j < feat_dim; ++j)
                        bh.at((int64_t)i, j) = features_all.at((int64_t)batch[i], j);
                fwd = heads_from_features(config, bp, Var::constant(bh));
            } else {
                fwd = mtpinn_forward(config, bp, bx, config.dropout, ++dropout_counter);
            }
            TotalLossParts loss = total_loss(config, fwd, bx, bf);
            if (!std::isfinite(loss.total.value().item()))
                throw std::runtime_error("train_mtpinn: diverged at epoch " + std::to_string(epoch));
            epoch_loss += loss.total.value().item();
            ++batches;

            ParameterSet grads = grad(loss.total, bp);
            if (options.freeze_trunk) {
                for (auto& [name, g] : grads)
                    if (name.rfind("trunk.", 0) == 0)
                        for (int64_t i = 0; i < g.numel(); ++i) g[i] = 0.0;
            }
            auto [next, state] = adam_step(params, grads, std::move(adam), config.lr);
            params = std::move(next);
            adam = std::move(state);
        }
        if (trace) trace->train_loss.push_back(epoch_loss / static_cast<double>(batches));

        if (!val_idx.empty()) {
            BoundParams bp = bind_params(params, false);
            MtpinnOutputs fwd = mtpinn_forward(config, bp, val_x, 0.0, 0);
            const double v = mean(square(sub(fwd.flow, Var::constant(val_f)))).value().item();
            if (trace) trace->val_mse.push_back(v);
            if (v < best_val) {
                best_val = v;
                best = params.clone();
                best_epoch = epoch;
            }
        }
    }

    if (!val_idx.empty()) {
        out.params = std::move(best);
        if (trace) trace->best_epoch = best_epoch;
    } else {
        out.params = std::move(params);
        if (trace) trace->best_epoch = config.epochs - 1;
    }
    return out;
}

std::vector<double> predict_flows(const MtpinnModel& model, const std::vector<double>& xs) {
    Tensor x({(int64_t)xs.size(), 1});
    for (size_t i = 0; i < xs.size(); ++i) x[(int64_t)i] = xs[i];
    BoundParams bp = bind_params(model.params, false);
    MtpinnOutputs fwd = mtpinn_forward(model.config, bp, x, 0.0, 0);
    std::vector<double> out(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) out[i] = fwd.flow.value()[(int64_t)i];
    return out;
}

MtpinnPrediction predict_mfd(const MtpinnModel& model, const std::vector<double>& grid) {
    if (!model.norm) throw std::logic_error("predict_mfd: model has no norm scales");
    if (grid.empty()) throw std::invalid_argument("predict_mfd: empty grid");

    Tensor x({(int64_t)grid.size(), 1});
    for (size_t i = 0; i < grid.size(); ++i) x[(int64_t)i] = grid[i];
    BoundParams bp = bind_params(model.params, false);
    MtpinnOutputs fwd = mtpinn_forward(model.config, bp, x, 0.0, 0);

    MtpinnPrediction pred;
    pred.grid = grid;
    pred.flow.resize(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) pred.flow[i] = fwd.flow.value()[(int64_t)i];
    if (fwd.x_cd.defined()) {
        pred.x_cd_norm = fwd.x_cd.value().item();
        pred.f_max_norm = fwd.f_max.value().item();
    } else {
        // Single-head models: read the curve itself.
        size_t arg = 0;
        for (size_t i = 1; i < grid.size(); ++i)
            if (pred.flow[i] > pred.flow[arg]) arg = i;
        pred.x_cd_norm = grid[arg];
        pred.f_max_norm = pred.flow[arg];
    }
    pred.x_cd = pred.x_cd_norm * model.norm->occ_scale;
    pred.f_max = pred.f_max_norm * model.norm->flow_scale;
    return pred;
}

} // namespace mfd
