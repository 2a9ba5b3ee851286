#include "mfdmeta/metalearn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace mfd {

namespace {

Tensor column_of(const MfdSeries& s, bool flows) {
    Tensor t({(int64_t)s.points.size(), 1});
    for (size_t i = 0; i < s.points.size(); ++i)
        t[(int64_t)i] = flows ? s.points[i].flow : s.points[i].occupancy;
    return t;
}

// Disjoint inner-loop batches: observation i goes to batch i % n_ite, so
// short supports shrink every batch instead of emptying the last ones.
std::vector<std::pair<Tensor, Tensor>> support_batches(const Task& task, int n_ite) {
    const int64_t n = static_cast<int64_t>(task.support.points.size());
    if (n < n_ite) throw std::invalid_argument("support smaller than the inner step count");
    std::vector<std::pair<Tensor, Tensor>> batches;
    for (int s = 0; s < n_ite; ++s) {
        std::vector<double> xs, fs;
        for (int64_t i = s; i < n; i += n_ite) {
            xs.push_back(task.support.points[static_cast<size_t>(i)].occupancy);
            fs.push_back(task.support.points[static_cast<size_t>(i)].flow);
        }
        Tensor x({(int64_t)xs.size(), 1}), f({(int64_t)fs.size(), 1});
        for (size_t i = 0; i < xs.size(); ++i) {
            x[(int64_t)i] = xs[i];
            f[(int64_t)i] = fs[i];
        }
        batches.emplace_back(std::move(x), std::move(f));
    }
    return batches;
}

Var task_loss(const MtpinnConfig& learner, const BoundParams& bp, const Tensor& x, const Tensor& f,
              double dropout_rate, uint64_t dropout_seed) {
    MtpinnOutputs out = mtpinn_forward(learner, bp, x, dropout_rate, dropout_seed);
    return total_loss(learner, out, x, f).total;
}

} // namespace

void validate(const MetaConfig& cfg) {
    if (cfg.k_support * cfg.n_ite != cfg.m_query)
        throw std::invalid_argument("MetaConfig: K * N_ite must equal M (" +
                                    std::to_string(cfg.k_support) + " * " +
                                    std::to_string(cfg.n_ite) +
                                    " != " + std::to_string(cfg.m_query) + ")");
    if (cfg.alpha_inner <= 0 || cfg.beta_outer < 0)
        throw std::invalid_argument("MetaConfig: learning rates must be positive");
    if (cfg.n_ite < 0 || cfg.meta_iterations < 0 || cfg.tasks_per_iteration <= 0)
        throw std::invalid_argument("MetaConfig: counts must be positive");
    if (cfg.dropout_train < 0 || cfg.dropout_train >= 1 || cfg.dropout_test < 0 ||
        cfg.dropout_test >= 1)
        throw std::invalid_argument("MetaConfig: dropout rates must be in [0,1)");
}

Task sample_task(const TaskPool& pool, const MetaConfig& cfg, std::mt19937_64& rng) {
    if (pool.cities.empty()) throw std::invalid_argument("sample_task: empty pool");
    std::uniform_int_distribution<size_t> uc(0, pool.cities.size() - 1);
    const CityTaskSource& city = pool.cities[uc(rng)];
    if (city.replicas_normalized.empty())
        throw std::invalid_argument("sample_task: city " + city.city + " has no replicas");
    std::uniform_int_distribution<size_t> ur(0, city.replicas_normalized.size() - 1);
    const MfdSeries& replica = city.replicas_normalized[ur(rng)];

    const size_t n = replica.points.size();
    const size_t m = std::min<size_t>(static_cast<size_t>(cfg.m_query), n); // M <= N

    // Partial Fisher-Yates index draw without replacement.
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<size_t> u(i, n - 1);
        std::swap(idx[i], idx[u(rng)]);
    }

    Task task;
    task.city = city.city;
    task.n_detectors = pool.n_detectors;
    task.query = city.full_normalized;
    task.support = replica;
    task.support.points.clear();
    for (size_t i = 0; i < m; ++i) task.support.points.push_back(replica.points[idx[i]]);
    task.short_support = m < static_cast<size_t>(cfg.m_query);
    return task;
}

InnerAdaptResult inner_adapt(const ParameterSet& theta, const Task& task, const MetaConfig& cfg,
                             uint64_t dropout_seed) {
    InnerAdaptResult res;
    res.adapted = theta.clone();
    if (cfg.n_ite == 0) return res;

    auto batches = support_batches(task, cfg.n_ite);
    for (const auto& [x, f] : batches)
        if (x.dim(0) < cfg.k_support) res.short_batches = true;

    for (int s = 0; s < cfg.n_ite; ++s) {
        BoundParams bp = bind_params(res.adapted, true);
        Var loss = task_loss(cfg.learner, bp, batches[static_cast<size_t>(s)].first,
                             batches[static_cast<size_t>(s)].second, cfg.dropout_test,
                             dropout_seed + static_cast<uint64_t>(s) * 1000003ULL);
        res.step_losses.push_back(loss.value().item());
        ParameterSet g = grad(loss, bp);
        res.adapted = sgd_step(res.adapted, g, cfg.alpha_inner);
    }
    return res;
}

MetaResult meta_train(const TaskPool& train_pool, const std::vector<Task>& held_out,
                      const MetaConfig& cfg, uint64_t seed) {
    validate(cfg);
    std::set<std::string> held_names;
    for (const auto& t : held_out) held_names.insert(t.city);
    for (const auto& c : train_pool.cities)
        if (held_names.count(c.city))
            throw std::invalid_argument("meta_train: held-out city " + c.city + " is in the pool");

    MtpinnConfig learner = cfg.learner;
    MetaResult result;
    {
        MtpinnConfig init_cfg = learner;
        init_cfg.seed = seed;
        result.theta = init_mtpinn(init_cfg).params;
    }

    std::mt19937_64 rng(seed);
    AdamState outer_state;
    for (int it = 0; it < cfg.meta_iterations; ++it) {
        // Sampling stays sequential so runs are reproducible regardless of
        // how the per-task work is scheduled.
        std::vector<Task> tasks;
        std::vector<Tensor> query_x, query_f;
        std::vector<uint64_t> dropout_seeds;
        for (int t = 0; t < cfg.tasks_per_iteration; ++t) {
            Task task = sample_task(train_pool, cfg, rng);
            if (held_names.count(task.city))
                throw std::logic_error("meta_train: sampled a held-out city");
            query_x.push_back(column_of(task.query, false));
            query_f.push_back(column_of(task.query, true));
            dropout_seeds.push_back(rng());
            tasks.push_back(std::move(task));
        }

        std::vector<ParameterSet> task_grads(tasks.size());
        std::vector<UpdateTrace> traces(tasks.size());
        std::vector<std::string> errors(tasks.size());
#pragma omp parallel for schedule(dynamic)
        for (size_t t = 0; t < tasks.size(); ++t) {
            try {
                auto batches = support_batches(tasks[t], cfg.n_ite);
                const uint64_t dseed = dropout_seeds[t];
                StepLossBuilder inner = [&, t](int step, const BoundParams& bp) {
                    return task_loss(learner, bp, batches[static_cast<size_t>(step)].first,
                                     batches[static_cast<size_t>(step)].second, cfg.dropout_train,
                                     dseed + static_cast<uint64_t>(step) * 1000003ULL);
                };
                LossBuilder meta = [&, t](const BoundParams& bp) {
                    return task_loss(learner, bp, query_x[t], query_f[t], cfg.dropout_train,
                                     dseed + 777000777ULL);
                };
                task_grads[t] = grad_through_update(inner, meta, result.theta, cfg.alpha_inner,
                                                    cfg.n_ite, cfg.order, &traces[t]);
            } catch (const std::exception& e) {
                errors[t] = e.what();
            }
        }
        for (const auto& e : errors)
            if (!e.empty()) throw std::runtime_error("meta_train: task failed: " + e);

        // Meta-gradient is the sum of the per-task query gradients.
        ParameterSet meta_grad = std::move(task_grads[0]);
        for (size_t t = 1; t < task_grads.size(); ++t)
            for (auto& [name, g] : meta_grad) {
                const Tensor& other = task_grads[t].at(name);
                for (int64_t i = 0; i < g.numel(); ++i) g[i] += other[i];
            }
        for (const auto& [name, g] : meta_grad)
            for (int64_t i = 0; i < g.numel(); ++i)
                if (!std::isfinite(g[i]))
                    throw std::runtime_error("meta_train: non-finite meta-gradient at iteration " +
                                             std::to_string(it));

        if (cfg.outer_adam) {
            auto [next, state] = adam_step(result.theta, meta_grad, std::move(outer_state),
                                           cfg.beta_outer);
            result.theta = std::move(next);
            outer_state = std::move(state);
        } else {
            result.theta = sgd_step(result.theta, meta_grad, cfg.beta_outer);
        }

        double inner_mean = 0, outer_mean = 0;
        size_t inner_count = 0;
        for (const auto& tr : traces) {
            for (double l : tr.inner_losses) {
                inner_mean += l;
                ++inner_count;
            }
            outer_mean += tr.meta_loss;
        }
        result.inner_loss_trace.push_back(inner_count ? inner_mean / (double)inner_count : 0.0);
        result.outer_loss_trace.push_back(outer_mean / (double)traces.size());
    }

    for (const auto& task : held_out) result.test_reports.push_back(meta_test(result.theta, task, cfg));
    return result;
}

FitReport meta_test(const ParameterSet& theta, const Task& task, const MetaConfig& cfg) {
    validate(cfg);
    if (!task.query.norm) throw std::invalid_argument("meta_test: query series must be normalized");

    InnerAdaptResult adapted = inner_adapt(theta, task, cfg, /*dropout_seed=*/task.support.points.size());
    if (static_cast<int>(adapted.step_losses.size()) != cfg.n_ite)
        throw std::logic_error("meta_test: adaptation must take exactly N_ite steps");

    MtpinnModel model;
    model.config = cfg.learner;
    model.params = std::move(adapted.adapted);
    model.norm = *task.query.norm;

    std::vector<double> xs, fs;
    for (const auto& p : task.query.points) {
        xs.push_back(p.occupancy);
        fs.push_back(p.flow);
    }
    auto pred = predict_flows(model, xs);

    const double fscale = task.query.norm->flow_scale;
    std::vector<double> y_den(fs.size()), p_den(fs.size());
    for (size_t i = 0; i < fs.size(); ++i) {
        y_den[i] = fs[i] * fscale;
        p_den[i] = pred[i] * fscale;
    }

    FitReport report;
    report.city = task.city;
    report.model = cfg.learner.single_head ? "maml-nn" : "maml-mtpinn";
    report.n_detectors = task.n_detectors;
    report.metrics.mse = mse(y_den, p_den);
    report.metrics.rrse = rrse(fs, pred);
    report.metrics.r = correlation(fs, pred);
    report.loss_trace = adapted.step_losses;

    auto mfd_pred = predict_mfd(model, xs);
    report.x_cd = mfd_pred.x_cd;
    report.f_max = mfd_pred.f_max;
    report.x_cd_norm = mfd_pred.x_cd_norm;
    report.f_max_norm = mfd_pred.f_max_norm;
    return report;
}

} // namespace mfd
