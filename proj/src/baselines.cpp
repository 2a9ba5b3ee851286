#include "mfdmeta/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace mfd {

FitReport evaluate_on_query(const MtpinnModel& model, const Task& task, const std::string& label) {
    if (!task.query.norm) throw std::invalid_argument("evaluate_on_query: query not normalized");
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

    FitReport rep;
    rep.city = task.city;
    rep.model = label;
    rep.n_detectors = task.n_detectors;
    rep.metrics.mse = mse(y_den, p_den);
    rep.metrics.rrse = rrse(fs, pred);
    rep.metrics.r = correlation(fs, pred);

    auto mfd_pred = predict_mfd(model, xs);
    rep.x_cd = mfd_pred.x_cd;
    rep.f_max = mfd_pred.f_max;
    rep.x_cd_norm = mfd_pred.x_cd_norm;
    rep.f_max_norm = mfd_pred.f_max_norm;
    return rep;
}

FitReport train_scratch_comparison(const Task& task, const MtpinnConfig& learner, uint64_t seed) {
    if (task.support.points.empty())
        throw std::invalid_argument("train_scratch_comparison: empty support");
    MtpinnConfig cfg = learner;
    cfg.batch_size = 10;
    cfg.epochs = 100;
    cfg.dropout = 0.1;
    cfg.val_fraction = 0.0;
    cfg.test_fraction = 0.0;
    cfg.seed = seed;
    MtpinnModel model = init_mtpinn(cfg);
    model = train_mtpinn(model, task.support, cfg);
    return evaluate_on_query(model, task, "mtpinn-scratch");
}

FitReport train_plain_nn(const Task& task, const MtpinnConfig& learner, uint64_t seed) {
    if (task.support.points.empty()) throw std::invalid_argument("train_plain_nn: empty support");
    MtpinnConfig cfg = learner;
    cfg.single_head = true;
    cfg.batch_size = 10;
    cfg.epochs = 100;
    cfg.dropout = 0.1;
    cfg.val_fraction = 0.0;
    cfg.test_fraction = 0.0;
    cfg.seed = seed;
    MtpinnModel model = init_mtpinn(cfg);
    model = train_mtpinn(model, task.support, cfg);
    return evaluate_on_query(model, task, "plain-nn");
}

MtpinnModel transfer_pretrain(const TaskPool& pool, const MtpinnConfig& learner, int epochs,
                              uint64_t seed, PretrainData data) {
    if (pool.cities.empty()) throw std::invalid_argument("transfer_pretrain: empty pool");

    // Per city: one sampled support replica plus the full-detector series.
    std::mt19937_64 rng(seed ^ 0xA5A5A5A5ULL);
    MfdSeries pooled;
    pooled.city = "pooled";
    NormScales unit{1.0, 1.0};
    for (const auto& c : pool.cities) {
        if (data != PretrainData::SupportOnly)
            for (const auto& p : c.full_normalized.points) pooled.points.push_back(p);
        if (data != PretrainData::QueryOnly && !c.replicas_normalized.empty()) {
            std::uniform_int_distribution<size_t> u(0, c.replicas_normalized.size() - 1);
            const MfdSeries& rep = c.replicas_normalized[u(rng)];
            for (const auto& p : rep.points) pooled.points.push_back(p);
        }
    }
    pooled.norm = unit; // constituents are already in normalized units

    MtpinnConfig cfg = learner;
    cfg.epochs = epochs;
    cfg.val_fraction = 0.0;
    cfg.test_fraction = 0.0;
    cfg.seed = seed;
    MtpinnModel model = init_mtpinn(cfg);
    return train_mtpinn(model, pooled, cfg);
}

MtpinnModel transfer_finetune(const MtpinnModel& pretrained, const MfdSeries& target_support,
                              const TransferConfig& tcfg, uint64_t seed) {
    MtpinnModel model = pretrained;
    if (tcfg.mode == TransferConfig::Mode::Cold) {
        // Task-specific branches restart from zero; the trunk stays.
        for (auto& [name, t] : model.params) {
            if (name.rfind("trunk.", 0) == 0) continue;
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.0;
        }
    }
    if (tcfg.finetune_epochs == 0) {
        model.norm = target_support.norm;
        return model;
    }

    MtpinnConfig cfg = model.config;
    cfg.epochs = tcfg.finetune_epochs;
    cfg.val_fraction = 0.0;
    cfg.test_fraction = 0.0;
    cfg.seed = seed;
    TrainOptions opts;
    opts.freeze_trunk = true;
    MtpinnModel tuned = train_mtpinn(model, target_support, cfg, nullptr, opts);
    tuned.norm = target_support.norm; // target-city scales for denormalization
    return tuned;
}

FitReport transfer_evaluate(const MtpinnModel& pretrained, const Task& task,
                            const TransferConfig& tcfg, uint64_t seed, const std::string& label) {
    MtpinnModel tuned = transfer_finetune(pretrained, task.support, tcfg, seed);
    if (!tuned.norm) tuned.norm = task.query.norm;
    return evaluate_on_query(tuned, task, label);
}

} // namespace mfd
