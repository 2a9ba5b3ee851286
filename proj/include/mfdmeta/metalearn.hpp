#pragma once

#include "mfdmeta/metrics.hpp"
#include "mfdmeta/mtpinn.hpp"

#include <random>
#include <string>
#include <vector>

namespace mfd {

/// One MAML unit: adapt on a biased subset-detector series, evaluate against
/// the city's full-detector series. Both series are normalized with the
/// city's full-detector scales.
struct Task {
    std::string city;
    MfdSeries support;
    MfdSeries query;
    int n_detectors = 0;
    bool short_support = false; // support capped below K*N_ite
};

/// Per-city task source for one subset size n.
struct CityTaskSource {
    std::string city;
    MfdSeries full_normalized;
    std::vector<MfdSeries> replicas_normalized;
};

struct TaskPool {
    std::vector<CityTaskSource> cities;
    int n_detectors = 0;
};

struct MetaConfig {
    double alpha_inner = 0.02;
    double beta_outer = 0.005;
    int n_ite = 5;
    int meta_iterations = 150;
    int tasks_per_iteration = 3;
    int k_support = 150;
    int m_query = 750; // support observations sampled per task; must equal k*n_ite
    double dropout_train = 0.0;
    double dropout_test = 0.0;
    MetaOrder order = MetaOrder::SecondOrder;
    // Outer update: Adam at beta_outer by default. The plain gradient step
    // needs far more than the stock 150 meta-iterations to move a network
    // of this size; the flag keeps it available for ablation.
    bool outer_adam = true;
    MtpinnConfig learner; // architecture + physics-loss settings
};

/// Throws on inconsistent settings (notably k_support * n_ite != m_query).
void validate(const MetaConfig& cfg);

/// Uniform city, uniform replica, then m_query support observations drawn
/// without replacement (capped at the replica size).
Task sample_task(const TaskPool& pool, const MetaConfig& cfg, std::mt19937_64& rng);

struct InnerAdaptResult {
    ParameterSet adapted;
    std::vector<double> step_losses; // exactly n_ite entries
    bool short_batches = false;
};

/// N_ite plain-SGD steps at alpha_inner, each on a disjoint support batch;
/// theta itself is never mutated.
InnerAdaptResult inner_adapt(const ParameterSet& theta, const Task& task, const MetaConfig& cfg,
                             uint64_t dropout_seed = 0);

struct MetaResult {
    ParameterSet theta;
    std::vector<double> inner_loss_trace; // per-iteration mean inner loss
    std::vector<double> outer_loss_trace; // per-iteration mean query loss
    std::vector<FitReport> test_reports;  // one per held-out task
};

/// Adapted MAML: sample tasks, adapt in the inner loop, update theta against
/// the query losses (second-order by default). Held-out cities must not
/// appear in the pool.
MetaResult meta_train(const TaskPool& train_pool, const std::vector<Task>& held_out,
                      const MetaConfig& cfg, uint64_t seed);

/// Inner-loop-style adaptation on the task's support, then evaluation on the
/// full query set.
FitReport meta_test(const ParameterSet& theta, const Task& task, const MetaConfig& cfg);

} // namespace mfd
