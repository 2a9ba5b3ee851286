#pragma once

#include "mfdmeta/baselines.hpp"
#include "mfdmeta/biparabolic.hpp"
#include "mfdmeta/metalearn.hpp"

#include <map>
#include <string>
#include <vector>

namespace mfd {

struct SyntheticPoolConfig {
    int n_cities = 12;
    int detectors_per_city = 240;
    int intervals_per_day = 480;
    int days = 2;
    double noise_sigma = 25.0;
    double detector_bias_sigma = 0.45;
    double x_cd_min = 0.22, x_cd_max = 0.42;
    double f_vertex_min = 650.0, f_vertex_max = 1050.0;
    double width_min = 1.4, width_max = 2.8;
    double low_occupancy_fraction = 0.6;
    uint64_t seed = 12345;
};

struct ExperimentConfig {
    SyntheticPoolConfig synthetic; // used when records_csv is empty
    std::string records_csv;       // UTD19-style export; overrides synthetic
    std::vector<int> n_detectors{75, 50, 25, 10};
    int repetitions = 5;
    int holdout_per_rep = 3;
    int replicas = 30;
    std::vector<std::string> models{"maml", "scratch", "nn", "tc1000", "tw5", "tw1000"};
    MetaConfig meta;          // meta.meta_iterations raised to 300 by default here
    int pretrain_epochs = 150;
    uint64_t seed = 7;

    ExperimentConfig();
};

ExperimentConfig load_experiment_config(const std::string& json_path);
std::string experiment_config_json(const ExperimentConfig& cfg);

struct ExperimentRow {
    std::string model;
    int n_detectors = 0;
    std::string city;
    uint64_t rep_seed = 0;
    int repetition = 0;
    double mse = 0, rrse = 0, r = 0;
    double x_cd = 0, f_max = 0, x_cd_norm = 0, f_max_norm = 0;
    std::string error; // row recorded even when the run failed
};

struct MetricAggregate {
    std::string model;
    int n_detectors = 0;
    std::string metric; // mse | rrse | r
    double mean = 0, median = 0, max = 0, min = 0, stddev = 0;
    size_t count = 0;
};

struct ExperimentReport {
    std::vector<ExperimentRow> rows;
    std::vector<MetricAggregate> aggregates;
    std::string resolved_config; // JSON text embedded for provenance
};

/// One full pass: build datasets, then per (n, repetition): hold out cities,
/// meta-train, meta-test, and run every requested baseline on bitwise
/// identical supports. Reproducible from (config, seed).
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Aggregates recomputed from rows (also used to cross-check reports).
std::vector<MetricAggregate> aggregate_rows(const std::vector<ExperimentRow>& rows);

void write_report(const ExperimentReport& report, const std::string& out_dir);
ExperimentReport read_report(const std::string& out_dir);

/// City datasets ready for task construction: cleaned, aggregated,
/// normalized, with per-n biased bundles.
struct CityDataset {
    std::string city;
    MfdSeries full_normalized;
    NormScales scales;
    std::map<int, std::vector<MfdSeries>> replicas_by_n; // normalized
};

std::vector<CityDataset> build_synthetic_datasets(const SyntheticPoolConfig& cfg,
                                                  const std::vector<int>& n_values, int replicas);
std::vector<CityDataset> build_csv_datasets(const std::string& csv_path,
                                            const std::vector<int>& n_values, int replicas,
                                            uint64_t seed);

/// Plot-data emission: CSV files for curves, loss traces, box plots, and
/// metric bars.
void emit_curve_csv(const BiParabolicFit& fit, const MfdSeries& normalized,
                    const std::string& out_path);
void emit_loss_trace_csv(const std::vector<double>& trace, const std::string& out_path);
void emit_meta_trace_csv(const MetaResult& result, const std::string& out_path);
void emit_boxplot_csv(const ExperimentReport& report, const std::string& out_path);
void emit_bars_csv(const ExperimentReport& report, const std::string& out_path);

} // namespace mfd
