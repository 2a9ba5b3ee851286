#include "mfdmeta/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mfd {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
    uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (a * 1315423911ULL + b + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

double quantile_sorted(const std::vector<double>& v, double p) {
    if (v.empty()) return 0;
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

json meta_to_json(const MetaConfig& m) {
    json j;
    j["alpha_inner"] = m.alpha_inner;
    j["beta_outer"] = m.beta_outer;
    j["n_ite"] = m.n_ite;
    j["meta_iterations"] = m.meta_iterations;
    j["tasks_per_iteration"] = m.tasks_per_iteration;
    j["k_support"] = m.k_support;
    j["m_query"] = m.m_query;
    j["dropout_train"] = m.dropout_train;
    j["dropout_test"] = m.dropout_test;
    j["order"] = m.order == MetaOrder::SecondOrder ? "second" : "first";
    j["outer_adam"] = m.outer_adam;
    json l;
    l["hidden_sizes"] = m.learner.hidden_sizes;
    l["branch_sizes"] = m.learner.branch_sizes;
    l["dropout"] = m.learner.dropout;
    l["alpha"] = m.learner.alpha;
    l["w1"] = m.learner.w1;
    l["w2"] = m.learner.w2;
    l["lr"] = m.learner.lr;
    l["batch_size"] = m.learner.batch_size;
    l["epochs"] = m.learner.epochs;
    l["init_offset"] = m.learner.init_offset;
    l["init_scaler"] = m.learner.init_scaler;
    j["learner"] = l;
    return j;
}

void meta_from_json(const json& j, MetaConfig& m) {
    m.alpha_inner = j.value("alpha_inner", m.alpha_inner);
    m.beta_outer = j.value("beta_outer", m.beta_outer);
    m.n_ite = j.value("n_ite", m.n_ite);
    m.meta_iterations = j.value("meta_iterations", m.meta_iterations);
    m.tasks_per_iteration = j.value("tasks_per_iteration", m.tasks_per_iteration);
    m.k_support = j.value("k_support", m.k_support);
    m.m_query = j.value("m_query", m.m_query);
    m.dropout_train = j.value("dropout_train", m.dropout_train);
    m.dropout_test = j.value("dropout_test", m.dropout_test);
    if (j.contains("order"))
        m.order = j["order"] == "first" ? MetaOrder::FirstOrder : MetaOrder::SecondOrder;
    m.outer_adam = j.value("outer_adam", m.outer_adam);
    if (j.contains("learner")) {
        const json& l = j["learner"];
        m.learner.hidden_sizes = l.value("hidden_sizes", m.learner.hidden_sizes);
        m.learner.branch_sizes = l.value("branch_sizes", m.learner.branch_sizes);
        m.learner.dropout = l.value("dropout", m.learner.dropout);
        m.learner.alpha = l.value("alpha", m.learner.alpha);
        m.learner.w1 = l.value("w1", m.learner.w1);
        m.learner.w2 = l.value("w2", m.learner.w2);
        m.learner.lr = l.value("lr", m.learner.lr);
        m.learner.batch_size = l.value("batch_size", m.learner.batch_size);
        m.learner.epochs = l.value("epochs", m.learner.epochs);
        m.learner.init_offset = l.value("init_offset", m.learner.init_offset);
        m.learner.init_scaler = l.value("init_scaler", m.learner.init_scaler);
    }
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["records_csv"] = cfg.records_csv;
    j["n_detectors"] = cfg.n_detectors;
    j["repetitions"] = cfg.repetitions;
    j["holdout_per_rep"] = cfg.holdout_per_rep;
    j["replicas"] = cfg.replicas;
    j["models"] = cfg.models;
    j["pretrain_epochs"] = cfg.pretrain_epochs;
    json s;
    s["n_cities"] = cfg.synthetic.n_cities;
    s["detectors_per_city"] = cfg.synthetic.detectors_per_city;
    s["intervals_per_day"] = cfg.synthetic.intervals_per_day;
    s["days"] = cfg.synthetic.days;
    s["noise_sigma"] = cfg.synthetic.noise_sigma;
    s["detector_bias_sigma"] = cfg.synthetic.detector_bias_sigma;
    s["x_cd_min"] = cfg.synthetic.x_cd_min;
    s["x_cd_max"] = cfg.synthetic.x_cd_max;
    s["f_vertex_min"] = cfg.synthetic.f_vertex_min;
    s["f_vertex_max"] = cfg.synthetic.f_vertex_max;
    s["width_min"] = cfg.synthetic.width_min;
    s["width_max"] = cfg.synthetic.width_max;
    s["low_occupancy_fraction"] = cfg.synthetic.low_occupancy_fraction;
    s["seed"] = cfg.synthetic.seed;
    j["synthetic"] = s;
    j["meta"] = meta_to_json(cfg.meta);
    return j;
}

} // namespace

ExperimentConfig::ExperimentConfig() {
    // Desk-scale protocol: 300 meta-iterations (within the tested grid; the
    // library default stays at 150) and a lighter learner so the full
    // 4-subset x 5-repetition pass finishes on a laptop.
    meta.meta_iterations = 300;
    meta.learner.hidden_sizes = {48, 48, 48};
    synthetic.intervals_per_day = 420;
    pretrain_epochs = 60;
}

ExperimentConfig load_experiment_config(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("load_experiment_config: cannot open " + json_path);
    json j = json::parse(in);
    ExperimentConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.records_csv = j.value("records_csv", cfg.records_csv);
    cfg.n_detectors = j.value("n_detectors", cfg.n_detectors);
    cfg.repetitions = j.value("repetitions", cfg.repetitions);
    cfg.holdout_per_rep = j.value("holdout_per_rep", cfg.holdout_per_rep);
    cfg.replicas = j.value("replicas", cfg.replicas);
    cfg.models = j.value("models", cfg.models);
    cfg.pretrain_epochs = j.value("pretrain_epochs", cfg.pretrain_epochs);
    if (j.contains("synthetic")) {
        const json& s = j["synthetic"];
        cfg.synthetic.n_cities = s.value("n_cities", cfg.synthetic.n_cities);
        cfg.synthetic.detectors_per_city =
            s.value("detectors_per_city", cfg.synthetic.detectors_per_city);
        cfg.synthetic.intervals_per_day =
            s.value("intervals_per_day", cfg.synthetic.intervals_per_day);
        cfg.synthetic.days = s.value("days", cfg.synthetic.days);
        cfg.synthetic.noise_sigma = s.value("noise_sigma", cfg.synthetic.noise_sigma);
        cfg.synthetic.detector_bias_sigma =
            s.value("detector_bias_sigma", cfg.synthetic.detector_bias_sigma);
        cfg.synthetic.x_cd_min = s.value("x_cd_min", cfg.synthetic.x_cd_min);
        cfg.synthetic.x_cd_max = s.value("x_cd_max", cfg.synthetic.x_cd_max);
        cfg.synthetic.f_vertex_min = s.value("f_vertex_min", cfg.synthetic.f_vertex_min);
        cfg.synthetic.f_vertex_max = s.value("f_vertex_max", cfg.synthetic.f_vertex_max);
        cfg.synthetic.width_min = s.value("width_min", cfg.synthetic.width_min);
        cfg.synthetic.width_max = s.value("width_max", cfg.synthetic.width_max);
        cfg.synthetic.low_occupancy_fraction =
            s.value("low_occupancy_fraction", cfg.synthetic.low_occupancy_fraction);
        cfg.synthetic.seed = s.value("seed", cfg.synthetic.seed);
    }
    if (j.contains("meta")) meta_from_json(j["meta"], cfg.meta);
    return cfg;
}

std::string experiment_config_json(const ExperimentConfig& cfg) { return config_to_json(cfg).dump(2); }

std::vector<CityDataset> build_synthetic_datasets(const SyntheticPoolConfig& cfg,
                                                  const std::vector<int>& n_values, int replicas) {
    std::vector<CityDataset> out(static_cast<size_t>(cfg.n_cities));
    std::vector<std::string> errors(static_cast<size_t>(cfg.n_cities));
#pragma omp parallel for schedule(dynamic)
    for (int c = 0; c < cfg.n_cities; ++c) {
        try {
            std::mt19937_64 rng(mix_seed(cfg.seed, 17, static_cast<uint64_t>(c)));
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            SyntheticCitySpec spec;
            spec.name = "synth" + std::to_string(c);
            spec.x_cd = cfg.x_cd_min + (cfg.x_cd_max - cfg.x_cd_min) * u01(rng);
            spec.f_vertex = cfg.f_vertex_min + (cfg.f_vertex_max - cfg.f_vertex_min) * u01(rng);
            spec.width_ratio = cfg.width_min + (cfg.width_max - cfg.width_min) * u01(rng);
            spec.n_detectors = cfg.detectors_per_city;
            spec.days = cfg.days;
            spec.intervals_per_day = cfg.intervals_per_day;
            spec.noise_sigma = cfg.noise_sigma;
            spec.detector_bias_sigma = cfg.detector_bias_sigma;
            spec.low_occupancy_fraction = cfg.low_occupancy_fraction;
            spec.seed = mix_seed(cfg.seed, 23, static_cast<uint64_t>(c));

            auto records = generate_synthetic_city(spec);
            auto cleaned = clean_records(records);

            CityDataset ds;
            ds.city = spec.name;
            auto full = aggregate(cleaned.kept, detectors_of(cleaned.kept, spec.name));
            ds.full_normalized = normalize(full);
            ds.scales = *ds.full_normalized.norm;
            for (int n : n_values) {
                auto bundle = make_biased_bundles(cleaned.kept, spec.name, n, replicas,
                                                  mix_seed(cfg.seed, 29u + n, (uint64_t)c));
                auto& dst = ds.replicas_by_n[n];
                for (auto& rep : bundle.replicas) dst.push_back(normalize(rep, ds.scales));
            }
            out[static_cast<size_t>(c)] = std::move(ds);
        } catch (const std::exception& e) {
            errors[static_cast<size_t>(c)] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error("build_synthetic_datasets: " + e);
    return out;
}

std::vector<CityDataset> build_csv_datasets(const std::string& csv_path,
                                            const std::vector<int>& n_values, int replicas,
                                            uint64_t seed) {
    auto loaded = load_records(csv_path);
    auto cleaned = clean_records(loaded.records);

    std::set<std::string> cities;
    for (const auto& r : cleaned.kept) cities.insert(r.city);

    std::vector<CityDataset> out;
    size_t idx = 0;
    for (const auto& city : cities) {
        std::vector<DetectorRecord> recs;
        for (const auto& r : cleaned.kept)
            if (r.city == city) recs.push_back(r);
        try {
            CityDataset ds;
            ds.city = city;
            auto full = aggregate(recs, detectors_of(recs, city));
            ds.full_normalized = normalize(full);
            ds.scales = *ds.full_normalized.norm;
            for (int n : n_values) {
                auto bundle =
                    make_biased_bundles(recs, city, n, replicas, mix_seed(seed, 29u + n, idx));
                auto& dst = ds.replicas_by_n[n];
                for (auto& rep : bundle.replicas) dst.push_back(normalize(rep, ds.scales));
            }
            out.push_back(std::move(ds));
        } catch (const std::exception& e) {
            // Ineligible city (too few detectors or too short); skip it.
            std::fprintf(stderr, "skipping city %s: %s\n", city.c_str(), e.what());
        }
        ++idx;
    }
    if (out.empty()) throw std::runtime_error("build_csv_datasets: no eligible cities");
    return out;
}

namespace {

ExperimentRow row_from_report(const FitReport& rep, int repetition, uint64_t rep_seed) {
    ExperimentRow row;
    row.model = rep.model;
    row.n_detectors = rep.n_detectors;
    row.city = rep.city;
    row.repetition = repetition;
    row.rep_seed = rep_seed;
    row.mse = rep.metrics.mse;
    row.rrse = rep.metrics.rrse;
    row.r = rep.metrics.r;
    row.x_cd = rep.x_cd;
    row.f_max = rep.f_max;
    row.x_cd_norm = rep.x_cd_norm;
    row.f_max_norm = rep.f_max_norm;
    row.error = rep.error;
    return row;
}

bool wants(const std::vector<std::string>& models, const std::string& m) {
    return std::find(models.begin(), models.end(), m) != models.end();
}

} // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    validate(cfg.meta);
    if (cfg.repetitions <= 0 || cfg.holdout_per_rep <= 0)
        throw std::invalid_argument("run_experiment: bad repetition settings");

    std::vector<CityDataset> datasets =
        cfg.records_csv.empty()
            ? build_synthetic_datasets(cfg.synthetic, cfg.n_detectors, cfg.replicas)
            : build_csv_datasets(cfg.records_csv, cfg.n_detectors, cfg.replicas, cfg.seed);
    if (static_cast<int>(datasets.size()) <= cfg.holdout_per_rep)
        throw std::runtime_error("run_experiment: not enough eligible cities");

    struct Cell {
        int n = 0;
        int rep = 0;
    };
    std::vector<Cell> cells;
    for (int n : cfg.n_detectors)
        for (int rep = 0; rep < cfg.repetitions; ++rep) cells.push_back({n, rep});

    std::vector<std::vector<ExperimentRow>> cell_rows(cells.size());
    std::vector<std::string> cell_errors(cells.size());

#pragma omp parallel for schedule(dynamic)
    for (size_t ci = 0; ci < cells.size(); ++ci) {
        const int n = cells[ci].n;
        const int rep = cells[ci].rep;
        const uint64_t cell_seed = mix_seed(cfg.seed, (uint64_t)n, (uint64_t)rep);
        try {
            std::mt19937_64 rng(cell_seed);

            // Hold out distinct cities for this repetition.
            std::vector<size_t> order(datasets.size());
            std::iota(order.begin(), order.end(), 0);
            for (int i = 0; i < cfg.holdout_per_rep; ++i) {
                std::uniform_int_distribution<size_t> u(static_cast<size_t>(i), order.size() - 1);
                std::swap(order[static_cast<size_t>(i)], order[u(rng)]);
            }
            std::set<size_t> held(order.begin(), order.begin() + cfg.holdout_per_rep);

            TaskPool train_pool;
            train_pool.n_detectors = n;
            TaskPool holdout_pool;
            holdout_pool.n_detectors = n;
            for (size_t d = 0; d < datasets.size(); ++d) {
                CityTaskSource src;
                src.city = datasets[d].city;
                src.full_normalized = datasets[d].full_normalized;
                src.replicas_normalized = datasets[d].replicas_by_n.at(n);
                (held.count(d) ? holdout_pool : train_pool).cities.push_back(std::move(src));
            }

            MetaConfig meta_cfg = cfg.meta;
            std::vector<Task> holdout_tasks;
            for (const auto& c : holdout_pool.cities) {
                TaskPool one;
                one.n_detectors = n;
                one.cities.push_back(c);
                holdout_tasks.push_back(sample_task(one, meta_cfg, rng));
            }

            auto& rows = cell_rows[ci];
            auto push = [&](FitReport rep_report) {
                rows.push_back(row_from_report(rep_report, rep, cell_seed));
            };
            auto push_error = [&](const std::string& model, const Task& task, const std::string& err) {
                ExperimentRow row;
                row.model = model;
                row.n_detectors = n;
                row.city = task.city;
                row.repetition = rep;
                row.rep_seed = cell_seed;
                row.error = err;
                rows.push_back(row);
            };

            if (wants(cfg.models, "maml")) {
                try {
                    MetaResult res = meta_train(train_pool, holdout_tasks, meta_cfg, cell_seed);
                    for (auto& fr : res.test_reports) push(fr);
                } catch (const std::exception& e) {
                    for (const auto& t : holdout_tasks) push_error("maml-mtpinn", t, e.what());
                }
            }
            for (size_t ti = 0; ti < holdout_tasks.size(); ++ti) {
                const Task& task = holdout_tasks[ti];
                const uint64_t model_seed = mix_seed(cell_seed, 101, ti);
                if (wants(cfg.models, "scratch")) {
                    try {
                        push(train_scratch_comparison(task, cfg.meta.learner, model_seed));
                    } catch (const std::exception& e) {
                        push_error("mtpinn-scratch", task, e.what());
                    }
                }
                if (wants(cfg.models, "nn")) {
                    try {
                        push(train_plain_nn(task, cfg.meta.learner, model_seed));
                    } catch (const std::exception& e) {
                        push_error("plain-nn", task, e.what());
                    }
                }
            }

            const bool any_transfer = wants(cfg.models, "tc1000") || wants(cfg.models, "tw5") ||
                                      wants(cfg.models, "tw1000") || wants(cfg.models, "tc5");
            if (any_transfer) {
                MtpinnModel pretrained = transfer_pretrain(train_pool, cfg.meta.learner,
                                                           cfg.pretrain_epochs,
                                                           mix_seed(cell_seed, 300, 0));
                struct Variant {
                    const char* key;
                    const char* label;
                    TransferConfig tcfg;
                };
                const Variant variants[] = {
                    {"tc1000", "tc1000-mtpinn", {TransferConfig::Mode::Cold, 1000}},
                    {"tc5", "tc5-mtpinn", {TransferConfig::Mode::Cold, 5}},
                    {"tw5", "tw5-mtpinn", {TransferConfig::Mode::Warm, 5}},
                    {"tw1000", "tw1000-mtpinn", {TransferConfig::Mode::Warm, 1000}},
                };
                for (const auto& v : variants) {
                    if (!wants(cfg.models, v.key)) continue;
                    for (size_t ti = 0; ti < holdout_tasks.size(); ++ti) {
                        try {
                            push(transfer_evaluate(pretrained, holdout_tasks[ti], v.tcfg,
                                                   mix_seed(cell_seed, 400, ti), v.label));
                        } catch (const std::exception& e) {
                            push_error(v.label, holdout_tasks[ti], e.what());
                        }
                    }
                }
            }
        } catch (const std::exception& e) {
            cell_errors[ci] = e.what();
        }
    }

    ExperimentReport report;
    report.resolved_config = experiment_config_json(cfg);
    for (size_t ci = 0; ci < cells.size(); ++ci) {
        if (!cell_errors[ci].empty()) {
            ExperimentRow row;
            row.model = "cell";
            row.n_detectors = cells[ci].n;
            row.repetition = cells[ci].rep;
            row.city = "*";
            row.error = cell_errors[ci];
            report.rows.push_back(row);
            continue;
        }
        for (auto& r : cell_rows[ci]) report.rows.push_back(std::move(r));
    }
    report.aggregates = aggregate_rows(report.rows);
    return report;
}

std::vector<MetricAggregate> aggregate_rows(const std::vector<ExperimentRow>& rows) {
    std::map<std::pair<std::string, int>, std::vector<const ExperimentRow*>> groups;
    for (const auto& r : rows) {
        if (!r.error.empty()) continue;
        groups[{r.model, r.n_detectors}].push_back(&r);
    }
    std::vector<MetricAggregate> out;
    for (const auto& [key, group] : groups) {
        for (const std::string metric : {"mse", "rrse", "r"}) {
            std::vector<double> vals;
            for (const auto* r : group)
                vals.push_back(metric == "mse" ? r->mse : metric == "rrse" ? r->rrse : r->r);
            std::sort(vals.begin(), vals.end());
            MetricAggregate a;
            a.model = key.first;
            a.n_detectors = key.second;
            a.metric = metric;
            a.count = vals.size();
            a.min = vals.front();
            a.max = vals.back();
            a.median = quantile_sorted(vals, 0.5);
            double mean = 0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            a.mean = mean;
            double var = 0;
            for (double v : vals) var += (v - mean) * (v - mean);
            a.stddev = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
            out.push_back(a);
        }
    }
    return out;
}

void write_report(const ExperimentReport& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);

    std::ofstream rows(out_dir + "/rows.csv");
    rows << "model,n_detectors,city,repetition,rep_seed,mse,rrse,r,x_cd,f_max,x_cd_norm,f_max_norm,error\n";
    for (const auto& r : report.rows) {
        rows << r.model << ',' << r.n_detectors << ',' << r.city << ',' << r.repetition << ','
             << r.rep_seed << ',' << fmt(r.mse) << ',' << fmt(r.rrse) << ',' << fmt(r.r) << ','
             << fmt(r.x_cd) << ',' << fmt(r.f_max) << ',' << fmt(r.x_cd_norm) << ','
             << fmt(r.f_max_norm) << ',' << r.error << '\n';
    }

    std::ofstream aggs(out_dir + "/aggregates.csv");
    aggs << "model,n_detectors,metric,mean,median,max,min,std,count\n";
    for (const auto& a : report.aggregates) {
        aggs << a.model << ',' << a.n_detectors << ',' << a.metric << ',' << fmt(a.mean) << ','
             << fmt(a.median) << ',' << fmt(a.max) << ',' << fmt(a.min) << ',' << fmt(a.stddev)
             << ',' << a.count << '\n';
    }

    json j;
    j["config"] = json::parse(report.resolved_config);
    j["rows"] = json::array();
    for (const auto& r : report.rows) {
        json row;
        row["model"] = r.model;
        row["n_detectors"] = r.n_detectors;
        row["city"] = r.city;
        row["repetition"] = r.repetition;
        row["rep_seed"] = r.rep_seed;
        row["mse"] = r.mse;
        row["rrse"] = r.rrse;
        row["r"] = r.r;
        row["x_cd"] = r.x_cd;
        row["f_max"] = r.f_max;
        row["x_cd_norm"] = r.x_cd_norm;
        row["f_max_norm"] = r.f_max_norm;
        row["error"] = r.error;
        j["rows"].push_back(row);
    }
    std::ofstream out(out_dir + "/report.json");
    out << j.dump(2) << "\n";
}

ExperimentReport read_report(const std::string& out_dir) {
    std::ifstream in(out_dir + "/report.json");
    if (!in) throw std::runtime_error("read_report: cannot open " + out_dir + "/report.json");
    json j = json::parse(in);
    ExperimentReport report;
    report.resolved_config = j["config"].dump(2);
    for (const auto& row : j["rows"]) {
        ExperimentRow r;
        r.model = row.value("model", "");
        r.n_detectors = row.value("n_detectors", 0);
        r.city = row.value("city", "");
        r.repetition = row.value("repetition", 0);
        r.rep_seed = row.value("rep_seed", (uint64_t)0);
        r.mse = row.value("mse", 0.0);
        r.rrse = row.value("rrse", 0.0);
        r.r = row.value("r", 0.0);
        r.x_cd = row.value("x_cd", 0.0);
        r.f_max = row.value("f_max", 0.0);
        r.x_cd_norm = row.value("x_cd_norm", 0.0);
        r.f_max_norm = row.value("f_max_norm", 0.0);
        r.error = row.value("error", "");
        report.rows.push_back(std::move(r));
    }
    report.aggregates = aggregate_rows(report.rows);
    return report;
}

void emit_curve_csv(const BiParabolicFit& fit, const MfdSeries& normalized,
                    const std::string& out_path) {
    PredictionBand band = prediction_interval(fit, normalized);
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("emit_curve_csv: cannot open " + out_path);
    out << "x,flow_obs,flow_pred,band_lo,band_hi\n";
    // Observations with the curve and band interpolated at their x.
    for (const auto& p : normalized.points) {
        const double pred = predict(fit.params, p.occupancy);
        auto it = std::lower_bound(band.x.begin(), band.x.end(), p.occupancy);
        const size_t idx = it == band.x.end() ? band.x.size() - 1
                                              : static_cast<size_t>(it - band.x.begin());
        out << fmt(p.occupancy) << ',' << fmt(p.flow) << ',' << fmt(pred) << ','
            << fmt(band.lo[idx]) << ',' << fmt(band.hi[idx]) << '\n';
    }
}

void emit_loss_trace_csv(const std::vector<double>& trace, const std::string& out_path) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("emit_loss_trace_csv: cannot open " + out_path);
    out << "epoch,loss\n";
    for (size_t i = 0; i < trace.size(); ++i) out << i << ',' << fmt(trace[i]) << '\n';
}

void emit_meta_trace_csv(const MetaResult& result, const std::string& out_path) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("emit_meta_trace_csv: cannot open " + out_path);
    out << "iteration,inner_loss,outer_loss\n";
    for (size_t i = 0; i < result.outer_loss_trace.size(); ++i)
        out << i << ',' << fmt(result.inner_loss_trace[i]) << ','
            << fmt(result.outer_loss_trace[i]) << '\n';
}

void emit_boxplot_csv(const ExperimentReport& report, const std::string& out_path) {
    std::map<std::pair<std::string, int>, std::vector<double>> groups;
    for (const auto& r : report.rows)
        if (r.error.empty()) groups[{r.model, r.n_detectors}].push_back(r.mse);

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("emit_boxplot_csv: cannot open " + out_path);
    out << "model,n_detectors,q1,median,q3,lo_whisker,hi_whisker,outliers\n";
    for (auto& [key, vals] : groups) {
        std::sort(vals.begin(), vals.end());
        const double q1 = quantile_sorted(vals, 0.25);
        const double q2 = quantile_sorted(vals, 0.5);
        const double q3 = quantile_sorted(vals, 0.75);
        const double iqr = q3 - q1;
        double lo = q1, hi = q3;
        int outliers = 0;
        for (double v : vals) {
            if (v < q1 - 1.5 * iqr || v > q3 + 1.5 * iqr)
                ++outliers;
            else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        out << key.first << ',' << key.second << ',' << fmt(q1) << ',' << fmt(q2) << ','
            << fmt(q3) << ',' << fmt(lo) << ',' << fmt(hi) << ',' << outliers << '\n';
    }
}

void emit_bars_csv(const ExperimentReport& report, const std::string& out_path) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("emit_bars_csv: cannot open " + out_path);
    out << "model,n_detectors,metric,mean,std\n";
    for (const auto& a : report.aggregates)
        out << a.model << ',' << a.n_detectors << ',' << a.metric << ',' << fmt(a.mean) << ','
            << fmt(a.stddev) << '\n';
}

} // namespace mfd
