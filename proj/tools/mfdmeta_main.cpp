// Command-line frontend: data preparation, model fitting/training, the
// meta-learning pipeline, the experiment harness, and plot-data emission.

#include <CLI11.hpp>

#include "mfdmeta/harness.hpp"
#include "mfdmeta/serialize.hpp"

#include <filesystem>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using namespace mfd;

namespace {

struct PreparedData {
    std::vector<CityTaskSource> cities; // normalized full + replicas for one n
};

// prepare-data layout: <out>/full/<city>.csv and <out>/bundles/n<k>/<city>/r##.csv
int cmd_prepare_data(const std::string& input, const std::string& synthetic_cfg,
                     const std::string& out_dir, std::vector<int> n_values, int replicas,
                     uint64_t seed) {
    std::vector<DetectorRecord> records;
    if (!input.empty()) {
        auto loaded = load_records(input);
        if (!loaded.rejections.empty()) {
            std::cerr << loaded.rejections.size() << " rejected rows:\n";
            for (const auto& rej : loaded.rejections)
                std::cerr << "  line " << rej.line << ": " << rej.reason << "\n";
        }
        auto cleaned = clean_records(loaded.records);
        std::cerr << "kept " << cleaned.kept.size() << " records, dropped "
                  << cleaned.dropped.size() << "\n";
        records = std::move(cleaned.kept);
    } else {
        SyntheticPoolConfig pool;
        if (!synthetic_cfg.empty()) {
            ExperimentConfig tmp = load_experiment_config(synthetic_cfg);
            pool = tmp.synthetic;
        }
        std::mt19937_64 rng(pool.seed);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        for (int c = 0; c < pool.n_cities; ++c) {
            SyntheticCitySpec spec;
            spec.name = "synth" + std::to_string(c);
            spec.x_cd = pool.x_cd_min + (pool.x_cd_max - pool.x_cd_min) * u01(rng);
            spec.f_vertex = pool.f_vertex_min + (pool.f_vertex_max - pool.f_vertex_min) * u01(rng);
            spec.width_ratio = pool.width_min + (pool.width_max - pool.width_min) * u01(rng);
            spec.n_detectors = pool.detectors_per_city;
            spec.days = pool.days;
            spec.intervals_per_day = pool.intervals_per_day;
            spec.noise_sigma = pool.noise_sigma;
            spec.detector_bias_sigma = pool.detector_bias_sigma;
            spec.seed = pool.seed + static_cast<uint64_t>(c);
            auto recs = generate_synthetic_city(spec);
            auto cleaned = clean_records(recs);
            records.insert(records.end(), cleaned.kept.begin(), cleaned.kept.end());
        }
    }

    std::set<std::string> cities;
    for (const auto& r : records) cities.insert(r.city);

    fs::create_directories(fs::path(out_dir) / "full");
    int written = 0;
    for (const auto& city : cities) {
        std::vector<DetectorRecord> recs;
        for (const auto& r : records)
            if (r.city == city) recs.push_back(r);
        try {
            auto full = aggregate(recs, detectors_of(recs, city));
            write_series(full, (fs::path(out_dir) / "full" / (city + ".csv")).string(), seed);
            for (int n : n_values) {
                auto bundle = make_biased_bundles(recs, city, n, replicas,
                                                  seed + static_cast<uint64_t>(n));
                fs::path dir = fs::path(out_dir) / "bundles" / ("n" + std::to_string(n)) / city;
                fs::create_directories(dir);
                for (size_t i = 0; i < bundle.replicas.size(); ++i) {
                    char name[32];
                    std::snprintf(name, sizeof name, "r%02zu.csv", i);
                    write_series(bundle.replicas[i], (dir / name).string(), bundle.seed);
                }
            }
            ++written;
        } catch (const std::exception& e) {
            std::cerr << "skipping city " << city << ": " << e.what() << "\n";
        }
    }
    if (written == 0) {
        std::cerr << "no eligible cities\n";
        return 1;
    }
    std::cerr << "prepared " << written << " cities under " << out_dir << "\n";
    return 0;
}

// Load the prepare-data tree back as a pool for one subset size.
PreparedData load_prepared(const std::string& full_dir, const std::string& bundles_dir) {
    PreparedData data;
    for (const auto& entry : fs::directory_iterator(full_dir)) {
        if (entry.path().extension() != ".csv") continue;
        MfdSeries full = read_series(entry.path().string());
        if (full.city.empty()) full.city = entry.path().stem().string();
        MfdSeries full_norm = normalize(full);

        CityTaskSource src;
        src.city = full.city;
        fs::path city_bundles = fs::path(bundles_dir) / full.city;
        if (!fs::exists(city_bundles)) continue;
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(city_bundles))
            if (f.path().extension() == ".csv") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            src.replicas_normalized.push_back(normalize(read_series(f.string()), *full_norm.norm));
        src.full_normalized = std::move(full_norm);
        if (!src.replicas_normalized.empty()) data.cities.push_back(std::move(src));
    }
    if (data.cities.empty()) throw std::runtime_error("no cities found under " + full_dir);
    std::sort(data.cities.begin(), data.cities.end(),
              [](const auto& a, const auto& b) { return a.city < b.city; });
    return data;
}

int cmd_meta_train(const std::string& bundles_dir, const std::string& full_dir,
                   const std::string& config_path, const std::string& holdout_csv, uint64_t seed,
                   const std::string& out_path) {
    MetaConfig cfg = config_path.empty() ? MetaConfig{} : load_meta_config(config_path);
    validate(cfg);

    PreparedData data = load_prepared(full_dir, bundles_dir);
    std::set<std::string> holdout;
    {
        std::stringstream ss(holdout_csv);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) holdout.insert(item);
    }
    if (holdout.empty()) {
        std::cerr << "--holdout needs at least one city\n";
        return 1;
    }

    TaskPool train_pool;
    std::vector<Task> holdout_tasks;
    std::mt19937_64 rng(seed);
    for (auto& src : data.cities) {
        if (holdout.count(src.city)) {
            TaskPool one;
            one.cities.push_back(src);
            holdout_tasks.push_back(sample_task(one, cfg, rng));
        } else {
            train_pool.cities.push_back(std::move(src));
        }
    }
    if (holdout_tasks.size() != holdout.size()) {
        std::cerr << "some holdout cities were not found in the data\n";
        return 1;
    }

    MetaResult result = meta_train(train_pool, holdout_tasks, cfg, seed);
    save_meta_result(result, cfg, out_path);
    for (const auto& rep : result.test_reports)
        std::cerr << rep.city << ": mse " << rep.metrics.mse << " rrse " << rep.metrics.rrse
                  << " r " << rep.metrics.r << "\n";
    return 0;
}

int cmd_baseline(const std::string& kind, const std::string& bundles_dir,
                 const std::string& full_dir, const std::string& config_path,
                 const std::string& city, uint64_t seed, int pretrain_epochs,
                 const std::string& out_path) {
    MetaConfig cfg = config_path.empty() ? MetaConfig{} : load_meta_config(config_path);
    PreparedData data = load_prepared(full_dir, bundles_dir);

    TaskPool pool;
    std::optional<Task> target;
    std::mt19937_64 rng(seed);
    for (auto& src : data.cities) {
        if (src.city == city) {
            TaskPool one;
            one.cities.push_back(std::move(src));
            target = sample_task(one, cfg, rng);
        } else {
            pool.cities.push_back(std::move(src));
        }
    }
    if (!target) {
        std::cerr << "city " << city << " not found\n";
        return 1;
    }

    FitReport report;
    if (kind == "scratch") {
        report = train_scratch_comparison(*target, cfg.learner, seed);
    } else if (kind == "nn") {
        report = train_plain_nn(*target, cfg.learner, seed);
    } else if (kind == "tc5" || kind == "tc1000" || kind == "tw5" || kind == "tw1000") {
        TransferConfig tcfg;
        tcfg.mode = kind[1] == 'c' ? TransferConfig::Mode::Cold : TransferConfig::Mode::Warm;
        tcfg.finetune_epochs = kind.substr(2) == "5" ? 5 : 1000;
        MtpinnModel pre = transfer_pretrain(pool, cfg.learner, pretrain_epochs, seed);
        report = transfer_evaluate(pre, *target, tcfg, seed, kind + "-mtpinn");
    } else {
        std::cerr << "unknown baseline kind " << kind << "\n";
        return 1;
    }
    save_fit_report(report, out_path);
    std::cerr << report.model << " on " << report.city << ": mse " << report.metrics.mse
              << " rrse " << report.metrics.rrse << " r " << report.metrics.r << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MFD estimation under data scarcity: bi-parabolic fits, MTPINN, and MAML"};
    app.require_subcommand(1);

    // prepare-data
    std::string in_csv, synth_cfg, out_dir;
    std::vector<int> n_values{75, 50, 25, 10};
    int replicas = 30;
    uint64_t seed = 7;
    auto* prep = app.add_subcommand("prepare-data",
                                    "Clean records, aggregate, and build biased bundles");
    prep->add_option("--input", in_csv, "records CSV (city,detector,interval,flow,occupancy)");
    prep->add_option("--synthetic", synth_cfg, "experiment config JSON with a synthetic block");
    prep->add_option("--out", out_dir, "output directory")->required();
    prep->add_option("--n", n_values, "subset sizes");
    prep->add_option("--replicas", replicas, "replicas per subset size");
    prep->add_option("--seed", seed, "sampling seed");

    // fit-biparabolic
    std::string series_path, fit_out;
    double alpha = 1.0, beta = 0.1, lr = 0.01;
    int epochs = 2000;
    auto* fitcmd = app.add_subcommand("fit-biparabolic", "White-box bi-parabolic fit");
    fitcmd->add_option("--input", series_path, "series CSV (occupancy,flow)")->required();
    fitcmd->add_option("--alpha", alpha, "exceedance penalty weight");
    fitcmd->add_option("--beta", beta, "vertex anchor weight");
    fitcmd->add_option("--lr", lr, "learning rate");
    fitcmd->add_option("--epochs", epochs, "max epochs");
    fitcmd->add_option("--out", fit_out, "fit JSON")->required();

    // train-mtpinn
    std::string model_cfg_path, model_out;
    auto* traincmd = app.add_subcommand("train-mtpinn", "Train the multi-task network");
    traincmd->add_option("--input", series_path, "series CSV")->required();
    traincmd->add_option("--config", model_cfg_path, "meta/learner config JSON");
    traincmd->add_option("--out", model_out, "model JSON")->required();
    traincmd->add_option("--seed", seed, "training seed");

    // meta-train
    std::string bundles_dir, full_dir, meta_cfg_path, holdout_csv, meta_out;
    auto* metacmd = app.add_subcommand("meta-train", "Adapted MAML over city tasks");
    metacmd->add_option("--bundles", bundles_dir, "bundles dir for one n (prepare-data output)")
        ->required();
    metacmd->add_option("--full", full_dir, "full-series dir")->required();
    metacmd->add_option("--config", meta_cfg_path, "meta config JSON");
    metacmd->add_option("--holdout", holdout_csv, "comma-separated held-out cities")->required();
    metacmd->add_option("--seed", seed, "seed");
    metacmd->add_option("--out", meta_out, "result JSON")->required();

    // baseline
    std::string kind, target_city;
    int pretrain_epochs = 150;
    auto* basecmd = app.add_subcommand("baseline", "Comparison models on one held-out city");
    basecmd->add_option("--kind", kind, "scratch|nn|tc5|tc1000|tw5|tw1000")->required();
    basecmd->add_option("--bundles", bundles_dir, "bundles dir for one n")->required();
    basecmd->add_option("--full", full_dir, "full-series dir")->required();
    basecmd->add_option("--config", meta_cfg_path, "meta config JSON");
    basecmd->add_option("--city", target_city, "target city")->required();
    basecmd->add_option("--seed", seed, "seed");
    basecmd->add_option("--pretrain-epochs", pretrain_epochs, "transfer pretraining epochs");
    basecmd->add_option("--out", meta_out, "report JSON")->required();

    // run-experiment
    std::string exp_cfg_path, exp_out;
    auto* expcmd = app.add_subcommand("run-experiment", "Full dataset/train/evaluate pass");
    expcmd->add_option("--config", exp_cfg_path, "experiment config JSON (defaults if omitted)");
    expcmd->add_option("--out", exp_out, "output directory")->required();
    bool print_default = false;
    expcmd->add_flag("--print-default-config", print_default, "dump the default config and exit");

    // emit-plots
    std::string plot_kind, report_dir, plot_fit, plot_meta, plot_input, plot_out;
    auto* plotcmd = app.add_subcommand("emit-plots", "Emit plot-ready CSV data");
    plotcmd->add_option("--kind", plot_kind, "curve|losses|meta-losses|boxplot|bars")->required();
    plotcmd->add_option("--report", report_dir, "experiment report directory");
    plotcmd->add_option("--fit", plot_fit, "bi-parabolic fit JSON");
    plotcmd->add_option("--meta", plot_meta, "meta result JSON");
    plotcmd->add_option("--input", plot_input, "series CSV for curve emission");
    plotcmd->add_option("--out", plot_out, "output CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed())
            return cmd_prepare_data(in_csv, synth_cfg, out_dir, n_values, replicas, seed);

        if (fitcmd->parsed()) {
            MfdSeries series = read_series(series_path);
            MfdSeries norm = series.norm ? series : normalize(series);
            BiParabolicHyper hyper;
            hyper.alpha = alpha;
            hyper.beta = beta;
            hyper.lr = lr;
            hyper.epochs = epochs;
            BiParabolicFit fit = fit_biparabolic(norm, hyper);
            save_biparabolic(fit, norm, fit_out);
            std::cerr << "x_cd " << fit.params.x_cd() * norm.norm->occ_scale << " f_vertex "
                      << fit.params.f_vertex() * norm.norm->flow_scale << " after "
                      << fit.loss_trace.size() << " epochs\n";
            return 0;
        }

        if (traincmd->parsed()) {
            MfdSeries series = read_series(series_path);
            MfdSeries norm = series.norm ? series : normalize(series);
            MtpinnConfig cfg;
            if (!model_cfg_path.empty()) cfg = load_meta_config(model_cfg_path).learner;
            cfg.seed = seed;
            MtpinnModel model = init_mtpinn(cfg);
            TrainTrace trace;
            model = train_mtpinn(model, norm, cfg, &trace);
            save_mtpinn(model, trace, model_out);
            std::cerr << "trained " << cfg.epochs << " epochs, best val epoch "
                      << trace.best_epoch << "\n";
            return 0;
        }

        if (metacmd->parsed())
            return cmd_meta_train(bundles_dir, full_dir, meta_cfg_path, holdout_csv, seed,
                                  meta_out);

        if (basecmd->parsed())
            return cmd_baseline(kind, bundles_dir, full_dir, meta_cfg_path, target_city, seed,
                                pretrain_epochs, meta_out);

        if (expcmd->parsed()) {
            ExperimentConfig cfg =
                exp_cfg_path.empty() ? ExperimentConfig{} : load_experiment_config(exp_cfg_path);
            if (print_default) {
                std::cout << experiment_config_json(cfg) << "\n";
                return 0;
            }
            ExperimentReport report = run_experiment(cfg);
            write_report(report, exp_out);
            size_t failures = 0;
            for (const auto& r : report.rows)
                if (!r.error.empty()) ++failures;
            std::cerr << report.rows.size() << " rows (" << failures << " failed) written to "
                      << exp_out << "\n";
            return failures == report.rows.size() && !report.rows.empty() ? 1 : 0;
        }

        if (plotcmd->parsed()) {
            if (plot_kind == "curve") {
                BiParabolicFit fit = load_biparabolic(plot_fit);
                MfdSeries series = read_series(plot_input);
                MfdSeries norm = series.norm ? series : normalize(series);
                emit_curve_csv(fit, norm, plot_out);
            } else if (plot_kind == "losses") {
                BiParabolicFit fit = load_biparabolic(plot_fit);
                std::vector<double> totals;
                for (const auto& l : fit.loss_trace) totals.push_back(l.total);
                emit_loss_trace_csv(totals, plot_out);
            } else if (plot_kind == "meta-losses") {
                MetaResult res = load_meta_result(plot_meta);
                emit_meta_trace_csv(res, plot_out);
            } else if (plot_kind == "boxplot") {
                emit_boxplot_csv(read_report(report_dir), plot_out);
            } else if (plot_kind == "bars") {
                emit_bars_csv(read_report(report_dir), plot_out);
            } else {
                std::cerr << "unknown plot kind " << plot_kind << "\n";
                return 1;
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
