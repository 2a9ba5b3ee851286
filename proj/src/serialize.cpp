#include "mfdmeta/serialize.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>

namespace mfd {

using nlohmann::json;

namespace {

json params_to_json(const ParameterSet& ps) {
    json arr = json::array();
    for (const auto& [name, t] : ps) {
        json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["data"] = std::vector<double>(t.data(), t.data() + t.numel());
        arr.push_back(entry);
    }
    return arr;
}

ParameterSet params_from_json(const json& arr) {
    ParameterSet ps;
    for (const auto& entry : arr) {
        auto shape = entry["shape"].get<std::vector<int64_t>>();
        auto data = entry["data"].get<std::vector<double>>();
        ps.add(entry["name"].get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
    return ps;
}

json mtpinn_config_to_json(const MtpinnConfig& c) {
    json j;
    j["hidden_sizes"] = c.hidden_sizes;
    j["branch_sizes"] = c.branch_sizes;
    j["dropout"] = c.dropout;
    j["alpha"] = c.alpha;
    j["w1"] = c.w1;
    j["w2"] = c.w2;
    j["lr"] = c.lr;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["init_offset"] = c.init_offset;
    j["init_scaler"] = c.init_scaler;
    j["val_fraction"] = c.val_fraction;
    j["test_fraction"] = c.test_fraction;
    j["single_head"] = c.single_head;
    j["seed"] = c.seed;
    return j;
}

MtpinnConfig mtpinn_config_from_json(const json& j) {
    MtpinnConfig c;
    c.hidden_sizes = j.value("hidden_sizes", c.hidden_sizes);
    c.branch_sizes = j.value("branch_sizes", c.branch_sizes);
    c.dropout = j.value("dropout", c.dropout);
    c.alpha = j.value("alpha", c.alpha);
    c.w1 = j.value("w1", c.w1);
    c.w2 = j.value("w2", c.w2);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.init_offset = j.value("init_offset", c.init_offset);
    c.init_scaler = j.value("init_scaler", c.init_scaler);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.single_head = j.value("single_head", c.single_head);
    c.seed = j.value("seed", c.seed);
    return c;
}

json report_to_json(const FitReport& r) {
    json j;
    j["city"] = r.city;
    j["model"] = r.model;
    j["n_detectors"] = r.n_detectors;
    j["seed"] = r.seed;
    j["mse"] = r.metrics.mse;
    j["rrse"] = r.metrics.rrse;
    j["r"] = r.metrics.r;
    j["x_cd"] = r.x_cd;
    j["f_max"] = r.f_max;
    j["x_cd_norm"] = r.x_cd_norm;
    j["f_max_norm"] = r.f_max_norm;
    j["loss_trace"] = r.loss_trace;
    j["error"] = r.error;
    return j;
}

json norm_to_json(const std::optional<NormScales>& n) {
    if (!n) return nullptr;
    return json{{"flow_scale", n->flow_scale}, {"occ_scale", n->occ_scale}};
}

std::optional<NormScales> norm_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    return NormScales{j["flow_scale"].get<double>(), j["occ_scale"].get<double>()};
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

} // namespace

void save_mtpinn(const MtpinnModel& model, const TrainTrace& trace, const std::string& path) {
    json j;
    j["kind"] = "mtpinn";
    j["config"] = mtpinn_config_to_json(model.config);
    j["params"] = params_to_json(model.params);
    j["norm"] = norm_to_json(model.norm);
    j["train_loss"] = trace.train_loss;
    j["val_mse"] = trace.val_mse;
    j["best_epoch"] = trace.best_epoch;
    write_json(j, path);
}

MtpinnModel load_mtpinn(const std::string& path) {
    json j = read_json(path);
    MtpinnModel model;
    model.config = mtpinn_config_from_json(j["config"]);
    model.params = params_from_json(j["params"]);
    model.norm = norm_from_json(j.value("norm", json()));
    return model;
}

void save_biparabolic(const BiParabolicFit& fit, const MfdSeries& normalized,
                      const std::string& path) {
    json j;
    j["kind"] = "biparabolic";
    j["params"] = params_to_json(fit.params.values);
    j["anchors"] = fit.params.anchors;
    j["x_cd_norm"] = fit.params.x_cd();
    j["f_vertex_norm"] = fit.params.f_vertex();
    j["a2"] = fit.params.a2();
    if (normalized.norm) {
        j["norm"] = norm_to_json(normalized.norm);
        j["x_cd"] = fit.params.x_cd() * normalized.norm->occ_scale;
        j["f_vertex"] = fit.params.f_vertex() * normalized.norm->flow_scale;
    }
    json trace = json::array();
    for (const auto& l : fit.loss_trace)
        trace.push_back({{"l1", l.l1},
                         {"l2", l.l2},
                         {"l_lambda", l.l_lambda},
                         {"l_beta", l.l_beta},
                         {"total", l.total}});
    j["loss_trace"] = trace;
    PredictionBand band = prediction_interval(fit, normalized);
    j["band"] = {{"x", band.x},
                 {"lo", band.lo},
                 {"hi", band.hi},
                 {"uncongested_ok", band.uncongested_ok},
                 {"congested_ok", band.congested_ok}};
    write_json(j, path);
}

BiParabolicFit load_biparabolic(const std::string& path) {
    json j = read_json(path);
    BiParabolicFit fit;
    fit.params.values = params_from_json(j["params"]);
    fit.params.anchors = j["anchors"].get<std::vector<double>>();
    for (const auto& l : j["loss_trace"]) {
        BiParabolicLoss loss;
        loss.l1 = l["l1"].get<double>();
        loss.l2 = l["l2"].get<double>();
        loss.l_lambda = l["l_lambda"].get<double>();
        loss.l_beta = l["l_beta"].get<double>();
        loss.total = l["total"].get<double>();
        fit.loss_trace.push_back(loss);
    }
    return fit;
}

void save_meta_result(const MetaResult& result, const MetaConfig& cfg, const std::string& path) {
    json j;
    j["kind"] = "meta";
    j["theta"] = params_to_json(result.theta);
    j["inner_loss_trace"] = result.inner_loss_trace;
    j["outer_loss_trace"] = result.outer_loss_trace;
    json reports = json::array();
    for (const auto& r : result.test_reports) reports.push_back(report_to_json(r));
    j["test_reports"] = reports;
    j["learner"] = mtpinn_config_to_json(cfg.learner);
    write_json(j, path);
}

MetaResult load_meta_result(const std::string& path) {
    json j = read_json(path);
    MetaResult res;
    res.theta = params_from_json(j["theta"]);
    res.inner_loss_trace = j["inner_loss_trace"].get<std::vector<double>>();
    res.outer_loss_trace = j["outer_loss_trace"].get<std::vector<double>>();
    for (const auto& r : j["test_reports"]) {
        FitReport rep;
        rep.city = r.value("city", "");
        rep.model = r.value("model", "");
        rep.n_detectors = r.value("n_detectors", 0);
        rep.metrics.mse = r.value("mse", 0.0);
        rep.metrics.rrse = r.value("rrse", 0.0);
        rep.metrics.r = r.value("r", 0.0);
        rep.x_cd = r.value("x_cd", 0.0);
        rep.f_max = r.value("f_max", 0.0);
        rep.loss_trace = r.value("loss_trace", std::vector<double>{});
        res.test_reports.push_back(std::move(rep));
    }
    return res;
}

void save_fit_report(const FitReport& report, const std::string& path) {
    write_json(report_to_json(report), path);
}

MetaConfig load_meta_config(const std::string& path) {
    json j = read_json(path);
    MetaConfig cfg;
    cfg.alpha_inner = j.value("alpha_inner", cfg.alpha_inner);
    cfg.beta_outer = j.value("beta_outer", cfg.beta_outer);
    cfg.n_ite = j.value("n_ite", cfg.n_ite);
    cfg.meta_iterations = j.value("meta_iterations", cfg.meta_iterations);
    cfg.tasks_per_iteration = j.value("tasks_per_iteration", cfg.tasks_per_iteration);
    cfg.k_support = j.value("k_support", cfg.k_support);
    cfg.m_query = j.value("m_query", cfg.m_query);
    cfg.dropout_train = j.value("dropout_train", cfg.dropout_train);
    cfg.dropout_test = j.value("dropout_test", cfg.dropout_test);
    if (j.contains("order"))
        cfg.order = j["order"] == "first" ? MetaOrder::FirstOrder : MetaOrder::SecondOrder;
    cfg.outer_adam = j.value("outer_adam", cfg.outer_adam);
    if (j.contains("learner")) cfg.learner = mtpinn_config_from_json(j["learner"]);
    return cfg;
}

} // namespace mfd
