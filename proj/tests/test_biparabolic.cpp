#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfdmeta/biparabolic.hpp"

#include <cmath>
#include <random>

using namespace mfd;

namespace {

double inv_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

BiParabolicParams exact_params(double x_cd, double f_vertex, double a2) {
    BiParabolicParams p;
    p.anchors = {x_cd};
    p.values.add("logits", Tensor({1}, {0.0}));
    p.values.add("f_vertex", Tensor::scalar(f_vertex));
    p.values.add("a2_raw", Tensor::scalar(inv_softplus(a2)));
    return p;
}

MfdSeries series_on_curve(const BiParabolicParams& p, int n, double x_max) {
    MfdSeries s;
    s.city = "curve";
    for (int i = 0; i < n; ++i) {
        const double x = 0.01 + (x_max - 0.01) * static_cast<double>(i) / (n - 1);
        s.points.push_back({i, x, predict(p, x)});
    }
    s.norm = NormScales{1.0, 1.0};
    return s;
}

MfdSeries normalized_synthetic(const SyntheticCitySpec& spec, NormScales* scales_out = nullptr) {
    auto records = generate_synthetic_city(spec);
    auto cleaned = clean_records(records);
    auto series = aggregate(cleaned.kept, detectors_of(cleaned.kept, spec.name));
    auto norm = normalize(series);
    if (scales_out) *scales_out = *norm.norm;
    return norm;
}

} // namespace

TEST_CASE("predict: origin, vertex, and a hand-computed point") {
    auto p = exact_params(0.3, 0.9, 5.0);
    CHECK(std::abs(predict(p, 0.0)) < 1e-12);
    CHECK(predict(p, 0.3) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(predict(p, 0.5) == doctest::Approx(0.70).epsilon(1e-9));
    CHECK_THROWS(predict(p, -0.1));
}

TEST_CASE("structural invariants over 1000 random parameter draws") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> ux(0.05, 0.95), uf(0.1, 1.5), ur(-15.0, 15.0);
    std::uniform_int_distribution<int> um(1, 40);
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = um(rng);
        BiParabolicParams p;
        p.anchors.resize(static_cast<size_t>(m));
        Tensor logits({m});
        for (int i = 0; i < m; ++i) {
            p.anchors[static_cast<size_t>(i)] = ux(rng);
            logits[i] = ur(rng) / 3.0;
        }
        std::sort(p.anchors.begin(), p.anchors.end());
        p.values.add("logits", std::move(logits));
        p.values.add("f_vertex", Tensor::scalar(uf(rng)));
        p.values.add("a2_raw", Tensor::scalar(ur(rng)));

        const double fv = p.f_vertex();
        const double xcd = p.x_cd();

        CHECK(std::abs(predict(p, 0.0)) <= 1e-12 * std::max(1.0, fv)); // f1(0)=0
        CHECK(predict(p, xcd) == fv);                                  // shared vertex, exact
        CHECK(p.a2() > 0.0);
        // parabola opens downward on both sides
        CHECK(predict(p, xcd * 0.5) < fv);
        CHECK(predict(p, xcd + 0.1) < fv);

        auto w = softmax(Var::constant(p.values.at("logits"))).value();
        double acc = 0;
        for (int64_t i = 0; i < w.numel(); ++i) acc += w[i];
        CHECK(std::abs(acc - 1.0) <= 1e-12);
        CHECK(xcd >= p.anchors.front());
        CHECK(xcd <= p.anchors.back());
    }
}

TEST_CASE("composite loss: zero on exact data, empty exceedance set, regime weighting") {
    auto p = exact_params(0.35, 0.95, 3.0);
    auto s = series_on_curve(p, 200, 0.8);
    auto loss = composite_loss(p, s, 1.0, 0.0);
    CHECK(loss.l1 == 0.0);
    CHECK(loss.l2 == 0.0);
    CHECK(loss.l_lambda == 0.0); // no flow exceeds the vertex

    // 900 uncongested vs 100 congested points: a unit of squared residual on
    // a congested point costs 9x what it costs on an uncongested point.
    MfdSeries imb;
    imb.norm = NormScales{1.0, 1.0};
    for (int i = 0; i < 900; ++i) imb.points.push_back({i, 0.1 + 1e-6 * i, predict(p, 0.1 + 1e-6 * i)});
    for (int i = 0; i < 100; ++i) imb.points.push_back({900 + i, 0.6 + 1e-6 * i, predict(p, 0.6 + 1e-6 * i)});

    auto base = composite_loss(p, imb, 0.0, 0.0);
    CHECK(base.total == doctest::Approx(0.0));

    auto perturbed = [&](size_t idx, double delta) {
        MfdSeries t = imb;
        t.points[idx].flow -= delta;
        return composite_loss(p, t, 0.0, 0.0).total;
    };
    const double d_unc = perturbed(10, 0.1);
    const double d_con = perturbed(950, 0.1);
    CHECK(d_con / d_unc == doctest::Approx(9.0).epsilon(1e-6));
}

TEST_CASE("composite loss flags an empty regime instead of failing") {
    auto p = exact_params(0.9, 1.0, 2.0);
    MfdSeries s;
    s.norm = NormScales{1.0, 1.0};
    for (int i = 0; i < 50; ++i) s.points.push_back({i, 0.01 + 0.01 * i, 0.5});
    auto loss = composite_loss(p, s, 1.0, 0.1); // nothing beyond x_cd=0.9*...
    CHECK(loss.regime2_empty);
    CHECK(loss.l2 == 0.0);
}

TEST_CASE("fit recovers a noiseless synthetic city") {
    SyntheticCitySpec spec;
    spec.x_cd = 0.3;
    spec.f_vertex = 900;
    spec.width_ratio = 2.0;
    spec.n_detectors = 20;
    spec.intervals_per_day = 240;
    NormScales scales;
    auto norm = normalized_synthetic(spec, &scales);

    auto fit = fit_biparabolic(norm);
    const double xcd_hat = fit.params.x_cd() * scales.occ_scale;
    const double fv_hat = fit.params.f_vertex() * scales.flow_scale;
    CHECK(std::abs(xcd_hat - spec.x_cd) <= 0.02);
    CHECK(std::abs(fv_hat - spec.f_vertex) / spec.f_vertex <= 0.01);
}

TEST_CASE("gradient descent recovers from a deliberately crude start") {
    SyntheticCitySpec spec;
    spec.x_cd = 0.3;
    spec.f_vertex = 900;
    spec.width_ratio = 2.0;
    spec.n_detectors = 20;
    spec.intervals_per_day = 240;
    NormScales scales;
    auto norm = normalized_synthetic(spec, &scales);

    // Uniform softmax mass and a symmetric congested branch: far from the
    // optimum on purpose, so the optimizer has real work to do.
    auto crude = init_biparabolic(norm);
    Tensor& logits = crude.values.at("logits");
    for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = 0.0;
    const double xcd0 = crude.x_cd();
    crude.values.at("a2_raw") = Tensor::scalar(inv_softplus(crude.f_vertex() / (xcd0 * xcd0)));

    auto fit = fit_biparabolic(norm, {}, crude);
    CHECK(fit.loss_trace.back().total < 0.2 * fit.loss_trace.front().total);
    CHECK(fit.loss_trace.back().total < fit.loss_trace.front().total);
}

TEST_CASE("fit recovers a noisy synthetic city within the wider tolerances") {
    double xcd_err = 0, fv_err = 0;
    const int seeds = 3;
    for (int s = 0; s < seeds; ++s) {
        SyntheticCitySpec spec;
        spec.x_cd = 0.3;
        spec.f_vertex = 900;
        spec.width_ratio = 2.0;
        spec.n_detectors = 40;
        spec.intervals_per_day = 240;
        spec.noise_sigma = 30;
        spec.seed = 100 + static_cast<uint64_t>(s);
        NormScales scales;
        auto norm = normalized_synthetic(spec, &scales);
        auto fit = fit_biparabolic(norm);
        xcd_err += std::abs(fit.params.x_cd() * scales.occ_scale - spec.x_cd);
        fv_err += std::abs(fit.params.f_vertex() * scales.flow_scale - spec.f_vertex) / spec.f_vertex;
    }
    CHECK(xcd_err / seeds <= 0.05);
    CHECK(fv_err / seeds <= 0.05);
}

TEST_CASE("fit is invariant to duplicating every data point and to shuffling") {
    SyntheticCitySpec spec;
    spec.n_detectors = 15;
    spec.intervals_per_day = 100;
    spec.noise_sigma = 20;
    spec.seed = 9;
    auto norm = normalized_synthetic(spec);

    BiParabolicHyper hyper;
    hyper.epochs = 300;
    auto base = fit_biparabolic(norm, hyper);

    MfdSeries doubled = norm;
    for (const auto& p : norm.points) doubled.points.push_back(p);
    auto dup = fit_biparabolic(doubled, hyper);
    CHECK(std::abs(dup.params.x_cd() - base.params.x_cd()) < 1e-6);
    CHECK(std::abs(dup.params.f_vertex() - base.params.f_vertex()) < 1e-6);

    MfdSeries shuffled = norm;
    std::mt19937_64 rng(4);
    std::shuffle(shuffled.points.begin(), shuffled.points.end(), rng);
    auto shuf = fit_biparabolic(shuffled, hyper);
    CHECK(std::abs(shuf.params.x_cd() - base.params.x_cd()) < 1e-6);
    CHECK(std::abs(shuf.params.f_vertex() - base.params.f_vertex()) < 1e-6);
}

TEST_CASE("fit requires a normalized series with at least 10 points") {
    MfdSeries raw;
    for (int i = 0; i < 20; ++i) raw.points.push_back({i, 0.01 * (i + 1), 100.0 * (i + 1)});
    CHECK_THROWS(fit_biparabolic(raw)); // not normalized
    MfdSeries tiny;
    tiny.norm = NormScales{1, 1};
    for (int i = 0; i < 5; ++i) tiny.points.push_back({i, 0.1 * (i + 1), 0.1});
    CHECK_THROWS(fit_biparabolic(tiny));
}

TEST_CASE("prediction interval: zero width on residual-free data, coverage on noisy fits") {
    // Data generated exactly from the fitted parameters: residuals vanish.
    auto p = exact_params(0.35, 0.95, 3.0);
    auto s = series_on_curve(p, 100, 0.8);
    BiParabolicFit exact;
    exact.params = p;
    auto band = prediction_interval(exact, s);
    REQUIRE(band.uncongested_ok);
    REQUIRE(band.congested_ok);
    for (size_t i = 0; i < band.x.size(); ++i) CHECK(band.hi[i] - band.lo[i] < 1e-9);

    // Noisy data: at least 93% of points inside the 95% band.
    int inside = 0, total = 0;
    for (int seed = 0; seed < 3; ++seed) {
        SyntheticCitySpec noisy;
        noisy.intervals_per_day = 200;
        noisy.noise_sigma = 40;
        noisy.n_detectors = 12;
        noisy.seed = 200 + static_cast<uint64_t>(seed);
        auto series = normalized_synthetic(noisy);
        auto f = fit_biparabolic(series);
        auto b = prediction_interval(f, series);
        for (const auto& p : series.points) {
            const auto it = std::lower_bound(b.x.begin(), b.x.end(), p.occupancy);
            REQUIRE(it != b.x.end());
            const size_t idx = static_cast<size_t>(it - b.x.begin());
            const double xcd = f.params.x_cd();
            const bool unc = p.occupancy <= xcd;
            if ((unc && !b.uncongested_ok) || (!unc && !b.congested_ok)) continue;
            ++total;
            if (p.flow >= b.lo[idx] - 1e-12 && p.flow <= b.hi[idx] + 1e-12) ++inside;
        }
    }
    CHECK(static_cast<double>(inside) / total >= 0.93);
}

TEST_CASE("prediction interval omits a regime with fewer than 20 residuals") {
    auto p = exact_params(0.8, 1.0, 2.0);
    MfdSeries s;
    s.norm = NormScales{1, 1};
    for (int i = 0; i < 60; ++i) s.points.push_back({i, 0.01 * (i + 1) * 0.7, predict(p, 0.01 * (i + 1) * 0.7)});
    BiParabolicFit fit;
    fit.params = p;
    auto band = prediction_interval(fit, s);
    CHECK(band.uncongested_ok);
    CHECK_FALSE(band.congested_ok);
}
