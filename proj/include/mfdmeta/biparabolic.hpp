#pragma once

#include "mfdmeta/autodiff.hpp"
#include "mfdmeta/dataio.hpp"

#include <optional>
#include <vector>

namespace mfd {

// Two downward parabolas sharing a vertex at the critical occupancy. The
// critical occupancy is a softmax-weighted combination of anchor occupancies
// so it stays inside the observed range; a1 is tied to f_vertex/x_cd^2 so the
// uncongested branch passes through the origin.
struct BiParabolicParams {
    ParameterSet values;         // "logits" [m], "f_vertex" [1], "a2_raw" [1]
    std::vector<double> anchors; // deduplicated sorted occupancies

    double x_cd() const;
    double f_vertex() const { return values.at("f_vertex").item(); }
    double a2() const;
};

struct BiParabolicHyper {
    double alpha = 1.0; // exceedance penalty weight
    double beta = 0.1;  // vertex-height anchor weight
    double lr = 0.01;
    int epochs = 2000;
    int max_anchors = 512;
    double early_stop_rel = 1e-8;
    int early_stop_window = 200;
};

struct BiParabolicLoss {
    double l1 = 0, l2 = 0, l_lambda = 0, l_beta = 0, total = 0;
    bool regime1_empty = false, regime2_empty = false;
};

struct PredictionBand {
    std::vector<double> x, lo, hi; // over the series' occupancies, sorted
    bool uncongested_ok = false, congested_ok = false;
};

struct BiParabolicFit {
    BiParabolicParams params;
    std::vector<BiParabolicLoss> loss_trace;
    bool converged_early = false;
};

double predict(const BiParabolicParams& params, double x);

BiParabolicParams init_biparabolic(const MfdSeries& normalized, int max_anchors = 512);

/// Loss at the current parameters, for inspection and tests.
BiParabolicLoss composite_loss(const BiParabolicParams& params, const MfdSeries& normalized,
                               double alpha, double beta);

/// Plain gradient descent on the composite loss; series must be normalized
/// and carry at least 10 points. `start` overrides the data-driven
/// initialization (ablation hook).
BiParabolicFit fit_biparabolic(const MfdSeries& normalized, const BiParabolicHyper& hyper = {},
                               std::optional<BiParabolicParams> start = {});

/// Residual-quantile band per regime; a regime with fewer than 20 residuals
/// is omitted (its ok flag stays false and the band falls back to the curve).
PredictionBand prediction_interval(const BiParabolicFit& fit, const MfdSeries& normalized,
                                   double level = 0.95);

} // namespace mfd
