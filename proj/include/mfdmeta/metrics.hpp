#pragma once

#include <span>
#include <string>
#include <vector>

namespace mfd {

struct Metrics {
    double mse = 0.0;
    double rrse = 0.0;
    double r = 0.0;
};

double mse(std::span<const double> y, std::span<const double> yhat);
/// sqrt(sum((y-yhat)^2) / sum((y-mean(y))^2)); throws if y is constant.
double rrse(std::span<const double> y, std::span<const double> yhat);
/// Pearson correlation; throws if either argument is constant.
double correlation(std::span<const double> y, std::span<const double> yhat);

/// Outcome of evaluating one fitted model against a query series.
struct FitReport {
    std::string city;
    std::string model;
    int n_detectors = 0;
    uint64_t seed = 0;
    Metrics metrics;          // mse in denormalized flow units
    double x_cd = 0.0;        // denormalized critical occupancy
    double f_max = 0.0;       // denormalized peak flow
    double x_cd_norm = 0.0;
    double f_max_norm = 0.0;
    std::vector<double> loss_trace;
    std::string error; // non-empty when the run failed
};

} // namespace mfd
