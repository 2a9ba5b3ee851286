#include "mfdmeta/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace mfd {

namespace {

void check_lengths(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) throw std::invalid_argument("metrics: length mismatch");
    if (y.size() < 2) throw std::invalid_argument("metrics: need at least 2 points");
}

double mean_of(std::span<const double> v) {
    double acc = 0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

} // namespace

double mse(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat);
    double acc = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        const double e = y[i] - yhat[i];
        acc += e * e;
    }
    return acc / static_cast<double>(y.size());
}

double rrse(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat);
    const double ybar = mean_of(y);
    double num = 0, den = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        num += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        den += (y[i] - ybar) * (y[i] - ybar);
    }
    if (den == 0.0) throw std::domain_error("rrse: y is constant");
    return std::sqrt(num / den);
}

double correlation(std::span<const double> y, std::span<const double> yhat) {
    check_lengths(y, yhat);
    const double ybar = mean_of(y), hbar = mean_of(yhat);
    double num = 0, dy = 0, dh = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        num += (y[i] - ybar) * (yhat[i] - hbar);
        dy += (y[i] - ybar) * (y[i] - ybar);
        dh += (yhat[i] - hbar) * (yhat[i] - hbar);
    }
    if (dy == 0.0 || dh == 0.0) throw std::domain_error("correlation: constant series");
    return num / (std::sqrt(dy) * std::sqrt(dh));
}

} // namespace mfd
