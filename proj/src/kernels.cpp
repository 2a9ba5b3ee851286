#include "mfdmeta/kernels.hpp"

#include <atomic>
#include <cmath>

namespace mfd::kernels {

namespace {

std::atomic<Execution> g_execution{Execution::Auto};

inline double apply_unary(Unary op, double x) {
    switch (op) {
        case Unary::Neg: return -x;
        case Unary::Relu: return x > 0.0 ? x : 0.0;
        case Unary::Exp: return std::exp(x);
        case Unary::Log: return std::log(x);
        case Unary::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Unary::Softplus:
            // log1p(exp(x)) overflows for large x; the linear branch is exact there.
            return x > 30.0 ? x : std::log1p(std::exp(x));
        case Unary::Square: return x * x;
        case Unary::Sqrt: return std::sqrt(x);
    }
    return 0.0;
}

inline double apply_binary(Binary op, double a, double b) {
    switch (op) {
        case Binary::Add: return a + b;
        case Binary::Sub: return a - b;
        case Binary::Mul: return a * b;
        case Binary::Div: return a / b;
    }
    return 0.0;
}

inline bool use_parallel(int64_t work, int64_t threshold) {
    switch (g_execution.load(std::memory_order_relaxed)) {
        case Execution::Serial: return false;
        case Execution::Parallel: return true;
        case Execution::Auto: return work >= threshold;
    }
    return false;
}

} // namespace

void set_execution(Execution e) { g_execution.store(e, std::memory_order_relaxed); }
Execution execution() { return g_execution.load(std::memory_order_relaxed); }

namespace serial {

void matmul(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] = 0.0;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void transpose(const double* a, double* out, int64_t m, int64_t n) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
}

void ewise(Binary op, const double* a, const double* b, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = apply_binary(op, a[i], b[i]);
}

void ewise_scalar(Binary op, const double* a, double s, bool scalar_on_left, double* out, int64_t n) {
    if (scalar_on_left)
        for (int64_t i = 0; i < n; ++i) out[i] = apply_binary(op, s, a[i]);
    else
        for (int64_t i = 0; i < n; ++i) out[i] = apply_binary(op, a[i], s);
}

void ewise_row(Binary op, const double* a, const double* row, double* out, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j)
            out[i * cols + j] = apply_binary(op, a[i * cols + j], row[j]);
}

void unary(Unary op, const double* a, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = apply_unary(op, a[i]);
}

void broadcast_rows(const double* row, double* out, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = row[j];
}

} // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n) {
    // Row partition: each output row is one serial dot-product sweep, so the
    // result is bitwise identical to the serial kernel.
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] = 0.0;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void transpose(const double* a, double* out, int64_t m, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
}

void ewise(Binary op, const double* a, const double* b, double* out, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = apply_binary(op, a[i], b[i]);
}

void ewise_scalar(Binary op, const double* a, double s, bool scalar_on_left, double* out, int64_t n) {
    if (scalar_on_left) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) out[i] = apply_binary(op, s, a[i]);
    } else {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) out[i] = apply_binary(op, a[i], s);
    }
}

void ewise_row(Binary op, const double* a, const double* row, double* out, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j)
            out[i * cols + j] = apply_binary(op, a[i * cols + j], row[j]);
}

void unary(Unary op, const double* a, double* out, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = apply_unary(op, a[i]);
}

void broadcast_rows(const double* row, double* out, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = row[j];
}

} // namespace parallel

void matmul(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n) {
    if (use_parallel(m * k * n, kMatmulParallelFlops))
        parallel::matmul(a, b, out, m, k, n);
    else
        serial::matmul(a, b, out, m, k, n);
}

void transpose(const double* a, double* out, int64_t m, int64_t n) {
    if (use_parallel(m * n, kEwiseParallelElems))
        parallel::transpose(a, out, m, n);
    else
        serial::transpose(a, out, m, n);
}

void ewise(Binary op, const double* a, const double* b, double* out, int64_t n) {
    if (use_parallel(n, kEwiseParallelElems))
        parallel::ewise(op, a, b, out, n);
    else
        serial::ewise(op, a, b, out, n);
}

void ewise_scalar(Binary op, const double* a, double s, bool scalar_on_left, double* out, int64_t n) {
    if (use_parallel(n, kEwiseParallelElems))
        parallel::ewise_scalar(op, a, s, scalar_on_left, out, n);
    else
        serial::ewise_scalar(op, a, s, scalar_on_left, out, n);
}

void ewise_row(Binary op, const double* a, const double* row, double* out, int64_t rows, int64_t cols) {
    if (use_parallel(rows * cols, kEwiseParallelElems))
        parallel::ewise_row(op, a, row, out, rows, cols);
    else
        serial::ewise_row(op, a, row, out, rows, cols);
}

void unary(Unary op, const double* a, double* out, int64_t n) {
    if (use_parallel(n, kEwiseParallelElems))
        parallel::unary(op, a, out, n);
    else
        serial::unary(op, a, out, n);
}

void broadcast_rows(const double* row, double* out, int64_t rows, int64_t cols) {
    if (use_parallel(rows * cols, kEwiseParallelElems))
        parallel::broadcast_rows(row, out, rows, cols);
    else
        serial::broadcast_rows(row, out, rows, cols);
}

double sum(const double* a, int64_t n) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

void sum_rows(const double* a, double* out, int64_t rows, int64_t cols) {
    for (int64_t j = 0; j < cols; ++j) out[j] = 0.0;
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) out[j] += a[i * cols + j];
}

} // namespace mfd::kernels
