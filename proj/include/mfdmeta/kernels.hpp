#pragma once

#include <cstdint>

namespace mfd::kernels {

// Execution policy for the dense kernels. Auto switches to the OpenMP
// variants above a size threshold; Serial/Parallel force one side. The
// parallel variants partition output elements, never reduction order, so
// both sides produce bitwise-identical results.
enum class Execution { Auto, Serial, Parallel };

void set_execution(Execution e);
Execution execution();

// Work thresholds (flops for matmul, elements otherwise) above which Auto
// picks the OpenMP variant.
inline constexpr int64_t kMatmulParallelFlops = 1 << 17;
inline constexpr int64_t kEwiseParallelElems = 1 << 15;

enum class Unary { Neg, Relu, Exp, Log, Sigmoid, Softplus, Square, Sqrt };
enum class Binary { Add, Sub, Mul, Div };

// Serial reference implementations.
namespace serial {
void matmul(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n);
void transpose(const double* a, double* out, int64_t m, int64_t n);
void ewise(Binary op, const double* a, const double* b, double* out, int64_t n);
void ewise_scalar(Binary op, const double* a, double s, bool scalar_on_left, double* out, int64_t n);
void ewise_row(Binary op, const double* a, const double* row, double* out, int64_t rows, int64_t cols);
void unary(Unary op, const double* a, double* out, int64_t n);
void broadcast_rows(const double* row, double* out, int64_t rows, int64_t cols);
} // namespace serial

// OpenMP variants; same contracts, element-partitioned.
namespace parallel {
void matmul(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n);
void transpose(const double* a, double* out, int64_t m, int64_t n);
void ewise(Binary op, const double* a, const double* b, double* out, int64_t n);
void ewise_scalar(Binary op, const double* a, double s, bool scalar_on_left, double* out, int64_t n);
void ewise_row(Binary op, const double* a, const double* row, double* out, int64_t rows, int64_t cols);
void unary(Unary op, const double* a, double* out, int64_t n);
void broadcast_rows(const double* row, double* out, int64_t rows, int64_t cols);
} // namespace parallel

// Dispatched entry points used by the graph layer.
void matmul(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n);
void transpose(const double* a, double* out, int64_t m, int64_t n);
void ewise(Binary op, const double* a, const double* b, double* out, int64_t n);
void ewise_scalar(Binary op, const double* a, double s, bool scalar_on_left, double* out, int64_t n);
void ewise_row(Binary op, const double* a, const double* row, double* out, int64_t rows, int64_t cols);
void unary(Unary op, const double* a, double* out, int64_t n);
void broadcast_rows(const double* row, double* out, int64_t rows, int64_t cols);

// Reductions stay serial in every mode: a thread-count-dependent summation
// order would break bit-reproducibility.
double sum(const double* a, int64_t n);
void sum_rows(const double* a, double* out, int64_t rows, int64_t cols);

} // namespace mfd::kernels
