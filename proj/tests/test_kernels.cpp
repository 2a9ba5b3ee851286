#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfdmeta/kernels.hpp"

#include <random>
#include <vector>

using namespace mfd;

namespace {

std::vector<double> random_vec(size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

} // namespace

TEST_CASE("matmul matches hand-computed product") {
    // [ [1,2], [3,4] ] x [ [5,6], [7,8] ]
    std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8}, out(4);
    kernels::serial::matmul(a.data(), b.data(), out.data(), 2, 2, 2);
    CHECK(out[0] == doctest::Approx(19));
    CHECK(out[1] == doctest::Approx(22));
    CHECK(out[2] == doctest::Approx(43));
    CHECK(out[3] == doctest::Approx(50));
}

TEST_CASE("parallel kernels are bitwise identical to serial") {
    std::mt19937_64 rng(7);
    for (auto [m, k, n] : {std::tuple<int64_t, int64_t, int64_t>{1, 1, 1},
                           {3, 5, 7},
                           {17, 31, 13},
                           {64, 64, 64},
                           {129, 65, 33}}) {
        auto a = random_vec(static_cast<size_t>(m * k), rng);
        auto b = random_vec(static_cast<size_t>(k * n), rng);
        std::vector<double> o1(static_cast<size_t>(m * n)), o2(static_cast<size_t>(m * n));
        kernels::serial::matmul(a.data(), b.data(), o1.data(), m, k, n);
        kernels::parallel::matmul(a.data(), b.data(), o2.data(), m, k, n);
        CHECK(o1 == o2);

        std::vector<double> t1(static_cast<size_t>(m * k)), t2(static_cast<size_t>(m * k));
        kernels::serial::transpose(a.data(), t1.data(), m, k);
        kernels::parallel::transpose(a.data(), t2.data(), m, k);
        CHECK(t1 == t2);
    }

    for (int64_t n : {1, 100, 4097, 100003}) {
        auto a = random_vec(static_cast<size_t>(n), rng);
        auto b = random_vec(static_cast<size_t>(n), rng);
        for (auto op : {kernels::Binary::Add, kernels::Binary::Sub, kernels::Binary::Mul,
                        kernels::Binary::Div}) {
            std::vector<double> o1(static_cast<size_t>(n)), o2(static_cast<size_t>(n));
            kernels::serial::ewise(op, a.data(), b.data(), o1.data(), n);
            kernels::parallel::ewise(op, a.data(), b.data(), o2.data(), n);
            CHECK(o1 == o2);
        }
        for (auto op : {kernels::Unary::Neg, kernels::Unary::Relu, kernels::Unary::Exp,
                        kernels::Unary::Sigmoid, kernels::Unary::Softplus, kernels::Unary::Square}) {
            std::vector<double> o1(static_cast<size_t>(n)), o2(static_cast<size_t>(n));
            kernels::serial::unary(op, a.data(), o1.data(), n);
            kernels::parallel::unary(op, a.data(), o2.data(), n);
            CHECK(o1 == o2);
        }
    }
}

TEST_CASE("row broadcast kernels agree across execution modes") {
    std::mt19937_64 rng(11);
    const int64_t rows = 37, cols = 19;
    auto a = random_vec(static_cast<size_t>(rows * cols), rng);
    auto r = random_vec(static_cast<size_t>(cols), rng);
    std::vector<double> o1(static_cast<size_t>(rows * cols)), o2(o1.size());
    kernels::serial::ewise_row(kernels::Binary::Add, a.data(), r.data(), o1.data(), rows, cols);
    kernels::parallel::ewise_row(kernels::Binary::Add, a.data(), r.data(), o2.data(), rows, cols);
    CHECK(o1 == o2);

    std::vector<double> b1(o1.size()), b2(o1.size());
    kernels::serial::broadcast_rows(r.data(), b1.data(), rows, cols);
    kernels::parallel::broadcast_rows(r.data(), b2.data(), rows, cols);
    CHECK(b1 == b2);
}

TEST_CASE("dispatch honors forced execution modes") {
    std::mt19937_64 rng(3);
    auto a = random_vec(1 << 16, rng);
    auto b = random_vec(1 << 16, rng);
    std::vector<double> o1(a.size()), o2(a.size()), o3(a.size());

    kernels::set_execution(kernels::Execution::Serial);
    kernels::ewise(kernels::Binary::Add, a.data(), b.data(), o1.data(), (int64_t)a.size());
    kernels::set_execution(kernels::Execution::Parallel);
    kernels::ewise(kernels::Binary::Add, a.data(), b.data(), o2.data(), (int64_t)a.size());
    kernels::set_execution(kernels::Execution::Auto);
    kernels::ewise(kernels::Binary::Add, a.data(), b.data(), o3.data(), (int64_t)a.size());

    CHECK(o1 == o2);
    CHECK(o1 == o3);
}

TEST_CASE("sum and sum_rows reference values") {
    std::vector<double> a{1, 2, 3, 4, 5, 6};
    CHECK(kernels::sum(a.data(), 6) == doctest::Approx(21));
    std::vector<double> out(3);
    kernels::sum_rows(a.data(), out.data(), 2, 3);
    CHECK(out[0] == doctest::Approx(5));
    CHECK(out[1] == doctest::Approx(7));
    CHECK(out[2] == doctest::Approx(9));
}
