#include <doctest.h>

#include <random>
#include <vector>

#include "mifuse/kernels.hpp"

using namespace mifuse;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("parallel kernels are bit-identical to the serial references") {
  std::mt19937_64 rng(42);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{3, 5},
                            {64, 64},
                            {257, 300},
                            {1, 1024}}) {
    const auto w = random_vec(rows * cols, rng);
    const auto x = random_vec(cols, rng);
    const auto b = random_vec(rows, rng);
    const auto xr = random_vec(rows, rng);

    std::vector<double> y_ref(rows), y_par(rows);
    kernels::serial::matvec(w, rows, cols, x, b, y_ref);
    kernels::matvec(w, rows, cols, x, b, y_par);
    CHECK(y_ref == y_par);

    std::vector<double> yt_ref(cols), yt_par(cols);
    kernels::serial::matvec_transpose(w, rows, cols, xr, yt_ref);
    kernels::matvec_transpose(w, rows, cols, xr, yt_par);
    CHECK(yt_ref == yt_par);

    std::vector<double> o_ref(rows * cols, 0.5), o_par(rows * cols, 0.5);
    kernels::serial::outer_accum(o_ref, xr, x);
    kernels::outer_accum(o_par, xr, x);
    CHECK(o_ref == o_par);
  }
}

TEST_CASE("matvec computes W x + b") {
  // 2x3 times (1,2,3) plus bias.
  const std::vector<double> w = {1, 0, -1, 2, 1, 0};
  const std::vector<double> x = {1, 2, 3};
  const std::vector<double> b = {10, -10};
  std::vector<double> y(2);
  kernels::matvec(w, 2, 3, x, b, y);
  CHECK(y[0] == doctest::Approx(1 - 3 + 10));
  CHECK(y[1] == doctest::Approx(2 + 2 - 10));

  kernels::matvec(w, 2, 3, x, {}, y);
  CHECK(y[0] == doctest::Approx(-2));
  CHECK(y[1] == doctest::Approx(4));
}

TEST_CASE("matvec_transpose computes W^T x") {
  const std::vector<double> w = {1, 0, -1, 2, 1, 0};
  const std::vector<double> x = {1, -1};
  std::vector<double> y(3);
  kernels::matvec_transpose(w, 2, 3, x, y);
  CHECK(y[0] == doctest::Approx(1 - 2));
  CHECK(y[1] == doctest::Approx(0 - 1));
  CHECK(y[2] == doctest::Approx(-1 - 0));
}

TEST_CASE("outer_accum accumulates u v^T") {
  std::vector<double> out(4, 1.0);
  const std::vector<double> u = {2, 3};
  const std::vector<double> v = {1, -1};
  kernels::outer_accum(out, u, v);
  CHECK(out == std::vector<double>{3, -1, 4, -2});
}
