#include "mifuse/kernels.hpp"

namespace mifuse::kernels {

namespace serial {

void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<const double> b,
            std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = b.empty() ? 0.0 : b[r];
    const double* row = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void matvec_transpose(std::span<const double> w, std::size_t rows,
                      std::size_t cols, std::span<const double> x,
                      std::span<double> y) {
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += w[r * cols + c] * x[r];
    y[c] = acc;
  }
}

void outer_accum(std::span<double> out, std::span<const double> u,
                 std::span<const double> v) {
  const std::size_t rows = u.size(), cols = v.size();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += u[r] * v[c];
  }
}

}  // namespace serial

// Parallelism kicks in only when the work per call is large enough to cover
// thread startup; below the cutoff the loop runs on the calling thread.
namespace {
constexpr std::size_t kParallelCutoff = 1 << 15;
}

void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<const double> b,
            std::span<double> y) {
#pragma omp parallel for if (rows * cols > kParallelCutoff) schedule(static)
  for (long long r = 0; r < static_cast<long long>(rows); ++r) {
    double acc = b.empty() ? 0.0 : b[r];
    const double* row = w.data() + static_cast<std::size_t>(r) * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void matvec_transpose(std::span<const double> w, std::size_t rows,
                      std::size_t cols, std::span<const double> x,
                      std::span<double> y) {
#pragma omp parallel for if (rows * cols > kParallelCutoff) schedule(static)
  for (long long c = 0; c < static_cast<long long>(cols); ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
      acc += w[r * cols + static_cast<std::size_t>(c)] * x[r];
    y[c] = acc;
  }
}

void outer_accum(std::span<double> out, std::span<const double> u,
                 std::span<const double> v) {
  const std::size_t rows = u.size(), cols = v.size();
#pragma omp parallel for if (rows * cols > kParallelCutoff) schedule(static)
  for (long long r = 0; r < static_cast<long long>(rows); ++r) {
    double* row = out.data() + static_cast<std::size_t>(r) * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += u[r] * v[c];
  }
}

}  // namespace mifuse::kernels
