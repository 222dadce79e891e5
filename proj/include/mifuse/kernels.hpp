#pragma once

#include <cstddef>
#include <span>

// Dense kernels backing the classifier math. Each entry of the output is a
// single serial dot product, so the OpenMP versions are bit-identical to the
// serial references regardless of thread count.
namespace mifuse::kernels {

namespace serial {

// y = W x + b, W row-major [rows x cols]; pass empty b to skip the bias.
void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<const double> b,
            std::span<double> y);

// y = W^T x, W row-major [rows x cols], x has length rows, y length cols.
void matvec_transpose(std::span<const double> w, std::size_t rows,
                      std::size_t cols, std::span<const double> x,
                      std::span<double> y);

// out += u v^T, out row-major [len(u) x len(v)].
void outer_accum(std::span<double> out, std::span<const double> u,
                 std::span<const double> v);

}  // namespace serial

void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<const double> b,
            std::span<double> y);

void matvec_transpose(std::span<const double> w, std::size_t rows,
                      std::size_t cols, std::span<const double> x,
                      std::span<double> y);

void outer_accum(std::span<double> out, std::span<const double> u,
                 std::span<const double> v);

}  // namespace mifuse::kernels
