#pragma once

#include <array>
#include <span>

#include "ttcloc/matrix.hpp"

// Dense kernels behind the scoring network. `parallel` is the production path
// (OpenMP over output rows); `serial` is the plain reference used by tests and
// the benchmark. Both accumulate every output element in the same order, so for
// identical inputs they agree bit for bit regardless of thread count.
namespace ttcloc::kernels {

/// Three taps of a temporal convolution; tap k maps input row t+k-1 to output row t.
using ConvKernel = std::array<Matrix, 3>;

struct ConvGrads {
  Matrix d_input;
  ConvKernel d_kernel;
  Vector d_bias;
};

namespace serial {

/// out = x * w + bias (bias broadcast over rows).
Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias);
/// out = a^T * b.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// out = a * w^T.
Matrix matmul_nt(const Matrix& a, const Matrix& w);
Vector column_sums(const Matrix& m);
/// Zero-padded kernel-3 temporal convolution over rows.
Matrix conv3(const Matrix& h, const ConvKernel& kernel, std::span<const double> bias);
ConvGrads conv3_backward(const Matrix& h, const ConvKernel& kernel, const Matrix& d_out);

}  // namespace serial

namespace parallel {

Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& w);
Vector column_sums(const Matrix& m);
Matrix conv3(const Matrix& h, const ConvKernel& kernel, std::span<const double> bias);
ConvGrads conv3_backward(const Matrix& h, const ConvKernel& kernel, const Matrix& d_out);

}  // namespace parallel

/// Shape checks shared by both implementations; throw std::invalid_argument.
void check_affine(const Matrix& x, const Matrix& w, std::span<const double> bias);
void check_conv(const Matrix& h, const ConvKernel& kernel);

}  // namespace ttcloc::kernels
