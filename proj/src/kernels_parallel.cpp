#include <cstdint>
#include <stdexcept>

#include "ttcloc/kernels.hpp"

namespace ttcloc::kernels::parallel {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::int64_t kMinParallelWork = 1 << 15;

bool worth_parallel(std::size_t a, std::size_t b, std::size_t c) {
  return static_cast<std::int64_t>(a * b * c) >= kMinParallelWork;
}

}  // namespace

Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias) {
  check_affine(x, w, bias);
  const auto rows = static_cast<std::int64_t>(x.rows());
  const std::size_t inner = x.cols();
  const std::size_t width = w.cols();
  Matrix out(x.rows(), width);
#pragma omp parallel for schedule(static) if (worth_parallel(x.rows(), inner, width))
  for (std::int64_t i = 0; i < rows; ++i) {
    double* o = out.data() + i * width;
    for (std::size_t j = 0; j < width; ++j) o[j] = bias.empty() ? 0.0 : bias[j];
    for (std::size_t k = 0; k < inner; ++k) {
      const double xv = x(i, k);
      const double* wr = w.data() + k * width;
      for (std::size_t j = 0; j < width; ++j) o[j] += xv * wr[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: row counts differ");
  const auto out_rows = static_cast<std::int64_t>(a.cols());
  const std::size_t T = a.rows();
  const std::size_t width = b.cols();
  Matrix out(a.cols(), width);
#pragma omp parallel for schedule(static) if (worth_parallel(a.cols(), T, width))
  for (std::int64_t i = 0; i < out_rows; ++i) {
    double* o = out.data() + i * width;
    for (std::size_t t = 0; t < T; ++t) {
      const double av = a(t, i);
      const double* br = b.data() + t * width;
      for (std::size_t j = 0; j < width; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& w) {
  if (a.cols() != w.cols()) throw std::invalid_argument("matmul_nt: column counts differ");
  const auto rows = static_cast<std::int64_t>(a.rows());
  const std::size_t inner = a.cols();
  Matrix out(a.rows(), w.rows());
#pragma omp parallel for schedule(static) if (worth_parallel(a.rows(), inner, w.rows()))
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* ar = a.data() + i * inner;
    for (std::size_t j = 0; j < w.rows(); ++j) {
      const double* wr = w.data() + j * inner;
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += ar[k] * wr[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Vector column_sums(const Matrix& m) {
  Vector out(m.cols(), 0.0);
  for (std::size_t t = 0; t < m.rows(); ++t) {
    const double* r = m.data() + t * m.cols();
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += r[j];
  }
  return out;
}

Matrix conv3(const Matrix& h, const ConvKernel& kernel, std::span<const double> bias) {
  check_conv(h, kernel);
  const std::size_t T = h.rows();
  const std::size_t in = h.cols();
  const std::size_t width = kernel[0].cols();
  Matrix out(T, width);
#pragma omp parallel for schedule(static) if (worth_parallel(3 * T, in, width))
  for (std::int64_t ti = 0; ti < static_cast<std::int64_t>(T); ++ti) {
    const auto t = static_cast<std::size_t>(ti);
    double* o = out.data() + t * width;
    for (std::size_t j = 0; j < width; ++j) o[j] = bias.empty() ? 0.0 : bias[j];
    for (std::size_t k = 0; k < 3; ++k) {
      if ((k == 0 && t == 0) || (k == 2 && t + 1 >= T)) continue;
      const double* src = h.data() + (t + k - 1) * in;
      for (std::size_t i = 0; i < in; ++i) {
        const double hv = src[i];
        const double* kr = kernel[k].data() + i * width;
        for (std::size_t j = 0; j < width; ++j) o[j] += hv * kr[j];
      }
    }
  }
  return out;
}

ConvGrads conv3_backward(const Matrix& h, const ConvKernel& kernel, const Matrix& d_out) {
  check_conv(h, kernel);
  const std::size_t T = h.rows();
  const std::size_t in = h.cols();
  const std::size_t width = kernel[0].cols();
  ConvGrads g;
  g.d_input = Matrix(T, in);
  for (auto& tap : g.d_kernel) tap = Matrix(in, width);
  const bool par = worth_parallel(3 * T, in, width);

#pragma omp parallel if (par)
  {
#pragma omp for schedule(static) nowait
    for (std::int64_t ti = 0; ti < static_cast<std::int64_t>(T); ++ti) {
      const auto t = static_cast<std::size_t>(ti);
      for (std::size_t i = 0; i < in; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          if ((k == 2 && t == 0) || (k == 0 && t + 1 >= T)) continue;
          const double* dr = d_out.data() + (t + 1 - k) * width;
          const double* kr = kernel[k].data() + i * width;
          for (std::size_t j = 0; j < width; ++j) acc += dr[j] * kr[j];
        }
        g.d_input(t, i) = acc;
      }
    }
#pragma omp for schedule(static) collapse(2)
    for (std::int64_t k = 0; k < 3; ++k) {
      for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(in); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* o = g.d_kernel[k].data() + i * width;
        for (std::size_t t = 0; t < T; ++t) {
          if ((k == 0 && t == 0) || (k == 2 && t + 1 >= T)) continue;
          const double hv = h(t + k - 1, i);
          const double* dr = d_out.data() + t * width;
          for (std::size_t j = 0; j < width; ++j) o[j] += hv * dr[j];
        }
      }
    }
  }
  g.d_bias = column_sums(d_out);
  return g;
}

}  // namespace ttcloc::kernels::parallel
