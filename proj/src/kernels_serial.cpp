#include <stdexcept>
#include <string>

#include "ttcloc/kernels.hpp"

namespace ttcloc::kernels {

void check_affine(const Matrix& x, const Matrix& w, std::span<const double> bias) {
  if (x.cols() != w.rows())
    throw std::invalid_argument("affine: input has " + std::to_string(x.cols()) +
                                " columns, weight expects " + std::to_string(w.rows()));
  if (!bias.empty() && bias.size() != w.cols())
    throw std::invalid_argument("affine: bias length does not match weight columns");
}

void check_conv(const Matrix& h, const ConvKernel& kernel) {
  for (const auto& tap : kernel) {
    if (tap.rows() != h.cols() || tap.cols() != kernel[0].cols())
      throw std::invalid_argument("conv3: kernel tap shape does not match input width");
  }
}

namespace serial {

Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias) {
  check_affine(x, w, bias);
  Matrix out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = bias.empty() ? 0.0 : bias[j];
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x(i, k) * w(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: row counts differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < a.rows(); ++t) acc += a(t, i) * b(t, j);
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& w) {
  if (a.cols() != w.cols()) throw std::invalid_argument("matmul_nt: column counts differ");
  Matrix out(a.rows(), w.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < w.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * w(j, k);
      out(i, j) = acc;
    }
  }
  return out;
}

Vector column_sums(const Matrix& m) {
  Vector out(m.cols(), 0.0);
  for (std::size_t j = 0; j < m.cols(); ++j)
    for (std::size_t t = 0; t < m.rows(); ++t) out[j] += m(t, j);
  return out;
}

Matrix conv3(const Matrix& h, const ConvKernel& kernel, std::span<const double> bias) {
  check_conv(h, kernel);
  const std::size_t T = h.rows();
  const std::size_t width = kernel[0].cols();
  Matrix out(T, width);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < width; ++j) {
      double acc = bias.empty() ? 0.0 : bias[j];
      for (std::size_t k = 0; k < 3; ++k) {
        if ((k == 0 && t == 0) || (k == 2 && t + 1 >= T)) continue;
        const std::size_t src = t + k - 1;
        for (std::size_t i = 0; i < h.cols(); ++i) acc += h(src, i) * kernel[k](i, j);
      }
      out(t, j) = acc;
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
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      // input row t feeds output row t-k+1 through tap k
      for (std::size_t k = 0; k < 3; ++k) {
        if ((k == 2 && t == 0) || (k == 0 && t + 1 >= T)) continue;
        const std::size_t dst = t + 1 - k;
        for (std::size_t j = 0; j < width; ++j) acc += d_out(dst, j) * kernel[k](i, j);
      }
      g.d_input(t, i) = acc;
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    g.d_kernel[k] = Matrix(in, width);
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          if ((k == 0 && t == 0) || (k == 2 && t + 1 >= T)) continue;
          acc += h(t + k - 1, i) * d_out(t, j);
        }
        g.d_kernel[k](i, j) = acc;
      }
    }
  }
  g.d_bias = column_sums(d_out);
  return g;
}

}  // namespace serial
}  // namespace ttcloc::kernels
