// Test-side helpers and oracles. Nothing here calls the code under test to
// compute an expected value.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ttcloc/matrix.hpp"
#include "ttcloc/network.hpp"
#include "ttcloc/random.hpp"

namespace testing {

using ttcloc::Matrix;
using ttcloc::NetworkParams;
using ttcloc::Rng;
using ttcloc::Vector;

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

inline Vector random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline NetworkParams random_params(Rng& rng, std::size_t D, std::size_t H, std::size_t C, double scale = 0.5) {
  NetworkParams p = NetworkParams::zeros(D, H, C);
  p.for_each_tensor([&](std::span<double> t) {
    for (double& v : t) v = scale * rng.normal();
  });
  return p;
}

inline std::vector<double*> coordinates(NetworkParams& p) {
  std::vector<double*> out;
  p.for_each_tensor([&](std::span<double> t) {
    for (double& v : t) out.push_back(&v);
  });
  return out;
}

inline std::vector<double> flatten(const NetworkParams& p) {
  std::vector<double> out;
  p.for_each_tensor([&](std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

inline double rel_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct FdReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
};

/// Central differences of f at every coordinate. A coordinate where the two
/// one-sided slopes disagree by more than `kink_tol` sits next to a
/// non-differentiable point and is counted instead of compared.
inline FdReport finite_difference_check(const std::vector<double*>& coords, const std::vector<double>& analytic,
                                        const std::function<double()>& f, double step = 1e-5,
                                        double kink_tol = 1e-4) {
  FdReport r;
  const double f0 = f();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double& x = *coords[i];
    const double keep = x;
    x = keep + step;
    const double fp = f();
    x = keep - step;
    const double fm = f();
    x = keep;
    const double forward = (fp - f0) / step;
    const double backward = (f0 - fm) / step;
    const double central = (fp - fm) / (2 * step);
    if (std::abs(forward - backward) > kink_tol * std::max(1.0, std::abs(central))) {
      ++r.kinks;
      continue;
    }
    r.max_rel = std::max(r.max_rel, rel_error(analytic[i], central));
    ++r.checked;
  }
  return r;
}

// --- plain reference math ---------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(acc);
    }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// out[t] = bias + sum_k h[t + k - 1] * K_k with zero rows outside [0, T).
inline Matrix naive_conv3(const Matrix& h, const std::array<Matrix, 3>& kernel, const Vector& bias) {
  const std::size_t T = h.rows(), in = h.cols(), width = kernel[0].cols();
  Matrix out(T, width);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < width; ++j) {
      long double acc = bias.empty() ? 0.0 : bias[j];
      for (int k = 0; k < 3; ++k) {
        const long long src = static_cast<long long>(t) + k - 1;
        if (src < 0 || src >= static_cast<long long>(T)) continue;
        for (std::size_t i = 0; i < in; ++i)
          acc += static_cast<long double>(h(static_cast<std::size_t>(src), i)) * kernel[k](i, j);
      }
      out(t, j) = static_cast<double>(acc);
    }
  return out;
}

/// Whole-network forward pass written from the architecture description.
inline Matrix naive_network(const NetworkParams& p, const Matrix& x, const Matrix* keep = nullptr,
                            double drop_prob = 0.0) {
  const std::size_t T = x.rows(), H = p.hidden_dim();
  Matrix h1 = naive_matmul(x, p.w1);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < H; ++j) h1(t, j) = std::max(0.0, h1(t, j) + p.b1[j]);
  Matrix c = naive_conv3(h1, p.conv, p.conv_bias);
  Matrix h2(T, H);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < H; ++j) {
      h2(t, j) = std::max(0.0, h1(t, j) + c(t, j));
      if (keep) h2(t, j) *= (*keep)(t, j) / (1.0 - drop_prob);
    }
  Matrix out = naive_matmul(h2, p.w2);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < out.cols(); ++j) out(t, j) += p.b2[j];
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testing
