#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "ttcloc/kernels.hpp"
#include "ttcloc/matrix.hpp"
#include "ttcloc/random.hpp"

namespace ttcloc {

/// Hidden width used by the reference configuration.
inline constexpr std::size_t kDefaultHiddenDim = 2048;
/// Drop probability applied before the output layer during training.
inline constexpr double kDefaultDropout = 0.7;

enum class GatingKind { sigmoid, softsign, binarize };

std::string to_string(GatingKind kind);
GatingKind parse_gating_kind(const std::string& name);

/// Weights of the scoring network:
///   h1 = relu(x W1 + b1)
///   h2 = relu(h1 + conv3(h1))      (residual temporal convolution, zero padded)
///   out = dropout(h2) W2 + b2       (C action columns, then one threshold column)
struct NetworkParams {
  Matrix w1;                 // D x H
  Vector b1;                 // H
  kernels::ConvKernel conv;  // 3 taps, each H x H
  Vector conv_bias;          // H
  Matrix w2;                 // H x (C + 1)
  Vector b2;                 // C + 1

  static NetworkParams zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes);

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
  std::size_t num_classes() const { return w2.cols() - 1; }
  std::size_t parameter_count() const;

  /// Visits every tensor in checkpoint order: w1, b1, conv taps 0..2, conv_bias, w2, b2.
  template <class F>
  void for_each_tensor(F&& f) {
    f(w1.values());
    f(std::span<double>(b1));
    for (auto& tap : conv) f(tap.values());
    f(std::span<double>(conv_bias));
    f(w2.values());
    f(std::span<double>(b2));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f(w1.values());
    f(std::span<const double>(b1));
    for (const auto& tap : conv) f(tap.values());
    f(std::span<const double>(conv_bias));
    f(w2.values());
    f(std::span<const double>(b2));
  }

  /// Throws std::invalid_argument when shapes are inconsistent.
  void check_shapes() const;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// d(loss)/d(param) with the same layout as NetworkParams.
using GradientBundle = NetworkParams;

/// this += other, tensor by tensor.
void accumulate(GradientBundle& into, const GradientBundle& other, double scale = 1.0);

struct ScoreMap {
  Matrix s;  // T x C action scores
  Vector b;  // T thresholds

  std::size_t num_snippets() const { return s.rows(); }
  std::size_t num_classes() const { return s.cols(); }
};

/// Soft localization matrix g (T x C).
struct Gate {
  Matrix g;
  GatingKind kind = GatingKind::sigmoid;
};

/// Per-unit keep mask over the hidden layer (1 kept, 0 dropped).
struct DropoutMask {
  Matrix keep;  // T x H
  double drop_prob = kDefaultDropout;
};

DropoutMask sample_dropout_mask(Rng& rng, std::size_t T, std::size_t hidden_dim, double drop_prob);

/// Activations retained for backward().
struct ForwardCache {
  Matrix input;
  Matrix h1;
  Matrix h2;
  Matrix h3;
  std::optional<DropoutMask> mask;
};

/// Runs the network on a T x D feature matrix. A mask is given only in training.
ScoreMap forward(const NetworkParams& params, const Matrix& features,
                 const DropoutMask* mask = nullptr, ForwardCache* cache = nullptr);

/// Exact gradients given upstream d_s (T x C) and d_b (T). relu'(0) is taken as 0.
GradientBundle backward(const NetworkParams& params, const ForwardCache& cache, const Matrix& d_s,
                        std::span<const double> d_b);

double gate_value(GatingKind kind, double x);
/// Binarize reports the straight-through surrogate 1.
double gate_derivative(GatingKind kind, double x);

/// g[t][c] = phi(s[t][c] - b[t]).
Gate apply_gate(const ScoreMap& scores, GatingKind kind);

/// Per-class threshold (max_t s + min_t s) / 2 used by the manual localization rule.
Vector manual_thresholds(const Matrix& s);

/// g[t][c] = phi(s[t][c] - thr[c]) with the thresholds held fixed.
Gate apply_class_threshold_gate(const Matrix& s, std::span<const double> thresholds, GatingKind kind);

/// Glorot-uniform weights, zero biases.
NetworkParams init_params(Rng& rng, std::size_t input_dim, std::size_t hidden_dim,
                          std::size_t num_classes);

/// Binary checkpoint, see README for the layout.
void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ttcloc
