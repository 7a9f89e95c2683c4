#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttcloc/data_model.hpp"
#include "ttcloc/network.hpp"

namespace ttcloc {

/// Stabilizer added to the gated pooling denominator.
inline constexpr double kPoolEpsilon = 1e-8;
/// Stabilizer added to vector norms in the regularization losses.
inline constexpr double kNormEpsilon = 1e-8;
/// Probabilities are floored here before taking logs.
inline constexpr double kLogFloor = 1e-30;

enum class Aggregator { gated, topk_eighth };
enum class RegForm { inner_product, l1, l2, cosine };
/// Which gate drives pooling and the localization loss during training.
enum class TrainLocalization { predicted, manual };

std::string to_string(Aggregator a);
std::string to_string(RegForm f);
std::string to_string(TrainLocalization l);
Aggregator parse_aggregator(const std::string& name);
RegForm parse_reg_form(const std::string& name);
TrainLocalization parse_train_localization(const std::string& name);

struct LossConfig {
  double lambda = 0.2;  // classification vs. regularization balance
  double eta = 3.0;     // localization weight
  /// Background weight; 1 / C when unset.
  std::optional<double> background_weight;
  RegForm reg_form = RegForm::inner_product;
  Aggregator aggregator = Aggregator::gated;

  double w_b(std::size_t num_classes) const;
  void validate() const;
};

struct VideoProbabilities {
  Vector pooled_scores;         // length C
  double pooled_threshold = 0;  // background score
  Vector p;                     // length C + 1, background last
};

/// Normalized multi-hot label vector.
struct LabelVector {
  Vector y;
  static LabelVector from_labels(const std::vector<int>& labels, std::size_t num_classes);
};

/// Gradients with respect to the score map and (where relevant) the gate.
struct ScoreGrad {
  Matrix d_s;
  Vector d_b;
  static ScoreGrad zeros(std::size_t T, std::size_t C) { return {Matrix(T, C), Vector(T, 0.0)}; }
};

// --- pooling and probabilities -------------------------------------------

/// Softmax over (pooled scores..., pooled threshold).
VideoProbabilities probabilities_from_logits(Vector pooled_scores, double pooled_threshold);

VideoProbabilities pool_and_classify(const ScoreMap& scores, const Gate& gate, Aggregator aggregator);

/// Chain rule through pooling: given d(loss)/d(pooled scores) and
/// d(loss)/d(pooled threshold), accumulates into d_s, d_b and d_g.
void pool_backward(const ScoreMap& scores, const Gate& gate, Aggregator aggregator,
                   std::span<const double> d_pooled, double d_pooled_threshold, ScoreGrad& grad,
                   Matrix& d_gate);

/// Chain rule through g = phi(s - b): accumulates into d_s and d_b.
void gate_backward(const ScoreMap& scores, const Gate& gate, const Matrix& d_gate, ScoreGrad& grad);
/// Chain rule through g = phi(s - thr) with thr held constant: accumulates into d_s only.
void class_threshold_gate_backward(const ScoreMap& scores, std::span<const double> thresholds,
                                   const Gate& gate, const Matrix& d_gate, ScoreGrad& grad);

// --- losses --------------------------------------------------------------

struct ClassificationLoss {
  double value = 0.0;
  /// Per video: d(loss)/d(pooled scores), with d/d(pooled threshold) as the last entry.
  std::vector<Vector> d_logits;
};

/// -(1/B) sum_i [ sum_c y_c log p_c + w_b log p_bg ].
ClassificationLoss classification_loss(std::span<const VideoProbabilities> probs,
                                       std::span<const LabelVector> labels, double w_b);

struct ScoreLoss {
  double value = 0.0;
  std::vector<ScoreGrad> grads;
};

/// Hinge on the product of the ground-truth action envelope and the threshold,
/// normalized by both norms.
ScoreLoss threshold_regularization_loss(std::span<const ScoreMap> scores,
                                        std::span<const LabelVector> labels);

/// Regularization in any of the supported forms (inner_product matches the function above).
ScoreLoss reg_variant(std::span<const ScoreMap> scores, std::span<const LabelVector> labels,
                      RegForm form);

struct GateLoss {
  double value = 0.0;
  std::vector<Matrix> d_gate;  // empty matrix for videos outside the annotated set
};

/// Mean absolute gate error over the fully annotated videos of the batch; 0 when there are none.
GateLoss localization_loss(std::span<const Gate> gates,
                           std::span<const RasterizedAnnotation> annotations,
                           std::span<const bool> fully_annotated);

// --- full objective ------------------------------------------------------

struct BatchItem {
  const Matrix* features = nullptr;
  LabelVector labels;
  /// Present (and used) only for fully annotated videos.
  std::optional<RasterizedAnnotation> annotation;
  std::string id;
};

struct ObjectiveOptions {
  LossConfig loss;
  GatingKind gating = GatingKind::sigmoid;
  TrainLocalization localization = TrainLocalization::predicted;
};

struct LossBreakdown {
  double classification = 0.0;
  double regularization = 0.0;
  double localization = 0.0;
  double total = 0.0;
};

struct TotalLoss {
  LossBreakdown parts;
  GradientBundle grad;
};

/// Forward, gate, pooling, the weighted sum of the three losses and the full
/// backward pass. `masks` is either empty (no dropout) or one mask per item.
/// Videos are processed in parallel and reduced in batch order.
TotalLoss total_loss(std::span<const BatchItem> batch, const NetworkParams& params,
                     const ObjectiveOptions& options, std::span<const DropoutMask> masks = {});

/// Same, sampling dropout masks of probability `dropout` from `rng` in batch order.
TotalLoss total_loss(std::span<const BatchItem> batch, const NetworkParams& params,
                     const ObjectiveOptions& options, double dropout, Rng& rng);

}  // namespace ttcloc
