#include "ttcloc/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "ttcloc/errors.hpp"

namespace ttcloc {
namespace {

std::size_t topk_count(std::size_t T) { return (T + 7) / 8; }

/// Indices of the k largest entries of column c, ties to the earlier snippet.
std::vector<std::size_t> topk_indices(const Matrix& s, std::size_t c, std::size_t k) {
  std::vector<std::size_t> idx(s.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s(a, c) > s(b, c); });
  idx.resize(k);
  return idx;
}

/// Max over ground-truth classes at each snippet, with the arg-max class.
void action_envelope(const ScoreMap& scores, const LabelVector& labels, Vector& env,
                     std::vector<std::size_t>& arg) {
  const std::size_t T = scores.num_snippets();
  env.assign(T, 0.0);
  arg.assign(T, 0);
  bool any = false;
  for (std::size_t c = 0; c < labels.y.size(); ++c) any = any || labels.y[c] > 0.0;
  if (!any) throw std::invalid_argument("regularization loss needs at least one ground-truth class");
  for (std::size_t t = 0; t < T; ++t) {
    bool first = true;
    for (std::size_t c = 0; c < labels.y.size(); ++c) {
      if (!(labels.y[c] > 0.0)) continue;
      if (first || scores.s(t, c) > env[t]) {
        env[t] = scores.s(t, c);
        arg[t] = c;
        first = false;
      }
    }
  }
}

double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Value and gradients (w.r.t. envelope and thresholds) of one video's regularizer.
double reg_single(const Vector& env, std::span<const double> b, RegForm form, Vector& d_env,
                  Vector& d_b) {
  const std::size_t T = env.size();
  const double inv_t = 1.0 / static_cast<double>(T);
  d_env.assign(T, 0.0);
  d_b.assign(T, 0.0);
  switch (form) {
    case RegForm::inner_product:
    case RegForm::cosine: {
      const double ns = norm2(env);
      const double nb = norm2(b);
      const double denom = (ns + kNormEpsilon) * (nb + kNormEpsilon);
      double num = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        if (form == RegForm::inner_product) {
          const double h = env[t] * b[t] + 1.0;
          if (h > 0.0) {
            num += h;
            d_env[t] = b[t] / denom;
            d_b[t] = env[t] / denom;
          }
        } else {
          num += env[t] * b[t];
          d_env[t] = b[t] / denom;
          d_b[t] = env[t] / denom;
        }
      }
      const double value = num / denom;
      // quotient rule through the two norms
      for (std::size_t t = 0; t < T; ++t) {
        if (ns > 0.0) d_env[t] -= value / (ns + kNormEpsilon) * env[t] / ns;
        if (nb > 0.0) d_b[t] -= value / (nb + kNormEpsilon) * b[t] / nb;
      }
      return value;
    }
    case RegForm::l1: {
      double value = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double d = env[t] - b[t];
        if (std::abs(d) < 1.0) {
          value += (1.0 - std::abs(d)) * inv_t;
          d_env[t] = -sign(d) * inv_t;
          d_b[t] = sign(d) * inv_t;
        }
      }
      return value;
    }
    case RegForm::l2: {
      double value = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double d = env[t] - b[t];
        if (d * d < 1.0) {
          value += (1.0 - d * d) * inv_t;
          d_env[t] = -2.0 * d * inv_t;
          d_b[t] = 2.0 * d * inv_t;
        }
      }
      return value;
    }
  }
  return 0.0;
}

}  // namespace

std::string to_string(Aggregator a) { return a == Aggregator::gated ? "gated" : "topk_eighth"; }

std::string to_string(RegForm f) {
  switch (f) {
    case RegForm::inner_product: return "inner_product";
    case RegForm::l1: return "l1";
    case RegForm::l2: return "l2";
    case RegForm::cosine: return "cosine";
  }
  return "unknown";
}

std::string to_string(TrainLocalization l) {
  return l == TrainLocalization::predicted ? "predicted" : "manual";
}

Aggregator parse_aggregator(const std::string& name) {
  if (name == "gated") return Aggregator::gated;
  if (name == "topk_eighth") return Aggregator::topk_eighth;
  throw ValidationError("unknown aggregator '" + name + "'");
}

RegForm parse_reg_form(const std::string& name) {
  if (name == "inner_product") return RegForm::inner_product;
  if (name == "l1") return RegForm::l1;
  if (name == "l2") return RegForm::l2;
  if (name == "cosine") return RegForm::cosine;
  throw ValidationError("unknown reg_form '" + name + "'");
}

TrainLocalization parse_train_localization(const std::string& name) {
  if (name == "predicted") return TrainLocalization::predicted;
  if (name == "manual") return TrainLocalization::manual;
  throw ValidationError("unknown train localization '" + name + "'");
}

double LossConfig::w_b(std::size_t num_classes) const {
  return background_weight ? *background_weight : 1.0 / static_cast<double>(num_classes);
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must be in [0, 1]");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ValidationError("eta must be >= 0");
  if (background_weight && !(*background_weight > 0.0 && std::isfinite(*background_weight)))
    throw ValidationError("background weight must be > 0");
}

LabelVector LabelVector::from_labels(const std::vector<int>& labels, std::size_t num_classes) {
  if (labels.empty()) throw std::invalid_argument("label set is empty");
  LabelVector lv{Vector(num_classes, 0.0)};
  for (int c : labels) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
      throw std::invalid_argument("label out of range");
    lv.y[static_cast<std::size_t>(c)] = 1.0;
  }
  const double n = std::accumulate(lv.y.begin(), lv.y.end(), 0.0);
  for (double& v : lv.y) v /= n;
  return lv;
}

VideoProbabilities pool_and_classify(const ScoreMap& scores, const Gate& gate, Aggregator aggregator) {
  const std::size_t T = scores.num_snippets();
  const std::size_t C = scores.num_classes();
  if (gate.g.rows() != T || gate.g.cols() != C || scores.b.size() != T)
    throw std::invalid_argument("pool_and_classify: shape mismatch");
  VideoProbabilities out;
  out.pooled_scores.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (aggregator == Aggregator::gated) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        num += gate.g(t, c) * scores.s(t, c);
        den += gate.g(t, c);
      }
      out.pooled_scores[c] = num / (den + kPoolEpsilon);
    } else {
      const auto idx = topk_indices(scores.s, c, topk_count(T));
      double acc = 0.0;
      for (auto t : idx) acc += scores.s(t, c);
      out.pooled_scores[c] = acc / static_cast<double>(idx.size());
    }
  }
  out.pooled_threshold = std::accumulate(scores.b.begin(), scores.b.end(), 0.0) / static_cast<double>(T);
  return probabilities_from_logits(std::move(out.pooled_scores), out.pooled_threshold);
}

VideoProbabilities probabilities_from_logits(Vector pooled_scores, double pooled_threshold) {
  VideoProbabilities out;
  out.pooled_scores = std::move(pooled_scores);
  out.pooled_threshold = pooled_threshold;
  const std::size_t C = out.pooled_scores.size();
  double zmax = out.pooled_threshold;
  for (double z : out.pooled_scores) zmax = std::max(zmax, z);
  out.p.assign(C + 1, 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) total += (out.p[c] = std::exp(out.pooled_scores[c] - zmax));
  total += (out.p[C] = std::exp(out.pooled_threshold - zmax));
  for (double& v : out.p) v /= total;
  return out;
}

void pool_backward(const ScoreMap& scores, const Gate& gate, Aggregator aggregator,
                   std::span<const double> d_pooled, double d_pooled_threshold, ScoreGrad& grad,
                   Matrix& d_gate) {
  const std::size_t T = scores.num_snippets();
  const std::size_t C = scores.num_classes();
  for (std::size_t c = 0; c < C; ++c) {
    if (d_pooled[c] == 0.0) continue;
    if (aggregator == Aggregator::gated) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        num += gate.g(t, c) * scores.s(t, c);
        den += gate.g(t, c);
      }
      const double z = den + kPoolEpsilon;
      const double pooled = num / z;
      for (std::size_t t = 0; t < T; ++t) {
        grad.d_s(t, c) += d_pooled[c] * gate.g(t, c) / z;
        d_gate(t, c) += d_pooled[c] * (scores.s(t, c) - pooled) / z;
      }
    } else {
      const auto idx = topk_indices(scores.s, c, topk_count(T));
      for (auto t : idx) grad.d_s(t, c) += d_pooled[c] / static_cast<double>(idx.size());
    }
  }
  for (std::size_t t = 0; t < T; ++t) grad.d_b[t] += d_pooled_threshold / static_cast<double>(T);
}

void gate_backward(const ScoreMap& scores, const Gate& gate, const Matrix& d_gate, ScoreGrad& grad) {
  for (std::size_t t = 0; t < scores.num_snippets(); ++t) {
    for (std::size_t c = 0; c < scores.num_classes(); ++c) {
      const double d = d_gate(t, c) * gate_derivative(gate.kind, scores.s(t, c) - scores.b[t]);
      grad.d_s(t, c) += d;
      grad.d_b[t] -= d;
    }
  }
}

void class_threshold_gate_backward(const ScoreMap& scores, std::span<const double> thresholds,
                                   const Gate& gate, const Matrix& d_gate, ScoreGrad& grad) {
  for (std::size_t t = 0; t < scores.num_snippets(); ++t)
    for (std::size_t c = 0; c < scores.num_classes(); ++c)
      grad.d_s(t, c) += d_gate(t, c) * gate_derivative(gate.kind, scores.s(t, c) - thresholds[c]);
}

ClassificationLoss classification_loss(std::span<const VideoProbabilities> probs,
                                       std::span<const LabelVector> labels, double w_b) {
  if (probs.empty() || probs.size() != labels.size())
    throw std::invalid_argument("classification_loss: batch size mismatch");
  const double inv_b = 1.0 / static_cast<double>(probs.size());
  const double log_floor = std::log(kLogFloor);
  ClassificationLoss out;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i].p;
    const std::size_t C = p.size() - 1;
    Vector target(C + 1, 0.0);
    for (std::size_t c = 0; c < C; ++c) target[c] = labels[i].y[c];
    target[C] = w_b;
    // log p from the logits for accuracy in the tails
    double zmax = probs[i].pooled_threshold;
    for (double z : probs[i].pooled_scores) zmax = std::max(zmax, z);
    double lse = std::exp(probs[i].pooled_threshold - zmax);
    for (double z : probs[i].pooled_scores) lse += std::exp(z - zmax);
    lse = zmax + std::log(lse);

    Vector d(C + 1, 0.0);
    double weight_total = 0.0;
    for (std::size_t k = 0; k <= C; ++k) {
      if (target[k] == 0.0) continue;
      const double logit = k < C ? probs[i].pooled_scores[k] : probs[i].pooled_threshold;
      const double logp = logit - lse;
      if (logp < log_floor) {
        out.value -= inv_b * target[k] * log_floor;
        continue;
      }
      out.value -= inv_b * target[k] * logp;
      weight_total += target[k];
      d[k] -= target[k];
    }
    for (std::size_t k = 0; k <= C; ++k) d[k] = inv_b * (d[k] + weight_total * p[k]);
    out.d_logits.push_back(std::move(d));
  }
  return out;
}

ScoreLoss reg_variant(std::span<const ScoreMap> scores, std::span<const LabelVector> labels,
                      RegForm form) {
  if (scores.empty() || scores.size() != labels.size())
    throw std::invalid_argument("regularization loss: batch size mismatch");
  const double inv_b = 1.0 / static_cast<double>(scores.size());
  ScoreLoss out;
  Vector env, d_env, d_b;
  std::vector<std::size_t> arg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& sm = scores[i];
    action_envelope(sm, labels[i], env, arg);
    out.value += inv_b * reg_single(env, sm.b, form, d_env, d_b);
    ScoreGrad g = ScoreGrad::zeros(sm.num_snippets(), sm.num_classes());
    for (std::size_t t = 0; t < sm.num_snippets(); ++t) {
      g.d_s(t, arg[t]) = inv_b * d_env[t];
      g.d_b[t] = inv_b * d_b[t];
    }
    out.grads.push_back(std::move(g));
  }
  return out;
}

ScoreLoss threshold_regularization_loss(std::span<const ScoreMap> scores,
                                        std::span<const LabelVector> labels) {
  return reg_variant(scores, labels, RegForm::inner_product);
}

GateLoss localization_loss(std::span<const Gate> gates,
                           std::span<const RasterizedAnnotation> annotations,
                           std::span<const bool> fully_annotated) {
  if (gates.size() != annotations.size() || gates.size() != fully_annotated.size())
    throw std::invalid_argument("localization_loss: batch size mismatch");
  GateLoss out;
  out.d_gate.resize(gates.size());
  const auto annotated =
      static_cast<std::size_t>(std::count(fully_annotated.begin(), fully_annotated.end(), true));
  if (annotated == 0) return out;
  for (std::size_t i = 0; i < gates.size(); ++i) {
    if (!fully_annotated[i]) continue;
    const Matrix& g = gates[i].g;
    const Matrix& a = annotations[i].a;
    if (a.rows() != g.rows() || a.cols() != g.cols())
      throw std::invalid_argument("localization_loss: annotation shape mismatch");
    const double scale = 1.0 / (static_cast<double>(annotated) * static_cast<double>(g.size()));
    Matrix d(g.rows(), g.cols());
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double diff = g.data()[k] - a.data()[k];
      out.value += scale * std::abs(diff);
      d.data()[k] = scale * sign(diff);
    }
    out.d_gate[i] = std::move(d);
  }
  return out;
}

TotalLoss total_loss(std::span<const BatchItem> batch, const NetworkParams& params,
                     const ObjectiveOptions& options, std::span<const DropoutMask> masks) {
  options.loss.validate();
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (!masks.empty() && masks.size() != batch.size())
    throw std::invalid_argument("total_loss: need one dropout mask per video");
  const std::size_t B = batch.size();
  const std::size_t C = params.num_classes();
  const bool manual = options.localization == TrainLocalization::manual;

  std::vector<ForwardCache> caches(B);
  std::vector<ScoreMap> scores(B);
  std::vector<Gate> gates(B);
  std::vector<Vector> thresholds(B);
  std::vector<std::exception_ptr> errors(B);

#pragma omp parallel for schedule(dynamic)
  for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(B); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      scores[i] = forward(params, *batch[i].features, masks.empty() ? nullptr : &masks[i], &caches[i]);
      if (manual) {
        thresholds[i] = manual_thresholds(scores[i].s);
        gates[i] = apply_class_threshold_gate(scores[i].s, thresholds[i], options.gating);
      } else {
        gates[i] = apply_gate(scores[i], options.gating);
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<VideoProbabilities> probs(B);
  std::vector<LabelVector> labels(B);
  std::vector<RasterizedAnnotation> annotations(B);
  std::unique_ptr<bool[]> flags(new bool[B]);
  for (std::size_t i = 0; i < B; ++i) {
    probs[i] = pool_and_classify(scores[i], gates[i], options.loss.aggregator);
    labels[i] = batch[i].labels;
    flags[i] = batch[i].annotation.has_value();
    if (flags[i]) annotations[i] = *batch[i].annotation;
  }

  const double lambda = options.loss.lambda;
  const double eta = options.loss.eta;
  const auto clas = classification_loss(probs, labels, options.loss.w_b(C));
  const auto reg = reg_variant(scores, labels, options.loss.reg_form);
  const std::span<const bool> flag_span(flags.get(), B);
  const bool any_annotated = std::find(flag_span.begin(), flag_span.end(), true) != flag_span.end();
  GateLoss loc;
  if (any_annotated) loc = localization_loss(gates, annotations, flag_span);

  TotalLoss out;
  out.parts.classification = clas.value;
  out.parts.regularization = reg.value;
  out.parts.localization = loc.value;
  out.parts.total = lambda * clas.value + (1.0 - lambda) * reg.value + eta * loc.value;

  std::vector<GradientBundle> grads(B);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(B); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      const ScoreMap& sm = scores[i];
      const std::size_t T = sm.num_snippets();
      ScoreGrad sg = ScoreGrad::zeros(T, C);
      Matrix d_gate(T, C);

      Vector d_pooled(C);
      for (std::size_t c = 0; c < C; ++c) d_pooled[c] = lambda * clas.d_logits[i][c];
      pool_backward(sm, gates[i], options.loss.aggregator, d_pooled, lambda * clas.d_logits[i][C], sg,
                    d_gate);
      if (!loc.d_gate.empty() && !loc.d_gate[i].empty()) {
        for (std::size_t k = 0; k < d_gate.size(); ++k) d_gate.data()[k] += eta * loc.d_gate[i].data()[k];
      }
      if (manual) class_threshold_gate_backward(sm, thresholds[i], gates[i], d_gate, sg);
      else gate_backward(sm, gates[i], d_gate, sg);

      const double w_reg = 1.0 - lambda;
      for (std::size_t k = 0; k < sg.d_s.size(); ++k) sg.d_s.data()[k] += w_reg * reg.grads[i].d_s.data()[k];
      for (std::size_t t = 0; t < T; ++t) sg.d_b[t] += w_reg * reg.grads[i].d_b[t];

      grads[i] = backward(params, caches[i], sg.d_s, sg.d_b);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  out.grad = std::move(grads[0]);
  for (std::size_t i = 1; i < B; ++i) accumulate(out.grad, grads[i]);
  return out;
}

TotalLoss total_loss(std::span<const BatchItem> batch, const NetworkParams& params,
                     const ObjectiveOptions& options, double dropout, Rng& rng) {
  if (dropout <= 0.0) return total_loss(batch, params, options, {});
  std::vector<DropoutMask> masks;
  masks.reserve(batch.size());
  for (const auto& item : batch)
    masks.push_back(sample_dropout_mask(rng, item.features->rows(), params.hidden_dim(), dropout));
  return total_loss(batch, params, options, masks);
}

}  // namespace ttcloc
