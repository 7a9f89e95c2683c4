// Randomized invariant checks shared by the unit tests and the acceptance run.
// Each returns the number of failing trials.
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "support.hpp"
#include "ttcloc/objectives.hpp"
#include "ttcloc/trainer.hpp"

namespace testing {

struct InvariantOutcome {
  std::string name;
  int trials = 0;
  int failures = 0;
};

/// Multiples of 1/1024 with small numerators: sums and differences of these are exact.
inline double dyadic(Rng& rng, double range) {
  return std::round(rng.uniform(-range, range) * 1024.0) / 1024.0;
}

inline ttcloc::ScoreMap random_dyadic_scores(Rng& rng, std::size_t T, std::size_t C, double range = 4.0) {
  ttcloc::ScoreMap m{Matrix(T, C), Vector(T)};
  for (double& v : m.s.values()) v = dyadic(rng, range);
  for (double& v : m.b) v = dyadic(rng, range);
  return m;
}

inline ttcloc::ScoreMap shifted(const ttcloc::ScoreMap& m, double delta) {
  ttcloc::ScoreMap out = m;
  for (double& v : out.s.values()) v += delta;
  for (double& v : out.b) v += delta;
  return out;
}

inline std::vector<int> random_labels(Rng& rng, int C) {
  std::vector<int> labels;
  for (int c = 0; c < C; ++c)
    if (rng.bernoulli(0.4)) labels.push_back(c);
  if (labels.empty()) labels.push_back(static_cast<int>(rng.uniform_int(0, C - 1)));
  return labels;
}

inline ttcloc::RasterizedAnnotation random_annotation(Rng& rng, std::size_t T, std::size_t C) {
  ttcloc::RasterizedAnnotation a{Matrix(T, C)};
  for (double& v : a.a.values()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  return a;
}

struct Losses {
  double clas = 0, reg = 0, loc = 0;
};

/// The three losses of one video under a given gate kind and aggregator.
inline Losses video_losses(const ttcloc::ScoreMap& m, const std::vector<int>& labels,
                           const ttcloc::RasterizedAnnotation& a, ttcloc::GatingKind kind, ttcloc::Aggregator agg,
                           ttcloc::RegForm form) {
  using namespace ttcloc;
  const Gate g = apply_gate(m, kind);
  const std::array<VideoProbabilities, 1> probs{pool_and_classify(m, g, agg)};
  const std::array<LabelVector, 1> y{LabelVector::from_labels(labels, m.num_classes())};
  const std::array<ScoreMap, 1> maps{m};
  const std::array<Gate, 1> gates{g};
  const std::array<RasterizedAnnotation, 1> ann{a};
  const std::array<bool, 1> flags{true};
  Losses l;
  l.clas = classification_loss(probs, y, 1.0 / static_cast<double>(m.num_classes())).value;
  l.reg = reg_variant(maps, y, form).value;
  l.loc = localization_loss(gates, ann, flags).value;
  return l;
}

inline bool close(double a, double b, double tol = 1e-12) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

inline const std::array<ttcloc::GatingKind, 3> kAllGates = {ttcloc::GatingKind::sigmoid, ttcloc::GatingKind::softsign,
                                                            ttcloc::GatingKind::binarize};

inline InvariantOutcome check_gate_shift_invariance(std::uint64_t seed, int trials) {
  InvariantOutcome r{"gate shift invariance", trials, 0};
  Rng rng(seed);
  for (int i = 0; i < trials; ++i) {
    const std::size_t T = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const std::size_t C = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto m = random_dyadic_scores(rng, T, C);
    const auto m2 = shifted(m, dyadic(rng, 50.0));
    bool ok = true;
    for (auto kind : kAllGates) ok = ok && ttcloc::apply_gate(m, kind).g == ttcloc::apply_gate(m2, kind).g;
    if (!ok) ++r.failures;
  }
  return r;
}

inline InvariantOutcome check_softmax_normalization(std::uint64_t seed, int trials) {
  InvariantOutcome r{"softmax normalization", trials, 0};
  Rng rng(seed);
  for (int i = 0; i < trials; ++i) {
    const std::size_t T = static_cast<std::size_t>(rng.uniform_int(1, 16));
    const std::size_t C = static_cast<std::size_t>(rng.uniform_int(1, 20));
    const double scale = std::pow(10.0, rng.uniform(-2.0, 2.5));
    ttcloc::ScoreMap m{random_matrix(rng, T, C, scale), random_vector(rng, T, scale)};
    bool ok = true;
    for (auto agg : {ttcloc::Aggregator::gated, ttcloc::Aggregator::topk_eighth}) {
      const auto v = ttcloc::pool_and_classify(m, ttcloc::apply_gate(m, ttcloc::GatingKind::sigmoid), agg);
      const auto& p = v.p;
      // exp underflows once two logits are more than ~745 apart; below that every entry is positive.
      double lo = v.pooled_threshold, hi = v.pooled_threshold;
      for (double x : v.pooled_scores) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      const bool representable = hi - lo < 700.0;
      long double sum = 0;
      for (double x : p) {
        sum += x;
        ok = ok && (representable ? x > 0.0 : x >= 0.0) && x <= 1.0;
      }
      ok = ok && p.size() == C + 1 && std::abs(static_cast<double>(sum) - 1.0) <= 1e-12;
    }
    if (!ok) ++r.failures;
  }
  return r;
}

/// Largest change of L_clas a common shift by delta can cause through the
/// pooling stabilizer: each gated pooled score moves by delta * sum(g) / (sum(g) + eps)
/// instead of delta, and |dL/d logits|_1 <= 2 (1 + w_b).
inline double stabilizer_bound(const ttcloc::Gate& g, double delta, double w_b) {
  double min_mass = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < g.g.cols(); ++c) {
    double mass = 0;
    for (std::size_t t = 0; t < g.g.rows(); ++t) mass += g.g(t, c);
    min_mass = std::min(min_mass, mass);
  }
  return 2.0 * (1.0 + w_b) * std::abs(delta) * ttcloc::kPoolEpsilon / min_mass;
}

/// L_clas and L_loc are unchanged by a common shift of s and b (exactly for
/// top-k pooling, up to the stabilizer for gated pooling); L_reg is checked for
/// the witness that it does change.
inline InvariantOutcome check_loss_shift_invariance(std::uint64_t seed, int trials, int* reg_changed) {
  InvariantOutcome r{"L_clas/L_loc shift invariance", trials, 0};
  Rng rng(seed);
  *reg_changed = 0;
  for (int i = 0; i < trials; ++i) {
    const std::size_t T = static_cast<std::size_t>(rng.uniform_int(2, 12));
    const std::size_t C = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto m = random_dyadic_scores(rng, T, C);
    double delta = dyadic(rng, 8.0);
    if (delta == 0.0) delta = 0.5;
    const auto m2 = shifted(m, delta);
    const auto labels = random_labels(rng, static_cast<int>(C));
    const auto a = random_annotation(rng, T, C);
    bool ok = true;
    for (auto kind : {ttcloc::GatingKind::sigmoid, ttcloc::GatingKind::softsign}) {
      for (auto agg : {ttcloc::Aggregator::gated, ttcloc::Aggregator::topk_eighth}) {
        const Losses l1 = video_losses(m, labels, a, kind, agg, ttcloc::RegForm::inner_product);
        const Losses l2 = video_losses(m2, labels, a, kind, agg, ttcloc::RegForm::inner_product);
        const double slack = agg == ttcloc::Aggregator::gated
                                 ? stabilizer_bound(ttcloc::apply_gate(m, kind), delta, 1.0 / static_cast<double>(C))
                                 : 0.0;
        ok = ok && std::abs(l1.clas - l2.clas) <= slack + 1e-12 * std::max(1.0, std::abs(l1.clas)) &&
             l1.loc == l2.loc;
        if (kind == ttcloc::GatingKind::sigmoid && agg == ttcloc::Aggregator::gated && l1.reg != l2.reg)
          ++*reg_changed;
      }
    }
    if (!ok) ++r.failures;
  }
  return r;
}

inline InvariantOutcome check_permutation_equivariance(std::uint64_t seed, int trials) {
  InvariantOutcome r{"class-permutation equivariance", trials, 0};
  Rng rng(seed);
  for (int i = 0; i < trials; ++i) {
    const std::size_t T = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const std::size_t C = static_cast<std::size_t>(rng.uniform_int(2, 6));
    const ttcloc::ScoreMap m{random_matrix(rng, T, C, 2.0), random_vector(rng, T, 2.0)};
    const auto labels = random_labels(rng, static_cast<int>(C));
    const auto a = random_annotation(rng, T, C);

    std::vector<int> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = C - 1; k > 0; --k)
      std::swap(perm[k], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k)))]);
    ttcloc::ScoreMap pm = m;
    ttcloc::RasterizedAnnotation pa = a;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        pm.s(t, static_cast<std::size_t>(perm[c])) = m.s(t, c);
        pa.a(t, static_cast<std::size_t>(perm[c])) = a.a(t, c);
      }
    std::vector<int> plabels;
    for (int c : labels) plabels.push_back(perm[static_cast<std::size_t>(c)]);
    std::sort(plabels.begin(), plabels.end());

    bool ok = true;
    for (auto kind : kAllGates)
      for (auto agg : {ttcloc::Aggregator::gated, ttcloc::Aggregator::topk_eighth})
        for (auto form : {ttcloc::RegForm::inner_product, ttcloc::RegForm::l1, ttcloc::RegForm::l2,
                          ttcloc::RegForm::cosine}) {
          const Losses l1 = video_losses(m, labels, a, kind, agg, form);
          const Losses l2 = video_losses(pm, plabels, pa, kind, agg, form);
          ok = ok && close(l1.clas, l2.clas) && close(l1.reg, l2.reg) && close(l1.loc, l2.loc);
        }
    if (!ok) ++r.failures;
  }
  return r;
}

/// Open interval (0,1) for moderate inputs; closed [0,1] for any finite input
/// (double precision saturates the sigmoid beyond about |x| = 37).
inline InvariantOutcome check_gate_range(std::uint64_t seed, int trials) {
  InvariantOutcome r{"gate range bounds", trials, 0};
  Rng rng(seed);
  for (int i = 0; i < trials; ++i) {
    const double moderate = rng.uniform(-30.0, 30.0);
    const double wide = std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.uniform_int(0, 1000)));
    bool ok = true;
    for (auto kind : {ttcloc::GatingKind::sigmoid, ttcloc::GatingKind::softsign}) {
      const double g = ttcloc::gate_value(kind, moderate);
      const double w = ttcloc::gate_value(kind, wide);
      ok = ok && g > 0.0 && g < 1.0 && w >= 0.0 && w <= 1.0;
    }
    const double bin = ttcloc::gate_value(ttcloc::GatingKind::binarize, wide);
    ok = ok && (bin == 0.0 || bin == 1.0);
    if (!ok) ++r.failures;
  }
  return r;
}

/// |delta param| <= lr / (1 - beta1) for every Adam step with the configured
/// moment decays, including bias-corrected early steps. The bound needs beta1^2
/// well below beta2 (see adam_ratio_bound), which the default pair satisfies.
inline InvariantOutcome check_adam_step_bound(std::uint64_t seed, int trials) {
  InvariantOutcome r{"Adam step bound", trials, 0};
  Rng rng(seed);
  for (int i = 0; i < trials; ++i) {
    ttcloc::AdamConfig adam;
    adam.learning_rate = std::pow(10.0, rng.uniform(-5.0, -1.0));
    ttcloc::TrainState st;
    st.params = random_params(rng, 2, 3, 2);
    st.first_moment = NetworkParams::zeros(2, 3, 2);
    st.second_moment = NetworkParams::zeros(2, 3, 2);
    const double bound = adam.learning_rate / (1.0 - adam.beta1);
    bool ok = true;
    const int steps = static_cast<int>(rng.uniform_int(1, 50));
    for (int s = 0; s < steps && ok; ++s) {
      NetworkParams g = NetworkParams::zeros(2, 3, 2);
      const double scale = std::pow(10.0, rng.uniform(-6.0, 6.0));
      g.for_each_tensor([&](std::span<double> t) {
        for (double& v : t) v = rng.bernoulli(0.2) ? 0.0 : scale * rng.normal();
      });
      const auto before = flatten(st.params);
      ttcloc::adam_update(st, g, adam);
      const auto after = flatten(st.params);
      for (std::size_t k = 0; k < before.size(); ++k) ok = ok && std::abs(after[k] - before[k]) <= bound * (1 + 1e-12);
    }
    if (!ok) ++r.failures;
  }
  return r;
}

/// Exact worst case of |m_hat / sqrt(v_hat)| after t steps (Cauchy-Schwarz over
/// the gradient history), ignoring the epsilon in the denominator.
inline double adam_ratio_bound(double beta1, double beta2, int t) {
  double sum = 0.0;
  for (int k = 0; k < t; ++k) {
    const double a = (1.0 - beta1) * std::pow(beta1, k);
    const double b = (1.0 - beta2) * std::pow(beta2, k);
    sum += a * a / b;
  }
  return std::sqrt(sum) * std::sqrt(1.0 - std::pow(beta2, t)) / (1.0 - std::pow(beta1, t));
}

}  // namespace testing
