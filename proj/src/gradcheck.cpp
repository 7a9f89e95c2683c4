#include "ttcloc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ttcloc {
namespace {

struct Instance {
  NetworkParams params;
  std::vector<Matrix> features;
  std::vector<LabelVector> labels;
  RasterizedAnnotation annotation;  // for video 0
  std::vector<DropoutMask> masks;
};

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

Vector random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

LabelVector random_labels(Rng& rng, std::size_t C) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < C; ++c)
    if (rng.bernoulli(0.4)) labels.push_back(static_cast<int>(c));
  if (labels.empty()) labels.push_back(static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(C) - 1)));
  return LabelVector::from_labels(labels, C);
}

Instance make_instance(Rng& rng, const GradcheckOptions& o) {
  Instance in;
  in.params = NetworkParams::zeros(o.input_dim, o.hidden_dim, o.num_classes);
  in.params.for_each_tensor([&](std::span<double> t) {
    for (double& v : t) v = rng.uniform(-1.0, 1.0);
  });
  const std::size_t lengths[2] = {o.num_snippets, std::max<std::size_t>(1, o.num_snippets - 1)};
  for (std::size_t T : lengths) {
    in.features.push_back(random_matrix(rng, T, o.input_dim));
    in.labels.push_back(random_labels(rng, o.num_classes));
    in.masks.push_back(sample_dropout_mask(rng, T, o.hidden_dim, 0.3));
  }
  in.annotation.a = Matrix(lengths[0], o.num_classes);
  for (double& v : in.annotation.a.values()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return in;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

std::vector<double*> param_coords(NetworkParams& p) {
  std::vector<double*> out;
  p.for_each_tensor([&](std::span<double> t) {
    for (double& v : t) out.push_back(&v);
  });
  return out;
}

std::vector<double> flatten(const GradientBundle& g) {
  std::vector<double> out;
  g.for_each_tensor([&](std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

void merge(GradcheckResult& into, const GradcheckResult& r) {
  into.max_rel_error = std::max(into.max_rel_error, r.max_rel_error);
  into.checked += r.checked;
  into.kinks += r.kinks;
  into.passed = into.passed && r.passed;
}

GradcheckResult check_network(Rng& rng, const GradcheckOptions& o) {
  Instance in = make_instance(rng, o);
  const Matrix& x = in.features[0];
  const Matrix r_s = random_matrix(rng, x.rows(), o.num_classes);
  const Vector r_b = random_vector(rng, x.rows());
  auto f = [&] {
    const ScoreMap sm = forward(in.params, x, &in.masks[0]);
    double acc = 0.0;
    for (std::size_t k = 0; k < sm.s.size(); ++k) acc += r_s.data()[k] * sm.s.data()[k];
    for (std::size_t t = 0; t < sm.b.size(); ++t) acc += r_b[t] * sm.b[t];
    return acc;
  };
  ForwardCache cache;
  forward(in.params, x, &in.masks[0], &cache);
  GradientBundle g = backward(in.params, cache, r_s, r_b);
  if (o.tamper) o.tamper(g);
  return check_coordinates("network", param_coords(in.params), flatten(g), f, o.step, o.tolerance);
}

GradcheckResult check_gate(Rng& rng, const GradcheckOptions& o, GatingKind kind) {
  const std::size_t T = o.num_snippets, C = o.num_classes;
  ScoreMap sm{random_matrix(rng, T, C, -2, 2), random_vector(rng, T, -2, 2)};
  const Matrix r = random_matrix(rng, T, C);
  auto f = [&] {
    const Gate g = apply_gate(sm, kind);
    double acc = 0.0;
    for (std::size_t k = 0; k < g.g.size(); ++k) acc += r.data()[k] * g.g.data()[k];
    return acc;
  };
  ScoreGrad grad = ScoreGrad::zeros(T, C);
  gate_backward(sm, apply_gate(sm, kind), r, grad);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t k = 0; k < sm.s.size(); ++k) {
    coords.push_back(sm.s.data() + k);
    analytic.push_back(grad.d_s.data()[k]);
  }
  for (std::size_t t = 0; t < T; ++t) {
    coords.push_back(&sm.b[t]);
    analytic.push_back(grad.d_b[t]);
  }
  return check_coordinates("gate:" + to_string(kind), coords, analytic, f, o.step, o.tolerance);
}

GradcheckResult check_pooling(Rng& rng, const GradcheckOptions& o, Aggregator agg) {
  const std::size_t T = o.num_snippets, C = o.num_classes;
  ScoreMap sm{random_matrix(rng, T, C, -2, 2), random_vector(rng, T, -2, 2)};
  Gate gate{random_matrix(rng, T, C, 0.1, 0.9), GatingKind::sigmoid};
  const Vector w = random_vector(rng, C);
  const double w0 = rng.uniform(-1, 1);
  auto f = [&] {
    const auto p = pool_and_classify(sm, gate, agg);
    double acc = w0 * p.pooled_threshold;
    for (std::size_t c = 0; c < C; ++c) acc += w[c] * p.pooled_scores[c];
    return acc;
  };
  ScoreGrad grad = ScoreGrad::zeros(T, C);
  Matrix d_gate(T, C);
  pool_backward(sm, gate, agg, w, w0, grad, d_gate);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t k = 0; k < sm.s.size(); ++k) {
    coords.push_back(sm.s.data() + k);
    analytic.push_back(grad.d_s.data()[k]);
    coords.push_back(gate.g.data() + k);
    analytic.push_back(d_gate.data()[k]);
  }
  for (std::size_t t = 0; t < T; ++t) {
    coords.push_back(&sm.b[t]);
    analytic.push_back(grad.d_b[t]);
  }
  return check_coordinates("pooling:" + to_string(agg), coords, analytic, f, o.step, o.tolerance);
}

GradcheckResult check_classification(Rng& rng, const GradcheckOptions& o) {
  const std::size_t C = o.num_classes;
  std::vector<Vector> logits = {random_vector(rng, C + 1, -2, 2), random_vector(rng, C + 1, -2, 2)};
  const std::vector<LabelVector> labels = {random_labels(rng, C), random_labels(rng, C)};
  const double w_b = 1.0 / static_cast<double>(C);
  auto probs = [&] {
    std::vector<VideoProbabilities> p;
    for (const auto& z : logits) p.push_back(probabilities_from_logits(Vector(z.begin(), z.end() - 1), z.back()));
    return p;
  };
  auto f = [&] { return classification_loss(probs(), labels, w_b).value; };
  const auto loss = classification_loss(probs(), labels, w_b);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    for (std::size_t k = 0; k <= C; ++k) {
      coords.push_back(&logits[i][k]);
      analytic.push_back(loss.d_logits[i][k]);
    }
  }
  return check_coordinates("classification", coords, analytic, f, o.step, o.tolerance);
}

GradcheckResult check_reg(Rng& rng, const GradcheckOptions& o, RegForm form) {
  const std::size_t T = o.num_snippets, C = o.num_classes;
  std::vector<ScoreMap> scores;
  std::vector<LabelVector> labels;
  for (int i = 0; i < 2; ++i) {
    scores.push_back({random_matrix(rng, T, C, -1.5, 1.5), random_vector(rng, T, -1.5, 1.5)});
    labels.push_back(random_labels(rng, C));
  }
  auto f = [&] { return reg_variant(scores, labels, form).value; };
  const auto loss = reg_variant(scores, labels, form);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t k = 0; k < scores[i].s.size(); ++k) {
      coords.push_back(scores[i].s.data() + k);
      analytic.push_back(loss.grads[i].d_s.data()[k]);
    }
    for (std::size_t t = 0; t < T; ++t) {
      coords.push_back(&scores[i].b[t]);
      analytic.push_back(loss.grads[i].d_b[t]);
    }
  }
  return check_coordinates("reg:" + to_string(form), coords, analytic, f, o.step, o.tolerance);
}

GradcheckResult check_localization(Rng& rng, const GradcheckOptions& o) {
  const std::size_t T = o.num_snippets, C = o.num_classes;
  std::vector<Gate> gates;
  std::vector<RasterizedAnnotation> ann;
  for (int i = 0; i < 3; ++i) {
    gates.push_back({random_matrix(rng, T, C, 0.05, 0.95), GatingKind::sigmoid});
    RasterizedAnnotation a{Matrix(T, C)};
    for (double& v : a.a.values()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    ann.push_back(std::move(a));
  }
  const bool flags[3] = {true, false, true};
  auto f = [&] { return localization_loss(gates, ann, flags).value; };
  const auto loss = localization_loss(gates, ann, flags);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < gates.size(); ++i) {
    for (std::size_t k = 0; k < gates[i].g.size(); ++k) {
      coords.push_back(gates[i].g.data() + k);
      analytic.push_back(loss.d_gate[i].empty() ? 0.0 : loss.d_gate[i].data()[k]);
    }
  }
  return check_coordinates("localization", coords, analytic, f, o.step, o.tolerance);
}

GradcheckResult check_total(Rng& rng, const GradcheckOptions& o, const ObjectiveOptions& opts,
                            bool with_loc, const std::string& name) {
  Instance in = make_instance(rng, o);
  std::vector<BatchItem> batch(in.features.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i].features = &in.features[i];
    batch[i].labels = in.labels[i];
    batch[i].id = "v" + std::to_string(i);
  }
  if (with_loc) batch[0].annotation = in.annotation;
  auto f = [&] { return total_loss(batch, in.params, opts, in.masks).parts.total; };
  GradientBundle g = total_loss(batch, in.params, opts, in.masks).grad;
  if (o.tamper) o.tamper(g);
  return check_coordinates(name, param_coords(in.params), flatten(g), f, o.step, o.tolerance);
}

}  // namespace

double gradcheck_relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
  return std::abs(analytic - numeric) / scale;
}

GradcheckResult check_coordinates(const std::string& component, const std::vector<double*>& coords,
                                  const std::vector<double>& analytic, const std::function<double()>& f,
                                  double step, double tolerance) {
  GradcheckResult r;
  r.component = component;
  const double f0 = f();
  for (std::size_t k = 0; k < coords.size(); ++k) {
    double& x = *coords[k];
    const double saved = x;
    x = saved + step;
    const double f_plus = f();
    x = saved - step;
    const double f_minus = f();
    x = saved;
    const double central = (f_plus - f_minus) / (2.0 * step);
    const double err = gradcheck_relative_error(analytic[k], central);
    if (err > tolerance) {
      const double forward_diff = (f_plus - f0) / step;
      const double backward_diff = (f0 - f_minus) / step;
      if (std::abs(forward_diff - backward_diff) >= std::abs(central - analytic[k])) {
        ++r.kinks;
        continue;
      }
    }
    ++r.checked;
    r.max_rel_error = std::max(r.max_rel_error, err);
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
  std::vector<GradcheckResult> results;
  auto run = [&](const std::string& name, bool strict, auto&& one) {
    GradcheckResult agg;
    agg.component = name;
    agg.strict = strict;
    for (int i = 0; i < options.instances; ++i) {
      Rng rng = Rng::derive(options.seed, fnv1a(name) + static_cast<std::uint64_t>(i));
      merge(agg, one(rng));
    }
    agg.component = name;
    if (!strict) agg.passed = true;
    results.push_back(agg);
  };

  run("network", true, [&](Rng& rng) { return check_network(rng, options); });
  for (GatingKind k : {GatingKind::sigmoid, GatingKind::softsign})
    run("gate:" + to_string(k), true, [&](Rng& rng) { return check_gate(rng, options, k); });
  run("gate:binarize", false, [&](Rng& rng) { return check_gate(rng, options, GatingKind::binarize); });
  for (Aggregator a : {Aggregator::gated, Aggregator::topk_eighth})
    run("pooling:" + to_string(a), true, [&](Rng& rng) { return check_pooling(rng, options, a); });
  run("classification", true, [&](Rng& rng) { return check_classification(rng, options); });
  for (RegForm f : {RegForm::inner_product, RegForm::l1, RegForm::l2, RegForm::cosine})
    run("reg:" + to_string(f), true, [&](Rng& rng) { return check_reg(rng, options, f); });
  run("localization", true, [&](Rng& rng) { return check_localization(rng, options); });

  for (GatingKind k : {GatingKind::sigmoid, GatingKind::softsign, GatingKind::binarize}) {
    for (Aggregator a : {Aggregator::gated, Aggregator::topk_eighth}) {
      for (RegForm f : {RegForm::inner_product, RegForm::l1, RegForm::l2, RegForm::cosine}) {
        for (bool loc : {false, true}) {
          ObjectiveOptions opts;
          opts.gating = k;
          opts.loss.aggregator = a;
          opts.loss.reg_form = f;
          opts.loss.lambda = 0.4;
          opts.loss.eta = loc ? 3.0 : 0.0;
          const std::string name = "total:" + to_string(k) + "/" + to_string(a) + "/" + to_string(f) +
                                   (loc ? "/loc" : "/noloc");
          run(name, k != GatingKind::binarize,
              [&](Rng& rng) { return check_total(rng, options, opts, loc, name); });
        }
      }
    }
  }
  ObjectiveOptions manual;
  manual.localization = TrainLocalization::manual;
  run("total:manual-threshold", false,
      [&](Rng& rng) { return check_total(rng, options, manual, true, "total:manual-threshold"); });
  return results;
}

bool gradcheck_passed(const std::vector<GradcheckResult>& results) {
  for (const auto& r : results) {
    if (!r.strict) continue;
    if (!r.passed) return false;
    if (r.kinks * 10 > r.checked + r.kinks) return false;
  }
  return true;
}

}  // namespace ttcloc
