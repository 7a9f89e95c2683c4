#include "ttcloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ttcloc/errors.hpp"
#include "ttcloc/io.hpp"

namespace ttcloc {
namespace {

using nlohmann::json;

GradientBundle zeros_like(const NetworkParams& p) {
  return NetworkParams::zeros(p.input_dim(), p.hidden_dim(), p.num_classes());
}

std::vector<std::size_t> flagged_indices(const Dataset& ds) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.videos.size(); ++i)
    if (ds.videos[i].fully_annotated) out.push_back(i);
  return out;
}

void run_phase(TrainResult& result, const Dataset& ds, const std::vector<std::size_t>& pool,
               std::size_t iterations, const TrainConfig& config, const LossConfig& loss,
               const std::function<void(const StepRecord&)>& on_step) {
  std::vector<const VideoSample*> batch;
  for (std::size_t it = 0; it < iterations; ++it) {
    batch.clear();
    for (auto k : sample_batch(result.state.rng, pool.size(), config.batch_size))
      batch.push_back(&ds.videos[pool[k]]);
    StepRecord rec = train_step(result.state, batch, ds.num_classes, config, loss);
    if (on_step) on_step(rec);
    result.log.push_back(rec);
  }
}

}  // namespace

std::string to_string(SupervisionMode m) {
  switch (m) {
    case SupervisionMode::weak: return "weak";
    case SupervisionMode::semi: return "semi";
    case SupervisionMode::full: return "full";
  }
  return "unknown";
}

std::string to_string(TrainStrategy s) {
  switch (s) {
    case TrainStrategy::joint: return "joint";
    case TrainStrategy::fully_annotated_only: return "fully_annotated_only";
    case TrainStrategy::pretrain_finetune: return "pretrain_finetune";
  }
  return "unknown";
}

SupervisionMode parse_supervision_mode(const std::string& name) {
  if (name == "weak") return SupervisionMode::weak;
  if (name == "semi") return SupervisionMode::semi;
  if (name == "full") return SupervisionMode::full;
  throw ValidationError("unknown supervision mode '" + name + "'");
}

TrainStrategy parse_train_strategy(const std::string& name) {
  if (name == "joint") return TrainStrategy::joint;
  if (name == "fully_annotated_only") return TrainStrategy::fully_annotated_only;
  if (name == "pretrain_finetune") return TrainStrategy::pretrain_finetune;
  throw ValidationError("unknown training strategy '" + name + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("train config: ") + what);
  };
  require(adam.learning_rate > 0.0 && std::isfinite(adam.learning_rate), "learning_rate must be > 0");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "beta1 must be in [0, 1)");
  require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "beta2 must be in [0, 1)");
  require(adam.epsilon > 0.0, "adam epsilon must be > 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(max_clip_len >= 1, "max_clip_len must be >= 1");
  require(hidden_dim >= 1, "hidden_dim must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(semi_k >= 0, "semi_k must be >= 0");
  loss.validate();
}

TrainConfig TrainConfig::from_json(const json& j, TrainConfig base) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  TrainConfig c = std::move(base);
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "learning_rate") c.adam.learning_rate = value.get<double>();
      else if (key == "beta1") c.adam.beta1 = value.get<double>();
      else if (key == "beta2") c.adam.beta2 = value.get<double>();
      else if (key == "adam_epsilon") c.adam.epsilon = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "max_clip_len") c.max_clip_len = value.get<std::size_t>();
      else if (key == "iterations") c.iterations = value.get<std::size_t>();
      else if (key == "hidden_dim") c.hidden_dim = value.get<std::size_t>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "lambda") c.loss.lambda = value.get<double>();
      else if (key == "eta") c.loss.eta = value.get<double>();
      else if (key == "background_weight") {
        if (value.is_null()) c.loss.background_weight.reset();
        else c.loss.background_weight = value.get<double>();
      }
      else if (key == "reg_form") c.loss.reg_form = parse_reg_form(value.get<std::string>());
      else if (key == "aggregator") c.loss.aggregator = parse_aggregator(value.get<std::string>());
      else if (key == "gating") c.gating = parse_gating_kind(value.get<std::string>());
      else if (key == "supervision") c.supervision = parse_supervision_mode(value.get<std::string>());
      else if (key == "semi_k") c.semi_k = value.get<int>();
      else if (key == "strategy") c.strategy = parse_train_strategy(value.get<std::string>());
      else if (key == "localization") c.localization = parse_train_localization(value.get<std::string>());
      else throw ValidationError("train config: unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw ValidationError("train config: bad value for '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

json TrainConfig::to_json() const {
  json j = {{"learning_rate", adam.learning_rate},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"adam_epsilon", adam.epsilon},
            {"batch_size", batch_size},
            {"max_clip_len", max_clip_len},
            {"iterations", iterations},
            {"hidden_dim", hidden_dim},
            {"dropout", dropout},
            {"seed", seed},
            {"lambda", loss.lambda},
            {"eta", loss.eta},
            {"reg_form", to_string(loss.reg_form)},
            {"aggregator", to_string(loss.aggregator)},
            {"gating", to_string(gating)},
            {"supervision", to_string(supervision)},
            {"semi_k", semi_k},
            {"strategy", to_string(strategy)},
            {"localization", to_string(localization)}};
  j["background_weight"] = loss.background_weight ? json(*loss.background_weight) : json(nullptr);
  return j;
}

TrainState init_train_state(const TrainConfig& config, std::size_t input_dim, std::size_t num_classes) {
  TrainState s;
  s.rng = Rng::derive(config.seed, 0);
  Rng init_rng = Rng::derive(config.seed, 1);
  s.params = init_params(init_rng, input_dim, config.hidden_dim, num_classes);
  s.first_moment = zeros_like(s.params);
  s.second_moment = zeros_like(s.params);
  return s;
}

std::string to_json_line(const StepRecord& r) {
  std::ostringstream out;
  out << "{\"step\":" << r.step << ",\"L_clas\":" << io::format_double(r.loss.classification)
      << ",\"L_reg\":" << io::format_double(r.loss.regularization)
      << ",\"L_loc\":" << io::format_double(r.loss.localization)
      << ",\"L\":" << io::format_double(r.loss.total) << "}";
  return out.str();
}

std::size_t select_semi_subset(Dataset& dataset, int k, std::vector<std::string>* warnings) {
  if (k < 0) throw ValidationError("semi-supervision k must be >= 0");
  for (auto& v : dataset.videos) v.fully_annotated = false;
  for (int c = 0; c < dataset.num_classes; ++c) {
    int taken = 0;
    for (auto& v : dataset.videos) {
      if (taken >= k) break;
      if (!v.has_label(c) || !v.segments) continue;
      v.fully_annotated = true;
      ++taken;
    }
    if (taken < k && warnings)
      warnings->push_back("class " + std::to_string(c) + " has only " + std::to_string(taken) +
                          " annotated videos (wanted " + std::to_string(k) + ")");
  }
  return static_cast<std::size_t>(std::count_if(dataset.videos.begin(), dataset.videos.end(),
                                                [](const VideoSample& v) { return v.fully_annotated; }));
}

void apply_supervision(Dataset& dataset, SupervisionMode mode, int k, std::vector<std::string>* warnings) {
  switch (mode) {
    case SupervisionMode::weak: select_semi_subset(dataset, 0, warnings); break;
    case SupervisionMode::semi: select_semi_subset(dataset, k, warnings); break;
    case SupervisionMode::full:
      for (auto& v : dataset.videos) v.fully_annotated = v.segments.has_value();
      break;
  }
}

void adam_update(TrainState& state, const GradientBundle& grad, const AdamConfig& adam) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(adam.beta1, t);
  const double bias2 = 1.0 - std::pow(adam.beta2, t);

  std::vector<std::span<double>> params, m, v;
  std::vector<std::span<const double>> g;
  state.params.for_each_tensor([&](std::span<double> x) { params.push_back(x); });
  state.first_moment.for_each_tensor([&](std::span<double> x) { m.push_back(x); });
  state.second_moment.for_each_tensor([&](std::span<double> x) { v.push_back(x); });
  grad.for_each_tensor([&](std::span<const double> x) { g.push_back(x); });
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (g[k].size() != params[k].size()) throw std::invalid_argument("adam_update: shape mismatch");
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      m[k][i] = adam.beta1 * m[k][i] + (1.0 - adam.beta1) * g[k][i];
      v[k][i] = adam.beta2 * v[k][i] + (1.0 - adam.beta2) * g[k][i] * g[k][i];
      const double m_hat = m[k][i] / bias1;
      const double v_hat = v[k][i] / bias2;
      params[k][i] -= adam.learning_rate * m_hat / (std::sqrt(v_hat) + adam.epsilon);
    }
  }
}

std::vector<std::size_t> sample_batch(Rng& rng, std::size_t n, std::size_t batch_size) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min(n, batch_size);
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

StepRecord train_step(TrainState& state, std::span<const VideoSample* const> batch, int num_classes,
                      const TrainConfig& config, const LossConfig& loss) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const auto C = static_cast<std::size_t>(num_classes);
  std::vector<VideoSample> clips;
  clips.reserve(batch.size());
  for (const VideoSample* v : batch) clips.push_back(crop_clip(*v, config.max_clip_len, state.rng));

  std::vector<BatchItem> items(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& clip = clips[i];
    items[i].features = &clip.features;
    items[i].labels = LabelVector::from_labels(clip.labels, C);
    items[i].id = clip.id;
    if (clip.fully_annotated && clip.segments)
      items[i].annotation = rasterize(*clip.segments, clip.num_snippets(), num_classes, clip.snippet_duration);
  }

  ObjectiveOptions opts{loss, config.gating, config.localization};
  TotalLoss result = total_loss(items, state.params, opts, config.dropout, state.rng);
  bool finite = std::isfinite(result.parts.total);
  result.grad.for_each_tensor([&](std::span<const double> t) { finite = finite && all_finite(t); });
  if (!finite) {
    std::string ids;
    for (const auto& it : items) ids += (ids.empty() ? "" : ", ") + it.id;
    throw NumericalError("non-finite loss or gradient at step " + std::to_string(state.step + 1) +
                         " (L_clas=" + io::format_double(result.parts.classification) +
                         ", L_reg=" + io::format_double(result.parts.regularization) +
                         ", L_loc=" + io::format_double(result.parts.localization) + "); batch: " + ids);
  }
  adam_update(state, result.grad, config.adam);
  return {state.step, result.parts};
}

TrainResult run_training(const Dataset& dataset, const TrainConfig& config,
                         const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  if (dataset.videos.empty()) throw ValidationError("training dataset is empty");
  Dataset ds = dataset;
  TrainResult result;
  apply_supervision(ds, config.supervision, config.semi_k, &result.warnings);
  result.state = init_train_state(config, ds.feature_dim(), static_cast<std::size_t>(ds.num_classes));

  std::vector<std::size_t> all(ds.videos.size());
  std::iota(all.begin(), all.end(), 0);
  const auto flagged = flagged_indices(ds);

  switch (config.strategy) {
    case TrainStrategy::joint:
      run_phase(result, ds, all, config.iterations, config, config.loss, on_step);
      break;
    case TrainStrategy::fully_annotated_only:
      if (flagged.empty())
        throw ValidationError("strategy fully_annotated_only needs at least one fully annotated video");
      run_phase(result, ds, flagged, config.iterations, config, config.loss, on_step);
      break;
    case TrainStrategy::pretrain_finetune: {
      if (flagged.empty())
        throw ValidationError("strategy pretrain_finetune needs at least one fully annotated video");
      LossConfig pretrain = config.loss;
      pretrain.eta = 0.0;
      const std::size_t first = config.iterations / 2;
      run_phase(result, ds, all, first, config, pretrain, on_step);
      run_phase(result, ds, flagged, config.iterations - first, config, config.loss, on_step);
      break;
    }
  }
  return result;
}

}  // namespace ttcloc
