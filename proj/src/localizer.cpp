#include "ttcloc/localizer.hpp"

#include <cmath>
#include <exception>
#include <sstream>

#include <json.hpp>

#include "ttcloc/errors.hpp"
#include "ttcloc/io.hpp"

namespace ttcloc {

std::string to_string(InferenceMode m) { return m == InferenceMode::predicted ? "predicted" : "manual"; }

InferenceMode parse_inference_mode(const std::string& name) {
  if (name == "predicted") return InferenceMode::predicted;
  if (name == "manual") return InferenceMode::manual;
  throw ValidationError("unknown inference mode '" + name + "' (expected predicted or manual)");
}

std::vector<std::pair<std::size_t, std::size_t>> extract_segments(std::span<const double> values,
                                                                  double binarize_at) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t t = 0;
  while (t < values.size()) {
    if (values[t] > binarize_at) {
      const std::size_t start = t;
      while (t + 1 < values.size() && values[t + 1] > binarize_at) ++t;
      runs.emplace_back(start, t);
    }
    ++t;
  }
  return runs;
}

std::vector<int> select_classes(const VideoProbabilities& probs) {
  const std::size_t C = probs.p.size() - 1;
  double mean = 0.0;
  for (std::size_t c = 0; c < C; ++c) mean += probs.p[c];
  mean /= static_cast<double>(C);
  std::vector<int> out;
  for (std::size_t c = 0; c < C; ++c)
    if (probs.p[c] > mean) out.push_back(static_cast<int>(c));
  return out;
}

std::vector<Detection> infer_video(const NetworkParams& params, const VideoSample& sample,
                                   const InferenceOptions& options) {
  const ScoreMap scores = forward(params, sample.features);
  const Gate gate = apply_gate(scores, GatingKind::sigmoid);
  const VideoProbabilities probs = pool_and_classify(scores, gate, options.aggregator);
  const double tau = sample.snippet_duration;
  const Vector thresholds =
      options.mode == InferenceMode::manual ? manual_thresholds(scores.s) : Vector{};

  std::vector<Detection> out;
  for (int c : select_classes(probs)) {
    const auto cc = static_cast<std::size_t>(c);
    std::vector<std::pair<std::size_t, std::size_t>> runs;
    if (options.mode == InferenceMode::predicted) {
      runs = extract_segments(gate.g.column(cc), 0.5);
    } else {
      // s > thr, expressed as a margin column binarized at zero
      Vector margin = scores.s.column(cc);
      for (double& v : margin) v -= thresholds[cc];
      runs = extract_segments(margin, 0.0);
    }
    for (const auto& [t0, t1] : runs) {
      double mean_gate = 0.0;
      for (std::size_t t = t0; t <= t1; ++t) mean_gate += gate.g(t, cc);
      mean_gate /= static_cast<double>(t1 - t0 + 1);
      out.push_back({sample.id, c, static_cast<double>(t0) * tau, static_cast<double>(t1 + 1) * tau,
                     probs.p[cc] * mean_gate});
    }
  }
  return out;
}

std::vector<Detection> infer_dataset(const NetworkParams& params, const Dataset& dataset,
                                     const InferenceOptions& options) {
  std::vector<std::vector<Detection>> per_video(dataset.videos.size());
  std::vector<std::exception_ptr> errors(dataset.videos.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(dataset.videos.size()); ++i) {
    try {
      per_video[i] = infer_video(params, dataset.videos[i], options);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<Detection> out;
  for (auto& v : per_video) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::string detections_to_jsonl(std::span<const Detection> dets, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  for (const auto& d : dets) {
    const std::string name = static_cast<std::size_t>(d.class_id) < class_names.size()
                                 ? class_names[static_cast<std::size_t>(d.class_id)]
                                 : "class_" + std::to_string(d.class_id);
    out << "{\"video_id\":" << nlohmann::json(d.video_id).dump() << ",\"class_id\":" << d.class_id
        << ",\"class_name\":" << nlohmann::json(name).dump() << ",\"start_s\":" << io::format_double(d.start)
        << ",\"end_s\":" << io::format_double(d.end) << ",\"score\":" << io::format_double(d.score) << "}\n";
  }
  return out.str();
}

std::vector<Detection> detections_from_jsonl(const std::string& text) {
  std::vector<Detection> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Detection d{j.at("video_id").get<std::string>(), j.at("class_id").get<int>(),
                  j.at("start_s").get<double>(), j.at("end_s").get<double>(), j.at("score").get<double>()};
      if (!(d.start < d.end) || !std::isfinite(d.score))
        throw ValidationError("detection needs start < end and a finite score");
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("detections line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("detections line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ttcloc
