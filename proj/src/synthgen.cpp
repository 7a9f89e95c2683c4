#include "ttcloc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>

#include "ttcloc/errors.hpp"

namespace ttcloc {
namespace {

using nlohmann::json;

constexpr std::uint64_t kPrototypeStream = 0xffff'ffffULL;
constexpr std::uint64_t kTestStreamBase = 1ULL << 40;
constexpr int kMaxPrototypeAttempts = 100000;

double distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

struct Placement {
  std::size_t start;
  std::size_t length;
  int class_id;
};

VideoSample make_video(const SynthSpec& spec, const Matrix& prototypes, int video_class,
                       std::size_t index_in_class, Split split, std::uint64_t stream) {
  Rng rng = Rng::derive(spec.seed, stream);
  VideoSample v;
  v.id = std::string(split == Split::train ? "train" : "test") + "_c" +
         std::to_string(video_class) + "_v" + std::to_string(index_in_class);
  v.snippet_duration = spec.snippet_duration;

  const auto T = static_cast<std::size_t>(rng.uniform_int(spec.min_snippets, spec.max_snippets));
  const auto n = static_cast<std::size_t>(rng.uniform_int(spec.min_segments, spec.max_segments));
  std::vector<std::size_t> lengths(n);
  std::size_t occupied = 0;
  for (auto& len : lengths) {
    len = static_cast<std::size_t>(rng.uniform_int(spec.min_segment_len, spec.max_segment_len));
    occupied += len;
  }
  // at least one background snippet between consecutive segments
  if (occupied + (n - 1) > T)
    throw ValidationError("synth: video '" + v.id + "' cannot fit " + std::to_string(n) +
                          " segments totalling " + std::to_string(occupied) + " snippets in T=" +
                          std::to_string(T));
  const std::size_t slack = T - occupied - (n - 1);
  std::vector<std::size_t> cuts(n);
  for (auto& c : cuts) c = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(slack)));
  std::sort(cuts.begin(), cuts.end());

  std::vector<Placement> placed;
  std::size_t cursor = 0;
  std::size_t prev_cut = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cursor += cuts[i] - prev_cut;
    prev_cut = cuts[i];
    int cls = video_class;
    if (i > 0 && spec.num_classes > 1 && rng.bernoulli(spec.mixed_segment_prob)) {
      cls = static_cast<int>(rng.uniform_int(0, spec.num_classes - 2));
      if (cls >= video_class) ++cls;
    }
    placed.push_back({cursor, lengths[i], cls});
    cursor += lengths[i] + 1;
  }

  const double alpha = rng.uniform(spec.scale_lo, spec.scale_hi);
  const auto D = static_cast<std::size_t>(spec.feature_dim);
  const auto background = static_cast<std::size_t>(spec.num_classes);
  std::vector<std::size_t> source(T, background);
  for (const auto& p : placed)
    for (std::size_t t = p.start; t < p.start + p.length; ++t)
      source[t] = static_cast<std::size_t>(p.class_id);

  v.features = Matrix(T, D);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      const double x = alpha * (prototypes(source[t], d) + spec.noise * rng.normal());
      v.features(t, d) = static_cast<double>(static_cast<float>(x));
    }
  }

  std::set<int> labels;
  std::vector<GroundTruthSegment> segments;
  for (const auto& p : placed) {
    labels.insert(p.class_id);
    segments.push_back({p.class_id, static_cast<double>(p.start) * spec.snippet_duration,
                        static_cast<double>(p.start + p.length) * spec.snippet_duration});
  }
  v.labels.assign(labels.begin(), labels.end());
  v.segments = std::move(segments);
  return v;
}

}  // namespace

void SynthSpec::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("synth spec: ") + what);
  };
  require(num_classes >= 2, "num_classes must be >= 2");
  require(feature_dim >= 2, "feature_dim must be >= 2");
  require(videos_per_class >= 1, "videos_per_class must be >= 1");
  require(test_videos_per_class >= 0, "test_videos_per_class must be >= 0");
  require(min_snippets >= 1 && min_snippets <= max_snippets, "snippet range must be ordered");
  require(min_segments >= 1 && min_segments <= max_segments, "segment count range must be ordered");
  require(min_segment_len >= 1 && min_segment_len <= max_segment_len,
          "segment length range must be ordered");
  require(noise >= 0.0 && std::isfinite(noise), "noise must be >= 0");
  require(separation > 0.0 && std::isfinite(separation), "separation must be > 0");
  require(scale_lo > 0.0 && scale_lo <= scale_hi && std::isfinite(scale_hi),
          "scale range must satisfy 0 < lo <= hi");
  require(mixed_segment_prob >= 0.0 && mixed_segment_prob <= 1.0,
          "mixed_segment_prob must be in [0, 1]");
  require(fully_annotated_fraction >= 0.0 && fully_annotated_fraction <= 1.0,
          "fully_annotated_fraction must be in [0, 1]");
  require(snippet_duration > 0.0, "snippet_duration must be > 0");
}

SynthSpec SynthSpec::preset(const std::string& name) {
  SynthSpec s;
  if (name == "easy") {
    s.separation = 8.0;
  } else if (name == "medium") {
    s.separation = 4.0;
    s.scale_lo = 0.5;
    s.scale_hi = 2.0;
  } else if (name == "hard") {
    s.separation = 2.0;
    s.scale_lo = 0.25;
    s.scale_hi = 4.0;
  } else {
    throw ValidationError("unknown synth preset '" + name + "' (expected easy, medium or hard)");
  }
  return s;
}

SynthSpec SynthSpec::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("synth spec must be a JSON object");
  SynthSpec s = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : SynthSpec{};
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "preset") continue;
      else if (key == "num_classes") s.num_classes = value.get<int>();
      else if (key == "feature_dim") s.feature_dim = value.get<int>();
      else if (key == "videos_per_class") s.videos_per_class = value.get<int>();
      else if (key == "test_videos_per_class") s.test_videos_per_class = value.get<int>();
      else if (key == "min_snippets") s.min_snippets = value.get<int>();
      else if (key == "max_snippets") s.max_snippets = value.get<int>();
      else if (key == "min_segments") s.min_segments = value.get<int>();
      else if (key == "max_segments") s.max_segments = value.get<int>();
      else if (key == "min_segment_len") s.min_segment_len = value.get<int>();
      else if (key == "max_segment_len") s.max_segment_len = value.get<int>();
      else if (key == "noise") s.noise = value.get<double>();
      else if (key == "separation") s.separation = value.get<double>();
      else if (key == "scale_lo") s.scale_lo = value.get<double>();
      else if (key == "scale_hi") s.scale_hi = value.get<double>();
      else if (key == "mixed_segment_prob") s.mixed_segment_prob = value.get<double>();
      else if (key == "fully_annotated_fraction") s.fully_annotated_fraction = value.get<double>();
      else if (key == "snippet_duration") s.snippet_duration = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else throw ValidationError("synth spec: unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw ValidationError("synth spec: bad value for '" + key + "': " + e.what());
    }
  }
  s.validate();
  return s;
}

json SynthSpec::to_json() const {
  return {{"num_classes", num_classes},
          {"feature_dim", feature_dim},
          {"videos_per_class", videos_per_class},
          {"test_videos_per_class", test_videos_per_class},
          {"min_snippets", min_snippets},
          {"max_snippets", max_snippets},
          {"min_segments", min_segments},
          {"max_segments", max_segments},
          {"min_segment_len", min_segment_len},
          {"max_segment_len", max_segment_len},
          {"noise", noise},
          {"separation", separation},
          {"scale_lo", scale_lo},
          {"scale_hi", scale_hi},
          {"mixed_segment_prob", mixed_segment_prob},
          {"fully_annotated_fraction", fully_annotated_fraction},
          {"snippet_duration", snippet_duration},
          {"seed", seed}};
}

Matrix draw_prototypes(const SynthSpec& spec) {
  spec.validate();
  Rng rng = Rng::derive(spec.seed, kPrototypeStream);
  const auto count = static_cast<std::size_t>(spec.num_classes + 1);
  const auto D = static_cast<std::size_t>(spec.feature_dim);
  // typical pairwise distance of two draws is 1.5x the required separation
  const double coord_scale = 1.5 * spec.separation / std::sqrt(2.0 * static_cast<double>(D));
  Matrix protos(count, D);
  for (std::size_t k = 0; k < count; ++k) {
    int attempts = 0;
    for (;;) {
      if (++attempts > kMaxPrototypeAttempts)
        throw ValidationError("synth: could not draw separated prototypes");
      for (std::size_t d = 0; d < D; ++d) protos(k, d) = coord_scale * rng.normal();
      bool ok = true;
      for (std::size_t j = 0; j < k && ok; ++j) ok = distance(protos.row(k), protos.row(j)) >= spec.separation;
      if (ok) break;
    }
  }
  return protos;
}

Dataset generate(const SynthSpec& spec, Split split) {
  spec.validate();
  const Matrix prototypes = draw_prototypes(spec);
  Dataset ds;
  ds.num_classes = spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));

  const int per_class = split == Split::train ? spec.videos_per_class : spec.test_videos_per_class;
  const auto flagged = split == Split::train
                           ? static_cast<int>(std::ceil(spec.fully_annotated_fraction * per_class - 1e-9))
                           : 0;
  const int total = spec.num_classes * per_class;
  ds.videos.resize(static_cast<std::size_t>(total));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic)
  for (int idx = 0; idx < total; ++idx) {
    const int c = idx / per_class;
    const int i = idx % per_class;
    const std::uint64_t stream =
        (split == Split::train ? 0 : kTestStreamBase) + static_cast<std::uint64_t>(idx);
    try {
      VideoSample v = make_video(spec, prototypes, c, static_cast<std::size_t>(i), split, stream);
      v.fully_annotated = i < flagged;
      ds.videos[static_cast<std::size_t>(idx)] = std::move(v);
    } catch (...) {
      errors[static_cast<std::size_t>(idx)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return ds;
}

}  // namespace ttcloc
