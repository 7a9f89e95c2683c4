#include "ttcloc/data_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <set>

#include <json.hpp>

#include "ttcloc/errors.hpp"
#include "ttcloc/io.hpp"

namespace ttcloc {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& video_id, const std::string& what) {
  throw ValidationError("video '" + video_id + "': " + what);
}

float decode_f32(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

void encode_f32(float v, char* p) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  std::memcpy(p, &bits, 4);
}

std::vector<int> normalized_labels(std::vector<int> labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

template <class T>
T required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ValidationError(where + ": missing key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

bool VideoSample::has_label(int c) const {
  return std::binary_search(labels.begin(), labels.end(), c);
}

void validate_sample(const VideoSample& sample, int num_classes) {
  const auto& id = sample.id;
  if (id.empty()) throw ValidationError("video with empty id");
  if (sample.features.rows() < 1 || sample.features.cols() < 1)
    fail(id, "feature matrix must have T >= 1 and D >= 1");
  if (!all_finite(sample.features.values())) fail(id, "non-finite feature value");
  if (!(sample.snippet_duration > 0.0) || !std::isfinite(sample.snippet_duration))
    fail(id, "snippet_duration must be positive");
  if (sample.labels.empty()) fail(id, "label set is empty");
  if (!std::is_sorted(sample.labels.begin(), sample.labels.end()) ||
      std::adjacent_find(sample.labels.begin(), sample.labels.end()) != sample.labels.end())
    fail(id, "labels must be sorted and unique");
  for (int c : sample.labels)
    if (c < 0 || c >= num_classes) fail(id, "label " + std::to_string(c) + " out of range");
  if (sample.fully_annotated && !sample.segments)
    fail(id, "fully_annotated requires segment annotations");
  if (sample.segments) {
    for (const auto& seg : *sample.segments) {
      if (!std::isfinite(seg.start) || !std::isfinite(seg.end) || seg.start < 0.0 ||
          !(seg.start < seg.end))
        fail(id, "segment must satisfy 0 <= start < end");
      if (!sample.has_label(seg.class_id))
        fail(id, "segment class " + std::to_string(seg.class_id) + " is not in the label set");
    }
  }
}

void validate_dataset(const Dataset& dataset) {
  if (dataset.num_classes < 1) throw ValidationError("num_classes must be >= 1");
  if (!dataset.class_names.empty() &&
      dataset.class_names.size() != static_cast<std::size_t>(dataset.num_classes))
    throw ValidationError("class_names length does not match num_classes");
  std::set<std::string> ids;
  for (const auto& v : dataset.videos) {
    validate_sample(v, dataset.num_classes);
    if (!ids.insert(v.id).second) fail(v.id, "duplicate id");
    if (v.feature_dim() != dataset.feature_dim()) fail(v.id, "feature dimension differs");
  }
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  json manifest;
  try {
    manifest = json::parse(io::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  const std::string where = manifest_path.string();
  Dataset ds;
  ds.num_classes = required<int>(manifest, "num_classes", where);
  if (manifest.contains("class_names"))
    ds.class_names = required<std::vector<std::string>>(manifest, "class_names", where);
  const auto dir = manifest_path.parent_path();

  for (const auto& rec : required<json>(manifest, "videos", where)) {
    VideoSample v;
    v.id = required<std::string>(rec, "id", where);
    const std::string rwhere = where + " video '" + v.id + "'";
    const auto T = required<std::size_t>(rec, "T", rwhere);
    const auto D = required<std::size_t>(rec, "D", rwhere);
    v.labels = normalized_labels(required<std::vector<int>>(rec, "labels", rwhere));
    v.snippet_duration = rec.value("snippet_duration", kDefaultSnippetDuration);
    v.fully_annotated = rec.value("fully_annotated", false);
    if (rec.contains("segments") && !rec.at("segments").is_null()) {
      std::vector<GroundTruthSegment> segs;
      for (const auto& s : rec.at("segments")) {
        segs.push_back({required<int>(s, "class_id", rwhere), required<double>(s, "start", rwhere),
                        required<double>(s, "end", rwhere)});
      }
      v.segments = std::move(segs);
    }

    const auto path = dir / (v.id + ".f32");
    if (!std::filesystem::exists(path)) fail(v.id, "missing feature file " + path.string());
    const std::string bytes = io::read_file(path);
    if (bytes.size() != T * D * 4)
      fail(v.id, "feature file has " + std::to_string(bytes.size()) + " bytes, expected " +
                     std::to_string(T * D * 4) + " (T*D*4)");
    v.features = Matrix(T, D);
    for (std::size_t i = 0; i < T * D; ++i) v.features.data()[i] = decode_f32(bytes.data() + 4 * i);
    ds.videos.push_back(std::move(v));
  }
  validate_dataset(ds);
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  validate_dataset(dataset);
  std::filesystem::create_directories(dir);
  json videos = json::array();
  for (const auto& v : dataset.videos) {
    json rec = {{"id", v.id},
                {"T", v.num_snippets()},
                {"D", v.feature_dim()},
                {"labels", v.labels},
                {"snippet_duration", v.snippet_duration},
                {"fully_annotated", v.fully_annotated}};
    if (v.segments) {
      json segs = json::array();
      for (const auto& s : *v.segments)
        segs.push_back({{"class_id", s.class_id}, {"start", s.start}, {"end", s.end}});
      rec["segments"] = std::move(segs);
    }
    videos.push_back(std::move(rec));

    std::string bytes(v.features.size() * 4, '\0');
    for (std::size_t i = 0; i < v.features.size(); ++i)
      encode_f32(static_cast<float>(v.features.data()[i]), bytes.data() + 4 * i);
    io::write_file_atomic(dir / (v.id + ".f32"), bytes);
  }
  json manifest = {{"format_version", 1},
                   {"num_classes", dataset.num_classes},
                   {"class_names", dataset.class_names},
                   {"videos", std::move(videos)}};
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

RasterizedAnnotation rasterize(const std::vector<GroundTruthSegment>& segments, std::size_t T,
                               int num_classes, double snippet_duration) {
  RasterizedAnnotation out{Matrix(T, static_cast<std::size_t>(num_classes))};
  for (const auto& seg : segments) {
    if (seg.class_id < 0 || seg.class_id >= num_classes) continue;
    for (std::size_t t = 0; t < T; ++t) {
      const double mid = (static_cast<double>(t) + 0.5) * snippet_duration;
      if (mid >= seg.start && mid < seg.end) out.a(t, static_cast<std::size_t>(seg.class_id)) = 1.0;
    }
  }
  return out;
}

VideoSample crop_clip(const VideoSample& sample, std::size_t max_len, Rng& rng) {
  const std::size_t T = sample.num_snippets();
  if (T <= max_len) return sample;
  const auto offset =
      static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T - max_len)));
  VideoSample clip;
  clip.id = sample.id;
  clip.labels = sample.labels;
  clip.snippet_duration = sample.snippet_duration;
  clip.fully_annotated = sample.fully_annotated;
  clip.features = Matrix(max_len, sample.feature_dim());
  for (std::size_t t = 0; t < max_len; ++t) {
    auto src = sample.features.row(offset + t);
    std::copy(src.begin(), src.end(), clip.features.row(t).begin());
  }
  if (sample.segments) {
    const double tau = sample.snippet_duration;
    const double lo = static_cast<double>(offset) * tau;
    const double hi = static_cast<double>(offset + max_len) * tau;
    std::vector<GroundTruthSegment> kept;
    for (const auto& seg : *sample.segments) {
      const double s = std::max(seg.start, lo);
      const double e = std::min(seg.end, hi);
      if (!(s < e)) continue;
      const double local_start = s - lo;
      const double local_end = std::min(e - lo, static_cast<double>(max_len) * tau);
      if (local_start < local_end) kept.push_back({seg.class_id, local_start, local_end});
    }
    clip.segments = std::move(kept);
  }
  return clip;
}

}  // namespace ttcloc
