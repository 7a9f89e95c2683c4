#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ttcloc/matrix.hpp"
#include "ttcloc/random.hpp"

namespace ttcloc {

/// Seconds per snippet when a manifest record does not say otherwise
/// (16 frames at 25 fps).
inline constexpr double kDefaultSnippetDuration = 0.64;

struct GroundTruthSegment {
  int class_id = 0;
  double start = 0.0;  // seconds
  double end = 0.0;    // seconds, exclusive

  friend bool operator==(const GroundTruthSegment&, const GroundTruthSegment&) = default;
};

struct VideoSample {
  std::string id;
  Matrix features;  // T x D
  std::vector<int> labels;  // sorted, unique
  std::optional<std::vector<GroundTruthSegment>> segments;
  double snippet_duration = kDefaultSnippetDuration;
  bool fully_annotated = false;

  std::size_t num_snippets() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }
  bool has_label(int c) const;

  friend bool operator==(const VideoSample&, const VideoSample&) = default;
};

/// T x C binary matrix; entry (t, c) is 1 when snippet t lies inside a segment of class c.
struct RasterizedAnnotation {
  Matrix a;
};

struct Dataset {
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<VideoSample> videos;

  std::size_t feature_dim() const { return videos.empty() ? 0 : videos.front().feature_dim(); }
};

/// Checks every VideoSample/segment invariant against a class count; throws
/// ValidationError naming the offending video.
void validate_sample(const VideoSample& sample, int num_classes);
void validate_dataset(const Dataset& dataset);

/// Reads `manifest.json` and the `<id>.f32` files next to it.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `manifest.json` plus one `<id>.f32` per video into `dir`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Midpoint rule: snippet t is inside a segment when (t + 0.5) * tau falls in [start, end).
RasterizedAnnotation rasterize(const std::vector<GroundTruthSegment>& segments, std::size_t T,
                               int num_classes, double snippet_duration);

/// Random window of at most `max_len` snippets. Segments are clipped to the
/// window and shifted to clip-local time; labels are kept.
VideoSample crop_clip(const VideoSample& sample, std::size_t max_len, Rng& rng);

}  // namespace ttcloc
