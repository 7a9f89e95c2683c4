#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "ttcloc/data_model.hpp"

namespace ttcloc {

/// Parameters of a synthetic untrimmed-video dataset with planted action segments.
struct SynthSpec {
  int num_classes = 5;
  int feature_dim = 16;
  int videos_per_class = 20;
  int test_videos_per_class = 10;
  int min_snippets = 50;  // 3 segments of 16 plus 2 gaps always fit
  int max_snippets = 96;
  int min_segments = 1;
  int max_segments = 3;
  int min_segment_len = 6;   // snippets
  int max_segment_len = 16;  // snippets
  double noise = 1.0;        // sigma
  double separation = 8.0;   // minimum pairwise prototype distance
  double scale_lo = 1.0;     // per-video feature scale range
  double scale_hi = 1.0;
  /// Probability that a segment after the first takes a different class than the video's own.
  double mixed_segment_prob = 0.0;
  double fully_annotated_fraction = 0.0;
  double snippet_duration = kDefaultSnippetDuration;
  std::uint64_t seed = 0;

  /// Throws ValidationError when ranges are empty or out of order.
  void validate() const;

  /// `easy`, `medium` or `hard`.
  static SynthSpec preset(const std::string& name);
  /// Reads a JSON object; an optional "preset" key seeds the defaults and the
  /// remaining keys override it. Unknown keys are rejected.
  static SynthSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

enum class Split { train, test };

/// Class prototypes (rows 0..C-1) and the background prototype (row C).
Matrix draw_prototypes(const SynthSpec& spec);

/// Deterministic in (spec, split). Training videos of class c are listed
/// contiguously; the first ceil(fraction * n) of each class are fully annotated.
/// Test videos are never flagged.
Dataset generate(const SynthSpec& spec, Split split = Split::train);

}  // namespace ttcloc
