#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ttcloc/data_model.hpp"
#include "ttcloc/network.hpp"
#include "ttcloc/objectives.hpp"

namespace ttcloc {

struct Detection {
  std::string video_id;
  int class_id = 0;
  double start = 0.0;  // seconds
  double end = 0.0;    // seconds
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

enum class InferenceMode { predicted, manual };

std::string to_string(InferenceMode m);
InferenceMode parse_inference_mode(const std::string& name);

struct InferenceOptions {
  InferenceMode mode = InferenceMode::predicted;
  /// Pooling used for the class probabilities; should match training.
  Aggregator aggregator = Aggregator::gated;
};

/// Maximal runs of values strictly above `binarize_at`, as inclusive snippet ranges.
std::vector<std::pair<std::size_t, std::size_t>> extract_segments(std::span<const double> values,
                                                                  double binarize_at = 0.5);

/// Classes whose probability exceeds the mean probability of the C action classes.
std::vector<int> select_classes(const VideoProbabilities& probs);

/// Detections for one full-length video, sorted by class then start time.
std::vector<Detection> infer_video(const NetworkParams& params, const VideoSample& sample,
                                   const InferenceOptions& options = {});

std::vector<Detection> infer_dataset(const NetworkParams& params, const Dataset& dataset,
                                     const InferenceOptions& options = {});

/// One JSON object per line: {video_id, class_id, class_name, start_s, end_s, score}.
std::string detections_to_jsonl(std::span<const Detection> dets, const std::vector<std::string>& class_names);
std::vector<Detection> detections_from_jsonl(const std::string& text);

}  // namespace ttcloc
