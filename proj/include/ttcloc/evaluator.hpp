#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttcloc/data_model.hpp"
#include "ttcloc/localizer.hpp"

namespace ttcloc {

/// One annotated ground-truth segment of one video.
struct GroundTruth {
  std::string video_id;
  int class_id = 0;
  double start = 0.0;
  double end = 0.0;
};

/// Counts and AP for one (class, IoU threshold) cell.
struct ClassResult {
  std::optional<double> ap;  // empty when the class has no ground truth
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t num_gt = 0;
};

struct EvalReport {
  std::vector<double> iou_thresholds;
  int num_classes = 0;
  /// per_class[threshold][class]
  std::vector<std::vector<ClassResult>> per_class;
  /// mAP over classes with at least one ground-truth segment, per threshold.
  std::vector<double> map;
  /// Mean of `map` across thresholds.
  double average_map = 0.0;

  /// mAP at the threshold closest to `iou` (within 1e-9).
  double map_at(double iou) const;

  nlohmann::json to_json(const std::vector<std::string>& class_names = {}) const;
  /// Rows mAP and per-class AP (in %), columns one per IoU threshold plus Average.
  std::string to_csv(const std::vector<std::string>& class_names = {}) const;
};

/// |a ∩ b| / |a ∪ b| for half-open intervals; 0 when disjoint.
double interval_iou(double a_start, double a_end, double b_start, double b_end);

/// Ranking order: score descending, then earlier start, then lower video id.
bool ranks_before(const Detection& a, const Detection& b);

/// Greedy matching of one class's detections. Returns TP flags in ranking
/// order (`order` receives the ranked detection indices when non-null). Each
/// ground truth is claimed at most once, by its highest-IoU unclaimed candidate.
std::vector<bool> match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                   double iou_threshold, std::vector<std::size_t>* order = nullptr);

/// Non-interpolated AP: mean of the precision at each true positive over num_gt.
/// Empty when num_gt == 0.
std::optional<double> average_precision(const std::vector<bool>& flags, std::size_t num_gt);

/// Ground-truth segments of every video that carries annotations.
std::vector<GroundTruth> ground_truth_from(const Dataset& dataset);

/// Full report. Detections must reference videos listed in `video_ids` and
/// classes in [0, num_classes); otherwise ValidationError.
EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts, int num_classes,
                    std::span<const std::string> video_ids, std::span<const double> iou_thresholds);

EvalReport evaluate(std::span<const Detection> dets, const Dataset& ground_truth,
                    std::span<const double> iou_thresholds);

/// Parses "lo:hi:step" (inclusive) or a comma list like "0.3,0.5".
std::vector<double> parse_iou_thresholds(const std::string& text);

}  // namespace ttcloc
