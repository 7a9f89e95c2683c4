#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttcloc/localizer.hpp"
#include "ttcloc/synthgen.hpp"
#include "ttcloc/trainer.hpp"

namespace ttcloc {

/// One row of an ablation table: a training configuration and a test-time mode.
struct AblationCell {
  std::string group;
  std::string name;
  std::string train_strategy;  // none, manual or predicted
  TrainConfig train;
  InferenceMode test_mode = InferenceMode::predicted;
};

/// Train/test threshold grid, gating functions, L_reg forms, semi-supervised
/// strategies and aggregators, all derived from `base`. With a non-empty
/// `lambdas` list a lambda sweep group is appended.
std::vector<AblationCell> ablation_grid(const TrainConfig& base, const std::vector<double>& lambdas = {});

struct AblationResult {
  const AblationCell* cell = nullptr;
  std::uint64_t seed = 0;
  std::vector<double> map;  // per IoU threshold
  double average_map = 0.0;
  double runtime_s = 0.0;   // training (unless cached) plus inference and evaluation
};

using AblationProgress = std::function<void(const AblationResult&)>;

/// Trains each distinct (train config, seed) once and evaluates every cell on
/// the test split generated from `synth` with that seed.
std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells, const SynthSpec& synth,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<double>& iou_thresholds,
                                         const AblationProgress& progress = {});

/// Deterministic table: no timing columns.
std::string ablation_csv(const std::vector<AblationResult>& results, const std::vector<double>& iou_thresholds);

/// Per-row runtimes plus the configuration of every cell.
nlohmann::json ablation_json(const std::vector<AblationResult>& results, const std::vector<double>& iou_thresholds);

/// Mean average mAP of one cell (by group and name) across its seeds.
double mean_average_map(const std::vector<AblationResult>& results, const std::string& group,
                        const std::string& name);

}  // namespace ttcloc
