#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttcloc/data_model.hpp"
#include "ttcloc/network.hpp"
#include "ttcloc/objectives.hpp"

namespace ttcloc {

enum class SupervisionMode { weak, semi, full };
enum class TrainStrategy { joint, fully_annotated_only, pretrain_finetune };

std::string to_string(SupervisionMode m);
std::string to_string(TrainStrategy s);
SupervisionMode parse_supervision_mode(const std::string& name);
TrainStrategy parse_train_strategy(const std::string& name);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 10;
  std::size_t max_clip_len = 320;
  std::size_t iterations = 2000;
  std::size_t hidden_dim = kDefaultHiddenDim;
  double dropout = kDefaultDropout;
  std::uint64_t seed = 0;
  LossConfig loss;
  GatingKind gating = GatingKind::sigmoid;
  SupervisionMode supervision = SupervisionMode::weak;
  int semi_k = 0;  // videos per class with boundary annotations in semi mode
  TrainStrategy strategy = TrainStrategy::joint;
  TrainLocalization localization = TrainLocalization::predicted;

  void validate() const;
  /// Overrides fields present in `j` on top of `base`; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct TrainState {
  NetworkParams params;
  GradientBundle first_moment;
  GradientBundle second_moment;
  std::uint64_t step = 0;
  Rng rng;
};

TrainState init_train_state(const TrainConfig& config, std::size_t input_dim, std::size_t num_classes);

struct StepRecord {
  std::uint64_t step = 0;
  LossBreakdown loss;
};

/// One NDJSON line {step, L_clas, L_reg, L_loc, L}.
std::string to_json_line(const StepRecord& record);

/// Flags, for every class, the first k videos (manifest order) carrying that
/// label; k = 0 clears all flags. Returns the number of flagged videos.
/// Classes with fewer than k annotated candidates add a warning.
std::size_t select_semi_subset(Dataset& dataset, int k, std::vector<std::string>* warnings = nullptr);

/// Sets fully_annotated flags according to the supervision mode.
void apply_supervision(Dataset& dataset, SupervisionMode mode, int k,
                       std::vector<std::string>* warnings = nullptr);

/// One bias-corrected Adam step; increments state.step.
void adam_update(TrainState& state, const GradientBundle& grad, const AdamConfig& adam);

/// Crops each video, evaluates the objective with `loss` and applies one Adam
/// update. Throws NumericalError (listing the batch ids) on a non-finite loss.
StepRecord train_step(TrainState& state, std::span<const VideoSample* const> batch, int num_classes,
                      const TrainConfig& config, const LossConfig& loss);

/// B distinct indices drawn uniformly from [0, n) (all of them when n <= B).
std::vector<std::size_t> sample_batch(Rng& rng, std::size_t n, std::size_t batch_size);

struct TrainResult {
  TrainState state;
  std::vector<StepRecord> log;
  std::vector<std::string> warnings;
};

/// Full training run. The dataset's fully_annotated flags are recomputed from
/// the supervision mode before training.
TrainResult run_training(const Dataset& dataset, const TrainConfig& config,
                         const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace ttcloc
