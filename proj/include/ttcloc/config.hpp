#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttcloc/evaluator.hpp"
#include "ttcloc/localizer.hpp"
#include "ttcloc/synthgen.hpp"
#include "ttcloc/trainer.hpp"

namespace ttcloc {

/// Hidden width for the synthetic presets. With dropout 0.7 about a third of
/// the units survive each step; 32 units left whole classes unlearned.
inline constexpr std::size_t kSyntheticHiddenDim = 64;
inline constexpr double kSyntheticLearningRate = 3e-4;

/// Training defaults for the synthetic presets: the reference hyper-parameters
/// with a narrower network and a larger step size for short runs.
TrainConfig synthetic_train_defaults();

/// Everything one experiment needs. Keys: name, seed, synth, train, inference, iou.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  SynthSpec synth = SynthSpec::preset("medium");
  TrainConfig train = synthetic_train_defaults();
  InferenceMode inference = InferenceMode::predicted;
  std::vector<double> iou_thresholds = {0.3, 0.4, 0.5, 0.6, 0.7};

  /// Unknown keys are rejected at every level; validated before returning.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Parses a JSON file into an object, with a path-qualified ValidationError.
nlohmann::json read_json_file(const std::string& path);

}  // namespace ttcloc
