#include "ttcloc/config.hpp"

#include "ttcloc/errors.hpp"
#include "ttcloc/io.hpp"

namespace ttcloc {

using nlohmann::json;

TrainConfig synthetic_train_defaults() {
  TrainConfig c;
  c.hidden_dim = kSyntheticHiddenDim;
  c.adam.learning_rate = kSyntheticLearningRate;
  c.iterations = 2000;
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  ExperimentConfig e;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "name") e.name = value.get<std::string>();
      else if (key == "seed") e.seed = value.get<std::uint64_t>();
      else if (key == "synth") e.synth = SynthSpec::from_json(value);
      else if (key == "train") e.train = TrainConfig::from_json(value, synthetic_train_defaults());
      else if (key == "inference") e.inference = parse_inference_mode(value.get<std::string>());
      else if (key == "iou") {
        e.iou_thresholds = value.is_string() ? parse_iou_thresholds(value.get<std::string>())
                                             : value.get<std::vector<double>>();
      } else throw ValidationError("experiment config: unknown key '" + key + "'");
    } catch (const json::exception& ex) {
      throw ValidationError("experiment config: bad value for '" + key + "': " + ex.what());
    }
  }
  e.synth.validate();
  e.train.validate();
  return e;
}

json ExperimentConfig::to_json() const {
  return {{"name", name},
          {"seed", seed},
          {"synth", synth.to_json()},
          {"train", train.to_json()},
          {"inference", to_string(inference)},
          {"iou", iou_thresholds}};
}

json read_json_file(const std::string& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace ttcloc
