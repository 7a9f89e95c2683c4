#include "ttcloc/commands.hpp"

#include <omp.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ttcloc/ablation.hpp"
#include "ttcloc/config.hpp"
#include "ttcloc/errors.hpp"
#include "ttcloc/gradcheck.hpp"
#include "ttcloc/io.hpp"

namespace ttcloc {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path manifest_path(const fs::path& path) {
  return fs::is_directory(path) ? path / "manifest.json" : path;
}

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  int threads = 0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed (overrides config files)");
    cmd->add_option("--threads", threads, "OpenMP threads; 1 gives bit-exact reruns")->check(CLI::NonNegativeNumber);
  }
  void apply() const {
    if (threads > 0) omp_set_num_threads(threads);
  }
};

struct SynthArgs {
  Common common;
  std::string spec_path;
  std::string preset;
  std::string out;
};

struct TrainArgs {
  Common common;
  std::string data;
  std::string config_path;
  std::string defaults = "reference";
  std::optional<std::size_t> iterations;
  std::string out;
};

struct InferArgs {
  Common common;
  std::string ckpt;
  std::string data;
  std::string mode = "predicted";
  std::string out;
};

struct EvalArgs {
  std::string det;
  std::string gt;
  std::string iou = "0.3:0.7:0.1";
  std::string out;
};

struct GradcheckArgs {
  Common common;
  int instances = 2;
};

struct AblateArgs {
  Common common;
  std::string config_path;
  std::string preset;
  int num_seeds = 3;
  std::string lambdas;
  std::string out;
};

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("not a number: '" + item + "'");
    }
  }
  return values;
}

void run_synth(const SynthArgs& a) {
  a.common.apply();
  SynthSpec spec;
  if (!a.spec_path.empty()) spec = SynthSpec::from_json(read_json_file(a.spec_path));
  else spec = SynthSpec::preset(a.preset.empty() ? "medium" : a.preset);
  if (!a.spec_path.empty() && !a.preset.empty()) throw ValidationError("use either --spec or --preset");
  if (a.common.seed) spec.seed = *a.common.seed;
  spec.validate();

  const Dataset train = generate(spec, Split::train);
  const Dataset test = generate(spec, Split::test);
  const fs::path out(a.out);
  write_dataset(train, out);
  write_dataset(test, out / "test");
  io::write_file_atomic(out / "spec.json", spec.to_json().dump(2) + "\n");
  std::cout << "wrote " << train.videos.size() << " train and " << test.videos.size() << " test videos to "
            << out.string() << "\n";
}

void run_train(const TrainArgs& a) {
  a.common.apply();
  TrainConfig base;
  if (a.defaults == "synthetic") base = synthetic_train_defaults();
  else if (a.defaults != "reference") throw ValidationError("--defaults must be reference or synthetic");
  TrainConfig cfg = a.config_path.empty() ? base : TrainConfig::from_json(read_json_file(a.config_path), base);
  if (a.common.seed) cfg.seed = *a.common.seed;
  if (a.iterations) cfg.iterations = *a.iterations;
  cfg.validate();

  const Dataset data = load_dataset(manifest_path(a.data));
  std::string metrics;
  TrainResult result = run_training(data, cfg, [&](const StepRecord& r) { metrics += to_json_line(r) + "\n"; });
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  const fs::path out(a.out);
  fs::create_directories(out);
  save_checkpoint(result.state.params, out / "params.bin");
  const json meta = {{"train", cfg.to_json()},
                     {"input_dim", data.feature_dim()},
                     {"num_classes", data.num_classes},
                     {"class_names", data.class_names}};
  io::write_file_atomic(out / "config.json", meta.dump(2) + "\n");
  io::write_file_atomic(out / "metrics.jsonl", metrics);
  const auto& last = result.log.back().loss;
  std::cout << "trained " << cfg.iterations << " iterations, final L " << last.total << "\n";
}

void run_infer(const InferArgs& a) {
  a.common.apply();
  const fs::path ckpt(a.ckpt);
  const json meta = read_json_file((ckpt / "config.json").string());
  TrainConfig cfg;
  try {
    cfg = TrainConfig::from_json(meta.at("train"));
  } catch (const json::exception& e) {
    throw ValidationError((ckpt / "config.json").string() + ": " + e.what());
  }
  const NetworkParams params = load_checkpoint(ckpt / "params.bin");
  const Dataset data = load_dataset(manifest_path(a.data));
  const std::size_t d = params.input_dim();
  const std::size_t c = params.num_classes();
  if (d != data.feature_dim() || static_cast<int>(c) != data.num_classes) {
    throw ValidationError("checkpoint expects D=" + std::to_string(d) + ", C=" + std::to_string(c) +
                          " but the data has D=" + std::to_string(data.feature_dim()) +
                          ", C=" + std::to_string(data.num_classes));
  }
  InferenceOptions opts;
  opts.mode = parse_inference_mode(a.mode);
  opts.aggregator = cfg.loss.aggregator;
  const auto dets = infer_dataset(params, data, opts);
  io::write_file_atomic(a.out, detections_to_jsonl(dets, data.class_names));
  std::cout << "wrote " << dets.size() << " detections to " << a.out << "\n";
}

void run_eval(const EvalArgs& a) {
  const auto thresholds = parse_iou_thresholds(a.iou);
  const Dataset gt = load_dataset(manifest_path(a.gt));
  const auto dets = detections_from_jsonl(io::read_file(a.det));
  const EvalReport report = evaluate(dets, gt, thresholds);
  fs::path csv(a.out);
  csv.replace_extension(".csv");
  io::write_file_atomic(a.out, report.to_json(gt.class_names).dump(2) + "\n");
  io::write_file_atomic(csv, report.to_csv(gt.class_names));
  std::cout << report.to_csv(gt.class_names);
}

bool run_gradcheck_command(const GradcheckArgs& a) {
  a.common.apply();
  GradcheckOptions opts;
  if (a.common.seed) opts.seed = *a.common.seed;
  opts.instances = a.instances;
  const auto results = run_gradcheck(opts);
  for (const auto& r : results) {
    std::printf("%-40s %-9s max_rel_err %.3e  checked %zu  kinks %zu  %s\n", r.component.c_str(),
                r.strict ? "strict" : "surrogate", r.max_rel_error, r.checked, r.kinks,
                r.strict ? (r.passed ? "PASS" : "FAIL") : "REPORTED");
  }
  const bool ok = gradcheck_passed(results);
  std::printf("gradcheck %s\n", ok ? "PASS" : "FAIL");
  return ok;
}

void run_ablate(const AblateArgs& a) {
  a.common.apply();
  ExperimentConfig exp;
  if (!a.config_path.empty()) exp = ExperimentConfig::from_json(read_json_file(a.config_path));
  if (!a.preset.empty()) exp.synth = SynthSpec::preset(a.preset);
  if (a.common.seed) exp.seed = *a.common.seed;
  if (a.num_seeds < 1) throw ValidationError("--seeds must be at least 1");

  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < a.num_seeds; ++i) seeds.push_back(exp.seed + static_cast<std::uint64_t>(i));
  const auto cells = ablation_grid(exp.train, a.lambdas.empty() ? std::vector<double>{} : parse_number_list(a.lambdas));
  const auto results = run_ablation(cells, exp.synth, seeds, exp.iou_thresholds, [](const AblationResult& r) {
    std::fprintf(stderr, "seed %llu %-14s %-28s avg mAP %.4f (%.1f s)\n", static_cast<unsigned long long>(r.seed),
                 r.cell->group.c_str(), r.cell->name.c_str(), r.average_map, r.runtime_s);
  });

  const fs::path out(a.out);
  fs::create_directories(out);
  io::write_file_atomic(out / "ablation.csv", ablation_csv(results, exp.iou_thresholds));
  json j = ablation_json(results, exp.iou_thresholds);
  j["experiment"] = exp.to_json();
  io::write_file_atomic(out / "ablation.json", j.dump(2) + "\n");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Temporal action localization with predicted thresholds"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic train/test dataset");
  synth.common.add_to(c_synth);
  c_synth->add_option("--spec", synth.spec_path, "SynthSpec JSON file");
  c_synth->add_option("--preset", synth.preset, "easy, medium or hard");
  c_synth->add_option("--out", synth.out, "Output directory (test split goes to OUT/test)")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model");
  train.common.add_to(c_train);
  c_train->add_option("--data", train.data, "Dataset directory or manifest")->required();
  c_train->add_option("--config", train.config_path, "Training config JSON");
  c_train->add_option("--defaults", train.defaults, "Base defaults: reference or synthetic");
  c_train->add_option("--iterations", train.iterations, "Iteration budget");
  c_train->add_option("--out", train.out, "Checkpoint directory")->required();

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Detect action segments");
  infer.common.add_to(c_infer);
  c_infer->add_option("--ckpt", infer.ckpt, "Checkpoint directory")->required();
  c_infer->add_option("--data", infer.data, "Dataset directory or manifest")->required();
  c_infer->add_option("--mode", infer.mode, "predicted or manual");
  c_infer->add_option("--out", infer.out, "Detections JSONL")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score detections against ground truth");
  c_eval->add_option("--det", eval.det, "Detections JSONL")->required();
  c_eval->add_option("--gt", eval.gt, "Dataset directory or manifest with segments")->required();
  c_eval->add_option("--iou", eval.iou, "lo:hi:step or comma list");
  c_eval->add_option("--out", eval.out, "Report JSON; a CSV is written next to it")->required();

  GradcheckArgs grad;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  grad.common.add_to(c_grad);
  c_grad->add_option("--instances", grad.instances, "Random instances per component")->check(CLI::PositiveNumber);

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Run the ablation grid on a synthetic preset");
  ablate.common.add_to(c_ablate);
  c_ablate->add_option("--config", ablate.config_path, "Experiment config JSON");
  c_ablate->add_option("--preset", ablate.preset, "Synthetic preset (overrides the config)");
  c_ablate->add_option("--seeds", ablate.num_seeds, "Number of consecutive seeds");
  c_ablate->add_option("--lambda-sweep", ablate.lambdas, "Comma list of lambda values to sweep");
  c_ablate->add_option("--out", ablate.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_synth) run_synth(synth);
    else if (*c_train) run_train(train);
    else if (*c_infer) run_infer(infer);
    else if (*c_eval) run_eval(eval);
    else if (*c_grad) return run_gradcheck_command(grad) ? 0 : 2;
    else if (*c_ablate) run_ablate(ablate);
    return 0;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ttcloc
