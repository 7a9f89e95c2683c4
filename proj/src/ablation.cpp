#include "ttcloc/ablation.hpp"

#include <chrono>
#include <map>
#include <sstream>
#include <tuple>

#include "ttcloc/errors.hpp"
#include "ttcloc/evaluator.hpp"
#include "ttcloc/io.hpp"

namespace ttcloc {

using nlohmann::json;

namespace {

AblationCell make_cell(std::string group, std::string name, std::string train_strategy, TrainConfig train,
                       InferenceMode test_mode) {
  return {std::move(group), std::move(name), std::move(train_strategy), std::move(train), test_mode};
}

TrainConfig with_supervision(TrainConfig c, SupervisionMode mode, int k) {
  c.supervision = mode;
  c.semi_k = k;
  return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<AblationCell> ablation_grid(const TrainConfig& base, const std::vector<double>& lambdas) {
  std::vector<AblationCell> cells;
  const TrainConfig weak = with_supervision(base, SupervisionMode::weak, 0);
  const TrainConfig semi1 = with_supervision(base, SupervisionMode::semi, 1);

  // "None" trains without any localization: top-1/8 pooling instead of the gate.
  TrainConfig none = weak;
  none.loss.aggregator = Aggregator::topk_eighth;
  TrainConfig manual = semi1;
  manual.localization = TrainLocalization::manual;
  const std::vector<std::tuple<std::string, std::string, TrainConfig>> train_rows = {
      {"none", "weak", none}, {"predicted", "weak", weak}, {"manual", "semi1", manual}, {"predicted", "semi1", semi1}};
  for (const auto& [strategy, supervision, cfg] : train_rows) {
    for (InferenceMode test : {InferenceMode::manual, InferenceMode::predicted}) {
      cells.push_back(make_cell("train_test", strategy + "/" + to_string(test) + "/" + supervision, strategy, cfg,
                                test));
    }
  }

  for (GatingKind kind : {GatingKind::binarize, GatingKind::softsign, GatingKind::sigmoid}) {
    TrainConfig c = weak;
    c.gating = kind;
    cells.push_back(make_cell("gating", to_string(kind), "predicted", c, InferenceMode::predicted));
  }
  for (RegForm form : {RegForm::l1, RegForm::l2, RegForm::cosine, RegForm::inner_product}) {
    TrainConfig c = weak;
    c.loss.reg_form = form;
    cells.push_back(make_cell("reg_form", to_string(form), "predicted", c, InferenceMode::predicted));
  }
  for (TrainStrategy s : {TrainStrategy::fully_annotated_only, TrainStrategy::pretrain_finetune, TrainStrategy::joint}) {
    TrainConfig c = semi1;
    c.strategy = s;
    cells.push_back(make_cell("semi_strategy", to_string(s), "predicted", c, InferenceMode::predicted));
  }
  // Classification loss alone, so only the pooling differs.
  for (Aggregator a : {Aggregator::topk_eighth, Aggregator::gated}) {
    TrainConfig c = weak;
    c.loss.aggregator = a;
    c.loss.lambda = 1.0;
    c.loss.eta = 0.0;
    cells.push_back(make_cell("aggregator", to_string(a), a == Aggregator::gated ? "predicted" : "none", c,
                              InferenceMode::predicted));
  }
  for (double lambda : lambdas) {
    TrainConfig c = weak;
    c.loss.lambda = lambda;
    cells.push_back(make_cell("lambda", io::format_double(lambda), "predicted", c, InferenceMode::predicted));
  }
  return cells;
}

std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells, const SynthSpec& synth,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<double>& iou_thresholds,
                                         const AblationProgress& progress) {
  if (seeds.empty()) throw ValidationError("ablation needs at least one seed");
  for (const auto& cell : cells) cell.train.validate();
  synth.validate();

  std::vector<AblationResult> results;
  for (std::uint64_t seed : seeds) {
    SynthSpec spec = synth;
    spec.seed = seed;
    const Dataset train = generate(spec, Split::train);
    const Dataset test = generate(spec, Split::test);
    std::map<std::string, NetworkParams> trained;

    for (const auto& cell : cells) {
      const auto t0 = std::chrono::steady_clock::now();
      TrainConfig cfg = cell.train;
      cfg.seed = seed;
      const std::string key = cfg.to_json().dump();
      auto it = trained.find(key);
      if (it == trained.end()) it = trained.emplace(key, run_training(train, cfg).state.params).first;

      InferenceOptions opts;
      opts.mode = cell.test_mode;
      opts.aggregator = cfg.loss.aggregator;
      const auto dets = infer_dataset(it->second, test, opts);
      const EvalReport report = evaluate(dets, test, iou_thresholds);

      AblationResult r{&cell, seed, report.map, report.average_map, seconds_since(t0)};
      if (progress) progress(r);
      results.push_back(std::move(r));
    }
  }
  return results;
}

std::string ablation_csv(const std::vector<AblationResult>& results, const std::vector<double>& iou_thresholds) {
  std::ostringstream out;
  out << "group,cell,train_strategy,test_strategy,supervision,seed";
  for (double t : iou_thresholds) out << ",mAP@" << io::format_double(t);
  out << ",average\n";
  for (const auto& r : results) {
    const AblationCell& c = *r.cell;
    std::string supervision = to_string(c.train.supervision);
    if (c.train.supervision == SupervisionMode::semi) supervision += std::to_string(c.train.semi_k);
    out << c.group << ',' << c.name << ',' << c.train_strategy << ',' << to_string(c.test_mode) << ','
        << supervision << ',' << r.seed;
    for (double m : r.map) out << ',' << io::format_double(m);
    out << ',' << io::format_double(r.average_map) << '\n';
  }
  return out.str();
}

json ablation_json(const std::vector<AblationResult>& results, const std::vector<double>& iou_thresholds) {
  json rows = json::array();
  for (const auto& r : results) {
    rows.push_back({{"group", r.cell->group},
                    {"cell", r.cell->name},
                    {"train_strategy", r.cell->train_strategy},
                    {"test_strategy", to_string(r.cell->test_mode)},
                    {"train", r.cell->train.to_json()},
                    {"seed", r.seed},
                    {"map", r.map},
                    {"average_map", r.average_map},
                    {"runtime_s", r.runtime_s}});
  }
  return {{"iou_thresholds", iou_thresholds}, {"rows", rows}};
}

double mean_average_map(const std::vector<AblationResult>& results, const std::string& group,
                        const std::string& name) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (r.cell->group == group && r.cell->name == name) {
      sum += r.average_map;
      ++n;
    }
  }
  if (n == 0) throw ValidationError("no ablation results for " + group + "/" + name);
  return sum / static_cast<double>(n);
}

}  // namespace ttcloc
