#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "invariants.hpp"
#include "support.hpp"
#include "ttcloc/config.hpp"
#include "ttcloc/errors.hpp"
#include "ttcloc/synthgen.hpp"
#include "ttcloc/trainer.hpp"

using namespace ttcloc;
using namespace testing;

namespace {

Dataset small_synthetic(int videos_per_class = 4, const char* preset = "easy") {
  SynthSpec spec = SynthSpec::preset(preset);
  spec.num_classes = 3;
  spec.feature_dim = 8;
  spec.videos_per_class = videos_per_class;
  spec.min_snippets = 50;
  spec.max_snippets = 60;
  return generate(spec);
}

TrainConfig tiny_config() {
  TrainConfig c = synthetic_train_defaults();
  c.hidden_dim = 8;
  c.iterations = 20;
  c.batch_size = 4;
  return c;
}

double mean(const std::vector<StepRecord>& log, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += log[i].loss.total;
  return s / static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("semi subset: first k videos per class in manifest order") {
  Dataset ds;
  ds.num_classes = 2;
  ds.class_names = {"a", "b"};
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 10; ++i) {
      VideoSample v;
      v.id = "c" + std::to_string(c) + "_" + std::to_string(i);
      v.features = Matrix(4, 2);
      v.labels = {c};
      v.segments = std::vector<GroundTruthSegment>{{c, 0.0, 1.0}};
      ds.videos.push_back(v);
    }
  CHECK(select_semi_subset(ds, 0) == 0);
  for (const auto& v : ds.videos) CHECK_FALSE(v.fully_annotated);
  CHECK(select_semi_subset(ds, 1) == 2);
  CHECK(ds.videos[0].fully_annotated);
  CHECK(ds.videos[10].fully_annotated);
  CHECK(select_semi_subset(ds, 3) == 6);
  CHECK(ds.videos[2].fully_annotated);
  CHECK_FALSE(ds.videos[3].fully_annotated);

  std::vector<std::string> warnings;
  CHECK(select_semi_subset(ds, 12, &warnings) == 20);
  CHECK(warnings.size() == 2);
  CHECK_THROWS_AS(select_semi_subset(ds, -1), ValidationError);
}

TEST_CASE("semi subset: a multi-label video counts for every class it carries") {
  Dataset ds;
  ds.num_classes = 20;
  for (int c = 0; c < 20; ++c) ds.class_names.push_back("c" + std::to_string(c));
  VideoSample both;
  both.id = "both";
  both.features = Matrix(2, 2);
  both.labels = {0, 1};
  both.segments = std::vector<GroundTruthSegment>{{0, 0.0, 0.5}, {1, 0.6, 1.0}};
  ds.videos.push_back(both);
  for (int c = 0; c < 20; ++c) {
    VideoSample v = both;
    v.id = "v" + std::to_string(c);
    v.labels = {c};
    v.segments = std::vector<GroundTruthSegment>{{c, 0.0, 0.5}};
    ds.videos.push_back(v);
  }
  CHECK(select_semi_subset(ds, 1) == 19);
}

TEST_CASE("Adam: first step moves each coordinate by about lr against the gradient sign") {
  TrainState st;
  Rng rng(1);
  st.params = random_params(rng, 2, 3, 2);
  st.first_moment = NetworkParams::zeros(2, 3, 2);
  st.second_moment = NetworkParams::zeros(2, 3, 2);
  NetworkParams g = random_params(rng, 2, 3, 2, 5.0);
  const auto before = flatten(st.params);
  AdamConfig adam;
  adam.learning_rate = 1e-3;
  adam_update(st, g, adam);
  const auto after = flatten(st.params);
  const auto grad = flatten(g);
  CHECK(st.step == 1);
  for (std::size_t i = 0; i < before.size(); ++i) {
    // m_hat = g, v_hat = g^2 at step 1.
    const double expect = -adam.learning_rate * grad[i] / (std::abs(grad[i]) + adam.epsilon);
    CHECK(after[i] - before[i] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("Adam: zero gradients leave parameters and moments unchanged") {
  TrainState st;
  Rng rng(2);
  st.params = random_params(rng, 2, 3, 2);
  st.first_moment = NetworkParams::zeros(2, 3, 2);
  st.second_moment = NetworkParams::zeros(2, 3, 2);
  const NetworkParams before = st.params;
  adam_update(st, NetworkParams::zeros(2, 3, 2), AdamConfig{});
  CHECK(st.params == before);
  CHECK(st.first_moment == NetworkParams::zeros(2, 3, 2));
  CHECK(st.second_moment == NetworkParams::zeros(2, 3, 2));
  CHECK(st.step == 1);
}

TEST_CASE("Adam step bound holds over random trajectories") {
  CHECK(check_adam_step_bound(3, 1000).failures == 0);
  // The default decays keep the exact worst case below 1 / (1 - beta1) at every step.
  double worst = 0;
  for (int t = 1; t <= 3000; ++t) worst = std::max(worst, adam_ratio_bound(0.9, 0.999, t));
  CHECK(worst < 10.0);
}

TEST_CASE("Adam steps respect the exact history bound for any decays") {
  Rng rng(12);
  int failures = 0, above_simple = 0;
  for (int trial = 0; trial < 500; ++trial) {
    AdamConfig adam;
    adam.learning_rate = 1e-3;
    adam.beta1 = rng.uniform(0.5, 0.99);
    adam.beta2 = rng.uniform(0.9, 0.9999);
    TrainState st;
    st.params = random_params(rng, 2, 2, 1);
    st.first_moment = NetworkParams::zeros(2, 2, 1);
    st.second_moment = NetworkParams::zeros(2, 2, 1);
    const int steps = static_cast<int>(rng.uniform_int(1, 30));
    for (int s = 1; s <= steps; ++s) {
      NetworkParams g = NetworkParams::zeros(2, 2, 1);
      const double scale = std::pow(10.0, rng.uniform(-6.0, 6.0));
      g.for_each_tensor([&](std::span<double> t) {
        for (double& v : t) v = scale * rng.normal();
      });
      const auto before = flatten(st.params);
      adam_update(st, g, adam);
      const auto after = flatten(st.params);
      const double bound = adam.learning_rate * adam_ratio_bound(adam.beta1, adam.beta2, s);
      for (std::size_t k = 0; k < before.size(); ++k) {
        const double step = std::abs(after[k] - before[k]);
        if (step > bound * (1 + 1e-9)) ++failures;
        if (step > adam.learning_rate / (1 - adam.beta1)) ++above_simple;
      }
    }
  }
  CHECK(failures == 0);
  MESSAGE(above_simple << " coordinate steps exceeded lr / (1 - beta1) with beta1^2 close to beta2");
}

TEST_CASE("batch sampling draws distinct indices") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 30));
    auto idx = sample_batch(rng, n, 10);
    CHECK(idx.size() == std::min<std::size_t>(n, 10));
    std::sort(idx.begin(), idx.end());
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    CHECK(idx.back() < n);
  }
}

TEST_CASE("configuration errors") {
  const Dataset ds = small_synthetic();
  TrainConfig c = tiny_config();
  c.strategy = TrainStrategy::fully_annotated_only;
  CHECK_THROWS_AS(run_training(ds, c), ValidationError);
  c.strategy = TrainStrategy::pretrain_finetune;
  CHECK_THROWS_AS(run_training(ds, c), ValidationError);
  c.strategy = TrainStrategy::joint;
  c.dropout = 1.0;
  CHECK_THROWS_AS(run_training(ds, c), ValidationError);
  CHECK_THROWS_AS(run_training(Dataset{}, tiny_config()), ValidationError);

  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"learning_rat", 0.1}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"gating", "relu"}}), ValidationError);
  const TrainConfig back = TrainConfig::from_json(tiny_config().to_json());
  CHECK(back.to_json() == tiny_config().to_json());
}

TEST_CASE("a non-finite loss aborts and names the batch") {
  Dataset ds = small_synthetic();
  ds.videos[1].features(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c = tiny_config();
  TrainState st = init_train_state(c, ds.feature_dim(), 3);
  const std::vector<const VideoSample*> batch{&ds.videos[0], &ds.videos[1]};
  try {
    train_step(st, batch, 3, c, c.loss);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(ds.videos[0].id) != std::string::npos);
    CHECK(msg.find(ds.videos[1].id) != std::string::npos);
  }
  CHECK(st.step == 0);
}

TEST_CASE("same seed, same trajectory and parameters; another seed differs") {
  const Dataset ds = small_synthetic();
  const TrainConfig c = tiny_config();
  const TrainResult a = run_training(ds, c);
  const TrainResult b = run_training(ds, c);
  REQUIRE(a.log.size() == 20);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(to_json_line(a.log[i]) == to_json_line(b.log[i]));
  CHECK(a.state.params == b.state.params);
  TrainConfig other = c;
  other.seed = 1;
  CHECK_FALSE(run_training(ds, other).state.params == a.state.params);
}

TEST_CASE("joint with k = 0 is bit-identical to a run without the localization term") {
  const Dataset ds = small_synthetic();
  TrainConfig semi0 = tiny_config();
  semi0.supervision = SupervisionMode::semi;
  semi0.semi_k = 0;
  TrainConfig no_loc = tiny_config();
  no_loc.loss.eta = 0.0;
  const TrainResult a = run_training(ds, semi0);
  const TrainResult b = run_training(ds, no_loc);
  for (const auto& r : a.log) CHECK(r.loss.localization == 0.0);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss.total == b.log[i].loss.total);
  CHECK(a.state.params == b.state.params);
}

TEST_CASE("pretrain_finetune: localization weight is off in the first half, on in the second") {
  const Dataset ds = small_synthetic();
  TrainConfig c = tiny_config();
  c.supervision = SupervisionMode::semi;
  c.semi_k = 1;
  c.strategy = TrainStrategy::pretrain_finetune;
  const TrainResult r = run_training(ds, c);
  REQUIRE(r.log.size() == 20);
  const double lambda = c.loss.lambda;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& l = r.log[i].loss;
    const double base = lambda * l.classification + (1 - lambda) * l.regularization;
    if (i < 10) {
      CHECK(l.total == doctest::Approx(base).epsilon(1e-14));
    } else {
      // Phase two sees only the flagged videos, so the localization term is always active.
      CHECK(l.localization > 0.0);
      CHECK(l.total == doctest::Approx(base + c.loss.eta * l.localization).epsilon(1e-14));
    }
  }
}

TEST_CASE("metrics lines carry the loss breakdown") {
  StepRecord r{7, {0.5, 0.25, 0.0, 0.15}};
  const auto j = nlohmann::json::parse(to_json_line(r));
  CHECK(j.at("step") == 7);
  CHECK(j.at("L_clas") == 0.5);
  CHECK(j.at("L_reg") == 0.25);
  CHECK(j.at("L_loc") == 0.0);
  CHECK(j.at("L") == 0.15);
}

TEST_CASE("training on the easy preset halves the loss") {
  SynthSpec spec = SynthSpec::preset("easy");
  const Dataset ds = generate(spec);
  const TrainConfig c = synthetic_train_defaults();
  const TrainResult r = run_training(ds, c);
  REQUIRE(r.log.size() == c.iterations);
  const double start = mean(r.log, 0, 10);
  const double end = mean(r.log, r.log.size() - 100, r.log.size());
  MESSAGE("first-10 mean " << start << ", last-100 mean " << end);
  CHECK(end <= 0.5 * start);
}
