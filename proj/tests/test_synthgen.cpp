#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "support.hpp"
#include "ttcloc/data_model.hpp"
#include "ttcloc/errors.hpp"
#include "ttcloc/synthgen.hpp"

using namespace ttcloc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double row_distance(const Matrix& m, std::size_t a, std::size_t b) {
  double acc = 0;
  for (std::size_t d = 0; d < m.cols(); ++d) acc += (m(a, d) - m(b, d)) * (m(a, d) - m(b, d));
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("zero noise, unit scale: in-segment snippets equal the class prototype") {
  SynthSpec spec = SynthSpec::preset("easy");
  spec.noise = 0.0;
  spec.min_segments = spec.max_segments = 1;
  spec.videos_per_class = 3;
  const Matrix protos = draw_prototypes(spec);
  const Dataset ds = generate(spec);
  for (const auto& v : ds.videos) {
    REQUIRE(v.segments->size() == 1);
    const auto& seg = v.segments->front();
    for (std::size_t t = 0; t < v.num_snippets(); ++t) {
      const double mid = (static_cast<double>(t) + 0.5) * v.snippet_duration;
      const bool inside = mid >= seg.start && mid < seg.end;
      const std::size_t row = inside ? static_cast<std::size_t>(seg.class_id) : protos.rows() - 1;
      for (std::size_t d = 0; d < v.feature_dim(); ++d)
        CHECK(v.features(t, d) == static_cast<double>(static_cast<float>(protos(row, d))));
    }
  }
}

TEST_CASE("annotation flags follow the fraction, first videos of each class") {
  SynthSpec spec = SynthSpec::preset("easy");
  spec.videos_per_class = 7;
  spec.fully_annotated_fraction = 0.0;
  for (const auto& v : generate(spec).videos) CHECK_FALSE(v.fully_annotated);

  spec.fully_annotated_fraction = 0.3;  // ceil(2.1) = 3 per class
  const Dataset ds = generate(spec);
  for (const auto& v : ds.videos) {
    const int index = std::stoi(v.id.substr(v.id.rfind('v') + 1));
    CHECK(v.fully_annotated == (index < 3));
  }
}

TEST_CASE("same spec and seed give byte-identical datasets; other seeds differ") {
  const fs::path root = fs::temp_directory_path() / "ttcloc_synth_det";
  fs::remove_all(root);
  SynthSpec spec = SynthSpec::preset("medium");
  spec.videos_per_class = 4;
  write_dataset(generate(spec), root / "a");
  write_dataset(generate(spec), root / "b");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    const auto name = entry.path().filename();
    CHECK(slurp(entry.path()) == slurp(root / "b" / name));
    ++files;
  }
  CHECK(files == 1 + 5 * 4);
  spec.seed = 1;
  CHECK_FALSE(generate(spec).videos == generate(SynthSpec::preset("medium")).videos);
  fs::remove_all(root);
}

TEST_CASE("segments never overlap and stay inside the video (200 seeds)") {
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SynthSpec spec = SynthSpec::preset(seed % 2 ? "hard" : "medium");
    spec.seed = seed;
    spec.videos_per_class = 2;
    spec.test_videos_per_class = 1;
    spec.mixed_segment_prob = 0.3;
    for (auto split : {Split::train, Split::test}) {
      for (const auto& v : generate(spec, split).videos) {
        const double limit = static_cast<double>(v.num_snippets()) * v.snippet_duration;
        auto segs = *v.segments;
        std::sort(segs.begin(), segs.end(), [](auto& a, auto& b) { return a.start < b.start; });
        std::set<int> classes;
        for (std::size_t i = 0; i < segs.size(); ++i) {
          classes.insert(segs[i].class_id);
          if (segs[i].start < 0 || segs[i].end > limit + 1e-9 || segs[i].start >= segs[i].end) ++failures;
          if (i > 0 && segs[i].start < segs[i - 1].end) ++failures;
        }
        if (std::vector<int>(classes.begin(), classes.end()) != v.labels) ++failures;
      }
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("prototypes are separated by at least the separation scale") {
  for (const char* preset : {"easy", "medium", "hard"}) {
    SynthSpec spec = SynthSpec::preset(preset);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      spec.seed = seed;
      const Matrix p = draw_prototypes(spec);
      CHECK(p.rows() == static_cast<std::size_t>(spec.num_classes + 1));
      for (std::size_t a = 0; a < p.rows(); ++a)
        for (std::size_t b = a + 1; b < p.rows(); ++b) CHECK(row_distance(p, a, b) >= spec.separation);
    }
  }
}

TEST_CASE("presets fix the separation-to-noise ratio and the scale range") {
  const auto easy = SynthSpec::preset("easy");
  const auto medium = SynthSpec::preset("medium");
  const auto hard = SynthSpec::preset("hard");
  CHECK(easy.separation / easy.noise == 8.0);
  CHECK(easy.scale_lo == 1.0);
  CHECK(easy.scale_hi == 1.0);
  CHECK(medium.separation / medium.noise == 4.0);
  CHECK(medium.scale_lo == 0.5);
  CHECK(medium.scale_hi == 2.0);
  CHECK(hard.separation / hard.noise == 2.0);
  CHECK(hard.scale_lo == 0.25);
  CHECK(hard.scale_hi == 4.0);
  CHECK_THROWS_AS(SynthSpec::preset("nope"), ValidationError);
}

TEST_CASE("scale jitter makes per-video feature norms differ") {
  SynthSpec spec = SynthSpec::preset("medium");
  spec.videos_per_class = 4;
  std::vector<double> norms;
  for (const auto& v : generate(spec).videos) {
    double acc = 0;
    for (double x : v.features.values()) acc += x * x;
    norms.push_back(std::sqrt(acc / static_cast<double>(v.num_snippets())));
  }
  const auto [lo, hi] = std::minmax_element(norms.begin(), norms.end());
  CHECK(*hi / *lo > 2.0);
}

TEST_CASE("infeasible placement names the video; invalid specs are rejected") {
  SynthSpec spec = SynthSpec::preset("easy");
  spec.min_snippets = spec.max_snippets = 10;
  spec.min_segments = spec.max_segments = 3;
  spec.min_segment_len = spec.max_segment_len = 4;
  try {
    generate(spec);
    FAIL("expected a generation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("train_c0_v0") != std::string::npos);
  }

  SynthSpec bad = SynthSpec::preset("easy");
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = SynthSpec::preset("easy");
  bad.scale_lo = 2.0;
  bad.scale_hi = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = SynthSpec::preset("easy");
  bad.min_segment_len = 9;
  bad.max_segment_len = 3;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("JSON round trip; preset key seeds defaults; unknown keys rejected") {
  SynthSpec spec = SynthSpec::preset("hard");
  spec.seed = 77;
  CHECK(SynthSpec::from_json(spec.to_json()).to_json() == spec.to_json());
  const auto s = SynthSpec::from_json(nlohmann::json{{"preset", "medium"}, {"videos_per_class", 3}});
  CHECK(s.separation == SynthSpec::preset("medium").separation);
  CHECK(s.videos_per_class == 3);
  CHECK_THROWS_AS(SynthSpec::from_json(nlohmann::json{{"bogus", 1}}), ValidationError);
}

TEST_CASE("train and test splits are disjoint draws") {
  SynthSpec spec = SynthSpec::preset("easy");
  spec.videos_per_class = 2;
  spec.test_videos_per_class = 2;
  const auto train = generate(spec, Split::train);
  const auto test = generate(spec, Split::test);
  CHECK(train.videos.size() == 10);
  CHECK(test.videos.size() == 10);
  CHECK(train.videos[0].id == "train_c0_v0");
  CHECK(test.videos[0].id == "test_c0_v0");
  CHECK_FALSE(train.videos[0].features == test.videos[0].features);
}
