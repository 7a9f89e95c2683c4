#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ttcloc/network.hpp"
#include "ttcloc/objectives.hpp"

namespace ttcloc {

/// Coordinates whose analytic gradient is below this magnitude are compared on
/// an absolute scale.
inline constexpr double kGradcheckFloor = 1e-3;

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-5;
  int instances = 2;
  std::size_t num_snippets = 5;
  std::size_t input_dim = 3;
  std::size_t hidden_dim = 4;
  std::size_t num_classes = 3;
  /// Applied to every analytic GradientBundle before comparison (negative controls).
  std::function<void(GradientBundle&)> tamper;
};

struct GradcheckResult {
  std::string component;
  /// Surrogate gradients (straight-through, frozen manual thresholds) are reported, not enforced.
  bool strict = true;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates skipped because a kink lies within one step of the point.
  std::size_t kinks = 0;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, kGradcheckFloor).
double gradcheck_relative_error(double analytic, double numeric);

/// Central-difference check of `analytic` against f over the given coordinates.
/// A coordinate is treated as a kink (and skipped) when its one-sided
/// differences disagree by at least the central-difference error.
GradcheckResult check_coordinates(const std::string& component, const std::vector<double*>& coords,
                                  const std::vector<double>& analytic, const std::function<double()>& f,
                                  double step, double tolerance);

/// Every component check plus the total objective over all strict
/// gating x aggregator x reg form x localization combinations.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options);

/// True when every strict result passed and kinks stay under 10% of coordinates.
bool gradcheck_passed(const std::vector<GradcheckResult>& results);

}  // namespace ttcloc
