#include "ttcloc/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "ttcloc/errors.hpp"
#include "ttcloc/io.hpp"

namespace ttcloc {
namespace {

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::string class_label(const std::vector<std::string>& names, int c) {
  return static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
                                                     : "class_" + std::to_string(c);
}

}  // namespace

double interval_iou(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::min(a_end, b_end) - std::max(a_start, b_start);
  if (!(inter > 0.0)) return 0.0;
  const double uni = std::max(a_end, b_end) - std::min(a_start, b_start);
  return uni > 0.0 ? inter / uni : 0.0;
}

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  return a.video_id < b.video_id;
}

std::vector<bool> match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                   double iou_threshold, std::vector<std::size_t>* order) {
  std::vector<std::size_t> ranked(dets.size());
  std::iota(ranked.begin(), ranked.end(), 0);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](std::size_t a, std::size_t b) { return ranks_before(dets[a], dets[b]); });
  std::vector<bool> claimed(gts.size(), false);
  std::vector<bool> flags;
  flags.reserve(dets.size());
  for (std::size_t k : ranked) {
    const Detection& d = dets[k];
    double best_iou = -1.0;
    std::size_t best = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].video_id != d.video_id) continue;
      const double iou = interval_iou(d.start, d.end, gts[g].start, gts[g].end);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best < gts.size()) claimed[best] = true;
    flags.push_back(best < gts.size());
  }
  if (order) *order = std::move(ranked);
  return flags;
}

std::optional<double> average_precision(const std::vector<bool>& flags, std::size_t num_gt) {
  if (num_gt == 0) return std::nullopt;
  double acc = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    if (!flags[k]) continue;
    ++tp;
    acc += static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  return acc / static_cast<double>(num_gt);
}

std::vector<GroundTruth> ground_truth_from(const Dataset& dataset) {
  std::vector<GroundTruth> out;
  for (const auto& v : dataset.videos) {
    if (!v.segments) continue;
    for (const auto& s : *v.segments) out.push_back({v.id, s.class_id, s.start, s.end});
  }
  return out;
}

EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts, int num_classes,
                    std::span<const std::string> video_ids, std::span<const double> iou_thresholds) {
  if (num_classes < 1) throw ValidationError("evaluate: num_classes must be >= 1");
  const std::set<std::string> known(video_ids.begin(), video_ids.end());
  for (const auto& d : dets) {
    if (!known.count(d.video_id)) throw ValidationError("detection references unknown video '" + d.video_id + "'");
    if (d.class_id < 0 || d.class_id >= num_classes)
      throw ValidationError("detection for video '" + d.video_id + "' has unknown class " +
                            std::to_string(d.class_id));
  }
  for (const auto& g : gts)
    if (g.class_id < 0 || g.class_id >= num_classes)
      throw ValidationError("ground truth for video '" + g.video_id + "' has unknown class");
  for (double thr : iou_thresholds)
    if (!(thr > 0.0 && thr <= 1.0)) throw ValidationError("IoU thresholds must lie in (0, 1]");

  const auto C = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<Detection>> dets_by_class(C);
  std::vector<std::vector<GroundTruth>> gts_by_class(C);
  for (const auto& d : dets) dets_by_class[static_cast<std::size_t>(d.class_id)].push_back(d);
  for (const auto& g : gts) gts_by_class[static_cast<std::size_t>(g.class_id)].push_back(g);

  EvalReport report;
  report.iou_thresholds.assign(iou_thresholds.begin(), iou_thresholds.end());
  report.num_classes = num_classes;
  const std::size_t nthr = iou_thresholds.size();
  report.per_class.assign(nthr, std::vector<ClassResult>(C));

#pragma omp parallel for collapse(2) schedule(dynamic)
  for (std::int64_t ti = 0; ti < static_cast<std::int64_t>(nthr); ++ti) {
    for (std::int64_t ci = 0; ci < static_cast<std::int64_t>(C); ++ci) {
      const auto t = static_cast<std::size_t>(ti);
      const auto c = static_cast<std::size_t>(ci);
      const auto flags = match_detections(dets_by_class[c], gts_by_class[c], iou_thresholds[t]);
      ClassResult& r = report.per_class[t][c];
      r.num_gt = gts_by_class[c].size();
      r.true_positives = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
      r.false_positives = flags.size() - r.true_positives;
      r.ap = average_precision(flags, r.num_gt);
    }
  }

  for (std::size_t t = 0; t < nthr; ++t) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& r : report.per_class[t]) {
      if (!r.ap) continue;
      acc += *r.ap;
      ++n;
    }
    report.map.push_back(n ? acc / static_cast<double>(n) : 0.0);
  }
  report.average_map =
      nthr ? std::accumulate(report.map.begin(), report.map.end(), 0.0) / static_cast<double>(nthr) : 0.0;
  return report;
}

EvalReport evaluate(std::span<const Detection> dets, const Dataset& ground_truth,
                    std::span<const double> iou_thresholds) {
  std::vector<std::string> ids;
  for (const auto& v : ground_truth.videos) ids.push_back(v.id);
  const auto gts = ground_truth_from(ground_truth);
  return evaluate(dets, gts, ground_truth.num_classes, ids, iou_thresholds);
}

double EvalReport::map_at(double iou) const {
  for (std::size_t t = 0; t < iou_thresholds.size(); ++t)
    if (std::abs(iou_thresholds[t] - iou) < 1e-9) return map[t];
  throw std::out_of_range("no mAP recorded at IoU " + io::format_double(iou));
}

nlohmann::json EvalReport::to_json(const std::vector<std::string>& class_names) const {
  using nlohmann::json;
  json classes = json::array();
  for (int c = 0; c < num_classes; ++c) {
    json ap = json::array(), tp = json::array(), fp = json::array();
    std::size_t num_gt = 0;
    for (const auto& row : per_class) {
      const auto& r = row[static_cast<std::size_t>(c)];
      ap.push_back(r.ap ? json(*r.ap) : json(nullptr));
      tp.push_back(r.true_positives);
      fp.push_back(r.false_positives);
      num_gt = r.num_gt;
    }
    classes.push_back({{"class_id", c},
                       {"class_name", class_label(class_names, c)},
                       {"num_gt", num_gt},
                       {"ap", ap},
                       {"tp", tp},
                       {"fp", fp}});
  }
  return {{"iou_thresholds", iou_thresholds},
          {"map", map},
          {"average_map", average_map},
          {"ap_convention", "non-interpolated"},
          {"classes", classes}};
}

std::string EvalReport::to_csv(const std::vector<std::string>& class_names) const {
  std::ostringstream out;
  out << "row";
  for (double t : iou_thresholds) out << "," << io::format_double(t);
  out << ",Average\n";
  out << "mAP";
  for (double m : map) out << "," << percent(m);
  out << "," << percent(average_map) << "\n";
  for (int c = 0; c < num_classes; ++c) {
    out << class_label(class_names, c);
    double acc = 0.0;
    bool has_gt = true;
    for (const auto& row : per_class) {
      const auto& r = row[static_cast<std::size_t>(c)];
      if (!r.ap) {
        has_gt = false;
        out << ",-";
      } else {
        acc += *r.ap;
        out << "," << percent(*r.ap);
      }
    }
    if (has_gt && !per_class.empty()) out << "," << percent(acc / static_cast<double>(per_class.size()));
    else out << ",-";
    out << "\n";
  }
  return out.str();
}

std::vector<double> parse_iou_thresholds(const std::string& text) {
  std::vector<double> out;
  auto to_double = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ValidationError("bad IoU threshold specification '" + text + "'");
    }
  };
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    if (parts.size() != 3) throw ValidationError("IoU range must be lo:hi:step, got '" + text + "'");
    const double lo = to_double(parts[0]);
    const double hi = to_double(parts[1]);
    const double step = to_double(parts[2]);
    if (!(step > 0.0) || hi < lo) throw ValidationError("IoU range must have lo <= hi and step > 0");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) {
      // snap to a 1e-9 grid so 0.3 + 2 * 0.1 prints as 0.5
      out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9);
    }
  } else {
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(to_double(part));
  }
  if (out.empty()) throw ValidationError("no IoU thresholds given");
  for (double t : out)
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("IoU thresholds must lie in (0, 1]");
  return out;
}

}  // namespace ttcloc
