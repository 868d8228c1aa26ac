#include "detkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "detkit/parallel.hpp"

namespace detkit {
namespace {

// Matching state for one (image, class) cell under one area range and one
// IoU threshold.
struct CellOutcome {
  std::vector<double> scores;     // kept detections, ranked
  std::vector<bool> tp;           // parallel to scores
  std::vector<bool> ignored;      // parallel to scores
  std::size_t num_counted_gt = 0;  // gts inside the area range
};

struct Cell {
  std::size_t image = 0;
  std::size_t category = 0;
  std::vector<Detection> dets;  // ranked
  std::vector<GroundTruth> gts;
  std::vector<double> ious;     // dets x gts, row-major
};

// Greedy matching with ignore flags. Ground truths are visited with
// non-ignored ones first; a detection already holding a non-ignored match
// never switches to an ignored one. Returns the matched gt (in original
// indexing) per detection.
std::vector<std::optional<std::size_t>> greedy_match(std::size_t n_det, std::size_t n_gt,
                                                     const std::vector<double>& ious,
                                                     const std::vector<bool>& gt_ignored, double iou_t) {
  std::vector<std::size_t> gt_order(n_gt);
  std::iota(gt_order.begin(), gt_order.end(), std::size_t{0});
  std::stable_sort(gt_order.begin(), gt_order.end(),
                   [&](std::size_t a, std::size_t b) { return !gt_ignored[a] && gt_ignored[b]; });

  const double thr = std::min(iou_t, 1.0 - 1e-10);
  std::vector<bool> gt_taken(n_gt, false);
  std::vector<std::optional<std::size_t>> match(n_det);
  for (std::size_t d = 0; d < n_det; ++d) {
    double best = thr;
    std::optional<std::size_t> m;
    for (std::size_t g : gt_order) {
      if (gt_taken[g]) continue;
      if (m && !gt_ignored[*m] && gt_ignored[g]) break;
      const double v = ious[d * n_gt + g];
      if (v < best) continue;
      best = v;
      m = g;
    }
    if (m) {
      gt_taken[*m] = true;
      match[d] = m;
    }
  }
  return match;
}

CellOutcome match_cell(const Cell& cell, const AreaRange& range, double iou_t) {
  const std::size_t nd = cell.dets.size();
  const std::size_t ng = cell.gts.size();
  std::vector<bool> gt_ignored(ng);
  CellOutcome out;
  for (std::size_t g = 0; g < ng; ++g) {
    gt_ignored[g] = !range.contains(cell.gts[g].area);
    if (!gt_ignored[g]) ++out.num_counted_gt;
  }
  const auto match = greedy_match(nd, ng, cell.ious, gt_ignored, iou_t);
  out.scores.resize(nd);
  out.tp.resize(nd);
  out.ignored.resize(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    out.scores[d] = cell.dets[d].score;
    if (match[d]) {
      out.ignored[d] = gt_ignored[*match[d]];
      out.tp[d] = !out.ignored[d];
    } else {
      // Unmatched detections outside the range are not counted against it.
      out.ignored[d] = !range.contains(area(cell.dets[d].box));
    }
  }
  return out;
}

struct Curve {
  std::optional<double> ap;
  std::optional<double> recall;
};

Curve precision_recall(std::vector<ScoredFlag> ranked, std::size_t n_gt) {
  Curve c;
  if (n_gt == 0) return c;
  const std::vector<double> levels = EvalConfig::coco_recall_levels();
  const std::size_t n = ranked.size();
  std::vector<double> recall(n);
  std::vector<double> precision(n);
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked[i].true_positive) {
      tp += 1.0;
    } else {
      fp += 1.0;
    }
    recall[i] = tp / static_cast<double>(n_gt);
    precision[i] = tp / (tp + fp);
  }
  c.recall = n == 0 ? 0.0 : recall.back();
  // Envelope: best precision at any recall at least as high.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (double r : levels) {
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  c.ap = sum / static_cast<double>(levels.size());
  return c;
}

std::optional<double> mean_defined(const std::vector<std::optional<double>>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : v) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

void check_detection(const Detection& d) {
  if (!d.box.valid() || !std::isfinite(d.box.x1) || !std::isfinite(d.box.y1) || !std::isfinite(d.box.x2) ||
      !std::isfinite(d.box.y2)) {
    throw EvalInputError(fmt::format("detection on image {} has an invalid box {}", d.image_id, to_string(d.box)));
  }
  if (!(d.score >= 0.0 && d.score <= 1.0)) {
    throw EvalInputError(fmt::format("detection on image {} has score {} outside [0, 1]", d.image_id, d.score));
  }
}

void check_ground_truth(const GroundTruth& g) {
  if (!g.box.valid() || !std::isfinite(g.box.x1) || !std::isfinite(g.box.y1) || !std::isfinite(g.box.x2) ||
      !std::isfinite(g.box.y2)) {
    throw EvalInputError(fmt::format("ground truth on image {} has an invalid box {}", g.image_id, to_string(g.box)));
  }
  if (!(g.area >= 0.0) || !std::isfinite(g.area)) {
    throw EvalInputError(fmt::format("ground truth on image {} has invalid area {}", g.image_id, g.area));
  }
}

// Per (category, area range, threshold) curves for one detection budget.
struct CurveTable {
  std::size_t n_cat = 0;
  std::size_t n_area = 0;
  std::size_t n_thr = 0;
  std::vector<Curve> curves;

  Curve& at(std::size_t k, std::size_t a, std::size_t t) { return curves[(k * n_area + a) * n_thr + t]; }
  const Curve& at(std::size_t k, std::size_t a, std::size_t t) const {
    return curves[(k * n_area + a) * n_thr + t];
  }
};

CurveTable run_protocol(const std::vector<Cell>& full_cells, std::size_t n_cat, const std::vector<AreaRange>& ranges,
                        const std::vector<double>& thresholds, std::size_t max_det, unsigned threads) {
  // Truncate each cell to the detection budget (dets are already ranked).
  std::vector<Cell> cells = full_cells;
  for (Cell& c : cells) {
    if (c.dets.size() > max_det) {
      c.dets.resize(max_det);
      c.ious.resize(max_det * c.gts.size());
    }
  }

  const std::size_t n_area = ranges.size();
  const std::size_t n_thr = thresholds.size();
  std::vector<CellOutcome> outcomes(cells.size() * n_area * n_thr);
  parallel_for(cells.size(), threads, [&](std::size_t ci) {
    for (std::size_t a = 0; a < n_area; ++a)
      for (std::size_t t = 0; t < n_thr; ++t)
        outcomes[(ci * n_area + a) * n_thr + t] = match_cell(cells[ci], ranges[a], thresholds[t]);
  });

  std::vector<std::vector<std::size_t>> cells_by_cat(n_cat);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) cells_by_cat[cells[ci].category].push_back(ci);

  CurveTable table{n_cat, n_area, n_thr, std::vector<Curve>(n_cat * n_area * n_thr)};
  parallel_for(n_cat * n_area * n_thr, threads, [&](std::size_t idx) {
    const std::size_t t = idx % n_thr;
    const std::size_t a = (idx / n_thr) % n_area;
    const std::size_t k = idx / (n_thr * n_area);
    std::vector<Detection> keys;
    std::vector<ScoredFlag> flags;
    std::size_t n_gt = 0;
    for (std::size_t ci : cells_by_cat[k]) {
      const CellOutcome& o = outcomes[(ci * n_area + a) * n_thr + t];
      n_gt += o.num_counted_gt;
      for (std::size_t d = 0; d < o.scores.size(); ++d) {
        if (o.ignored[d]) continue;
        keys.push_back(cells[ci].dets[d]);
        flags.push_back({o.scores[d], static_cast<bool>(o.tp[d])});
      }
    }
    std::vector<std::size_t> order(flags.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return ranks_before(keys[x], keys[y]); });
    std::vector<ScoredFlag> ranked;
    ranked.reserve(order.size());
    for (std::size_t i : order) ranked.push_back(flags[i]);
    table.curves[idx] = precision_recall(std::move(ranked), n_gt);
  });
  return table;
}

std::optional<std::size_t> find_threshold(const std::vector<double>& thresholds, double value) {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - value) < 1e-9) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> find_range(const std::vector<AreaRange>& ranges, const std::string& name) {
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (ranges[i].name == name) return i;
  }
  return std::nullopt;
}

}  // namespace

std::vector<double> EvalConfig::coco_iou_thresholds() {
  // Same arithmetic as numpy.linspace(0.5, 0.95, 10).
  const double start = 0.5;
  const double stop = 0.95;
  const double step = (stop - start) / 9.0;
  std::vector<double> t(10);
  for (int i = 0; i < 10; ++i) t[i] = static_cast<double>(i) * step + start;
  t.back() = stop;
  return t;
}

std::vector<AreaRange> EvalConfig::coco_area_ranges() {
  return {{"small", 0.0, 32.0 * 32.0},
          {"medium", 32.0 * 32.0, 96.0 * 96.0},
          {"large", 96.0 * 96.0, std::numeric_limits<double>::infinity()}};
}

std::vector<double> EvalConfig::coco_recall_levels() {
  // numpy.linspace(0, 1, 101)
  const double step = 1.0 / 100.0;
  std::vector<double> r(101);
  for (int i = 0; i < 101; ++i) r[i] = static_cast<double>(i) * step;
  r.back() = 1.0;
  return r;
}

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw EvalInputError("evaluation needs at least one IoU threshold");
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    const double t = iou_thresholds[i];
    if (!(t > 0.0 && t < 1.0)) throw EvalInputError(fmt::format("IoU threshold {} outside (0, 1)", t));
    if (i > 0 && !(t > iou_thresholds[i - 1])) {
      throw EvalInputError(fmt::format("IoU thresholds must be strictly increasing ({} after {})", t,
                                       iou_thresholds[i - 1]));
    }
  }
  if (area_ranges.empty()) throw EvalInputError("evaluation needs at least one area range");
  if (area_ranges.front().lo != 0.0) {
    throw EvalInputError(fmt::format("area ranges must start at 0, first range '{}' starts at {}",
                                     area_ranges.front().name, area_ranges.front().lo));
  }
  for (std::size_t i = 0; i < area_ranges.size(); ++i) {
    const AreaRange& r = area_ranges[i];
    if (!(r.lo < r.hi)) throw EvalInputError(fmt::format("area range '{}' is empty", r.name));
    if (i > 0 && r.lo != area_ranges[i - 1].hi) {
      throw EvalInputError(fmt::format("area range '{}' does not start where '{}' ends", r.name,
                                       area_ranges[i - 1].name));
    }
  }
  if (!std::isinf(area_ranges.back().hi)) {
    throw EvalInputError(fmt::format("last area range '{}' must be unbounded", area_ranges.back().name));
  }
  if (max_detections == 0 || recall_max_detections == 0) {
    throw EvalInputError("detection budgets must be positive");
  }
}

std::vector<std::pair<std::string, std::optional<double>>> EvalReport::metrics() const {
  return {{"ap_all", ap_all},     {"ap50", ap50},         {"ap75", ap75},         {"ap_s", ap_s},
          {"ap_m", ap_m},         {"ap_l", ap_l},         {"recall_s", recall_s}, {"recall_m", recall_m},
          {"recall_l", recall_l}, {"recall_all", recall_all}};
}

GroundTruthSet GroundTruthSet::from_ground_truth(std::vector<GroundTruth> gts) {
  std::set<int64_t> images;
  std::set<int64_t> cats;
  for (const auto& g : gts) {
    images.insert(g.image_id);
    cats.insert(g.class_id);
  }
  return {{images.begin(), images.end()}, {cats.begin(), cats.end()}, std::move(gts)};
}

ImageMatch match_image(std::span<const Detection> dets, std::span<const GroundTruth> gts, double iou_t) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ranks_before(dets[a], dets[b]); });
  std::vector<double> ious(dets.size() * gts.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    for (std::size_t g = 0; g < gts.size(); ++g) ious[r * gts.size() + g] = iou(dets[order[r]].box, gts[g].box);
  const auto match = greedy_match(dets.size(), gts.size(), ious, std::vector<bool>(gts.size(), false), iou_t);

  ImageMatch out;
  out.true_positive.assign(dets.size(), false);
  out.matched_gt.resize(dets.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    out.true_positive[order[r]] = match[r].has_value();
    out.matched_gt[order[r]] = match[r];
  }
  return out;
}

std::optional<double> average_precision(std::span<const ScoredFlag> dets, std::size_t n_gt) {
  std::vector<ScoredFlag> ranked(dets.begin(), dets.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
  return precision_recall(std::move(ranked), n_gt).ap;
}

EvalReport evaluate(std::span<const Detection> dets, const GroundTruthSet& gt, const EvalConfig& cfg) {
  cfg.validate();
  std::unordered_map<int64_t, std::size_t> image_index;
  std::unordered_map<int64_t, std::size_t> cat_index;
  std::vector<int64_t> images = gt.image_ids;
  std::vector<int64_t> cats = gt.category_ids;
  std::sort(images.begin(), images.end());
  std::sort(cats.begin(), cats.end());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!image_index.emplace(images[i], i).second) throw EvalInputError(fmt::format("duplicate image id {}", images[i]));
  }
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (!cat_index.emplace(cats[i], i).second) throw EvalInputError(fmt::format("duplicate category id {}", cats[i]));
  }

  std::map<std::pair<std::size_t, std::size_t>, Cell> grid;
  auto cell_for = [&](int64_t image_id, int64_t class_id, const char* what) -> Cell& {
    const auto ii = image_index.find(image_id);
    if (ii == image_index.end()) throw EvalInputError(fmt::format("{} refers to unknown image id {}", what, image_id));
    const auto ki = cat_index.find(class_id);
    if (ki == cat_index.end()) {
      throw EvalInputError(fmt::format("{} refers to unknown category id {}", what, class_id));
    }
    Cell& c = grid[{ii->second, ki->second}];
    c.image = ii->second;
    c.category = ki->second;
    return c;
  };
  for (const GroundTruth& g : gt.gts) {
    check_ground_truth(g);
    cell_for(g.image_id, g.class_id, "ground truth").gts.push_back(g);
  }
  for (const Detection& d : dets) {
    check_detection(d);
    cell_for(d.image_id, d.class_id, "detection").dets.push_back(d);
  }

  std::vector<Cell> cells;
  cells.reserve(grid.size());
  for (auto& [key, c] : grid) {
    std::stable_sort(c.dets.begin(), c.dets.end(), ranks_before);
    const std::size_t budget = std::max(cfg.max_detections, cfg.recall_max_detections);
    if (c.dets.size() > budget) c.dets.resize(budget);
    c.ious.resize(c.dets.size() * c.gts.size());
    for (std::size_t d = 0; d < c.dets.size(); ++d)
      for (std::size_t g = 0; g < c.gts.size(); ++g) c.ious[d * c.gts.size() + g] = iou(c.dets[d].box, c.gts[g].box);
    cells.push_back(std::move(c));
  }

  // The "all" stratum plus the configured ranges.
  std::vector<AreaRange> ranges{{"all", 0.0, std::numeric_limits<double>::infinity()}};
  ranges.insert(ranges.end(), cfg.area_ranges.begin(), cfg.area_ranges.end());
  const auto& thr = cfg.iou_thresholds;

  const CurveTable ap_table = run_protocol(cells, cats.size(), ranges, thr, cfg.max_detections, cfg.threads);
  const CurveTable recall_table = cfg.recall_max_detections == cfg.max_detections
                                      ? ap_table
                                      : run_protocol(cells, cats.size(), ranges, thr, cfg.recall_max_detections,
                                                     cfg.threads);

  auto collect = [&](const CurveTable& table, std::optional<std::size_t> area, std::optional<std::size_t> only_thr,
                     bool want_ap) -> std::optional<double> {
    if (!area) return std::nullopt;
    std::vector<std::optional<double>> values;
    for (std::size_t k = 0; k < table.n_cat; ++k)
      for (std::size_t t = 0; t < table.n_thr; ++t) {
        if (only_thr && t != *only_thr) continue;
        const Curve& c = table.at(k, *area, t);
        values.push_back(want_ap ? c.ap : c.recall);
      }
    return mean_defined(values);
  };
  auto range_index = [&](const char* name) -> std::optional<std::size_t> {
    const auto i = find_range(cfg.area_ranges, name);
    if (!i) return std::nullopt;
    return *i + 1;
  };

  EvalReport r;
  const std::optional<std::size_t> all = 0;
  r.ap_all = collect(ap_table, all, std::nullopt, true);
  if (const auto t50 = find_threshold(thr, 0.5)) r.ap50 = collect(ap_table, all, t50, true);
  if (const auto t75 = find_threshold(thr, 0.75)) r.ap75 = collect(ap_table, all, t75, true);
  r.ap_s = collect(ap_table, range_index("small"), std::nullopt, true);
  r.ap_m = collect(ap_table, range_index("medium"), std::nullopt, true);
  r.ap_l = collect(ap_table, range_index("large"), std::nullopt, true);
  r.recall_s = collect(recall_table, range_index("small"), std::nullopt, false);
  r.recall_m = collect(recall_table, range_index("medium"), std::nullopt, false);
  r.recall_l = collect(recall_table, range_index("large"), std::nullopt, false);
  r.recall_all = collect(recall_table, all, std::nullopt, false);
  return r;
}

std::string format_report_table(const EvalReport& r) {
  const auto m = r.metrics();
  std::ostringstream head;
  std::ostringstream vals;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const char* sep = i == 0 ? "" : "  ";
    head << sep << fmt::format("{:>10}", m[i].first);
    vals << sep << (m[i].second ? fmt::format("{:>10.3f}", *m[i].second) : fmt::format("{:>10}", "-"));
  }
  return head.str() + "\n" + vals.str() + "\n";
}

}  // namespace detkit
