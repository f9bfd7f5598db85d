#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "anomseg/grid.hpp"
#include "anomseg/scoring.hpp"

namespace anomseg {

// Flattened pixel scores with binary labels (1 = anomaly).
struct EvalSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;

  std::size_t positives() const;
  std::size_t negatives() const { return labels.size() - positives(); }
};

// Drops pixels annotated 255 and pixels outside the ROI (roi value 0). `rois` may be
// empty (no restriction) or hold one mask per map.
EvalSet build_evalset(std::span<const AnomalyMap> maps, std::span<const LabelMap> anomaly_masks,
                      std::span<const LabelMap> rois = {});

struct CurvePoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  double precision = 1.0;
};

struct CurveResult {
  std::vector<CurvePoint> points;  // one per distinct score, descending threshold
  double auroc = 0.0;
  double auprc = 0.0;
  double fpr95 = 1.0;
};

// Threshold sweep with "positive iff score >= threshold"; tied scores share one point.
CurveResult roc_pr_curves(const EvalSet& set);

// Fraction of (anomaly, normal) pairs ranked correctly, ties counted 1/2.
double auroc_mannwhitney(const EvalSet& set);

void write_curve_csvs(const CurveResult& curves, const std::filesystem::path& roc_csv,
                      const std::filesystem::path& pr_csv);
// Two-panel SVG (ROC and PR) with dashed no-skill lines.
std::string curves_svg(const CurveResult& curves, double prevalence, const std::string& title);

}  // namespace anomseg
