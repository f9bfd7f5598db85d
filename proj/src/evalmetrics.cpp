#include "anomseg/evalmetrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "anomseg/error.hpp"

namespace anomseg {
namespace {

void require_both_classes(const EvalSet& set) {
  if (set.scores.size() != set.labels.size()) throw DataError("evalset: scores/labels length mismatch");
  if (set.scores.empty()) throw DataError("evalset is empty");
  const auto pos = set.positives();
  if (pos == 0 || pos == set.labels.size()) throw DataError("evalset is single-class");
}

}  // namespace

std::size_t EvalSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

EvalSet build_evalset(std::span<const AnomalyMap> maps, std::span<const LabelMap> anomaly_masks,
                      std::span<const LabelMap> rois) {
  if (maps.size() != anomaly_masks.size()) throw DataError("evalset: maps and masks count differ");
  if (!rois.empty() && rois.size() != maps.size()) throw DataError("evalset: roi count differs");
  EvalSet set;
  for (std::size_t n = 0; n < maps.size(); ++n) {
    const auto& a = maps[n].scores;
    const auto& m = anomaly_masks[n];
    if (!a.same_plane(m) || (!rois.empty() && !a.same_plane(rois[n]))) throw DataError("evalset: shape mismatch");
    for (int i = 0; i < a.pixels(); ++i) {
      const auto label = m.data()[i];
      if (label == kIgnoreLabel) continue;
      if (!rois.empty() && rois[n].data()[i] == 0) continue;
      set.scores.push_back(a.data()[i]);
      set.labels.push_back(label == 1 ? 1 : 0);
    }
  }
  if (set.scores.empty()) throw DataError("evalset is empty");
  const auto pos = set.positives();
  if (pos == 0 || pos == set.labels.size()) throw DataError("evalset is single-class");
  return set;
}

CurveResult roc_pr_curves(const EvalSet& set) {
  require_both_classes(set);
  std::vector<std::size_t> idx(set.scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] > set.scores[b]; });

  const double pos = static_cast<double>(set.positives());
  const double neg = static_cast<double>(set.negatives());
  CurveResult r;
  double tp = 0.0;
  double fp = 0.0;
  double prev_fpr = 0.0;
  double prev_tpr = 0.0;
  bool have_fpr95 = false;
  for (std::size_t k = 0; k < idx.size();) {
    const double thr = set.scores[idx[k]];
    while (k < idx.size() && set.scores[idx[k]] == thr) {
      if (set.labels[idx[k]] == 1) {
        tp += 1.0;
      } else {
        fp += 1.0;
      }
      ++k;
    }
    CurvePoint p;
    p.threshold = thr;
    p.tpr = tp / pos;
    p.fpr = fp / neg;
    p.precision = tp / (tp + fp);
    r.auroc += (p.fpr - prev_fpr) * (p.tpr + prev_tpr) * 0.5;
    r.auprc += (p.tpr - prev_tpr) * p.precision;
    if (!have_fpr95 && p.tpr >= 0.95) {
      r.fpr95 = p.fpr;
      have_fpr95 = true;
    }
    prev_fpr = p.fpr;
    prev_tpr = p.tpr;
    r.points.push_back(p);
  }
  return r;
}

double auroc_mannwhitney(const EvalSet& set) {
  require_both_classes(set);
  std::vector<double> pos_scores;
  std::vector<double> neg_scores;
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    (set.labels[i] == 1 ? pos_scores : neg_scores).push_back(set.scores[i]);
  }
  std::sort(neg_scores.begin(), neg_scores.end());
  // For each anomaly score: negatives strictly below count 1, equal count 1/2.
  double wins = 0.0;
  for (double s : pos_scores) {
    const auto lo = std::lower_bound(neg_scores.begin(), neg_scores.end(), s);
    const auto hi = std::upper_bound(neg_scores.begin(), neg_scores.end(), s);
    wins += static_cast<double>(lo - neg_scores.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos_scores.size()) * static_cast<double>(neg_scores.size()));
}

void write_curve_csvs(const CurveResult& curves, const std::filesystem::path& roc_csv,
                      const std::filesystem::path& pr_csv) {
  std::ofstream roc(roc_csv, std::ios::trunc);
  std::ofstream pr(pr_csv, std::ios::trunc);
  if (!roc || !pr) throw DataError("cannot write curve files");
  roc.precision(10);
  pr.precision(10);
  roc << "fpr,tpr,thr\n0,0,inf\n";
  pr << "recall,precision,thr\n";
  for (const auto& p : curves.points) {
    roc << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
    pr << p.tpr << ',' << p.precision << ',' << p.threshold << '\n';
  }
}

std::string curves_svg(const CurveResult& curves, double prevalence, const std::string& title) {
  constexpr double kSize = 240.0;
  constexpr double kPad = 40.0;
  std::ostringstream svg;
  svg.precision(5);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * kSize + 3 * kPad << "\" height=\""
      << kSize + 2 * kPad << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<text x=\"" << kPad << "\" y=\"16\">" << title << "</text>\n";
  auto panel = [&](double ox, const char* name, const char* xl, const char* yl, auto point_of, double chance_y0,
                   double chance_y1) {
    const double oy = kPad;
    svg << "<g>\n<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << kSize << "\" height=\"" << kSize
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << ox << "\" y=\"" << oy - 4 << "\">" << name << "</text>\n";
    svg << "<text x=\"" << ox + kSize / 2 << "\" y=\"" << oy + kSize + 14 << "\">" << xl << "</text>\n";
    svg << "<text x=\"" << ox - 30 << "\" y=\"" << oy + kSize / 2 << "\">" << yl << "</text>\n";
    svg << "<line x1=\"" << ox << "\" y1=\"" << oy + kSize * (1 - chance_y0) << "\" x2=\"" << ox + kSize
        << "\" y2=\"" << oy + kSize * (1 - chance_y1) << "\" stroke=\"red\" stroke-dasharray=\"4,3\"/>\n";
    svg << "<path fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" d=\"";
    bool first = true;
    for (const auto& p : curves.points) {
      const auto [x, y] = point_of(p);
      svg << (first ? 'M' : 'L') << ox + kSize * x << ',' << oy + kSize * (1 - y) << ' ';
      first = false;
    }
    svg << "\"/>\n</g>\n";
  };
  panel(
      kPad, "ROC", "FPR", "TPR", [](const CurvePoint& p) { return std::pair{p.fpr, p.tpr}; }, 0.0, 1.0);
  panel(
      2 * kPad + kSize, "PR", "recall", "precision",
      [](const CurvePoint& p) { return std::pair{p.tpr, p.precision}; }, prevalence, prevalence);
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace anomseg
