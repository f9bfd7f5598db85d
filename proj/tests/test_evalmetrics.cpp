#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "anomseg/error.hpp"
#include "anomseg/evalmetrics.hpp"

using namespace anomseg;

namespace {

EvalSet make_set(std::vector<double> pos, std::vector<double> neg) {
  EvalSet s;
  for (double v : pos) {
    s.scores.push_back(v);
    s.labels.push_back(1);
  }
  for (double v : neg) {
    s.scores.push_back(v);
    s.labels.push_back(0);
  }
  return s;
}

EvalSet random_set(SplitMix64& rng, int n, int levels) {
  EvalSet s;
  for (int i = 0; i < n; ++i) {
    const int label = rng.uniform() < 0.3 ? 1 : 0;
    // coarse score levels force ties
    s.scores.push_back(static_cast<double>(rng.below(levels)) + 0.5 * label * rng.uniform());
    s.labels.push_back(static_cast<std::uint8_t>(label));
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("curve examples") {
  auto perfect = roc_pr_curves(make_set({0.9, 0.8}, {0.2, 0.1}));
  CHECK(perfect.auroc == 1.0);
  CHECK(perfect.auprc == 1.0);
  CHECK(perfect.fpr95 == 0.0);

  auto flat = roc_pr_curves(make_set({0.5, 0.5, 0.5}, {0.5, 0.5}));
  CHECK(flat.auroc == doctest::Approx(0.5));
  CHECK(flat.points.size() == 1);

  auto mixed = make_set({0.8, 0.4}, {0.6, 0.2});
  CHECK(roc_pr_curves(mixed).auroc == doctest::Approx(0.75));
  CHECK(auroc_mannwhitney(mixed) == doctest::Approx(0.75));
  // AP: recall 0.5 at precision 1, recall 1 at precision 2/3.
  CHECK(roc_pr_curves(mixed).auprc == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)));
  CHECK(roc_pr_curves(mixed).fpr95 == doctest::Approx(0.5));

  CHECK(auroc_mannwhitney(make_set({1, 2}, {0})) == 1.0);
  CHECK(auroc_mannwhitney(make_set({1, 1}, {1, 1})) == 0.5);
}

TEST_CASE("trapezoid area equals the Mann-Whitney statistic with ties") {
  SplitMix64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto set = random_set(rng, 20 + static_cast<int>(rng.below(200)), 2 + static_cast<int>(rng.below(12)));
    // pairwise oracle, independent of the library's sort-based implementation
    double wins = 0;
    double pairs = 0;
    for (std::size_t i = 0; i < set.scores.size(); ++i) {
      if (!set.labels[i]) continue;
      for (std::size_t j = 0; j < set.scores.size(); ++j) {
        if (set.labels[j]) continue;
        pairs += 1;
        wins += set.scores[i] > set.scores[j] ? 1.0 : (set.scores[i] == set.scores[j] ? 0.5 : 0.0);
      }
    }
    const auto curves = roc_pr_curves(set);
    CHECK(std::abs(curves.auroc - wins / pairs) < 1e-9);
    CHECK(std::abs(auroc_mannwhitney(set) - wins / pairs) < 1e-9);
  }
}

TEST_CASE("curve invariants") {
  SplitMix64 rng(2);
  for (int t = 0; t < 30; ++t) {
    auto set = random_set(rng, 150, 9);
    const auto c = roc_pr_curves(set);
    for (std::size_t k = 1; k < c.points.size(); ++k) {
      CHECK(c.points[k].fpr >= c.points[k - 1].fpr);
      CHECK(c.points[k].tpr >= c.points[k - 1].tpr);
      CHECK(c.points[k].threshold < c.points[k - 1].threshold);
    }
    CHECK(c.auroc >= 0.0);
    CHECK(c.auroc <= 1.0);
    CHECK(c.auprc >= 0.0);
    CHECK(c.auprc <= 1.0);

    // strictly monotone transform
    auto moved = set;
    for (auto& v : moved.scores) v = std::exp(0.7 * v) - 3.0;
    CHECK(std::abs(roc_pr_curves(moved).auroc - c.auroc) < 1e-12);
  }
}

TEST_CASE("perfect and reversed scorers bound the precision-recall area") {
  std::vector<double> pos, neg;
  for (int i = 0; i < 7; ++i) pos.push_back(20.0 + i);
  for (int i = 0; i < 13; ++i) neg.push_back(static_cast<double>(i));
  CHECK(roc_pr_curves(make_set(pos, neg)).auprc == 1.0);
  // Reversed: every positive ranks below every negative; AP = (1/P) sum_k k / (N + k).
  const auto reversed = roc_pr_curves(make_set(neg, pos));
  double expect = 0;
  const int p = 13, n = 7;
  for (int k = 1; k <= p; ++k) expect += static_cast<double>(k) / (n + k) / p;
  CHECK(reversed.auprc == doctest::Approx(expect).epsilon(1e-12));
  CHECK(reversed.auroc == 0.0);
  CHECK(reversed.fpr95 == 1.0);
}

TEST_CASE("evalset construction") {
  std::vector<AnomalyMap> maps(2);
  std::vector<LabelMap> gt(2, LabelMap(2, 2));
  for (int k = 0; k < 2; ++k) {
    maps[k].scores = Grid<double>(2, 2);
    maps[k].scores.data() = {0.1, 0.2, 0.3, 0.4 + k};
  }
  gt[0].data() = {0, 1, 0, kIgnoreLabel};
  gt[1].data() = {0, 0, 1, 0};
  const auto set = build_evalset(maps, gt);
  CHECK(set.scores.size() == 7);
  CHECK(set.positives() == 2);

  std::vector<LabelMap> roi(2, LabelMap(2, 2, 1, 1));
  roi[0].data()[1] = 0;
  roi[1].data()[2] = 0;
  CHECK(error_of([&] { build_evalset(maps, gt, roi); }).find("single-class") != std::string::npos);

  std::vector<LabelMap> ignored(2, LabelMap(2, 2, 1, kIgnoreLabel));
  CHECK(error_of([&] { build_evalset(maps, ignored); }).find("empty") != std::string::npos);

  CHECK_THROWS_AS(roc_pr_curves(make_set({0.3}, {})), Error);
  CHECK_THROWS_AS(auroc_mannwhitney(make_set({}, {0.3})), Error);
}

TEST_CASE("curve files and svg") {
  testing::TempDir dir;
  const auto c = roc_pr_curves(make_set({0.8, 0.4}, {0.6, 0.2}));
  write_curve_csvs(c, dir / "roc.csv", dir / "pr.csv");
  const auto roc = testing::slurp(dir / "roc.csv");
  const auto pr = testing::slurp(dir / "pr.csv");
  CHECK(roc.rfind("fpr,tpr,thr\n", 0) == 0);
  CHECK(pr.rfind("recall,precision,thr\n", 0) == 0);
  const auto svg = curves_svg(c, 0.5, "demo");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("stroke-dasharray") != std::string::npos);
}
