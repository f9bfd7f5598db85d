#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"

#include "anomseg/error.hpp"
#include "anomseg/scoring.hpp"
#include "anomseg/toynet.hpp"

using namespace anomseg;

namespace {

ProbMap probs_of(std::initializer_list<double> row) {
  ProbMap p(1, 1, static_cast<int>(row.size()));
  std::copy(row.begin(), row.end(), p.data().begin());
  return p;
}

ProbMap random_probs(int h, int w, int s, SplitMix64& rng, double sharpness = 3.0) {
  ProbMap p(h, w, s);
  for (int i = 0; i < p.pixels(); ++i) {
    auto row = p.pixel(i);
    double sum = 0;
    for (auto& v : row) sum += v = std::exp(sharpness * rng.normal());
    for (auto& v : row) v /= sum;
  }
  return p;
}

// Plain loops, no shared code with the library forward pass.
std::vector<double> oracle_logits(const NetParams& n, const Image& img, int y, int x) {
  const int r = n.k / 2;
  std::vector<double> hidden(n.hidden);
  for (int h = 0; h < n.hidden; ++h) {
    double acc = n.b1(h);
    for (int dy = 0; dy < n.k; ++dy)
      for (int dx = 0; dx < n.k; ++dx)
        for (int c = 0; c < 3; ++c) {
          const int yy = y + dy - r, xx = x + dx - r;
          const double v = (yy < 0 || xx < 0 || yy >= img.height() || xx >= img.width())
                               ? 0.0
                               : 2.0 * (img(yy, xx, c) - 0.5);
          acc += n.w1(h, (dy * n.k + dx) * 3 + c) * v;
        }
    hidden[h] = std::max(acc, 0.0);
  }
  std::vector<double> out(n.classes);
  for (int s = 0; s < n.classes; ++s) {
    out[s] = n.b2(s);
    for (int h = 0; h < n.hidden; ++h) out[s] += n.w2(s, h) * hidden[h];
  }
  return out;
}

double oracle_max_softmax(std::vector<double> y, double t) {
  double mx = -1e300;
  for (auto& v : y) mx = std::max(mx, v /= t);
  double sum = 0;
  for (double v : y) sum += std::exp(v - mx);
  return 1.0 / sum;
}

double oracle_objective(const NetParams& n, const Image& img, double t) {
  double total = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) total += std::log(oracle_max_softmax(oracle_logits(n, img, y, x), t));
  return total;
}

}  // namespace

TEST_CASE("msp examples") {
  CHECK(score_msp(probs_of({0, 1, 0})).scores.data()[0] == 0.0);
  CHECK(score_msp(probs_of({0.2, 0.2, 0.2, 0.2, 0.2})).scores.data()[0] == doctest::Approx(0.8));
  CHECK(score_msp(probs_of({0.7, 0.2, 0.1})).scores.data()[0] == doctest::Approx(0.3));
}

TEST_CASE("odin reduces to msp and to the uniform limit") {
  const auto net = NetParams::init(4, 3);
  const auto img = testing::random_image(6, 7, 1);
  const auto msp = score_msp(softmax_map(forward(net, img).logits));
  CHECK(score_odin(net, img, {1.0, 0.0}).scores == msp.scores);
  const auto flat = score_odin(net, img, {1e9, 0.0});
  for (double v : flat.scores.data()) CHECK(v == doctest::Approx(0.75).epsilon(1e-6));
  CHECK_THROWS_AS(score_odin(net, img, {0.0, 0.0}), Error);
}

TEST_CASE("odin matches a straight-line reimplementation") {
  const auto net = NetParams::init(4, 5, 3, 6);
  const auto img = testing::random_image(4, 4, 2);
  const double t = 2.0, eps = 0.01;
  // Oracle gradient by central differences of the summed objective.
  const auto grad = testing::numeric_gradient(
      [&](const std::vector<double>& x) {
        Image im = img;
        im.data() = x;
        return oracle_objective(net, im, t);
      },
      img.data(), 1e-6);
  Image perturbed = img;
  for (std::size_t i = 0; i < grad.size(); ++i) perturbed.data()[i] += eps * (grad[i] > 0 ? 1.0 : -1.0);
  const auto odin = score_odin(net, img, {t, eps});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double expect = 1.0 - oracle_max_softmax(oracle_logits(net, perturbed, y, x), t);
      CHECK(std::abs(odin.scores(y, x) - expect) < 1e-6);
    }
}

TEST_CASE("mahalanobis examples") {
  const GaussianModel unit(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  FeatureMap f(1, 1, 3);
  f.data() = {3, 4, 0};
  std::vector<GaussianModel> one = {unit};
  CHECK(score_mahalanobis(f, one).scores.data()[0] == doctest::Approx(25.0));

  const GaussianModel shifted(Eigen::Vector3d(3, 4, 0), Eigen::MatrixXd::Identity(3, 3));
  std::vector<GaussianModel> two = {unit, shifted};
  CHECK(score_mahalanobis(f, two).scores.data()[0] == doctest::Approx(0.0));

  // Quadratic forms 4 and 9: the minimum wins.
  const GaussianModel a(Eigen::Vector3d(2, 0, 0), Eigen::MatrixXd::Identity(3, 3));
  const GaussianModel b(Eigen::Vector3d(0, 3, 0), Eigen::MatrixXd::Identity(3, 3));
  FeatureMap z(1, 1, 3);
  std::vector<GaussianModel> ab = {a, b};
  CHECK(score_mahalanobis(z, ab).scores.data()[0] == doctest::Approx(4.0));
  CHECK_THROWS_AS(score_mahalanobis(z, std::vector<GaussianModel>{}), Error);
}

TEST_CASE("mc dropout mutual information") {
  SplitMix64 rng(1);
  const auto p = random_probs(3, 3, 4, rng);
  std::vector<ProbMap> same = {p, p, p};
  const auto zero = score_mc_dropout(same);
  for (double v : zero.scores.data()) CHECK(std::abs(v) < 1e-12);

  std::vector<ProbMap> split = {probs_of({1, 0}), probs_of({0, 1})};
  CHECK(score_mc_dropout(split).scores.data()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  for (int t = 0; t < 1000; ++t) {
    const int r = 2 + static_cast<int>(rng.below(6));
    std::vector<ProbMap> samples;
    for (int k = 0; k < r; ++k) samples.push_back(random_probs(1, 1, 3, rng));
    const double mi = score_mc_dropout(samples).scores.data()[0];
    REQUIRE(mi >= -1e-9);
    REQUIRE(mi > 1e-12);  // distinct samples give strictly positive MI
  }
  std::vector<ProbMap> lone = {p};
  CHECK_THROWS_AS(score_mc_dropout(lone), Error);
}

TEST_CASE("mc dropout samples are seeded") {
  const auto net = NetParams::init(4, 8);
  const auto img = testing::random_image(5, 5, 3);
  const auto a = mc_dropout_samples(net, img, 4, 0.25, 11);
  const auto b = mc_dropout_samples(net, img, 4, 0.25, 11);
  REQUIRE(a.size() == 4);
  for (std::size_t r = 0; r < a.size(); ++r) CHECK(a[r] == b[r]);
  CHECK_FALSE(a[0] == a[1]);
}

TEST_CASE("void score") {
  auto y = LogitMap(1, 1, 4);
  y.data() = {1, 2, 0.5, -1e9};
  CHECK(score_void(softmax_map(y), 3).scores.data()[0] < 1e-12);
  CHECK(score_void(probs_of({0.25, 0.25, 0.25, 0.25}), 3).scores.data()[0] == doctest::Approx(0.25));
  CHECK(score_void(probs_of({0, 0, 0, 1}), 3).scores.data()[0] == 1.0);
  CHECK_THROWS_AS(score_void(probs_of({0.5, 0.5}), 3), Error);
}

TEST_CASE("embedding density") {
  Eigen::Matrix2d cov;
  cov << 2, 0.5, 0.5, 1;
  const GaussianModel g(Eigen::Vector2d(1, -1), cov);
  FeatureMap f(2, 2, 2);
  for (int i = 0; i < 4; ++i) {
    f.pixel(i)[0] = 1;
    f.pixel(i)[1] = -1;
  }
  const double expect = std::log(2 * std::numbers::pi) + 0.5 * std::log(cov.determinant());
  const auto nll = score_embedding_density(f, g, 1);
  for (double v : nll.scores.data()) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  const auto up = score_embedding_density(f, g, 3);
  CHECK(up.height() == 6);
  for (double v : up.scores.data()) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(score_embedding_density(f, GaussianModel(), 1), Error);
}

TEST_CASE("bilinear upsampling with aligned corners") {
  Grid<double> c(2, 3, 1, 4.25);
  const auto flat = upsample_bilinear(c, 7, 5);
  for (double v : flat.data()) CHECK(v == doctest::Approx(4.25));

  Grid<double> m(2, 2);
  m.data() = {0, 1, 1, 0};
  // 2x2 -> 3x3: the center sits halfway between all four corners.
  const auto up = upsample_bilinear(m, 3, 3);
  CHECK(up(1, 1) == doctest::Approx(0.5));
  CHECK(up(0, 0) == 0.0);
  CHECK(up(0, 2) == 1.0);
  CHECK(up(0, 1) == doctest::Approx(0.5));
  // 2x2 -> 4x4 keeps the corner values.
  const auto up4 = upsample_bilinear(m, 4, 4);
  CHECK(up4(0, 0) == 0.0);
  CHECK(up4(3, 0) == 1.0);
  CHECK(up4(1, 1) == doctest::Approx(4.0 / 9.0));
}

TEST_CASE("entropy and margin examples") {
  CHECK(score_entropy(probs_of({0.25, 0.25, 0.25, 0.25}), true).scores.data()[0] == doctest::Approx(1.0));
  CHECK(score_entropy(probs_of({0, 0, 1, 0}), true).scores.data()[0] == 0.0);
  CHECK(score_entropy(probs_of({0.5, 0.5, 0, 0}), true).scores.data()[0] == doctest::Approx(0.5));
  CHECK(score_entropy(probs_of({0.5, 0.5, 0, 0}), false).scores.data()[0] == doctest::Approx(std::log(2.0)));

  CHECK(score_margin(probs_of({0, 1, 0})).scores.data()[0] == 0.0);
  CHECK(score_margin(probs_of({0.25, 0.25, 0.25, 0.25})).scores.data()[0] == doctest::Approx(1.0));
  CHECK(score_margin(probs_of({0.6, 0.3, 0.1})).scores.data()[0] == doctest::Approx(0.7));
}

TEST_CASE("bounded scores stay in [0,1] and maps are finite") {
  SplitMix64 rng(77);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_probs(5, 4, 2 + static_cast<int>(rng.below(5)), rng, 4.0);
    for (const auto& m : {score_msp(p), score_entropy(p, true), score_margin(p), score_void(p, p.channels() - 1)}) {
      CHECK(m.height() == 5);
      CHECK(m.width() == 4);
      for (double v : m.scores.data()) {
        REQUIRE(std::isfinite(v));
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("entropy and msp rank pixels identically for two classes") {
  SplitMix64 rng(5);
  const auto p = random_probs(8, 8, 2, rng);
  const auto h = score_entropy(p, true).scores.data();
  const auto m = score_msp(p).scores.data();
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (m[i] < m[j]) REQUIRE(h[i] <= h[j]);
    }
}

TEST_CASE("class gaussians are fitted per ground-truth class") {
  FeatureMap f(2, 2, 1);
  f.data() = {0.0, 2.0, 10.0, 12.0};
  LabelMap l(2, 2);
  l.data() = {0, 0, kIgnoreLabel, kIgnoreLabel};
  std::vector<FeatureMap> fs = {f};
  std::vector<LabelMap> ls = {l};
  CHECK_THROWS_AS(fit_class_gaussians(fs, ls, 2), Error);  // class 1 has no pixels
  l.data() = {0, 0, 1, 1};
  ls = {l};
  const auto g = fit_class_gaussians(fs, ls, 2);
  REQUIRE(g.size() == 2);
  CHECK(g[0].mean()(0) == doctest::Approx(1.0));
  CHECK(g[1].mean()(0) == doctest::Approx(11.0));
  CHECK(g[1].cov()(0, 0) == doctest::Approx(2.0));
}
