#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"

#include "anomseg/error.hpp"
#include "anomseg/synthworld.hpp"
#include "anomseg/toynet.hpp"

using namespace anomseg;
using testing::numeric_gradient;
using testing::random_image;
using testing::relative_error;

namespace {

NetParams small_net(std::uint64_t seed, int classes = 4) {
  // Biases nonzero so ReLU kinks are not clustered at the origin.
  auto p = NetParams::init(classes, seed, 3, 4);
  SplitMix64 rng(seed ^ 0xb1a5);
  for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1(i) = 0.1 * rng.normal();
  for (Eigen::Index i = 0; i < p.b2.size(); ++i) p.b2(i) = 0.1 * rng.normal();
  return p;
}

LabelMap random_labels(int h, int w, int classes, std::uint64_t seed, bool with_ignore) {
  SplitMix64 rng(seed);
  LabelMap m(h, w);
  for (auto& v : m.data()) {
    v = static_cast<std::uint8_t>(rng.below(classes));
    if (with_ignore && rng.uniform() < 0.2) v = kIgnoreLabel;
  }
  if (with_ignore) m.data()[0] = 0;
  return m;
}

LogitMap logits_of(std::initializer_list<double> row) {
  LogitMap y(1, 1, static_cast<int>(row.size()));
  std::copy(row.begin(), row.end(), y.data().begin());
  return y;
}

// Parameter-gradient check: analytic gradient of `loss` vs central differences.
double param_gradient_error(const NetParams& params, const std::function<LossAndGrads(const NetParams&)>& loss) {
  const auto analytic = loss(params).grads.flatten();
  const auto numeric = numeric_gradient(
      [&](const std::vector<double>& x) {
        NetParams p = params;
        p.unflatten(x);
        return loss(p).value;
      },
      params.flatten());
  return relative_error(analytic, numeric);
}

}  // namespace

TEST_CASE("zero weights give zero logits and a uniform softmax") {
  const auto p = NetParams::zeros(4);
  const auto f = forward(p, random_image(5, 6, 1));
  for (double v : f.logits.data()) CHECK(v == 0.0);
  const auto probs = softmax_map(f.logits);
  for (double v : probs.data()) CHECK(v == 0.25);
}

TEST_CASE("forward is deterministic; dropout depends only on its seed") {
  const auto p = NetParams::init(4, 3);
  const auto img = random_image(8, 8, 2);
  CHECK(forward(p, img).logits == forward(p, img).logits);
  const auto a = forward(p, img, {0.25, 1}).logits;
  const auto b = forward(p, img, {0.25, 2}).logits;
  CHECK_FALSE(a == b);
  CHECK(forward(p, img, {0.25, 1}).logits == a);
  const auto fwd = forward(p, img);
  for (double v : fwd.features.data()) CHECK(v >= 0.0);
}

TEST_CASE("softmax examples") {
  auto p = softmax_map(logits_of({0, 0, 0, 0}));
  for (double v : p.data()) CHECK(v == doctest::Approx(0.25));
  p = softmax_map(logits_of({1000, 0}));
  CHECK(std::abs(p.data()[0] - 1.0) < 1e-12);
  CHECK(std::isfinite(p.data()[1]));
  p = softmax_map(logits_of({std::log(2.0), 0}));
  CHECK(p.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const auto net = NetParams::init(5, 9);
  const auto probs = softmax_map(forward(net, random_image(6, 6, 4)).logits);
  for (int i = 0; i < probs.pixels(); ++i) {
    const auto row = probs.pixel(i);
    CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-6);
  }
}

TEST_CASE("predict_mask picks the first maximum and ignores logit shifts") {
  CHECK(predict_mask(logits_of({3, 1, 2})).data()[0] == 0);
  CHECK(predict_mask(logits_of({5, 5})).data()[0] == 0);
  CHECK(predict_mask(logits_of({1, 7, 7})).data()[0] == 1);
  const auto net = NetParams::init(4, 10);
  auto y = forward(net, random_image(6, 6, 5)).logits;
  const auto m = predict_mask(y);
  for (int i = 0; i < y.pixels(); ++i) {
    for (auto& v : y.pixel(i)) v += 3.5 * i - 40.0;
  }
  CHECK(predict_mask(y) == m);
}

TEST_CASE("cross-entropy values") {
  LabelMap l(1, 1);
  l.data()[0] = 2;
  CHECK(ce_logit_loss(logits_of({-1e3, -1e3, 1e3, -1e3}), l).value < 1e-12);
  CHECK(ce_logit_loss(logits_of({0, 0, 0, 0}), l).value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  l.data()[0] = kIgnoreLabel;
  CHECK_THROWS_WITH(ce_logit_loss(logits_of({0, 0}), l), "empty loss");
}

TEST_CASE("anomaly loss values") {
  CHECK(anom_logit_loss(logits_of({0, 0, 0, 0})).value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // ln 4 is the global minimum: any other point scores higher.
  SplitMix64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto v = anom_logit_loss(logits_of({rng.normal(), rng.normal(), rng.normal(), rng.normal()})).value;
    CHECK(v >= std::log(4.0) - 1e-12);
  }
  // Near one-hot: three probabilities at ~1e-12 clamp to 1e-12.
  const double big = std::log(1.0 / 1e-12);
  const auto v = anom_logit_loss(logits_of({big, 0, 0, 0})).value;
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(0.25 * 3.0 * std::log(1e12)).epsilon(1e-6));
}

TEST_CASE("distillation values") {
  // new = old with an extra logit at -1e9
  auto old1 = logits_of({40, -40, -40});
  auto new1 = logits_of({40, -40, -40, -1e9});
  CHECK(distill_logit_loss(new1, old1).value == doctest::Approx(0.0).epsilon(1e-12));

  auto old2 = logits_of({0.3, -1.2, 0.8});
  auto new2 = logits_of({0.3, -1.2, 0.8, -1e9});
  const auto q = softmax_map(old2);
  double h = 0;
  for (double p : q.data()) h -= p * std::log(p);
  CHECK(distill_logit_loss(new2, old2).value == doctest::Approx(h).epsilon(1e-12));

  CHECK_THROWS_AS(distill_logit_loss(logits_of({0, 0}), logits_of({0, 0})), Error);
  CHECK_THROWS_AS(distill_logit_loss(logits_of({0, 0, 0, 0}), logits_of({0, 0})), Error);
}

TEST_CASE("loss gradients match central differences on 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    const auto net = small_net(seed);
    const auto img = random_image(4, 4, seed + 100);
    const auto labels = random_labels(4, 4, 4, seed + 200, true);
    CHECK(param_gradient_error(net, [&](const NetParams& p) { return loss_ce(p, img, labels); }) < 1e-5);
    CHECK(param_gradient_error(net, [&](const NetParams& p) { return loss_anom(p, img); }) < 1e-5);

    LabelMap region(4, 4);
    for (int i = 0; i < 16; i += 3) region.data()[i] = 1;
    CHECK(param_gradient_error(net, [&](const NetParams& p) { return loss_anom(p, img, &region); }) < 1e-5);

    const auto teacher = forward(small_net(seed + 50, 3), img).logits;
    CHECK(param_gradient_error(net, [&](const NetParams& p) { return loss_distill(p, img, teacher, &labels); }) <
          1e-5);
  }
}

TEST_CASE("input gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    const auto net = small_net(seed);
    const auto img = random_image(4, 4, seed + 300);
    const auto labels = random_labels(4, 4, 4, seed + 400, false);
    auto scalar = [&](const LogitMap& y) { return ce_logit_loss(y, labels); };
    const auto g = input_gradient(net, img, scalar);
    const auto numeric = numeric_gradient(
        [&](const std::vector<double>& x) {
          Image im = img;
          im.data() = x;
          return ce_logit_loss(forward(net, im).logits, labels).value;
        },
        img.data());
    CHECK(relative_error(g.data(), numeric) < 1e-4);
  }
}

TEST_CASE("input gradient degenerate cases") {
  const auto img = random_image(4, 4, 1);
  LabelMap labels(4, 4);
  const auto zero = input_gradient(NetParams::zeros(4, 3, 4), img, [&](const LogitMap& y) { return ce_logit_loss(y, labels); });
  for (double v : zero.data()) CHECK(v == 0.0);
  const auto constant = input_gradient(small_net(2), img, [](const LogitMap& y) {
    return LogitLoss{7.0, LogitMap(y.height(), y.width(), y.channels())};
  });
  for (double v : constant.data()) CHECK(v == 0.0);
}

TEST_CASE("entropy-max objective is the convex combination") {
  const auto net = small_net(3);
  std::vector<Image> imgs = {random_image(4, 4, 1), random_image(4, 4, 2)};
  std::vector<LabelMap> labels = {random_labels(4, 4, 4, 3, false), random_labels(4, 4, 4, 4, false)};
  std::vector<LabeledSample> lab = {{&imgs[0], &labels[0], nullptr}, {&imgs[1], &labels[1], nullptr}};
  std::vector<ProxySample> px = {{&imgs[1], nullptr}};
  const auto l0 = loss_total_entmax(net, lab, px, 0.0);
  const auto l1 = loss_total_entmax(net, {}, px, 1.0);
  const auto lh = loss_total_entmax(net, lab, px, 0.5);
  const double ce = 0.5 * (loss_ce(net, imgs[0], labels[0]).value + loss_ce(net, imgs[1], labels[1]).value);
  CHECK(l0.value == doctest::Approx(ce).epsilon(1e-12));
  CHECK(l1.value == doctest::Approx(loss_anom(net, imgs[1]).value).epsilon(1e-12));
  CHECK(lh.value == doctest::Approx(0.5 * l0.value + 0.5 * l1.value).epsilon(1e-12));
  CHECK_THROWS_AS(loss_total_entmax(net, {}, px, 0.5), Error);
}

TEST_CASE("training contracts") {
  WorldConfig world;
  const auto scenes = generate_split(world, 4, Split::kTrain, 12);
  std::vector<LabeledSample> lab;
  for (const auto& s : scenes) lab.push_back({&s.image, &s.mask, nullptr});
  const auto init = NetParams::init(world.num_classes(), 5);

  TrainOptions zero;
  zero.epochs = 0;
  CHECK(train(init, lab, {}, zero).params == init);

  TrainOptions frozen;
  frozen.epochs = 2;
  frozen.freeze_encoder = true;
  const auto f = train(init, lab, {}, frozen).params;
  CHECK(f.w1 == init.w1);
  CHECK(f.b1 == init.b1);
  CHECK_FALSE(f.w2 == init.w2);

  TrainOptions o;
  o.epochs = 2;
  o.seed = 77;
  const auto a = train(init, lab, {}, o);
  const auto b = train(init, lab, {}, o);
  CHECK(a.params == b.params);
  CHECK(a.loss_trace == b.loss_trace);
  o.jobs = 3;
  CHECK(train(init, lab, {}, o).params == a.params);

  TrainOptions bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(train(init, lab, {}, bad), Error);
}

TEST_CASE("cross-entropy decreases over 30 epochs on 50 scenes") {
  WorldConfig world;
  const auto scenes = generate_split(world, 1, Split::kTrain, 50);
  std::vector<LabeledSample> lab;
  for (const auto& s : scenes) lab.push_back({&s.image, &s.mask, nullptr});
  TrainOptions o;
  o.epochs = 30;
  o.lr = 0.05;
  o.seed = 1;
  const auto r = train(NetParams::init(world.num_classes(), 1), lab, {}, o);
  REQUIRE(r.loss_trace.size() == 30);
  CHECK(r.loss_trace.back() < r.loss_trace.front());
}

TEST_CASE("head extension") {
  const auto net = NetParams::init(4, 12);
  const auto ext = extend_head(net, 99);
  CHECK(ext.classes == 5);
  CHECK(ext.w1 == net.w1);
  CHECK(ext.b1 == net.b1);
  CHECK(ext.w2.topRows(4) == net.w2);
  CHECK(ext.b2.head(4) == net.b2);

  const auto img = random_image(6, 6, 8);
  const auto y = forward(net, img).logits;
  const auto y2 = forward(ext, img).logits;
  for (int i = 0; i < y.pixels(); ++i)
    for (int s = 0; s < 4; ++s) CHECK(y2.pixel(i)[s] == y.pixel(i)[s]);

  const double norm = ext.w2.row(4).norm();
  CHECK(norm <= 0.01 * std::sqrt(32.0) * 5);
  // Frozen with the reference implementation for seed 99.
  CHECK(norm == doctest::Approx(0.053301077552174).epsilon(1e-9));

  const auto twice = extend_head(extend_head(net, 5), 5);
  const auto composed = extend_head(extend_head(net, 5), 5);
  CHECK(twice == composed);
  CHECK(twice.classes == 6);
  CHECK(twice.w2.row(4) == extend_head(net, 5).w2.row(4));
}

TEST_CASE("params save and load round trip") {
  testing::TempDir dir;
  const auto net = NetParams::init(4, 21);
  save_params(dir.path(), net);
  const auto back = load_params(dir.path());
  // Stored as float32.
  CHECK(back.classes == 4);
  CHECK((back.w1 - net.w1).cwiseAbs().maxCoeff() < 1e-6);
  save_params(dir / "again", back);
  CHECK(load_params(dir / "again") == back);
}
