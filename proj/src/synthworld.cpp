#include "anomseg/synthworld.hpp"

#include <algorithm>
#include <cmath>

#include "anomseg/error.hpp"
#include "anomseg/rng.hpp"

namespace anomseg {
namespace {

struct Object {
  Shape shape;
  double cy, cx, r;
  std::array<double, 3> color;
  std::uint8_t label;   // mask label
  bool out_of_distribution;
};

// Uniform color that no trained class or the background can produce, so proxy
// objects never teach uncertainty on in-distribution colors.
std::array<double, 3> proxy_color(const WorldConfig& config, SplitMix64& rng) {
  auto far = [&](const std::array<double, 3>& c, const std::array<double, 3>& mean) {
    double d = 0.0;
    for (int k = 0; k < 3; ++k) d = std::max(d, std::abs(c[k] - mean[k]));
    return d > config.color_jitter + config.proxy_color_margin;
  };
  std::array<double, 3> c{};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (auto& v : c) v = rng.uniform();
    bool ok = far(c, kBackgroundColor);
    for (auto s : config.trained_shapes) ok = ok && far(c, mean_color(s));
    if (ok) return c;
  }
  throw ConfigError("no proxy color clears the trained class colors");
}

}  // namespace

std::string to_string(Shape shape) {
  switch (shape) {
    case Shape::kCircle: return "circle";
    case Shape::kSquare: return "square";
    case Shape::kTriangle: return "triangle";
    case Shape::kDiamond: return "diamond";
    case Shape::kCross: return "cross";
  }
  return "circle";
}

std::array<double, 3> mean_color(Shape shape) {
  switch (shape) {
    case Shape::kCircle: return {0.80, 0.25, 0.25};
    case Shape::kSquare: return {0.25, 0.70, 0.30};
    case Shape::kTriangle: return {0.25, 0.35, 0.80};
    case Shape::kDiamond: return {0.85, 0.80, 0.20};
    case Shape::kCross: return {0.75, 0.30, 0.75};
  }
  return kBackgroundColor;
}

bool inside_shape(Shape shape, double dy, double dx, double r) {
  const double ay = std::abs(dy);
  const double ax = std::abs(dx);
  switch (shape) {
    case Shape::kCircle: return dy * dy + dx * dx <= r * r;
    case Shape::kSquare: return ay <= 0.85 * r && ax <= 0.85 * r;
    case Shape::kTriangle: return dy <= 0.8 * r && ax <= (dy + r) / 1.8;
    case Shape::kDiamond: return ay + ax <= r;
    case Shape::kCross: {
      const double arm = r / 3.0;
      return (ay <= r && ax <= arm) || (ax <= r && ay <= arm);
    }
  }
  return false;
}

std::vector<std::string> WorldConfig::class_names() const {
  std::vector<std::string> names{"background"};
  for (auto s : trained_shapes) names.push_back(to_string(s));
  return names;
}

void WorldConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError("scene must be at least 8x8");
  if (trained_shapes.empty()) throw ConfigError("need at least one trained shape");
  if (std::find(trained_shapes.begin(), trained_shapes.end(), proxy_shape) != trained_shapes.end())
    throw ConfigError("proxy shape must not be a trained shape");
  if (std::find(trained_shapes.begin(), trained_shapes.end(), anomaly_shape) != trained_shapes.end() ||
      anomaly_shape == proxy_shape)
    throw ConfigError("anomaly shape must differ from trained and proxy shapes");
  if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("invalid shapes-per-image range");
  if (noise_sigma < 0 || color_jitter < 0) throw ConfigError("noise and jitter must be nonnegative");
  if (proxy_color_margin < 0) throw ConfigError("proxy color margin must be nonnegative");
  if (min_radius <= 1 || max_radius < min_radius) throw ConfigError("invalid radius range");
}

std::uint64_t scene_seed(std::uint64_t base_seed, Split split, int index) {
  return derive_seed(derive_seed(base_seed, 0x5ce0 + static_cast<std::uint64_t>(split)),
                     static_cast<std::uint64_t>(index));
}

LabeledScene generate_scene(const WorldConfig& config, std::uint64_t seed, Split split) {
  config.validate();
  SplitMix64 rng(seed);
  const int h = config.height;
  const int w = config.width;

  auto jitter = [&](std::array<double, 3> c) {
    for (auto& v : c) v = std::clamp(v + rng.uniform(-config.color_jitter, config.color_jitter), 0.0, 1.0);
    return c;
  };
  auto place = [&](Shape shape, std::uint8_t label, bool ood) {
    const double r = rng.uniform(config.min_radius, config.max_radius);
    const double cy = rng.uniform(r + 1.0, h - r - 1.0);
    const double cx = rng.uniform(r + 1.0, w - r - 1.0);
    const bool random_color = config.proxy_random_color && shape == config.proxy_shape;
    const auto color = random_color ? proxy_color(config, rng) : jitter(mean_color(shape));
    return Object{shape, cy, cx, r, color, label, ood};
  };

  const auto background = jitter(kBackgroundColor);
  const int n_trained_shapes = static_cast<int>(config.trained_shapes.size());
  std::vector<Object> objects;
  auto add_trained = [&](int count) {
    for (int i = 0; i < count; ++i) {
      const int cls = static_cast<int>(rng.below(n_trained_shapes));
      objects.push_back(place(config.trained_shapes[cls], static_cast<std::uint8_t>(cls + 1), false));
    }
  };
  const int total = config.min_shapes + static_cast<int>(rng.below(config.max_shapes - config.min_shapes + 1));
  switch (split) {
    case Split::kTrain:
      add_trained(total);
      break;
    case Split::kProxyAnom:
      add_trained(total - 1);
      objects.push_back(place(config.proxy_shape, kIgnoreLabel, true));
      break;
    case Split::kTest:
      add_trained(total - 1);
      objects.push_back(place(config.anomaly_shape, kIgnoreLabel, true));
      break;
    case Split::kNovel:
      add_trained(std::max(1, total - 1));
      objects.push_back(place(config.anomaly_shape, kIgnoreLabel, true));
      break;
  }

  // Object index per pixel; 0 is background, later objects occlude earlier ones.
  Grid<int> owner(h, w, 1, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (std::size_t o = 0; o < objects.size(); ++o) {
        const auto& ob = objects[o];
        if (inside_shape(ob.shape, y + 0.5 - ob.cy, x + 0.5 - ob.cx, ob.r)) owner(y, x) = static_cast<int>(o) + 1;
      }
    }
  }

  LabeledScene scene;
  scene.seed = seed;
  scene.split = split;
  scene.image = Image(h, w, 3);
  scene.mask = LabelMap(h, w, 1, 0);
  scene.anomaly_mask = LabelMap(h, w, 1, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int o = owner(y, x);
      const auto& color = o == 0 ? background : objects[o - 1].color;
      for (int c = 0; c < 3; ++c) {
        scene.image(y, x, c) = std::clamp(color[c] + config.noise_sigma * rng.normal(), 0.0, 1.0);
      }
      scene.mask(y, x) = o == 0 ? 0 : objects[o - 1].label;
      if (o != 0 && objects[o - 1].out_of_distribution) scene.anomaly_mask(y, x) = 1;

      // Ring: pixel touches an object drawn on top of its own owner.
      bool ring = false;
      bool ood_ring = false;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int q = owner(yy, xx);
          if (q > o) {
            ring = true;
            if (objects[q - 1].out_of_distribution) ood_ring = true;
          }
        }
      }
      if (ring) scene.mask(y, x) = kIgnoreLabel;
      if (ood_ring) scene.anomaly_mask(y, x) = kIgnoreLabel;
    }
  }
  return scene;
}

std::vector<LabeledScene> generate_split(const WorldConfig& config, std::uint64_t base_seed, Split split, int count) {
  std::vector<LabeledScene> scenes;
  scenes.reserve(count);
  for (int i = 0; i < count; ++i) scenes.push_back(generate_scene(config, scene_seed(base_seed, split, i), split));
  return scenes;
}

}  // namespace anomseg
