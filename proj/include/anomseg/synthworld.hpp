#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "anomseg/grid.hpp"
#include "anomseg/tensorio.hpp"

namespace anomseg {

enum class Shape { kCircle, kSquare, kTriangle, kDiamond, kCross };

std::string to_string(Shape shape);

struct WorldConfig {
  int height = 64;
  int width = 64;
  // Class 0 is background; trained_shapes[i] is class i + 1.
  std::vector<Shape> trained_shapes = {Shape::kCircle, Shape::kSquare, Shape::kTriangle};
  Shape proxy_shape = Shape::kDiamond;
  Shape anomaly_shape = Shape::kCross;
  int min_shapes = 1;
  int max_shapes = 3;
  double noise_sigma = 0.05;
  double color_jitter = 0.15;
  double min_radius = 6.0;
  double max_radius = 11.0;
  // Proxy instances get a uniform random color instead of a jittered mean, so they
  // cover the color space the way a diverse outside dataset would.
  bool proxy_random_color = true;
  // Random proxy colors stay this far (max-norm) beyond the jitter box of every
  // trained class and the background.
  double proxy_color_margin = 0.2;

  int num_classes() const { return static_cast<int>(trained_shapes.size()) + 1; }
  std::vector<std::string> class_names() const;
  void validate() const;
};

struct LabeledScene {
  Image image;             // H x W x 3 in [0,1]
  LabelMap mask;           // trained labels, 255 on boundary rings and on out-of-distribution shapes
  LabelMap anomaly_mask;   // 1 on the out-of-distribution shape, 255 on its boundary ring, else 0
  std::uint64_t seed = 0;
  Split split = Split::kTrain;
};

// Mean color of a shape class; the background uses kBackgroundColor.
std::array<double, 3> mean_color(Shape shape);
inline constexpr std::array<double, 3> kBackgroundColor = {0.5, 0.5, 0.5};

// True when the pixel-center offset (dy, dx) lies inside `shape` of half-extent r.
bool inside_shape(Shape shape, double dy, double dx, double r);

LabeledScene generate_scene(const WorldConfig& config, std::uint64_t seed, Split split);

// Scene seeds for a split: distinct, reproducible streams derived from one base seed.
std::uint64_t scene_seed(std::uint64_t base_seed, Split split, int index);

std::vector<LabeledScene> generate_split(const WorldConfig& config, std::uint64_t base_seed, Split split, int count);

}  // namespace anomseg
