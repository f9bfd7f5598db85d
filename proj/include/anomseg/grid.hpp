#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace anomseg {

// Dense height x width x channels array, row-major with channels innermost.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, int channels = 1, T fill = T{})
      : height_(height),
        width_(width),
        channels_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int pixels() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  template <typename U>
  bool same_plane(const Grid<U>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  T& operator()(int y, int x, int c = 0) {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < channels_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  const T& operator()(int y, int x, int c = 0) const {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < channels_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  // All channels of linear pixel index i = y * width + x.
  std::span<T> pixel(int i) {
    return {data_.data() + static_cast<std::size_t>(i) * channels_, static_cast<std::size_t>(channels_)};
  }
  std::span<const T> pixel(int i) const {
    return {data_.data() + static_cast<std::size_t>(i) * channels_, static_cast<std::size_t>(channels_)};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

using Image = Grid<double>;          // H x W x 3, values in [0,1]
using LogitMap = Grid<double>;       // H x W x S class scores
using ProbMap = Grid<double>;        // H x W x S softmax probabilities
using FeatureMap = Grid<double>;     // H x W x hidden, rectified
using LabelMap = Grid<std::uint8_t>; // H x W x 1

inline constexpr std::uint8_t kIgnoreLabel = 255;

}  // namespace anomseg
