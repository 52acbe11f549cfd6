#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace mfgdta {

/// Dense time-major table: one layer of `width` entries (sublinks or nodes)
/// per time level.
class Field {
 public:
  Field() = default;
  Field(int levels, std::size_t width, double fill = 0.0)
      : levels_(levels), width_(width), data_(static_cast<std::size_t>(levels) * width, fill) {}

  int levels() const { return levels_; }
  std::size_t width() const { return width_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int k, std::size_t e) {
    assert(k >= 0 && k < levels_ && e < width_);
    return data_[static_cast<std::size_t>(k) * width_ + e];
  }
  double operator()(int k, std::size_t e) const {
    assert(k >= 0 && k < levels_ && e < width_);
    return data_[static_cast<std::size_t>(k) * width_ + e];
  }

  std::span<double> layer(int k) { return {data_.data() + static_cast<std::size_t>(k) * width_, width_}; }
  std::span<const double> layer(int k) const {
    return {data_.data() + static_cast<std::size_t>(k) * width_, width_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  int levels_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

}  // namespace mfgdta
