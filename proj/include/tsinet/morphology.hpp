#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tsinet/errors.hpp"

namespace tsinet {

/// H×W mask with values in {0,1}, one byte per pixel, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width) : height_(height), width_(width), bits_(height * width, 0) {}
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool get(std::size_t y, std::size_t x) const { return bits_[y * width_ + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v = true) { bits_[y * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }

  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  std::size_t count() const;

  /// True if every set pixel of `this` is also set in `other`.
  bool subset_of(const BinaryMask& other) const;

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t height_ = 0, width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Connected-component labels: 0 is background, components are 1..count in
/// order of first row-major encounter.
struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<std::uint32_t> labels;
  std::size_t count = 0;
  int connectivity = 8;
};

/// Zhang-Suen thinning to a fixed point. Pixels outside the image count as background.
BinaryMask skeletonize(const BinaryMask& mask);

/// Two-pass union-find labeling under 4- or 8-connectivity.
LabelMap connected_components(const BinaryMask& mask, int connectivity = 8);

inline std::size_t component_count(const BinaryMask& mask, int connectivity = 8) {
  return connected_components(mask, connectivity).count;
}

}  // namespace tsinet
