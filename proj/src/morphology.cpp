#include "tsinet/morphology.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace tsinet {

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (bits_.size() != height_ * width_) {
    throw ShapeError("mask buffer has " + std::to_string(bits_.size()) + " pixels, expected " +
                     std::to_string(height_ * width_));
  }
  for (auto& b : bits_) {
    if (b > 1) throw std::invalid_argument("mask values must be 0 or 1");
  }
}

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto b : bits_) n += b;
  return n;
}

bool BinaryMask::subset_of(const BinaryMask& other) const {
  if (height_ != other.height_ || width_ != other.width_) return false;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i] && !other.bits_[i]) return false;
  return true;
}

BinaryMask skeletonize(const BinaryMask& mask) {
  const std::ptrdiff_t H = std::ptrdiff_t(mask.height()), W = std::ptrdiff_t(mask.width());
  std::vector<std::uint8_t> img = mask.bits();
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> int {
    return (y < 0 || y >= H || x < 0 || x >= W) ? 0 : img[std::size_t(y * W + x)];
  };
  std::vector<std::size_t> doomed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      doomed.clear();
      for (std::ptrdiff_t y = 0; y < H; ++y) {
        for (std::ptrdiff_t x = 0; x < W; ++x) {
          if (!img[std::size_t(y * W + x)]) continue;
          // P2..P9 clockwise starting north.
          const int p[8] = {px(y - 1, x),     px(y - 1, x + 1), px(y, x + 1),     px(y + 1, x + 1),
                            px(y + 1, x),     px(y + 1, x - 1), px(y, x - 1),     px(y - 1, x - 1)};
          const int b = p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
          if (b < 2 || b > 6) continue;
          int a = 0;
          for (int i = 0; i < 8; ++i) a += (p[i] == 0 && p[(i + 1) % 8] == 1);
          if (a != 1) continue;
          const int p2 = p[0], p4 = p[2], p6 = p[4], p8 = p[6];
          if (pass == 0) {
            if (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0) continue;
          } else {
            if (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0) continue;
          }
          doomed.push_back(std::size_t(y * W + x));
        }
      }
      for (auto i : doomed) img[i] = 0;
      changed = changed || !doomed.empty();
    }
  }
  return BinaryMask(mask.height(), mask.width(), std::move(img));
}

namespace {

std::uint32_t find_root(std::vector<std::uint32_t>& parent, std::uint32_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

void unite(std::vector<std::uint32_t>& parent, std::uint32_t a, std::uint32_t b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  if (a < b) parent[b] = a;
  else parent[a] = b;
}

}  // namespace

LabelMap connected_components(const BinaryMask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) {
    throw std::invalid_argument("connectivity must be 4 or 8, got " + std::to_string(connectivity));
  }
  const std::size_t H = mask.height(), W = mask.width();
  LabelMap out{H, W, std::vector<std::uint32_t>(H * W, 0), 0, connectivity};
  std::vector<std::uint32_t> parent{0};
  // First pass: provisional labels from already-visited neighbors.
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (!mask.get(y, x)) continue;
      std::uint32_t nb[4];
      int n = 0;
      if (x > 0 && out.labels[y * W + x - 1]) nb[n++] = out.labels[y * W + x - 1];
      if (y > 0) {
        if (out.labels[(y - 1) * W + x]) nb[n++] = out.labels[(y - 1) * W + x];
        if (connectivity == 8) {
          if (x > 0 && out.labels[(y - 1) * W + x - 1]) nb[n++] = out.labels[(y - 1) * W + x - 1];
          if (x + 1 < W && out.labels[(y - 1) * W + x + 1]) nb[n++] = out.labels[(y - 1) * W + x + 1];
        }
      }
      if (n == 0) {
        const auto id = static_cast<std::uint32_t>(parent.size());
        parent.push_back(id);
        out.labels[y * W + x] = id;
        continue;
      }
      std::uint32_t lab = nb[0];
      for (int i = 1; i < n; ++i) lab = std::min(lab, nb[i]);
      out.labels[y * W + x] = lab;
      for (int i = 0; i < n; ++i) unite(parent, lab, nb[i]);
    }
  }
  // Second pass: dense labels in first-encounter order.
  std::vector<std::uint32_t> dense(parent.size(), 0);
  std::uint32_t next = 0;
  for (auto& l : out.labels) {
    if (!l) continue;
    const std::uint32_t r = find_root(parent, l);
    if (!dense[r]) dense[r] = ++next;
    l = dense[r];
  }
  out.count = next;
  return out;
}

}  // namespace tsinet
