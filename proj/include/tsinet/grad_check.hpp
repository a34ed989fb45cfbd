#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tsinet/rng.hpp"
#include "tsinet/tape.hpp"

namespace tsinet {

/// A tensor the checked function reads, plus the buffer its analytic gradient lands in
/// (typically bound with Tape::parameter(*value, grad)).
template <typename T>
struct GradTarget {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

struct GradCheckOptions {
  double eps = 1e-4;
  /// 0 checks every coordinate; otherwise a seeded sample of this many per target.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst;  // "name[index]"
  double analytic = 0, numeric = 0;
  std::size_t coordinates = 0;
};

/// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Central-difference check of `f(tape) -> scalar Var` against reverse mode.
template <typename T, typename F>
GradCheckReport grad_check(F&& f, const std::vector<GradTarget<T>>& targets, const GradCheckOptions& opt = {}) {
  for (const auto& t : targets) t.grad->fill(T{0});
  {
    Tape<T> tape;
    Var<T> loss = f(tape);
    tape.backward(loss);
  }
  auto eval = [&f]() {
    Tape<T> tape;
    return double(f(tape).value()[0]);
  };
  GradCheckReport report;
  Rng rng(opt.seed);
  for (const auto& t : targets) {
    const Tensor<T> analytic = *t.grad;
    std::vector<std::size_t> coords(t.value->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords && coords.size() > opt.max_coords) {
      for (std::size_t i = 0; i < opt.max_coords; ++i) std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
      coords.resize(opt.max_coords);
    }
    for (std::size_t i : coords) {
      T& x = (*t.value)[i];
      const T saved = x;
      x = saved + static_cast<T>(opt.eps);
      const double up = eval();
      x = saved - static_cast<T>(opt.eps);
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2 * opt.eps);
      const double err = relative_error(double(analytic[i]), numeric);
      ++report.coordinates;
      if (err > report.max_rel_error || report.worst.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        if (err >= report.max_rel_error) {
          report.worst = t.name + "[" + std::to_string(i) + "]";
          report.analytic = double(analytic[i]);
          report.numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace tsinet
