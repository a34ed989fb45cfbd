#pragma once

#include <memory>
#include <vector>

#include "tsinet/grad_check.hpp"
#include "tsinet/rng.hpp"
#include "tsinet/tape.hpp"

namespace tsinet::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor<float> random_float(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Owns tensors and their gradient buffers for grad_check.
struct Inputs {
  std::vector<std::unique_ptr<Tensor<double>>> values, grads;
  std::vector<GradTarget<double>> targets;

  std::size_t add(std::string name, Tensor<double> v) {
    values.push_back(std::make_unique<Tensor<double>>(std::move(v)));
    grads.push_back(std::make_unique<Tensor<double>>(values.back()->shape()));
    targets.push_back({std::move(name), values.back().get(), grads.back().get()});
    return values.size() - 1;
  }

  Var<double> bind(Tape<double>& tape, std::size_t i) const { return tape.parameter(*values[i], grads[i].get()); }
};

}  // namespace tsinet::testing
