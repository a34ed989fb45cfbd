#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tsinet/tape.hpp"

namespace tsinet {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Flat, insertion-ordered collection of uniquely named parameters.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Shape shape) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, items_.size());
    Tensor<T> zeros(shape);
    items_.push_back({std::move(name), zeros, zeros});
    return items_.size() - 1;
  }

  std::size_t size() const noexcept { return items_.size(); }
  Parameter<T>& operator[](std::size_t i) { return items_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return items_[i]; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Parameter<T>& at(const std::string& name) {
    auto i = find(name);
    if (!i) throw std::out_of_range("unknown parameter: " + name);
    return items_[*i];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto i = find(name);
    if (!i) throw std::out_of_range("unknown parameter: " + name);
    return items_[*i];
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.grad.fill(T{0});
  }

  /// Binds every parameter as a tape leaf, in store order.
  std::vector<Var<T>> bind(Tape<T>& tape, bool with_grad) {
    std::vector<Var<T>> vars;
    vars.reserve(items_.size());
    for (auto& p : items_) vars.push_back(tape.parameter(p.value, with_grad ? &p.grad : nullptr));
    return vars;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<Parameter<T>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tsinet
