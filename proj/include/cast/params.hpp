#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cast/matrix.hpp"

namespace cast {

/// One named parameter tensor. `frozen` marks the stand-in pretrained
/// encoders, which no training stage may ever select.
struct Param {
  std::string name;
  Matrix value;
  bool trainable = false;
  bool frozen = false;
};

/// Named, ordered collection of parameter tensors.
class ParamStore {
 public:
  std::size_t add(std::string name, Matrix value, bool frozen = false);

  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  Param& operator[](std::size_t i) { return params_.at(i); }
  const Param& operator[](std::size_t i) const { return params_.at(i); }
  Param& at(std::string_view name) { return params_[index_of(name)]; }
  const Param& at(std::string_view name) const { return params_[index_of(name)]; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Marks parameters matching `pred` trainable and all others not;
  /// frozen parameters are never trainable.
  void set_trainable(const std::function<bool(const std::string&)>& pred);
  std::vector<std::string> trainable_names() const;

  std::size_t element_count() const;
  /// One zero matrix per parameter, shaped like its value.
  std::vector<Matrix> zeros_like() const;

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace cast
