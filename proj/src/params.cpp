#include "cast/params.hpp"

#include <stdexcept>

namespace cast {

std::size_t ParamStore::add(std::string name, Matrix value, bool frozen) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  const std::size_t idx = params_.size();
  index_.emplace(name, idx);
  params_.push_back(Param{std::move(name), std::move(value), !frozen, frozen});
  return idx;
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& pred) {
  for (auto& p : params_) p.trainable = !p.frozen && pred(p.name);
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (p.trainable) out.push_back(p.name);
  return out;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<Matrix> ParamStore::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.value.rows(), p.value.cols());
  return out;
}

}  // namespace cast
