#include "pangaea/params.hpp"

#include <algorithm>

#include "pangaea/error.hpp"

namespace pangaea {

void fill_normal(std::span<double> out, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out) v = dist(rng);
}

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<double> data) {
  require(!contains(name), ErrorKind::Contract, "parameter registered twice: " + name);
  auto t = Tensor::from(std::move(shape), std::move(data), true);
  entries_.push_back({name, t});
  return t;
}

Tensor ParamStore::add_normal(const std::string& name, Shape shape, double stddev,
                              std::mt19937_64& rng) {
  std::vector<double> data(shape_size(shape));
  fill_normal(data, stddev, rng);
  return add(name, std::move(shape), std::move(data));
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  std::vector<double> data(shape_size(shape), 0.0);
  return add(name, std::move(shape), std::move(data));
}

Tensor ParamStore::add_ones(const std::string& name, Shape shape) {
  std::vector<double> data(shape_size(shape), 1.0);
  return add(name, std::move(shape), std::move(data));
}

void ParamStore::remove_prefix(const std::string& prefix) {
  std::erase_if(entries_, [&](const NamedParam& p) { return p.name.rfind(prefix, 0) == 0; });
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const NamedParam& p) { return p.name == name; });
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& p : entries_)
    if (p.name == name) return p.value;
  fail(ErrorKind::Contract, "unknown parameter: " + name);
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& p : entries_) out.push_back(p.value);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_) n += p.value.size();
  return n;
}

}  // namespace pangaea
