#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pangaea/tensor.hpp"

namespace pangaea {

struct NamedParam {
  std::string name;
  Tensor value;
};

// Ordered registry of learnable leaves. Order is registration order and is
// what optimizers and checkpoints iterate over.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> data);
  Tensor add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add_ones(const std::string& name, Shape shape);
  void remove_prefix(const std::string& prefix);

  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<NamedParam>& entries() const noexcept { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

 private:
  std::vector<NamedParam> entries_;
};

void fill_normal(std::span<double> out, double stddev, std::mt19937_64& rng);

}  // namespace pangaea
