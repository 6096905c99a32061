#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "debias/tensor.hpp"

namespace debias {

// Flat named registry of trainable leaves. Iteration order is insertion order,
// which fixes the checkpoint layout and the optimizer's update order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& add_xavier(const std::string& name, Shape shape, std::mt19937_64& rng);
  Tensor& add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng);
  Tensor& add_zeros(const std::string& name, Shape shape);

  bool contains(const std::string& name) const { return index_.contains(name); }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name_at(std::size_t i) const { return entries_[i].first; }
  Tensor& at(std::size_t i) { return entries_[i].second; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }

  void zero_grad();
  std::size_t total_values() const;

  // Value snapshot in registry order, for best-epoch retention.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update over every parameter, then zeroes grads.
// Throws ContractError naming the first parameter without a gradient.
void adam_step(ParamStore& params, AdamState& state);

}  // namespace debias
