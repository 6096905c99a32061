#include "debias/params.hpp"

#include <cmath>
#include <fmt/format.h>

namespace debias {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.contains(name)) throw ContractError(fmt::format("parameter '{}' registered twice", name));
  if (!value.requires_grad())
    value = Tensor::from(value.shape(), {value.values().begin(), value.values().end()}, true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor& ParamStore::add_xavier(const std::string& name, Shape shape, std::mt19937_64& rng) {
  const std::size_t fan_in = shape.empty() ? 1 : shape.front();
  const std::size_t fan_out = shape.size() > 1 ? shape.back() : 1;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return add(name, Tensor::from(std::move(shape), std::move(v), true));
}

Tensor& ParamStore::add_normal(const std::string& name, Shape shape, double stddev,
                               std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return add(name, Tensor::from(std::move(shape), std::move(v), true));
}

Tensor& ParamStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape), true));
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError(fmt::format("unknown parameter '{}'", name));
  return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

void ParamStore::restore(const std::vector<std::vector<double>>& snap) {
  if (snap.size() != entries_.size()) throw ContractError("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < snap.size(); ++i) {
    auto dst = entries_[i].second.mutable_values();
    if (dst.size() != snap[i].size())
      throw ContractError(fmt::format("restore: size mismatch for '{}'", entries_[i].first));
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

void adam_step(ParamStore& params, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.at(i).has_grad())
      throw ContractError(fmt::format("adam_step: parameter '{}' has no gradient", params.name_at(i)));
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params.at(i).numel(), 0.0);
      state.v.emplace_back(params.at(i).numel(), 0.0);
    }
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    auto value = p.mutable_values();
    auto grad = p.mutable_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      value[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
      grad[j] = 0.0;
    }
  }
}

}  // namespace debias
