#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "debias/model.hpp"
#include "debias/synthgen.hpp"
#include "debias/tensor.hpp"
#include "debias/training.hpp"

namespace debias::testkit {

// Largest per-leaf relative error between backward() and central differences:
// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8).
// `build` must return a one-element tensor and be deterministic.
double gradient_error(const std::function<Tensor()>& build, std::vector<Tensor> leaves, double h = 1e-5);

struct OpGradCase {
  std::string name;
  std::function<double(std::uint64_t seed)> error;  // max relative error for this seed
};

// One case per differentiable op (plus a few compositions).
std::vector<OpGradCase> op_gradient_cases();

// Tiny end-to-end model: d = 4, history_len = 2, K = 1.
struct TinySetup {
  std::vector<NewsArticle> catalog;
  std::vector<TrainingSample> batch;
  ModelConfig model;
  TrainConfig train;
};
TinySetup tiny_setup(std::uint64_t seed);

// Gradient-field check of one DebiasGAN update on the tiny model. Shared
// parameters are compared against finite differences of L_B + L_D - alpha L_A,
// discriminator parameters against those of +L_A. Returns the larger of the two
// relative errors, each taken over the concatenated parameter vector.
double model_gradient_error(std::uint64_t seed);

// Brute-force metric oracles: pairwise counting for AUC, rank scans for the rest.
double oracle_auc(const std::vector<double>& s, const std::vector<int>& y);
double oracle_mrr(const std::vector<double>& s, const std::vector<int>& y);
double oracle_ndcg(const std::vector<double>& s, const std::vector<int>& y, int k);

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

// Row-major element read by multi-index.
double at(const Tensor& t, std::initializer_list<std::size_t> index);

// Fresh directory under the system temp dir, named after the running test.
std::filesystem::path scratch_dir();

}  // namespace debias::testkit
