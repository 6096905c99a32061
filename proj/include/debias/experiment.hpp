#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "debias/config.hpp"
#include "debias/eval.hpp"
#include "debias/synthgen.hpp"
#include "debias/training.hpp"

namespace debias {

// Data directory layout shared by generate, train, evaluate and ablate.
std::filesystem::path catalog_path(const std::filesystem::path& dir);
std::filesystem::path logs_path(const std::filesystem::path& dir, Split split);
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);
// Users are not persisted; the returned dataset has an empty user list.
SyntheticDataset read_dataset(const std::filesystem::path& dir);

// Vocabulary size implied by a catalog: largest token id + 1.
int catalog_vocab(const std::vector<NewsArticle>& catalog);

// Training overrides of one ablation variant: full, alpha0, mean_pooling,
// identity_quantization.
TrainConfig variant_config(const TrainConfig& base, const std::string& variant);

struct RunOutcome {
  TrainResult trained;
  MetricReport test_uniform;
  MetricReport test_biased;
};

// Trains on data.train (validating on data.valid) and scores both test splits
// with the serving tower.
RunOutcome train_and_evaluate(const SyntheticDataset& data, int vocab_size, const TrainConfig& cfg,
                              ServingTower tower = ServingTower::kBiasInvariantDefault);

}  // namespace debias
