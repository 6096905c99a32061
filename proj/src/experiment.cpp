#include "debias/experiment.hpp"

#include <algorithm>
#include <fmt/format.h>

namespace debias {

std::filesystem::path catalog_path(const std::filesystem::path& dir) { return dir / "catalog.jsonl"; }

std::filesystem::path logs_path(const std::filesystem::path& dir, Split split) {
  return dir / fmt::format("logs-{}.jsonl", split_name(split));
}

void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data) {
  std::filesystem::create_directories(dir);
  write_catalog(catalog_path(dir), data.catalog);
  for (auto s : {Split::kTrain, Split::kValid, Split::kTestBiased, Split::kTestUniform})
    write_logs(logs_path(dir, s), data.split(s));
}

SyntheticDataset read_dataset(const std::filesystem::path& dir) {
  auto need = [](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw ConfigError(fmt::format("missing data file {}", p.string()));
    return p;
  };
  SyntheticDataset d;
  d.catalog = read_catalog(need(catalog_path(dir)));
  d.train = read_logs(need(logs_path(dir, Split::kTrain)));
  d.valid = read_logs(need(logs_path(dir, Split::kValid)));
  d.test_biased = read_logs(need(logs_path(dir, Split::kTestBiased)));
  d.test_uniform = read_logs(need(logs_path(dir, Split::kTestUniform)));
  return d;
}

int catalog_vocab(const std::vector<NewsArticle>& catalog) {
  std::int64_t top = 0;
  for (const auto& a : catalog)
    for (auto t : a.title_tokens) top = std::max(top, t);
  return static_cast<int>(top + 1);
}

TrainConfig variant_config(const TrainConfig& base, const std::string& variant) {
  TrainConfig c = base;
  c.method = Method::kDebiasGan;
  if (variant == "full") {
  } else if (variant == "alpha0") {
    c.alpha = 0.0;
  } else if (variant == "mean_pooling") {
    c.pooling = CandidatePooling::kMean;
  } else if (variant == "identity_quantization") {
    c.quantization = QuantizationMode::kIdentity;
  } else {
    throw ConfigError(fmt::format("unknown ablation variant '{}'", variant));
  }
  return c;
}

RunOutcome train_and_evaluate(const SyntheticDataset& data, int vocab_size, const TrainConfig& cfg,
                              ServingTower tower) {
  RunOutcome out{train({data.catalog, data.train, data.valid, vocab_size}, cfg), {}, {}};
  const auto histories = UserHistories::from_log(data.train, cfg.history_len);
  out.test_uniform = evaluate(out.trained.model, data.catalog, histories, data.test_uniform, tower);
  out.test_biased = evaluate(out.trained.model, data.catalog, histories, data.test_biased, tower);
  return out;
}

}  // namespace debias
