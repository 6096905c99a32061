#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "debias/eval.hpp"
#include "debias/model.hpp"
#include "debias/synthgen.hpp"

namespace debias {

struct TrainingSample {
  std::int64_t impression_id = 0;
  std::int64_t user_id = 0;
  std::vector<std::int64_t> history_news;  // most recent history_len, oldest first
  std::vector<int> history_positions;
  std::int64_t positive = 0;
  int positive_position = 1;
  std::vector<std::int64_t> negatives;  // exactly K
  std::vector<int> negative_positions;
};

struct SampleStats {
  std::int64_t impressions = 0;
  std::int64_t samples = 0;
  std::int64_t skipped_no_click = 0;
  std::int64_t skipped_no_negative = 0;
};

struct SampleSet {
  std::vector<TrainingSample> samples;
  SampleStats stats;
};

// One sample per clicked item. Negatives come from the same impression's
// non-clicked items: without replacement when at least K exist, otherwise with
// replacement. Histories hold the user's clicks from strictly earlier
// impressions in log order. Throws ContractError on a non-train impression.
SampleSet build_samples(const ImpressionLog& train, int negatives, int history_len,
                        std::uint64_t seed);

// Mean over rows of -log softmax(scores)[0]; scores [B, 1+K], column 0 clicked.
Tensor click_loss(const Tensor& scores);

enum class Method { kDebiasGan, kNone, kIpw, kPal };
std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct TrainConfig {
  Method method = Method::kDebiasGan;
  double alpha = 0.5;
  int negatives = 4;
  int epochs = 3;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double dropout = 0.2;
  std::uint64_t seed = 42;
  int word_dim = 32;
  int heads = 4;
  int head_dim = 8;
  int history_len = 20;
  CandidatePooling pooling = CandidatePooling::kAttention;
  QuantizationMode quantization = QuantizationMode::kSqrt;
  // Off skips the discriminator entirely; used to check that alpha = 0 is inert.
  bool adversarial = true;
  double propensity_floor = 0.05;

  static TrainConfig desk();
  static TrainConfig full();
  void validate() const;
};

// Model shape for a catalog: vocabulary and title length come from the data,
// the quantizer is fitted to the largest position in `train`.
ModelConfig model_config_for(const TrainConfig& cfg, int vocab_size, int title_len,
                             const ImpressionLog& train);

struct BatchLoss {
  Tensor objective;  // what backward() runs on
  double l_b = 0.0, l_d = 0.0, l_a = 0.0;
  double total = 0.0;  // L_B + L_D - alpha * L_A
};

// Losses of one batch. `step_seed` fixes dropout masks and the random
// candidate positions of the bias-invariant tower. `propensities` is read by
// the IPW method only.
BatchLoss batch_loss(const DebiasModel& model, const std::vector<NewsArticle>& catalog,
                     std::span<const TrainingSample> batch, const TrainConfig& cfg,
                     std::uint64_t step_seed, const PropensityTable* propensities = nullptr);

struct EpochLog {
  int epoch = 0;
  double l_b = 0.0, l_d = 0.0, l_a = 0.0, total = 0.0;  // sample-weighted epoch means
  double valid_auc = 0.0;
};

std::string training_log_header();
std::string training_log_line(const EpochLog& e);
void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

struct TrainData {
  const std::vector<NewsArticle>& catalog;
  const ImpressionLog& train;
  const ImpressionLog& valid;
  int vocab_size = 0;
};

struct TrainResult {
  DebiasModel model;  // parameters of the best validation epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;
  SampleStats stats;
  std::optional<PropensityTable> propensities;
};

// Throws NumericalError if a loss turns non-finite.
TrainResult train(const TrainData& data, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace debias
