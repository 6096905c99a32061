#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "debias/model.hpp"
#include "debias/synthgen.hpp"

namespace debias {

// Per-impression ranking metrics. Each returns nullopt unless the impression
// has at least one clicked and one unclicked item.
//
// Tie rule: AUC counts a tied (positive, negative) pair as one half, so
// constant scores give exactly 0.5. MRR and nDCG rank with a stable sort on
// descending score, so tied items keep their original display order.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);
std::optional<double> mrr(std::span<const double> scores, std::span<const int> labels);
std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const int> labels, int k);

struct ImpressionScores {
  std::int64_t impression_id = 0;
  std::vector<double> scores;
  std::vector<int> labels;
};

struct MetricReport {
  double auc = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::int64_t n_impressions = 0;  // impressions that entered the averages
  std::int64_t n_skipped = 0;      // impressions lacking a click or a non-click

  bool operator==(const MetricReport&) const = default;
};

// Unweighted mean over qualifying impressions, reduced in impression-id order.
// Metrics are NaN when no impression qualifies.
MetricReport compute_metrics(std::vector<ImpressionScores> impressions);

enum class ServingTower { kBiasInvariantDefault, kBiasAwareTruePos };
std::string_view tower_name(ServingTower t);
ServingTower parse_tower(std::string_view name);

// Each user's clicked (news, position) pairs, oldest first, capped at the most
// recent `history_len`.
class UserHistories {
 public:
  struct History {
    std::vector<std::int64_t> news;
    std::vector<int> positions;
  };

  static UserHistories from_log(const ImpressionLog& log, int history_len);
  const History& of(std::int64_t user_id) const;

 private:
  std::unordered_map<std::int64_t, History> by_user_;
  History empty_;
};

// Worker count for evaluation: DEBIAS_RANK_THREADS when set, else 1.
int evaluation_threads();

std::vector<ImpressionScores> score_impressions(const DebiasModel& model,
                                                const std::vector<NewsArticle>& catalog,
                                                const UserHistories& histories,
                                                const ImpressionLog& log, ServingTower tower,
                                                int threads = 0);

MetricReport evaluate(const DebiasModel& model, const std::vector<NewsArticle>& catalog,
                      const UserHistories& histories, const ImpressionLog& log,
                      ServingTower tower = ServingTower::kBiasInvariantDefault, int threads = 0);

struct MetricRow {
  std::string run_id;
  std::string split;
  std::string tower;
  MetricReport report;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::string metrics_csv_header();
std::string metrics_csv_line(const MetricRow& row);

// ---------------------------------------------------------------------------
// Baseline debiasers.

struct PropensityTable {
  std::vector<double> propensity;  // one entry per quantized bucket
  double floor = 0.05;

  double at(int bucket) const;
};

// CTR-ratio estimator: propensity(b) = CTR(b) / max_b' CTR(b'), clipped to
// [floor, 1]. Buckets without clicks fall back to the global CTR ratio.
PropensityTable estimate_propensities(const ImpressionLog& log, const PositionQuantizer& quantizer,
                                      double floor = 0.05);

// Softmax click loss with each row scaled by 1 / propensity of its positive
// (column 0). scores [B, 1+K]; one bucket per row.
Tensor ipw_click_loss(const Tensor& scores, const std::vector<int>& positive_buckets,
                      const PropensityTable& table);

// PAL factorization: click probability = sigmoid(relevance) * seen_prob.
double pal_score(double relevance_score, double seen_prob);
// Serving drops the seen factor, so the score never depends on position.
double pal_serving_score(double relevance_score);
// Learned seen probability of the bucket holding `position`.
double pal_seen_prob(const DebiasModel& model, int position);

// Pointwise binary cross-entropy of sigmoid(scores) * sigmoid(seen_logit[bucket]);
// column 0 is the clicked item, the rest are unclicked. scores [B, C].
Tensor pal_loss(const Tensor& scores, const Tensor& seen_logits,
                const std::vector<std::int64_t>& buckets);

}  // namespace debias
