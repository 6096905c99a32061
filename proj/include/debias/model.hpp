#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "debias/encoders.hpp"
#include "debias/synthgen.hpp"

namespace debias {

enum class Tower { kBiasAware, kBiasInvariant };

// One user with a click history, scored against a list of candidates.
struct ScoringInput {
  std::vector<std::int64_t> history_news;  // oldest first
  std::vector<int> history_positions;      // raw display positions
  std::vector<std::int64_t> candidate_news;
  std::vector<int> candidate_positions;
};

struct EncodedBatch {
  std::size_t batch = 0, candidates = 0, history = 0;
  Tensor history_states;   // H [B, N, d]
  Mask history_keep;       // B * N
  Tensor candidate_repr;   // r_c [B, C, d]
};

struct TowerOutput {
  Tensor interest;  // u [B, C, d]
  Tensor scores;    // w^T u, [B, C]
};

// Candidate-aware attention over the real rows of H:
//   u = d_c * sum_i softmax_i(d_c^T tanh(W h_i + b)) h_i
// H [B, N, d], keep B*N, queries [B, C, d], W [d, d], b [d] -> u [B, C, d].
// Mean pooling replaces the softmax weights with uniform ones over real rows.
// A history with no real rows yields u = 0.
Tensor candidate_attention(const Tensor& history, const Mask& keep, const Tensor& queries,
                           const Tensor& weight, const Tensor& bias,
                           CandidatePooling pooling = CandidatePooling::kAttention);

// z = sigmoid(w_p^T u - w_n^T u'); u, u' [B, d] -> [B].
Tensor discriminate(const Tensor& u, const Tensor& u_prime, const Tensor& w_p, const Tensor& w_n);

// Mean over the batch of -log z, with z clamped to [1e-12, 1 - 1e-12].
Tensor adversarial_loss(const Tensor& z);

// The twin click towers: shared news encoder, behavior Transformer, position
// table and scorer w; separate candidate attentions (W_c, w_c) and (W'_c, w'_c);
// a linear discriminator (w_p, w_n); and PAL's per-bucket seen logits.
class DebiasModel {
 public:
  DebiasModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Title encodings for `news_ids`, rows in the given order.
  NewsEncoding encode_titles(const std::vector<NewsArticle>& catalog,
                             const std::vector<std::int64_t>& news_ids, ForwardContext& ctx) const;

  // Histories longer than history_len keep their most recent entries. Every
  // input must carry the same number of candidates. When `catalog_vectors`
  // ([n_news, d], e.g. cached for inference) is given, titles are not re-encoded.
  EncodedBatch encode_batch(const std::vector<ScoringInput>& inputs,
                            const std::vector<NewsArticle>& catalog, ForwardContext& ctx,
                            const Tensor* catalog_vectors = nullptr) const;

  // `position_rows`: one position-embedding row per candidate (B * C).
  TowerOutput tower(const EncodedBatch& enc, Tower which,
                    const std::vector<std::int64_t>& position_rows) const;

  std::vector<std::int64_t> true_position_rows(const std::vector<ScoringInput>& inputs) const;
  std::vector<std::int64_t> default_position_rows(std::size_t count) const;
  std::vector<std::int64_t> random_position_rows(std::size_t count, std::mt19937_64& rng) const;

  Tensor discriminate(const Tensor& u, const Tensor& u_prime) const;

  // Single-candidate conveniences: (score, interest vector [d]).
  std::pair<double, Tensor> bias_aware_score(const std::vector<std::int64_t>& history,
                                             const std::vector<int>& positions,
                                             std::int64_t candidate, int candidate_position,
                                             const std::vector<NewsArticle>& catalog) const;
  // Train mode draws the candidate bucket from `rng`; test mode (rng == nullptr)
  // uses the dedicated default row.
  std::pair<double, Tensor> bias_invariant_score(const std::vector<std::int64_t>& history,
                                                 const std::vector<int>& positions,
                                                 std::int64_t candidate,
                                                 const std::vector<NewsArticle>& catalog,
                                                 std::mt19937_64* rng = nullptr) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace debias
