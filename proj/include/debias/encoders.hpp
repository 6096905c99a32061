#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "debias/params.hpp"
#include "debias/tensor.hpp"

namespace debias {

enum class QuantizationMode { kSqrt, kIdentity };
enum class CandidatePooling { kAttention, kMean };

std::string_view quantization_name(QuantizationMode m);
QuantizationMode parse_quantization(std::string_view name);
std::string_view pooling_name(CandidatePooling p);
CandidatePooling parse_pooling(std::string_view name);

// ceil(sqrt(p - 1)), computed in exact integer arithmetic. DomainError for p < 1.
int quantize_position(int position);

// Maps raw display positions onto embedding rows. Buckets are sized from the
// largest training position; larger positions clamp to the top bucket.
struct PositionQuantizer {
  QuantizationMode mode = QuantizationMode::kSqrt;
  int n_buckets = 1;

  static PositionQuantizer fit(QuantizationMode mode, int max_position);
  int bucket(int position) const;
  int default_row() const { return n_buckets; }
};

struct ModelConfig {
  int vocab_size = 2000;
  // Word-embedding width; projected to heads * head_dim when it differs.
  int word_dim = 32;
  int heads = 4;
  int head_dim = 8;
  int title_len = 16;
  int history_len = 20;
  double dropout = 0.2;
  PositionQuantizer quantizer;
  CandidatePooling pooling = CandidatePooling::kAttention;

  int d_model() const { return heads * head_dim; }
  void validate() const;
};

// Dropout seeds for one forward pass; each dropout site takes the next one.
struct ForwardContext {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_seed();
};

void register_encoder_params(ParamStore& params, const ModelConfig& cfg, std::mt19937_64& rng);

struct NewsEncoding {
  Tensor vectors;       // [U, d]
  Tensor pool_weights;  // [U, title_len], zero on pad tokens
};

// `tokens` holds U titles of exactly title_len ids each, row-major.
// An all-pad title encodes to the zero vector.
NewsEncoding encode_news(const ParamStore& params, const ModelConfig& cfg,
                         const std::vector<std::int64_t>& tokens, ForwardContext& ctx);

// clicked: [B, N, d] clicked-news vectors; bucket_ids and keep: B*N entries.
// Returns H [B, N, d]. Slots with keep == 0 never influence real rows.
Tensor behavior_encode(const ParamStore& params, const ModelConfig& cfg, const Tensor& clicked,
                       const std::vector<std::int64_t>& bucket_ids, const Mask& keep,
                       ForwardContext& ctx);

// Multi-head self-attention with key masking, no residual: x [B, T, d].
Tensor self_attention(const ParamStore& params, const std::string& prefix, const ModelConfig& cfg,
                      const Tensor& x, const Mask& keep);

}  // namespace debias
