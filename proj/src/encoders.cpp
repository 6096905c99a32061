#include "debias/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "debias/synthgen.hpp"

namespace debias {

std::string_view quantization_name(QuantizationMode m) {
  return m == QuantizationMode::kSqrt ? "sqrt" : "identity";
}

QuantizationMode parse_quantization(std::string_view name) {
  if (name == "sqrt") return QuantizationMode::kSqrt;
  if (name == "identity") return QuantizationMode::kIdentity;
  throw ConfigError(fmt::format("unknown quantization '{}'", name));
}

std::string_view pooling_name(CandidatePooling p) {
  return p == CandidatePooling::kAttention ? "attention" : "mean";
}

CandidatePooling parse_pooling(std::string_view name) {
  if (name == "attention") return CandidatePooling::kAttention;
  if (name == "mean") return CandidatePooling::kMean;
  throw ConfigError(fmt::format("unknown candidate pooling '{}'", name));
}

int quantize_position(int position) {
  if (position < 1) throw DomainError(fmt::format("quantize_position: position {} < 1", position));
  const auto x = static_cast<std::int64_t>(position) - 1;
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(x)));
  while (r * r > x) --r;
  while ((r + 1) * (r + 1) <= x) ++r;
  return static_cast<int>(r * r == x ? r : r + 1);
}

PositionQuantizer PositionQuantizer::fit(QuantizationMode mode, int max_position) {
  if (max_position < 1)
    throw DomainError(fmt::format("PositionQuantizer: max position {} < 1", max_position));
  PositionQuantizer q;
  q.mode = mode;
  q.n_buckets = mode == QuantizationMode::kSqrt ? quantize_position(max_position) + 1 : max_position;
  return q;
}

int PositionQuantizer::bucket(int position) const {
  const int raw = mode == QuantizationMode::kSqrt ? quantize_position(position)
                                                  : (position < 1 ? quantize_position(position)
                                                                  : position - 1);
  return std::min(raw, n_buckets - 1);
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v <= 0) throw ConfigError(fmt::format("{} must be positive, got {}", field, v));
  };
  positive(vocab_size, "vocab_size");
  positive(word_dim, "word_dim");
  positive(heads, "heads");
  positive(head_dim, "head_dim");
  positive(title_len, "title_len");
  positive(history_len, "history_len");
  positive(quantizer.n_buckets, "n_buckets");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError(fmt::format("dropout must lie in [0, 1), got {}", dropout));
}

std::uint64_t ForwardContext::next_seed() { return derive_seed(seed, 7, counter++); }

namespace {

void register_attention(ParamStore& params, const std::string& prefix, const ModelConfig& cfg,
                        std::mt19937_64& rng) {
  const auto d = static_cast<std::size_t>(cfg.d_model());
  const auto dh = static_cast<std::size_t>(cfg.head_dim);
  for (int h = 0; h < cfg.heads; ++h) {
    params.add_xavier(fmt::format("{}.q{}", prefix, h), {d, dh}, rng);
    params.add_xavier(fmt::format("{}.k{}", prefix, h), {d, dh}, rng);
    params.add_xavier(fmt::format("{}.v{}", prefix, h), {d, dh}, rng);
  }
  params.add_xavier(prefix + ".out", {d, d}, rng);
}

// keep[B, T] -> per-score keep[B, T(query), T(key)]
Mask key_mask(const Mask& keep, std::size_t batch, std::size_t t) {
  Mask m(batch * t * t);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < t; ++q)
      std::copy_n(keep.begin() + static_cast<std::ptrdiff_t>(b * t), t,
                  m.begin() + static_cast<std::ptrdiff_t>((b * t + q) * t));
  return m;
}

}  // namespace

void register_encoder_params(ParamStore& params, const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model());
  const auto w = static_cast<std::size_t>(cfg.word_dim);
  params.add_normal("news.word_emb", {static_cast<std::size_t>(cfg.vocab_size), w}, 0.1, rng);
  if (w != d) params.add_xavier("news.proj", {w, d}, rng);
  register_attention(params, "news.mhsa", cfg, rng);
  params.add_xavier("news.pool.proj", {d, d}, rng);
  params.add_zeros("news.pool.bias", {d});
  params.add_normal("news.pool.query", {d}, 0.1, rng);
  register_attention(params, "behavior.mhsa", cfg, rng);
  auto& pos = params.add_normal("position.emb", {static_cast<std::size_t>(cfg.quantizer.n_buckets) + 1, d},
                                0.1, rng);
  // The default row starts neutral: the bias-invariant tower never trains it,
  // so serving adds nothing rather than an arbitrary random offset.
  auto rows = pos.mutable_values();
  std::fill(rows.end() - static_cast<std::ptrdiff_t>(d), rows.end(), 0.0);
}

Tensor self_attention(const ParamStore& params, const std::string& prefix, const ModelConfig& cfg,
                      const Tensor& x, const Mask& keep) {
  const std::size_t batch = x.dim(0), t = x.dim(1);
  if (keep.size() != batch * t)
    throw ShapeError(fmt::format("self_attention: {} mask entries for input {}", keep.size(),
                                 shape_str(x.shape())));
  const Mask scores_keep = key_mask(keep, batch, t);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    Tensor q = matmul(x, params.get(fmt::format("{}.q{}", prefix, h)));
    Tensor k = matmul(x, params.get(fmt::format("{}.k{}", prefix, h)));
    Tensor v = matmul(x, params.get(fmt::format("{}.v{}", prefix, h)));
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
    Tensor attn = masked_softmax_lastdim(scores, scores_keep);
    heads.push_back(matmul(attn, v));
  }
  return matmul(concat_lastdim(heads), params.get(prefix + ".out"));
}

NewsEncoding encode_news(const ParamStore& params, const ModelConfig& cfg,
                         const std::vector<std::int64_t>& tokens, ForwardContext& ctx) {
  const auto t = static_cast<std::size_t>(cfg.title_len);
  if (tokens.size() % t != 0)
    throw ContractError(fmt::format("encode_news: {} tokens is not a multiple of title_len {}",
                                    tokens.size(), t));
  const std::size_t n = tokens.size() / t;
  for (auto tok : tokens) {
    if (tok < 0 || tok >= cfg.vocab_size)
      throw DomainError(fmt::format("encode_news: token id {} outside vocabulary of {}", tok,
                                    cfg.vocab_size));
  }
  Mask keep(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) keep[i] = tokens[i] != 0;

  Tensor x = embedding_lookup(params.get("news.word_emb"), tokens, {n, t});
  if (params.contains("news.proj")) x = matmul(x, params.get("news.proj"));
  Tensor y = dropout(add(x, self_attention(params, "news.mhsa", cfg, x, keep)), cfg.dropout,
                     ctx.next_seed(), ctx.training);

  Tensor hidden = tanh(add(matmul(y, params.get("news.pool.proj")), params.get("news.pool.bias")));
  Tensor logits = matmul(hidden, params.get("news.pool.query"));  // [n, t]
  Tensor weights = masked_softmax_lastdim(logits, keep);
  const auto d = static_cast<std::size_t>(cfg.d_model());
  Tensor pooled = reshape(matmul(reshape(weights, {n, 1, t}), y), {n, d});
  return {pooled, weights};
}

Tensor behavior_encode(const ParamStore& params, const ModelConfig& cfg, const Tensor& clicked,
                       const std::vector<std::int64_t>& bucket_ids, const Mask& keep,
                       ForwardContext& ctx) {
  if (clicked.rank() != 3)
    throw ShapeError(fmt::format("behavior_encode: clicked vectors {} are not [B, N, d]",
                                 shape_str(clicked.shape())));
  const std::size_t batch = clicked.dim(0), n = clicked.dim(1);
  if (bucket_ids.size() != batch * n || keep.size() != batch * n)
    throw ContractError(fmt::format(
        "behavior_encode: {} positions and {} mask entries for {} history slots", bucket_ids.size(),
        keep.size(), batch * n));
  Tensor x = add(clicked, embedding_lookup(params.get("position.emb"), bucket_ids, {batch, n}));
  return dropout(add(x, self_attention(params, "behavior.mhsa", cfg, x, keep)), cfg.dropout,
                 ctx.next_seed(), ctx.training);
}

}  // namespace debias
