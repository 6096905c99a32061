#include "debias/model.hpp"

#include <fmt/format.h>
#include <unordered_map>

namespace debias {

Tensor candidate_attention(const Tensor& history, const Mask& keep, const Tensor& queries,
                           const Tensor& weight, const Tensor& bias, CandidatePooling pooling) {
  if (history.rank() != 3 || queries.rank() != 3 || history.dim(0) != queries.dim(0) ||
      history.dim(2) != queries.dim(2))
    throw ShapeError(fmt::format("candidate_attention: history {} and queries {} do not conform",
                                 shape_str(history.shape()), shape_str(queries.shape())));
  const std::size_t batch = history.dim(0), n = history.dim(1), c = queries.dim(1);
  if (keep.size() != batch * n)
    throw ShapeError(fmt::format("candidate_attention: {} mask entries for {} history slots",
                                 keep.size(), batch * n));
  Mask logit_keep(batch * c * n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < c; ++j)
      std::copy_n(keep.begin() + static_cast<std::ptrdiff_t>(b * n), n,
                  logit_keep.begin() + static_cast<std::ptrdiff_t>((b * c + j) * n));

  Tensor weights;
  if (pooling == CandidatePooling::kAttention) {
    Tensor keys = tanh(add(matmul(history, transpose(weight)), bias));  // [B, N, d]
    Tensor logits = matmul(queries, transpose(keys));                   // [B, C, N]
    weights = masked_softmax_lastdim(logits, logit_keep);
  } else {
    weights = masked_softmax_lastdim(Tensor::zeros({batch, c, n}), logit_keep);
  }
  return mul(queries, matmul(weights, history));
}

Tensor discriminate(const Tensor& u, const Tensor& u_prime, const Tensor& w_p, const Tensor& w_n) {
  return sigmoid(sub(matmul(u, w_p), matmul(u_prime, w_n)));
}

Tensor adversarial_loss(const Tensor& z) {
  return scale(mean(log(clamp(z, 1e-12, 1.0 - 1e-12))), -1.0);
}

DebiasModel::DebiasModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  register_encoder_params(params_, cfg_, rng);
  const auto d = static_cast<std::size_t>(cfg_.d_model());
  params_.add_xavier("aware.W", {d, d}, rng);
  params_.add_zeros("aware.b", {d});
  params_.add_xavier("invariant.W", {d, d}, rng);
  params_.add_zeros("invariant.b", {d});
  params_.add_xavier("score.w", {d}, rng);
  params_.add_normal("disc.wp", {d}, 0.1, rng);
  params_.add_normal("disc.wn", {d}, 0.1, rng);
  params_.add_zeros("pal.seen_logit", {static_cast<std::size_t>(cfg_.quantizer.n_buckets), 1});
}

NewsEncoding DebiasModel::encode_titles(const std::vector<NewsArticle>& catalog,
                                        const std::vector<std::int64_t>& news_ids,
                                        ForwardContext& ctx) const {
  const auto t = static_cast<std::size_t>(cfg_.title_len);
  std::vector<std::int64_t> tokens;
  tokens.reserve(news_ids.size() * t);
  for (auto id : news_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= catalog.size())
      throw DomainError(fmt::format("news id {} not in catalog of {}", id, catalog.size()));
    const auto& title = catalog[static_cast<std::size_t>(id)].title_tokens;
    if (title.size() != t)
      throw ContractError(fmt::format("news {} has {} title tokens, model expects {}", id,
                                      title.size(), t));
    tokens.insert(tokens.end(), title.begin(), title.end());
  }
  return encode_news(params_, cfg_, tokens, ctx);
}

EncodedBatch DebiasModel::encode_batch(const std::vector<ScoringInput>& inputs,
                                       const std::vector<NewsArticle>& catalog,
                                       ForwardContext& ctx, const Tensor* catalog_vectors) const {
  if (inputs.empty()) throw ContractError("encode_batch: empty batch");
  EncodedBatch enc;
  enc.batch = inputs.size();
  enc.candidates = inputs.front().candidate_news.size();
  enc.history = static_cast<std::size_t>(cfg_.history_len);
  const std::size_t n = enc.history;

  // Local row of every referenced news id in the encoded table.
  std::vector<std::int64_t> order;
  std::unordered_map<std::int64_t, std::int64_t> row_of;
  auto row = [&](std::int64_t id) -> std::int64_t {
    if (catalog_vectors) return id;
    auto [it, fresh] = row_of.emplace(id, static_cast<std::int64_t>(order.size()));
    if (fresh) order.push_back(id);
    return it->second;
  };

  std::vector<std::int64_t> hist_rows(enc.batch * n, 0), hist_buckets(enc.batch * n, 0);
  std::vector<std::int64_t> cand_rows;
  cand_rows.reserve(enc.batch * enc.candidates);
  enc.history_keep.assign(enc.batch * n, 0);
  for (std::size_t b = 0; b < enc.batch; ++b) {
    const auto& in = inputs[b];
    if (in.candidate_news.size() != enc.candidates || in.candidate_positions.size() != enc.candidates)
      throw ContractError("encode_batch: inputs disagree on candidate count");
    if (in.history_news.size() != in.history_positions.size())
      throw ContractError(fmt::format("behavior_encode: {} history items but {} positions",
                                      in.history_news.size(), in.history_positions.size()));
    for (auto id : in.candidate_news) cand_rows.push_back(row(id));
    const std::size_t len = std::min(n, in.history_news.size());
    const std::size_t skip = in.history_news.size() - len;
    for (std::size_t i = 0; i < len; ++i) {
      hist_rows[b * n + i] = row(in.history_news[skip + i]);
      hist_buckets[b * n + i] = cfg_.quantizer.bucket(in.history_positions[skip + i]);
      enc.history_keep[b * n + i] = 1;
    }
  }

  Tensor table;
  if (catalog_vectors) {
    table = *catalog_vectors;
  } else {
    table = encode_titles(catalog, order, ctx).vectors;
  }
  Tensor clicked = embedding_lookup(table, hist_rows, {enc.batch, n});
  enc.history_states = behavior_encode(params_, cfg_, clicked, hist_buckets, enc.history_keep, ctx);
  enc.candidate_repr = embedding_lookup(table, cand_rows, {enc.batch, enc.candidates});
  return enc;
}

TowerOutput DebiasModel::tower(const EncodedBatch& enc, Tower which,
                               const std::vector<std::int64_t>& position_rows) const {
  const bool aware = which == Tower::kBiasAware;
  Tensor queries = add(enc.candidate_repr, embedding_lookup(params_.get("position.emb"), position_rows,
                                                            {enc.batch, enc.candidates}));
  Tensor u = candidate_attention(enc.history_states, enc.history_keep, queries,
                                 params_.get(aware ? "aware.W" : "invariant.W"),
                                 params_.get(aware ? "aware.b" : "invariant.b"), cfg_.pooling);
  return {u, matmul(u, params_.get("score.w"))};
}

std::vector<std::int64_t> DebiasModel::true_position_rows(const std::vector<ScoringInput>& inputs) const {
  std::vector<std::int64_t> rows;
  for (const auto& in : inputs)
    for (int p : in.candidate_positions) rows.push_back(cfg_.quantizer.bucket(p));
  return rows;
}

std::vector<std::int64_t> DebiasModel::default_position_rows(std::size_t count) const {
  return std::vector<std::int64_t>(count, cfg_.quantizer.default_row());
}

std::vector<std::int64_t> DebiasModel::random_position_rows(std::size_t count,
                                                            std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::int64_t> dist(0, cfg_.quantizer.n_buckets - 1);
  std::vector<std::int64_t> rows(count);
  for (auto& r : rows) r = dist(rng);
  return rows;
}

Tensor DebiasModel::discriminate(const Tensor& u, const Tensor& u_prime) const {
  return debias::discriminate(u, u_prime, params_.get("disc.wp"), params_.get("disc.wn"));
}

namespace {

ScoringInput single(const std::vector<std::int64_t>& history, const std::vector<int>& positions,
                    std::int64_t candidate, int candidate_position) {
  return {history, positions, {candidate}, {candidate_position}};
}

}  // namespace

std::pair<double, Tensor> DebiasModel::bias_aware_score(const std::vector<std::int64_t>& history,
                                                        const std::vector<int>& positions,
                                                        std::int64_t candidate,
                                                        int candidate_position,
                                                        const std::vector<NewsArticle>& catalog) const {
  if (candidate_position < 1)
    throw DomainError(fmt::format("candidate position {} < 1", candidate_position));
  ForwardContext ctx;
  std::vector<ScoringInput> in{single(history, positions, candidate, candidate_position)};
  auto enc = encode_batch(in, catalog, ctx);
  auto out = tower(enc, Tower::kBiasAware, true_position_rows(in));
  const auto d = static_cast<std::size_t>(cfg_.d_model());
  return {out.scores.values()[0], reshape(out.interest, {d})};
}

std::pair<double, Tensor> DebiasModel::bias_invariant_score(const std::vector<std::int64_t>& history,
                                                            const std::vector<int>& positions,
                                                            std::int64_t candidate,
                                                            const std::vector<NewsArticle>& catalog,
                                                            std::mt19937_64* rng) const {
  ForwardContext ctx;
  std::vector<ScoringInput> in{single(history, positions, candidate, 1)};
  auto enc = encode_batch(in, catalog, ctx);
  auto rows = rng ? random_position_rows(1, *rng) : default_position_rows(1);
  auto out = tower(enc, Tower::kBiasInvariant, rows);
  const auto d = static_cast<std::size_t>(cfg_.d_model());
  return {out.scores.values()[0], reshape(out.interest, {d})};
}

}  // namespace debias
