#include "debias/training.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

namespace debias {

SampleSet build_samples(const ImpressionLog& train, int negatives, int history_len,
                        std::uint64_t seed) {
  if (negatives < 1) throw DomainError(fmt::format("build_samples: K = {} < 1", negatives));
  if (history_len < 1)
    throw DomainError(fmt::format("build_samples: history_len = {} < 1", history_len));
  const auto cap = static_cast<std::size_t>(history_len);
  const auto k = static_cast<std::size_t>(negatives);

  struct Clicks {
    std::vector<std::int64_t> news;
    std::vector<int> positions;
  };
  std::unordered_map<std::int64_t, Clicks> seen;
  SampleSet out;
  for (const auto& imp : train) {
    if (imp.split != Split::kTrain)
      throw ContractError(fmt::format("build_samples: impression {} belongs to split '{}'",
                                      imp.impression_id, split_name(imp.split)));
    ++out.stats.impressions;
    auto& hist = seen[imp.user_id];
    std::vector<const DisplayedItem*> pos, neg;
    for (const auto& it : imp.items) (it.clicked ? pos : neg).push_back(&it);

    if (pos.empty()) {
      ++out.stats.skipped_no_click;
    } else if (neg.empty()) {
      ++out.stats.skipped_no_negative;
    } else {
      std::mt19937_64 rng(derive_seed(seed, 11, static_cast<std::uint64_t>(imp.impression_id)));
      const std::size_t keep = std::min(cap, hist.news.size());
      const auto from = static_cast<std::ptrdiff_t>(hist.news.size() - keep);
      for (const auto* p : pos) {
        TrainingSample s;
        s.impression_id = imp.impression_id;
        s.user_id = imp.user_id;
        s.history_news.assign(hist.news.begin() + from, hist.news.end());
        s.history_positions.assign(hist.positions.begin() + from, hist.positions.end());
        s.positive = p->news_id;
        s.positive_position = p->position;
        if (neg.size() >= k) {
          // Partial Fisher-Yates over indices.
          std::vector<std::size_t> idx(neg.size());
          std::iota(idx.begin(), idx.end(), 0);
          for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
            s.negatives.push_back(neg[idx[i]]->news_id);
            s.negative_positions.push_back(neg[idx[i]]->position);
          }
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, neg.size() - 1);
          for (std::size_t i = 0; i < k; ++i) {
            const auto* n = neg[pick(rng)];
            s.negatives.push_back(n->news_id);
            s.negative_positions.push_back(n->position);
          }
        }
        out.samples.push_back(std::move(s));
        ++out.stats.samples;
      }
    }
    // This impression's clicks become history only for later impressions.
    for (const auto* p : pos) {
      hist.news.push_back(p->news_id);
      hist.positions.push_back(p->position);
    }
  }
  return out;
}

Tensor click_loss(const Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(1) < 2)
    throw ShapeError(fmt::format("click_loss: scores {} are not [B, 1+K]", shape_str(scores.shape())));
  const std::size_t b = scores.dim(0);
  Tensor log_p = reshape(slice(log_softmax_lastdim(scores), 1, 0, 1), {b});
  return scale(mean(log_p), -1.0);
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kDebiasGan: return "debiasgan";
    case Method::kNone: return "none";
    case Method::kIpw: return "ipw";
    case Method::kPal: return "pal";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::kDebiasGan, Method::kNone, Method::kIpw, Method::kPal})
    if (method_name(m) == name) return m;
  throw ConfigError(fmt::format("unknown method '{}'", name));
}

TrainConfig TrainConfig::desk() { return {}; }

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.word_dim = 300;
  c.heads = 16;
  c.head_dim = 16;
  c.history_len = 50;
  c.learning_rate = 1e-4;
  return c;
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw ConfigError(fmt::format("alpha must be >= 0, got {}", alpha));
  if (negatives < 1) throw ConfigError(fmt::format("negatives must be >= 1, got {}", negatives));
  if (epochs < 1) throw ConfigError(fmt::format("epochs must be >= 1, got {}", epochs));
  if (batch_size < 1) throw ConfigError(fmt::format("batch_size must be >= 1, got {}", batch_size));
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError(fmt::format("learning_rate must be >= 0, got {}", learning_rate));
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError(fmt::format("dropout must lie in [0, 1), got {}", dropout));
  if (word_dim < 1 || heads < 1 || head_dim < 1 || history_len < 1)
    throw ConfigError("word_dim, heads, head_dim and history_len must be positive");
  if (!(propensity_floor > 0.0 && propensity_floor <= 1.0))
    throw ConfigError(fmt::format("propensity_floor must lie in (0, 1], got {}", propensity_floor));
}

ModelConfig model_config_for(const TrainConfig& cfg, int vocab_size, int title_len,
                             const ImpressionLog& train) {
  int max_pos = 1;
  for (const auto& imp : train)
    for (const auto& it : imp.items) max_pos = std::max(max_pos, it.position);
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.word_dim = cfg.word_dim;
  m.heads = cfg.heads;
  m.head_dim = cfg.head_dim;
  m.title_len = title_len;
  m.history_len = cfg.history_len;
  m.dropout = cfg.dropout;
  m.quantizer = PositionQuantizer::fit(cfg.quantization, max_pos);
  m.pooling = cfg.pooling;
  return m;
}

namespace {

// [B, C, d] -> the clicked candidate's row, [B, d].
Tensor positive_interest(const Tensor& interest) {
  return reshape(slice(interest, 1, 0, 1), {interest.dim(0), interest.dim(2)});
}

}  // namespace

BatchLoss batch_loss(const DebiasModel& model, const std::vector<NewsArticle>& catalog,
                     std::span<const TrainingSample> batch, const TrainConfig& cfg,
                     std::uint64_t step_seed, const PropensityTable* propensities) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  std::vector<ScoringInput> inputs;
  inputs.reserve(batch.size());
  for (const auto& s : batch) {
    ScoringInput in{s.history_news, s.history_positions, {s.positive}, {s.positive_position}};
    in.candidate_news.insert(in.candidate_news.end(), s.negatives.begin(), s.negatives.end());
    in.candidate_positions.insert(in.candidate_positions.end(), s.negative_positions.begin(),
                                  s.negative_positions.end());
    inputs.push_back(std::move(in));
  }
  ForwardContext ctx{true, derive_seed(step_seed, 1), 0};
  const EncodedBatch enc = model.encode_batch(inputs, catalog, ctx);
  const std::size_t cells = enc.batch * enc.candidates;

  BatchLoss out;
  switch (cfg.method) {
    case Method::kDebiasGan: {
      auto aware = model.tower(enc, Tower::kBiasAware, model.true_position_rows(inputs));
      std::mt19937_64 rng(derive_seed(step_seed, 2));
      auto invariant = model.tower(enc, Tower::kBiasInvariant, model.random_position_rows(cells, rng));
      Tensor l_b = click_loss(aware.scores);
      Tensor l_d = click_loss(invariant.scores);
      out.objective = add(l_b, l_d);
      out.l_b = l_b.item();
      out.l_d = l_d.item();
      if (cfg.adversarial) {
        Tensor z = model.discriminate(gradient_reversal(positive_interest(aware.interest), cfg.alpha),
                                      gradient_reversal(positive_interest(invariant.interest), cfg.alpha));
        Tensor l_a = adversarial_loss(z);
        out.objective = add(out.objective, l_a);
        out.l_a = l_a.item();
      }
      break;
    }
    case Method::kNone:
    case Method::kIpw:
    case Method::kPal: {
      auto res = model.tower(enc, Tower::kBiasInvariant, model.default_position_rows(cells));
      Tensor loss;
      if (cfg.method == Method::kNone) {
        loss = click_loss(res.scores);
      } else if (cfg.method == Method::kIpw) {
        if (!propensities) throw ContractError("batch_loss: IPW needs a propensity table");
        std::vector<int> buckets;
        for (const auto& s : batch) buckets.push_back(model.config().quantizer.bucket(s.positive_position));
        loss = ipw_click_loss(res.scores, buckets, *propensities);
      } else {
        loss = pal_loss(res.scores, model.params().get("pal.seen_logit"),
                        model.true_position_rows(inputs));
      }
      out.objective = loss;
      out.l_b = loss.item();
      break;
    }
  }
  out.total = out.l_b + out.l_d - cfg.alpha * out.l_a;
  return out;
}

std::string training_log_header() { return "epoch,L_B,L_D,L_A,L,valid_auc"; }

std::string training_log_line(const EpochLog& e) {
  return fmt::format("{},{},{},{},{},{}", e.epoch, e.l_b, e.l_d, e.l_a, e.total, e.valid_auc);
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot open {} for writing", path.string()));
  out << training_log_header() << '\n';
  for (const auto& e : log) out << training_log_line(e) << '\n';
}

TrainResult train(const TrainData& data, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (data.catalog.empty()) throw ContractError("train: empty catalog");
  const int title_len = static_cast<int>(data.catalog.front().title_tokens.size());
  TrainResult result{
      DebiasModel(model_config_for(cfg, data.vocab_size, title_len, data.train), derive_seed(cfg.seed, 51)),
      {}, 0, {}, std::nullopt};
  DebiasModel& model = result.model;

  auto set = build_samples(data.train, cfg.negatives, cfg.history_len, derive_seed(cfg.seed, 52));
  result.stats = set.stats;
  if (set.samples.empty()) throw ContractError("train: no training samples");
  if (cfg.method == Method::kIpw)
    result.propensities = estimate_propensities(data.train, model.config().quantizer, cfg.propensity_floor);
  const PropensityTable* table = result.propensities ? &*result.propensities : nullptr;

  const auto histories = UserHistories::from_log(data.train, cfg.history_len);
  AdamState adam;
  adam.config.learning_rate = cfg.learning_rate;

  std::vector<std::size_t> order(set.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<TrainingSample> batch;
  std::optional<std::vector<std::vector<double>>> best;
  double best_auc = -1.0;
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 53, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t first = 0; first < order.size(); first += bs) {
      const std::size_t last = std::min(order.size(), first + bs);
      batch.clear();
      for (std::size_t i = first; i < last; ++i) batch.push_back(set.samples[order[i]]);
      model.params().zero_grad();
      BatchLoss loss = batch_loss(model, data.catalog, batch, cfg, derive_seed(cfg.seed, 54, step), table);
      if (!std::isfinite(loss.l_b) || !std::isfinite(loss.l_d) || !std::isfinite(loss.l_a))
        throw NumericalError(fmt::format("non-finite loss at epoch {} batch {}: L_B={} L_D={} L_A={}",
                                         epoch, first / bs, loss.l_b, loss.l_d, loss.l_a));
      backward(loss.objective);
      adam_step(model.params(), adam);
      const auto n = static_cast<double>(last - first);
      log.l_b += loss.l_b * n;
      log.l_d += loss.l_d * n;
      log.l_a += loss.l_a * n;
      ++step;
    }
    const auto total = static_cast<double>(order.size());
    log.l_b /= total;
    log.l_d /= total;
    log.l_a /= total;
    log.total = log.l_b + log.l_d - cfg.alpha * log.l_a;
    log.valid_auc = evaluate(model, data.catalog, histories, data.valid).auc;
    // NaN valid AUC (no qualifying impression) still keeps the first epoch.
    if (!best || log.valid_auc > best_auc) {
      best = model.params().snapshot();
      best_auc = log.valid_auc;
      result.best_epoch = epoch;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  model.params().restore(*best);
  return result;
}

}  // namespace debias
