#include "debias/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

namespace debias {

namespace {

bool has_both_classes(std::span<const int> labels) {
  bool pos = false, neg = false;
  for (int l : labels) (l ? pos : neg) = true;
  return pos && neg;
}

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ContractError(fmt::format("metric: {} scores but {} labels", scores.size(), labels.size()));
}

std::vector<std::size_t> stable_rank_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  if (!has_both_classes(labels)) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with mid-ranks for ties.
  double pos_rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) {
        pos_rank_sum += mid;
        n_pos += 1.0;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

std::optional<double> mrr(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  if (!has_both_classes(labels)) return std::nullopt;
  const auto order = stable_rank_order(scores);
  double rr = 0.0, n_pos = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]]) {
      rr += 1.0 / static_cast<double>(r + 1);
      n_pos += 1.0;
    }
  }
  return rr / n_pos;
}

std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const int> labels, int k) {
  check_lengths(scores, labels);
  if (k <= 0) throw DomainError(fmt::format("ndcg_at_k: k = {} must be positive", k));
  if (!has_both_classes(labels)) return std::nullopt;
  const auto order = stable_rank_order(scores);
  const std::size_t cut = std::min(order.size(), static_cast<std::size_t>(k));
  double dcg = 0.0;
  for (std::size_t r = 0; r < cut; ++r)
    if (labels[order[r]]) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(cut, n_pos); ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / ideal;
}

MetricReport compute_metrics(std::vector<ImpressionScores> impressions) {
  std::stable_sort(impressions.begin(), impressions.end(),
                   [](const auto& a, const auto& b) { return a.impression_id < b.impression_id; });
  MetricReport r;
  for (const auto& imp : impressions) {
    auto a = auc(imp.scores, imp.labels);
    if (!a) {
      ++r.n_skipped;
      continue;
    }
    r.auc += *a;
    r.mrr += *mrr(imp.scores, imp.labels);
    r.ndcg5 += *ndcg_at_k(imp.scores, imp.labels, 5);
    r.ndcg10 += *ndcg_at_k(imp.scores, imp.labels, 10);
    ++r.n_impressions;
  }
  const double n = static_cast<double>(r.n_impressions);
  if (r.n_impressions == 0) {
    r.auc = r.mrr = r.ndcg5 = r.ndcg10 = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.auc /= n;
    r.mrr /= n;
    r.ndcg5 /= n;
    r.ndcg10 /= n;
  }
  return r;
}

std::string_view tower_name(ServingTower t) {
  return t == ServingTower::kBiasInvariantDefault ? "bias_invariant_default_pos"
                                                  : "bias_aware_at_true_pos";
}

ServingTower parse_tower(std::string_view name) {
  if (name == "bias_invariant_default_pos") return ServingTower::kBiasInvariantDefault;
  if (name == "bias_aware_at_true_pos") return ServingTower::kBiasAwareTruePos;
  throw ConfigError(fmt::format("unknown tower '{}'", name));
}

UserHistories UserHistories::from_log(const ImpressionLog& log, int history_len) {
  UserHistories h;
  const auto cap = static_cast<std::size_t>(std::max(history_len, 0));
  for (const auto& imp : log) {
    auto& hist = h.by_user_[imp.user_id];
    for (const auto& it : imp.items) {
      if (!it.clicked) continue;
      hist.news.push_back(it.news_id);
      hist.positions.push_back(it.position);
    }
  }
  for (auto& [_, hist] : h.by_user_) {
    if (hist.news.size() > cap) {
      const auto drop = static_cast<std::ptrdiff_t>(hist.news.size() - cap);
      hist.news.erase(hist.news.begin(), hist.news.begin() + drop);
      hist.positions.erase(hist.positions.begin(), hist.positions.begin() + drop);
    }
  }
  return h;
}

const UserHistories::History& UserHistories::of(std::int64_t user_id) const {
  auto it = by_user_.find(user_id);
  return it == by_user_.end() ? empty_ : it->second;
}

int evaluation_threads() {
  if (const char* env = std::getenv("DEBIAS_RANK_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

std::vector<ImpressionScores> score_impressions(const DebiasModel& model,
                                                const std::vector<NewsArticle>& catalog,
                                                const UserHistories& histories,
                                                const ImpressionLog& log, ServingTower tower,
                                                int threads) {
  std::vector<ImpressionScores> out(log.size());
  if (log.empty()) return out;
  if (threads <= 0) threads = evaluation_threads();

  Tensor catalog_vectors;
  {
    NoGradGuard no_grad;
    ForwardContext ctx;
    std::vector<std::int64_t> ids(catalog.size());
    std::iota(ids.begin(), ids.end(), 0);
    catalog_vectors = model.encode_titles(catalog, ids, ctx).vectors;
  }

  // Batches of consecutive impressions that share a list length.
  constexpr std::size_t kBatch = 64;
  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t i = 0; i < log.size();) {
    std::size_t j = i + 1;
    while (j < log.size() && j - i < kBatch && log[j].items.size() == log[i].items.size()) ++j;
    batches.emplace_back(i, j);
    i = j;
  }

  auto run = [&](std::size_t worker, std::size_t stride) {
    NoGradGuard no_grad;
    for (std::size_t bi = worker; bi < batches.size(); bi += stride) {
      const auto [begin, end] = batches[bi];
      std::vector<ScoringInput> inputs;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& hist = histories.of(log[i].user_id);
        ScoringInput in{hist.news, hist.positions, {}, {}};
        for (const auto& it : log[i].items) {
          in.candidate_news.push_back(it.news_id);
          in.candidate_positions.push_back(it.position);
        }
        inputs.push_back(std::move(in));
      }
      ForwardContext ctx;
      auto enc = model.encode_batch(inputs, catalog, ctx, &catalog_vectors);
      const bool aware = tower == ServingTower::kBiasAwareTruePos;
      auto rows = aware ? model.true_position_rows(inputs)
                        : model.default_position_rows(inputs.size() * enc.candidates);
      auto res = model.tower(enc, aware ? Tower::kBiasAware : Tower::kBiasInvariant, rows);
      auto sv = res.scores.values();
      for (std::size_t i = begin; i < end; ++i) {
        auto& o = out[i];
        o.impression_id = log[i].impression_id;
        const std::size_t c = enc.candidates, b = i - begin;
        o.scores.assign(sv.begin() + static_cast<std::ptrdiff_t>(b * c),
                        sv.begin() + static_cast<std::ptrdiff_t>((b + 1) * c));
        for (const auto& it : log[i].items) o.labels.push_back(it.clicked);
      }
    }
  };

  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(threads), batches.size());
  if (n_workers <= 1) {
    run(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        run(w, n_workers);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

MetricReport evaluate(const DebiasModel& model, const std::vector<NewsArticle>& catalog,
                      const UserHistories& histories, const ImpressionLog& log, ServingTower tower,
                      int threads) {
  return compute_metrics(score_impressions(model, catalog, histories, log, tower, threads));
}

std::string metrics_csv_header() {
  return "run_id,split,tower,AUC,MRR,nDCG@5,nDCG@10,n_impressions,n_skipped";
}

std::string metrics_csv_line(const MetricRow& row) {
  const auto& r = row.report;
  return fmt::format("{},{},{},{},{},{},{},{},{}", row.run_id, row.split, row.tower, r.auc, r.mrr,
                     r.ndcg5, r.ndcg10, r.n_impressions, r.n_skipped);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot open {} for writing", path.string()));
  out << metrics_csv_header() << '\n';
  for (const auto& r : rows) out << metrics_csv_line(r) << '\n';
}

// ---------------------------------------------------------------------------

double PropensityTable::at(int bucket) const {
  if (bucket < 0 || static_cast<std::size_t>(bucket) >= propensity.size())
    throw ContractError(fmt::format("propensity table has no bucket {}", bucket));
  return propensity[static_cast<std::size_t>(bucket)];
}

PropensityTable estimate_propensities(const ImpressionLog& log, const PositionQuantizer& quantizer,
                                      double floor) {
  if (!(floor > 0.0 && floor <= 1.0))
    throw DomainError(fmt::format("propensity floor {} outside (0, 1]", floor));
  const auto nb = static_cast<std::size_t>(quantizer.n_buckets);
  std::vector<double> shown(nb, 0.0), clicks(nb, 0.0);
  double all_shown = 0.0, all_clicks = 0.0;
  for (const auto& imp : log) {
    for (const auto& it : imp.items) {
      const auto b = static_cast<std::size_t>(quantizer.bucket(it.position));
      shown[b] += 1.0;
      clicks[b] += it.clicked;
      all_shown += 1.0;
      all_clicks += it.clicked;
    }
  }
  if (all_shown == 0.0) throw ContractError("estimate_propensities: empty dataset");

  double best = 0.0;
  for (std::size_t b = 0; b < nb; ++b)
    if (clicks[b] > 0.0) best = std::max(best, clicks[b] / shown[b]);
  PropensityTable t;
  t.floor = floor;
  t.propensity.assign(nb, 1.0);
  if (best == 0.0) return t;
  const double fallback = (all_clicks / all_shown) / best;
  for (std::size_t b = 0; b < nb; ++b) {
    const double p = clicks[b] > 0.0 ? (clicks[b] / shown[b]) / best : fallback;
    t.propensity[b] = std::clamp(p, floor, 1.0);
  }
  return t;
}

Tensor ipw_click_loss(const Tensor& scores, const std::vector<int>& positive_buckets,
                      const PropensityTable& table) {
  if (scores.rank() != 2 || positive_buckets.size() != scores.dim(0))
    throw ShapeError(fmt::format("ipw_click_loss: scores {} with {} buckets",
                                 shape_str(scores.shape()), positive_buckets.size()));
  const std::size_t b = scores.dim(0);
  std::vector<double> w(b);
  for (std::size_t i = 0; i < b; ++i) w[i] = 1.0 / table.at(positive_buckets[i]);
  Tensor log_p = reshape(slice(log_softmax_lastdim(scores), 1, 0, 1), {b});
  return scale(mean(mul(log_p, Tensor::from({b}, std::move(w)))), -1.0);
}

double pal_score(double relevance_score, double seen_prob) {
  return pal_serving_score(relevance_score) * seen_prob;
}

double pal_serving_score(double relevance_score) { return 1.0 / (1.0 + std::exp(-relevance_score)); }

double pal_seen_prob(const DebiasModel& model, int position) {
  const int b = model.config().quantizer.bucket(position);
  const double logit = model.params().get("pal.seen_logit").values()[static_cast<std::size_t>(b)];
  return 1.0 / (1.0 + std::exp(-logit));
}

Tensor pal_loss(const Tensor& scores, const Tensor& seen_logits,
                const std::vector<std::int64_t>& buckets) {
  if (scores.rank() != 2 || buckets.size() != scores.numel())
    throw ShapeError(fmt::format("pal_loss: scores {} with {} buckets", shape_str(scores.shape()),
                                 buckets.size()));
  const std::size_t b = scores.dim(0), c = scores.dim(1);
  Tensor seen = reshape(sigmoid(embedding_lookup(seen_logits, buckets, {b, c})), {b, c});
  Tensor p = mul(sigmoid(scores), seen);
  std::vector<double> label(b * c, 0.0);
  for (std::size_t i = 0; i < b; ++i) label[i * c] = 1.0;
  Tensor y = Tensor::from({b, c}, label);
  Tensor not_y = Tensor::from({b, c}, [&] {
    std::vector<double> v(label);
    for (auto& x : v) x = 1.0 - x;
    return v;
  }());
  Tensor ll = add(mul(y, log_floored(p)),
                  mul(not_y, log_floored(sub(Tensor::full({b, c}, 1.0), p))));
  return scale(sum(ll), -1.0 / static_cast<double>(b));
}

}  // namespace debias
