#include "debias/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "debias/errors.hpp"

namespace debias {

namespace {

struct VocabLayout {
  std::int64_t shared_begin, shared_end;  // [begin, end)
  std::int64_t topic_begin, topic_width;
};

VocabLayout vocab_layout(const GenConfig& cfg) {
  const std::int64_t usable = cfg.vocab_size - 1;  // id 0 is the pad token
  const std::int64_t shared = std::max<std::int64_t>(1, usable / 5);
  return {1, 1 + shared, 1 + shared, (usable - shared) / cfg.n_topics};
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot open {} for writing", path.string()));
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
  return in;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTestBiased: return "test_biased";
    case Split::kTestUniform: return "test_uniform";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::kTrain, Split::kValid, Split::kTestBiased, Split::kTestUniform})
    if (split_name(s) == name) return s;
  throw ConfigError(fmt::format("unknown split '{}'", name));
}

void GenConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v <= 0) throw ConfigError(fmt::format("{} must be positive, got {}", field, v));
  };
  positive(vocab_size, "vocab_size");
  positive(n_topics, "n_topics");
  positive(n_users, "n_users");
  positive(title_len, "title_len");
  positive(list_len, "list_len");
  if (n_news < 0) throw ConfigError(fmt::format("n_news must be >= 0, got {}", n_news));
  for (auto [v, field] : {std::pair{n_train, "n_train"}, {n_valid, "n_valid"},
                          {n_test_biased, "n_test_biased"}, {n_test_uniform, "n_test_uniform"}})
    if (v < 0) throw ConfigError(fmt::format("{} must be >= 0, got {}", field, v));
  if (n_topics > vocab_size)
    throw ConfigError(fmt::format("n_topics ({}) exceeds vocab_size ({})", n_topics, vocab_size));
  if (vocab_layout(*this).topic_width < 1)
    throw ConfigError(fmt::format("vocab_size {} leaves no topic words for {} topics", vocab_size, n_topics));
  if (!(gamma >= 0.0)) throw ConfigError(fmt::format("gamma must be >= 0, got {}", gamma));
  if (!(rel_noise >= 0.0)) throw ConfigError(fmt::format("rel_noise must be >= 0, got {}", rel_noise));
  if (!(patience_sigma >= 0.0))
    throw ConfigError(fmt::format("patience_sigma must be >= 0, got {}", patience_sigma));
  if (!(affinity_concentration > 0.0))
    throw ConfigError(fmt::format("affinity_concentration must be > 0, got {}", affinity_concentration));
  if (!(shared_word_rate >= 0.0 && shared_word_rate <= 1.0))
    throw ConfigError(fmt::format("shared_word_rate must lie in [0, 1], got {}", shared_word_rate));
  if (fixed_relevance && !(*fixed_relevance >= 0.0 && *fixed_relevance <= 1.0))
    throw ConfigError(fmt::format("fixed_relevance must lie in [0, 1], got {}", *fixed_relevance));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the three words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x9e3779b97f4a7c15ULL));
}

std::vector<NewsArticle> generate_catalog(const GenConfig& cfg) {
  cfg.validate();
  const auto layout = vocab_layout(cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  std::uniform_int_distribution<std::int64_t> topic_dist(0, cfg.n_topics - 1);
  std::uniform_int_distribution<int> len_dist(std::max(1, cfg.title_len / 2), cfg.title_len);
  std::uniform_int_distribution<std::int64_t> shared_dist(layout.shared_begin, layout.shared_end - 1);
  std::uniform_int_distribution<std::int64_t> topic_word(0, layout.topic_width - 1);

  std::vector<NewsArticle> catalog;
  catalog.reserve(static_cast<std::size_t>(cfg.n_news));
  for (int i = 0; i < cfg.n_news; ++i) {
    NewsArticle a;
    a.news_id = i;
    a.topic_id = topic_dist(rng);
    const int len = len_dist(rng);
    a.title_tokens.assign(static_cast<std::size_t>(cfg.title_len), 0);
    for (int t = 0; t < len; ++t) {
      a.title_tokens[static_cast<std::size_t>(t)] =
          uniform01(rng) < cfg.shared_word_rate
              ? shared_dist(rng)
              : layout.topic_begin + a.topic_id * layout.topic_width + topic_word(rng);
    }
    catalog.push_back(std::move(a));
  }
  return catalog;
}

std::vector<SynthUser> generate_users(const GenConfig& cfg) {
  cfg.validate();
  std::vector<SynthUser> users;
  users.reserve(static_cast<std::size_t>(cfg.n_users));
  for (int u = 0; u < cfg.n_users; ++u) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 2, static_cast<std::uint64_t>(u)));
    std::gamma_distribution<double> g(cfg.affinity_concentration, 1.0);
    SynthUser user;
    user.user_id = u;
    user.topic_affinity.resize(static_cast<std::size_t>(cfg.n_topics));
    double total = 0.0;
    for (auto& a : user.topic_affinity) total += (a = g(rng));
    if (total > 0.0) {
      for (auto& a : user.topic_affinity) a /= total;
    } else {
      std::fill(user.topic_affinity.begin(), user.topic_affinity.end(), 1.0 / cfg.n_topics);
    }
    std::normal_distribution<double> n(0.0, 1.0);
    const double z = n(rng);
    user.patience = cfg.patience_sigma > 0.0 ? std::exp(cfg.patience_sigma * z) : 1.0;
    users.push_back(std::move(user));
  }
  return users;
}

double examination_prob(int position, double gamma) {
  if (position < 1) throw DomainError(fmt::format("examination_prob: position {} < 1", position));
  return std::pow(static_cast<double>(position), -gamma);
}

double base_relevance(const GenConfig& cfg, const SynthUser& user, const NewsArticle& article) {
  if (cfg.fixed_relevance) return *cfg.fixed_relevance;
  return user.topic_affinity.at(static_cast<std::size_t>(article.topic_id));
}

ImpressionLog simulate_impressions(const GenConfig& cfg, const std::vector<NewsArticle>& catalog,
                                   const std::vector<SynthUser>& users, RankingMode mode,
                                   Split split, int count, std::int64_t first_id) {
  cfg.validate();
  if (count <= 0) return {};
  if (catalog.empty() || users.empty())
    throw ConfigError("simulate_impressions needs a nonempty catalog and user set");
  if (static_cast<std::size_t>(cfg.list_len) > catalog.size())
    throw ConfigError(fmt::format("list_len ({}) exceeds n_news ({})", cfg.list_len, catalog.size()));

  const auto split_id = static_cast<std::uint64_t>(split);
  std::mt19937_64 assign_rng(derive_seed(cfg.seed, 3, split_id));
  std::uniform_int_distribution<std::size_t> user_dist(0, users.size() - 1);
  std::vector<std::size_t> slot_user(static_cast<std::size_t>(count));
  std::vector<std::vector<std::size_t>> slots_of(users.size());
  for (std::size_t s = 0; s < slot_user.size(); ++s) {
    slot_user[s] = user_dist(assign_rng);
    slots_of[slot_user[s]].push_back(s);
  }

  ImpressionLog log(slot_user.size());
  const auto L = static_cast<std::size_t>(cfg.list_len);
  const bool noisy = !cfg.fixed_relevance && cfg.rel_noise > 0.0;
  for (std::size_t ui = 0; ui < users.size(); ++ui) {
    if (slots_of[ui].empty()) continue;
    const SynthUser& user = users[ui];
    std::mt19937_64 rng(derive_seed(cfg.seed, 100 + split_id, static_cast<std::uint64_t>(user.user_id)));
    std::uniform_int_distribution<std::size_t> news_dist(0, catalog.size() - 1);
    std::normal_distribution<double> noise(0.0, noisy ? cfg.rel_noise : 1.0);
    const double exponent = cfg.gamma * user.patience;

    for (std::size_t slot : slots_of[ui]) {
      std::vector<std::size_t> picked;
      picked.reserve(L);
      while (picked.size() < L) {
        const std::size_t c = news_dist(rng);
        if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
      }
      std::vector<double> rel(L);
      for (std::size_t i = 0; i < L; ++i) {
        rel[i] = base_relevance(cfg, user, catalog[picked[i]]);
        if (noisy) rel[i] += noise(rng);
      }
      std::vector<std::size_t> order(L);
      std::iota(order.begin(), order.end(), 0);
      if (mode == RankingMode::kBiased) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return rel[a] > rel[b]; });
      } else {
        for (std::size_t i = L - 1; i > 0; --i) {
          std::uniform_int_distribution<std::size_t> j(0, i);
          std::swap(order[i], order[j(rng)]);
        }
      }
      Impression imp;
      imp.impression_id = first_id + static_cast<std::int64_t>(slot);
      imp.user_id = user.user_id;
      imp.split = split;
      imp.items.reserve(L);
      for (std::size_t p = 0; p < L; ++p) {
        const std::size_t i = order[p];
        const int position = static_cast<int>(p) + 1;
        const double click_p =
            examination_prob(position, exponent) * std::clamp(rel[i], 0.0, 1.0);
        const int clicked = uniform01(rng) < click_p ? 1 : 0;
        imp.items.push_back({catalog[picked[i]].news_id, position, clicked});
      }
      log[slot] = std::move(imp);
    }
  }
  return log;
}

const ImpressionLog& SyntheticDataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTestBiased: return test_biased;
    case Split::kTestUniform: return test_uniform;
  }
  return train;
}

SyntheticDataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.catalog = generate_catalog(cfg);
  ds.users = generate_users(cfg);
  std::int64_t next = 0;
  auto run = [&](RankingMode mode, Split split, int count) {
    auto log = simulate_impressions(cfg, ds.catalog, ds.users, mode, split, count, next);
    next += count;
    return log;
  };
  ds.train = run(RankingMode::kBiased, Split::kTrain, cfg.n_train);
  ds.valid = run(RankingMode::kBiased, Split::kValid, cfg.n_valid);
  ds.test_biased = run(RankingMode::kBiased, Split::kTestBiased, cfg.n_test_biased);
  ds.test_uniform = run(RankingMode::kUniform, Split::kTestUniform, cfg.n_test_uniform);
  return ds;
}

// ---------------------------------------------------------------------------

void write_catalog(const std::filesystem::path& path, const std::vector<NewsArticle>& catalog) {
  auto out = open_out(path);
  for (const auto& a : catalog) {
    out << fmt::format("{{\"news_id\":{},\"topic_id\":{},\"title_tokens\":[{}]}}\n", a.news_id,
                       a.topic_id, fmt::join(a.title_tokens, ","));
  }
}

std::vector<NewsArticle> read_catalog(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<NewsArticle> catalog;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      NewsArticle a;
      a.news_id = j.at("news_id").get<std::int64_t>();
      a.topic_id = j.at("topic_id").get<std::int64_t>();
      a.title_tokens = j.at("title_tokens").get<std::vector<std::int64_t>>();
      catalog.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), line_no);
    }
    const auto& a = catalog.back();
    if (a.news_id != static_cast<std::int64_t>(catalog.size() - 1))
      throw ValidationError(fmt::format("{}:{}: news_id {} out of sequence", path.string(), line_no,
                                        a.news_id),
                            "news_id");
    for (auto t : a.title_tokens)
      if (t < 0)
        throw ValidationError(fmt::format("{}:{}: negative token id", path.string(), line_no),
                              "title_tokens");
  }
  return catalog;
}

void write_logs(const std::filesystem::path& path, const ImpressionLog& log) {
  auto out = open_out(path);
  std::string buf;
  for (const auto& imp : log) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf), "{{\"impression_id\":{},\"user_id\":{},\"split\":\"{}\",\"items\":[",
                   imp.impression_id, imp.user_id, split_name(imp.split));
    for (std::size_t i = 0; i < imp.items.size(); ++i) {
      const auto& it = imp.items[i];
      fmt::format_to(std::back_inserter(buf), "{}{{\"news_id\":{},\"position\":{},\"clicked\":{}}}",
                     i ? "," : "", it.news_id, it.position, it.clicked);
    }
    buf += "]}\n";
    out << buf;
  }
}

void validate_impression(const Impression& imp) {
  if (imp.impression_id < 0) throw ValidationError("impression_id must be >= 0", "impression_id");
  if (imp.user_id < 0) throw ValidationError("user_id must be >= 0", "user_id");
  if (imp.items.empty()) throw ValidationError("impression has no items", "items");
  std::set<int> seen;
  for (const auto& it : imp.items) {
    if (it.news_id < 0) throw ValidationError("news_id must be >= 0", "news_id");
    if (it.position < 1) throw ValidationError("position must be >= 1", "position");
    if (it.clicked != 0 && it.clicked != 1) throw ValidationError("clicked must be 0 or 1", "clicked");
    if (!seen.insert(it.position).second)
      throw ValidationError(fmt::format("duplicate position {}", it.position), "position");
  }
}

ImpressionLog read_logs(const std::filesystem::path& path) {
  auto in = open_in(path);
  ImpressionLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Impression imp;
    try {
      auto j = nlohmann::json::parse(line);
      imp.impression_id = j.at("impression_id").get<std::int64_t>();
      imp.user_id = j.at("user_id").get<std::int64_t>();
      imp.split = parse_split(j.at("split").get<std::string>());
      for (const auto& it : j.at("items")) {
        imp.items.push_back({it.at("news_id").get<std::int64_t>(), it.at("position").get<int>(),
                             it.at("clicked").get<int>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), line_no);
    } catch (const ConfigError& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), line_no);
    }
    try {
      validate_impression(imp);
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), e.field());
    }
    log.push_back(std::move(imp));
  }
  return log;
}

std::vector<PositionRow> position_report(const ImpressionLog& log) {
  std::map<int, std::pair<std::int64_t, std::int64_t>> acc;
  for (const auto& imp : log) {
    for (const auto& it : imp.items) {
      auto& [n, c] = acc[it.position];
      ++n;
      c += it.clicked;
    }
  }
  std::vector<PositionRow> rows;
  for (const auto& [pos, nc] : acc)
    rows.push_back({pos, nc.first, static_cast<double>(nc.second) / static_cast<double>(nc.first)});
  return rows;
}

void write_position_csv(const std::filesystem::path& path, const std::vector<PositionRow>& rows) {
  auto out = open_out(path);
  out << "position,impression_count,ctr\n";
  for (const auto& r : rows) out << fmt::format("{},{},{}\n", r.position, r.impression_count, r.ctr);
}

}  // namespace debias
