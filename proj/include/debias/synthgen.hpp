#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace debias {

struct NewsArticle {
  std::int64_t news_id = 0;
  std::int64_t topic_id = 0;
  std::vector<std::int64_t> title_tokens;  // exactly title_len ids, 0 = pad

  bool operator==(const NewsArticle&) const = default;
};

struct SynthUser {
  std::int64_t user_id = 0;
  std::vector<double> topic_affinity;  // sums to 1
  double patience = 1.0;               // multiplies the examination exponent
};

enum class Split { kTrain, kValid, kTestBiased, kTestUniform };
enum class RankingMode { kBiased, kUniform };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct DisplayedItem {
  std::int64_t news_id = 0;
  int position = 1;  // one-based
  int clicked = 0;

  bool operator==(const DisplayedItem&) const = default;
};

struct Impression {
  std::int64_t impression_id = 0;
  std::int64_t user_id = 0;
  std::vector<DisplayedItem> items;
  Split split = Split::kTrain;

  bool operator==(const Impression&) const = default;
};

using ImpressionLog = std::vector<Impression>;

struct GenConfig {
  int vocab_size = 2000;
  int n_topics = 10;
  int n_news = 500;
  int n_users = 2000;
  int title_len = 16;
  int list_len = 10;
  int n_train = 12000;
  int n_valid = 1000;
  int n_test_biased = 2000;
  int n_test_uniform = 2000;
  double gamma = 1.0;
  double rel_noise = 0.1;
  // Lognormal sigma of the per-user patience multiplier; 0 makes every user 1.
  double patience_sigma = 0.5;
  // Dirichlet concentration of each user's topic affinity.
  double affinity_concentration = 0.3;
  // Share of title tokens drawn from the words common to every topic.
  double shared_word_rate = 0.25;
  // When set, every (user, article) pair has this relevance and ranking noise is off.
  std::optional<double> fixed_relevance;
  std::uint64_t seed = 42;

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

// Mixes a seed with stream ids; used for per-user and per-split sub-seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

std::vector<NewsArticle> generate_catalog(const GenConfig& cfg);
std::vector<SynthUser> generate_users(const GenConfig& cfg);

// position^(-gamma); throws DomainError for position < 1.
double examination_prob(int position, double gamma);

// Relevance of `article` for `user` before noise.
double base_relevance(const GenConfig& cfg, const SynthUser& user, const NewsArticle& article);

// Simulates `count` impressions for `split`, ids starting at `first_id`.
// Each user's impressions are drawn from an independent sub-stream, so the
// output does not depend on the order in which users are processed.
ImpressionLog simulate_impressions(const GenConfig& cfg, const std::vector<NewsArticle>& catalog,
                                   const std::vector<SynthUser>& users, RankingMode mode,
                                   Split split, int count, std::int64_t first_id = 0);

struct SyntheticDataset {
  std::vector<NewsArticle> catalog;
  std::vector<SynthUser> users;
  ImpressionLog train, valid, test_biased, test_uniform;

  const ImpressionLog& split(Split s) const;
};

// Catalog, users and the four splits (train/valid/test_biased biased-ranked,
// test_uniform uniformly shuffled) from one config.
SyntheticDataset generate_dataset(const GenConfig& cfg);

// ---------------------------------------------------------------------------
// Persistence: JSON Lines, one record per line.

void write_catalog(const std::filesystem::path& path, const std::vector<NewsArticle>& catalog);
std::vector<NewsArticle> read_catalog(const std::filesystem::path& path);

void write_logs(const std::filesystem::path& path, const ImpressionLog& log);
// Throws ParseError (with line number) or ValidationError (naming the field).
ImpressionLog read_logs(const std::filesystem::path& path);

// Checks the Impression invariants; throws ValidationError.
void validate_impression(const Impression& imp);

struct PositionRow {
  int position = 0;
  std::int64_t impression_count = 0;  // items displayed at this position
  double ctr = 0.0;
};

std::vector<PositionRow> position_report(const ImpressionLog& log);
void write_position_csv(const std::filesystem::path& path, const std::vector<PositionRow>& rows);

}  // namespace debias
