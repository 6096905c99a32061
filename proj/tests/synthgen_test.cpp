#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "debias/synthgen.hpp"
#include "support/support.hpp"

using namespace debias;

namespace {

GenConfig small_config() {
  GenConfig c;
  c.n_news = 200;
  c.n_users = 300;
  c.n_train = 1500;
  c.n_valid = 200;
  c.n_test_biased = 200;
  c.n_test_uniform = 200;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Catalog, EmptyWhenNoNews) {
  GenConfig c;
  c.n_news = 0;
  EXPECT_TRUE(generate_catalog(c).empty());
}

TEST(Catalog, DeterministicUnderSeed) {
  GenConfig c;
  EXPECT_EQ(generate_catalog(c), generate_catalog(c));
  GenConfig d = c;
  d.seed = c.seed + 1;
  EXPECT_NE(generate_catalog(c), generate_catalog(d));
}

TEST(Catalog, TopicCountsNearUniform) {
  GenConfig c;  // 500 news, 10 topics
  std::vector<int> counts(static_cast<std::size_t>(c.n_topics), 0);
  for (const auto& a : generate_catalog(c)) ++counts.at(static_cast<std::size_t>(a.topic_id));
  const double mean = 50.0, sigma = std::sqrt(500 * 0.1 * 0.9);
  for (int n : counts) EXPECT_LT(std::abs(n - mean), 3 * sigma) << n;
}

TEST(Catalog, TitlesArePaddedVocabularyIds) {
  GenConfig c;
  for (const auto& a : generate_catalog(c)) {
    ASSERT_EQ(a.title_tokens.size(), static_cast<std::size_t>(c.title_len));
    EXPECT_NE(a.title_tokens.front(), 0);
    bool padding = false;
    for (auto t : a.title_tokens) {
      EXPECT_GE(t, 0);
      EXPECT_LT(t, c.vocab_size);
      if (t == 0) padding = true;
      else EXPECT_FALSE(padding) << "token after padding in news " << a.news_id;
    }
  }
}

TEST(Users, AffinitiesAreDistributions) {
  GenConfig c;
  for (const auto& u : generate_users(c)) {
    EXPECT_NEAR(std::accumulate(u.topic_affinity.begin(), u.topic_affinity.end(), 0.0), 1.0, 1e-9);
    EXPECT_GT(u.patience, 0.0);
  }
  c.patience_sigma = 0.0;
  for (const auto& u : generate_users(c)) EXPECT_EQ(u.patience, 1.0);
}

TEST(Examination, InversePowerCurve) {
  EXPECT_EQ(examination_prob(1, 2.7), 1.0);
  EXPECT_DOUBLE_EQ(examination_prob(4, 1.0), 0.25);
  EXPECT_NEAR(examination_prob(9, 0.5), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(examination_prob(0, 1.0), DomainError);
}

TEST(Config, BadGammaNamesField) {
  GenConfig c;
  c.gamma = -0.5;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma"), std::string::npos);
  }
}

TEST(Config, TooManyTopicsOrLongLists) {
  GenConfig c;
  c.n_topics = c.vocab_size + 1;
  EXPECT_THROW(generate_catalog(c), ConfigError);
  GenConfig d;
  d.n_news = 5;
  d.list_len = 10;
  EXPECT_THROW(generate_dataset(d), ConfigError);
}

TEST(Simulate, NoBiasUniformModeGivesFlatCtr) {
  GenConfig c;
  c.gamma = 0.0;
  const auto catalog = generate_catalog(c);
  const auto users = generate_users(c);
  const auto log = simulate_impressions(c, catalog, users, RankingMode::kUniform, Split::kTestUniform, 100000);
  const auto rows = position_report(log);
  ASSERT_EQ(rows.size(), 10u);
  double clicks = 0.0, items = 0.0;
  for (const auto& r : rows) {
    EXPECT_GE(r.impression_count, 100000);
    clicks += r.ctr * static_cast<double>(r.impression_count);
    items += static_cast<double>(r.impression_count);
  }
  const double p = clicks / items;
  for (const auto& r : rows) {
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(r.impression_count));
    EXPECT_LT(std::abs(r.ctr - p), 3 * sigma) << "position " << r.position;
  }
}

TEST(Simulate, BiasedTopBeatsBottom) {
  const auto data = generate_dataset(GenConfig{});
  const auto rows = position_report(data.train);
  EXPECT_GT(rows.front().ctr, rows.back().ctr);
}

TEST(Simulate, BiasedCtrDecreasesWithPosition) {
  const auto rows = position_report(generate_dataset(GenConfig{}).train);
  // Spearman correlation between position and CTR (no ties in either column here).
  const std::size_t n = rows.size();
  std::vector<std::size_t> by_ctr(n);
  std::iota(by_ctr.begin(), by_ctr.end(), 0);
  std::sort(by_ctr.begin(), by_ctr.end(), [&](auto a, auto b) { return rows[a].ctr < rows[b].ctr; });
  std::vector<double> ctr_rank(n);
  for (std::size_t r = 0; r < n; ++r) ctr_rank[by_ctr[r]] = static_cast<double>(r);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (static_cast<double>(i) - ctr_rank[i]) * (static_cast<double>(i) - ctr_rank[i]);
  const double rho = 1.0 - 6.0 * d2 / (static_cast<double>(n) * (static_cast<double>(n * n) - 1.0));
  EXPECT_LT(rho, 0.0);
}

TEST(Simulate, FixedRelevanceCtrFollowsExamination) {
  GenConfig c;
  c.fixed_relevance = 0.6;
  c.patience_sigma = 0.0;
  const auto catalog = generate_catalog(c);
  const auto users = generate_users(c);
  const auto log = simulate_impressions(c, catalog, users, RankingMode::kBiased, Split::kTrain, 50000);
  for (const auto& r : position_report(log)) {
    const double expect = 0.6 * examination_prob(r.position, c.gamma);
    const double sigma = std::sqrt(expect * (1 - expect) / static_cast<double>(r.impression_count));
    EXPECT_LT(std::abs(r.ctr - expect), 4 * sigma) << "position " << r.position;
  }
}

TEST(Simulate, ImpressionsAreValidAndReferenceTheCatalog) {
  const auto c = small_config();
  const auto data = generate_dataset(c);
  for (auto s : {Split::kTrain, Split::kValid, Split::kTestBiased, Split::kTestUniform}) {
    for (const auto& imp : data.split(s)) {
      EXPECT_NO_THROW(validate_impression(imp));
      EXPECT_EQ(imp.split, s);
      EXPECT_EQ(imp.items.size(), static_cast<std::size_t>(c.list_len));
      for (const auto& it : imp.items) {
        EXPECT_GE(it.news_id, 0);
        EXPECT_LT(it.news_id, c.n_news);
      }
    }
  }
  EXPECT_EQ(data.train.size(), static_cast<std::size_t>(c.n_train));
  EXPECT_EQ(data.test_uniform.size(), static_cast<std::size_t>(c.n_test_uniform));
}

TEST(Simulate, ImpressionIdsAreGloballyUnique) {
  const auto data = generate_dataset(small_config());
  std::vector<std::int64_t> ids;
  for (auto s : {Split::kTrain, Split::kValid, Split::kTestBiased, Split::kTestUniform})
    for (const auto& imp : data.split(s)) ids.push_back(imp.impression_id);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
}

TEST(Simulate, BiasedListsAreSortedByNoiselessRelevanceWithoutNoise) {
  GenConfig c = small_config();
  c.rel_noise = 0.0;
  const auto data = generate_dataset(c);
  for (const auto& imp : data.train) {
    for (std::size_t i = 1; i < imp.items.size(); ++i) {
      const auto& u = data.users[static_cast<std::size_t>(imp.user_id)];
      EXPECT_GE(base_relevance(c, u, data.catalog[static_cast<std::size_t>(imp.items[i - 1].news_id)]),
                base_relevance(c, u, data.catalog[static_cast<std::size_t>(imp.items[i].news_id)]));
    }
  }
}

TEST(Persistence, SameSeedGivesByteIdenticalFiles) {
  const auto dir = testkit::scratch_dir();
  const auto c = small_config();
  write_logs(dir / "a.jsonl", generate_dataset(c).train);
  write_logs(dir / "b.jsonl", generate_dataset(c).train);
  write_catalog(dir / "ca.jsonl", generate_catalog(c));
  write_catalog(dir / "cb.jsonl", generate_catalog(c));
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_EQ(slurp(dir / "ca.jsonl"), slurp(dir / "cb.jsonl"));
}

TEST(Persistence, LogsAndCatalogRoundTrip) {
  const auto dir = testkit::scratch_dir();
  const auto data = generate_dataset(small_config());
  write_logs(dir / "t.jsonl", data.test_uniform);
  write_catalog(dir / "c.jsonl", data.catalog);
  EXPECT_EQ(read_logs(dir / "t.jsonl"), data.test_uniform);
  EXPECT_EQ(read_catalog(dir / "c.jsonl"), data.catalog);
}

TEST(Persistence, EmptyFileIsEmptyLog) {
  const auto dir = testkit::scratch_dir();
  std::ofstream(dir / "e.jsonl").close();
  EXPECT_TRUE(read_logs(dir / "e.jsonl").empty());
}

TEST(Persistence, DuplicatePositionsRejected) {
  const auto dir = testkit::scratch_dir();
  std::ofstream(dir / "d.jsonl")
      << R"({"impression_id":0,"user_id":1,"split":"train","items":[{"news_id":1,"position":1,"clicked":0},{"news_id":2,"position":1,"clicked":1}]})"
      << "\n";
  try {
    read_logs(dir / "d.jsonl");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "position");
  }
}

TEST(Persistence, MalformedLineReportsLineNumber) {
  const auto dir = testkit::scratch_dir();
  std::ofstream(dir / "m.jsonl")
      << R"({"impression_id":0,"user_id":1,"split":"train","items":[{"news_id":1,"position":1,"clicked":0}]})"
      << "\n{not json\n";
  try {
    read_logs(dir / "m.jsonl");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Persistence, BadFieldValuesNameTheField) {
  const auto dir = testkit::scratch_dir();
  std::ofstream(dir / "v.jsonl")
      << R"({"impression_id":0,"user_id":1,"split":"train","items":[{"news_id":1,"position":1,"clicked":2}]})"
      << "\n";
  try {
    read_logs(dir / "v.jsonl");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "clicked");
  }
}

TEST(PositionReport, SingleClickedItem) {
  ImpressionLog log{{0, 0, {{5, 1, 1}}, Split::kTrain}};
  const auto rows = position_report(log);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].position, 1);
  EXPECT_EQ(rows[0].impression_count, 1);
  EXPECT_EQ(rows[0].ctr, 1.0);
}

TEST(PositionReport, TwoItemsAtSamePosition) {
  ImpressionLog log{{0, 0, {{1, 2, 1}}, Split::kTrain}, {1, 0, {{2, 2, 0}}, Split::kTrain}};
  const auto rows = position_report(log);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].position, 2);
  EXPECT_EQ(rows[0].impression_count, 2);
  EXPECT_EQ(rows[0].ctr, 0.5);
}

TEST(PositionReport, CsvHeader) {
  const auto dir = testkit::scratch_dir();
  write_position_csv(dir / "p.csv", {{1, 4, 0.25}});
  EXPECT_EQ(slurp(dir / "p.csv"), "position,impression_count,ctr\n1,4,0.25\n");
}

TEST(Seeds, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
}

}  // namespace
