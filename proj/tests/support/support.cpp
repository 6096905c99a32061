#include "support.hpp"

#include <algorithm>
#include <cmath>

namespace debias::testkit {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double gradient_error(const std::function<Tensor()>& build, std::vector<Tensor> leaves, double h) {
  for (auto& l : leaves) l.zero_grad();
  backward(build());
  double worst = 0.0;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto v = leaf.mutable_values();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      double plus, minus;
      {
        NoGradGuard ng;
        v[i] = orig + h;
        plus = build().item();
        v[i] = orig - h;
        minus = build().item();
      }
      v[i] = orig;
      const double numeric = (plus - minus) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

namespace {

Tensor leaf(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = numel_of(shape);
  return Tensor::from(std::move(shape), random_values(n, rng, lo, hi), true);
}

using Unary = std::function<Tensor(const Tensor&)>;

OpGradCase unary_case(std::string name, Shape shape, Unary op, double lo = -1.0, double hi = 1.0) {
  return {name, [=](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            Tensor x = leaf(shape, rng, lo, hi);
            std::mt19937_64 wrng(seed ^ 0x9e37u);
            auto w = Tensor::from(op(x).shape(), random_values(op(x).numel(), wrng));
            return gradient_error([&] { return sum(mul(op(x), w)); }, {x});
          }};
}

using Binary = std::function<Tensor(const Tensor&, const Tensor&)>;

OpGradCase binary_case(std::string name, Shape sa, Shape sb, Binary op) {
  return {name, [=](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            Tensor a = leaf(sa, rng), b = leaf(sb, rng);
            std::mt19937_64 wrng(seed ^ 0x9e37u);
            Tensor probe = op(a, b);
            auto w = Tensor::from(probe.shape(), random_values(probe.numel(), wrng));
            return gradient_error([&] { return sum(mul(op(a, b), w)); }, {a, b});
          }};
}

Mask random_mask(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(0.7);
  Mask m(rows * cols);
  for (auto& k : m) k = keep(rng);
  for (std::size_t r = 0; r < rows; ++r) m[r * cols] = 1;  // at least one live entry per row
  return m;
}

}  // namespace

std::vector<OpGradCase> op_gradient_cases() {
  std::vector<OpGradCase> cases;
  cases.push_back(binary_case("matmul_2d", {3, 4}, {4, 5}, [](auto& a, auto& b) { return matmul(a, b); }));
  cases.push_back(binary_case("matmul_3d_by_2d", {2, 3, 4}, {4, 2}, [](auto& a, auto& b) { return matmul(a, b); }));
  cases.push_back(binary_case("matmul_vector", {2, 3, 4}, {4}, [](auto& a, auto& b) { return matmul(a, b); }));
  cases.push_back(binary_case("matmul_batched", {2, 3, 4}, {2, 4, 3}, [](auto& a, auto& b) { return matmul(a, b); }));
  cases.push_back(binary_case("add", {3, 4}, {3, 4}, [](auto& a, auto& b) { return add(a, b); }));
  cases.push_back(binary_case("add_broadcast", {2, 3, 4}, {4}, [](auto& a, auto& b) { return add(a, b); }));
  cases.push_back(binary_case("sub_broadcast", {2, 3, 4}, {3, 4}, [](auto& a, auto& b) { return sub(a, b); }));
  cases.push_back(binary_case("mul", {3, 4}, {3, 4}, [](auto& a, auto& b) { return mul(a, b); }));
  cases.push_back(binary_case("mul_broadcast", {2, 3, 4}, {4}, [](auto& a, auto& b) { return mul(a, b); }));
  cases.push_back(unary_case("tanh", {3, 4}, [](auto& x) { return tanh(x); }, -2.0, 2.0));
  cases.push_back(unary_case("sigmoid", {3, 4}, [](auto& x) { return sigmoid(x); }, -3.0, 3.0));
  cases.push_back(unary_case("scale", {3, 4}, [](auto& x) { return scale(x, -1.7); }));
  cases.push_back(unary_case("log", {3, 4}, [](auto& x) { return log(x); }, 0.2, 2.0));
  cases.push_back(unary_case("log_floored", {3, 4}, [](auto& x) { return log_floored(x, 1e-3); }, 0.2, 2.0));
  cases.push_back(unary_case("clamp", {3, 4}, [](auto& x) { return clamp(x, -5.0, 5.0); }));
  cases.push_back(unary_case("softmax_lastdim", {2, 3, 5}, [](auto& x) { return softmax_lastdim(x); }, -2.0, 2.0));
  cases.push_back(unary_case("log_softmax_lastdim", {3, 5}, [](auto& x) { return log_softmax_lastdim(x); }, -2.0, 2.0));
  cases.push_back({"masked_softmax_lastdim", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = leaf({4, 6}, rng, -2.0, 2.0);
                     const Mask keep = random_mask(4, 6, rng);
                     auto w = Tensor::from({4, 6}, random_values(24, rng));
                     return gradient_error([&] { return sum(mul(masked_softmax_lastdim(x, keep), w)); }, {x});
                   }});
  cases.push_back({"embedding_lookup", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor table = leaf({5, 3}, rng);
                     std::uniform_int_distribution<std::int64_t> id(0, 4);
                     std::vector<std::int64_t> ids(8);
                     for (auto& i : ids) i = id(rng);  // repeats exercise scatter-add
                     auto w = Tensor::from({2, 4, 3}, random_values(24, rng));
                     return gradient_error([&] { return sum(mul(embedding_lookup(table, ids, {2, 4}), w)); },
                                           {table});
                   }});
  cases.push_back({"concat_lastdim", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor a = leaf({2, 3}, rng), b = leaf({2, 1}, rng), c = leaf({2, 4}, rng);
                     auto w = Tensor::from({2, 8}, random_values(16, rng));
                     return gradient_error([&] { return sum(mul(concat_lastdim({a, b, c}), w)); }, {a, b, c});
                   }});
  cases.push_back(unary_case("mean_lastdim", {3, 4}, [](auto& x) { return mean_lastdim(x); }));
  cases.push_back(unary_case("sum", {3, 4}, [](auto& x) { return sum(x); }));
  cases.push_back(unary_case("mean", {3, 4}, [](auto& x) { return mean(x); }));
  cases.push_back(unary_case("dropout", {4, 5}, [](auto& x) { return dropout(x, 0.3, 77, true); }));
  cases.push_back(unary_case("transpose", {2, 3, 4}, [](auto& x) { return transpose(x); }));
  cases.push_back(unary_case("reshape", {2, 3, 4}, [](auto& x) { return reshape(x, {6, 4}); }));
  cases.push_back(unary_case("slice", {2, 5, 3}, [](auto& x) { return slice(x, 1, 1, 4); }));
  cases.push_back({"gradient_reversal", [](std::uint64_t seed) {
                     // Forward is the identity, so the reversed gradient must equal
                     // -lambda times the finite difference of the same expression.
                     std::mt19937_64 rng(seed);
                     Tensor x = leaf({3, 4}, rng);
                     const double lambda = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
                     auto w = Tensor::from({3, 4}, random_values(12, rng));
                     Tensor y = Tensor::from({3, 4}, {x.values().begin(), x.values().end()}, true);
                     x.zero_grad();
                     backward(sum(mul(tanh(gradient_reversal(x, lambda)), w)));
                     std::vector<double> rev(x.grad().begin(), x.grad().end());
                     const double fd = gradient_error([&] { return sum(mul(tanh(y), w)); }, {y});
                     double d2 = 0.0, n2 = 0.0;
                     for (std::size_t i = 0; i < rev.size(); ++i) {
                       const double expect = -lambda * y.grad()[i];
                       d2 += (rev[i] - expect) * (rev[i] - expect);
                       n2 += expect * expect;
                     }
                     const double direct = std::sqrt(d2) / std::max(std::sqrt(n2), 1e-8);
                     return std::max(direct, fd);
                   }});
  cases.push_back({"matmul_tanh_chain", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor a = leaf({3, 3}, rng), b = leaf({3, 3}, rng), c = leaf({3, 3}, rng);
                     return gradient_error([&] { return sum(tanh(matmul(tanh(matmul(a, b)), c))); }, {a, b, c});
                   }});
  return cases;
}

TinySetup tiny_setup(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TinySetup s;
  const int title_len = 3, vocab = 10;
  std::uniform_int_distribution<std::int64_t> tok(1, vocab - 1);
  for (int i = 0; i < 6; ++i) {
    NewsArticle a;
    a.news_id = i;
    a.title_tokens = {tok(rng), tok(rng), (i % 2) ? tok(rng) : 0};
    s.catalog.push_back(a);
  }
  std::uniform_int_distribution<std::int64_t> news(0, 5);
  std::uniform_int_distribution<int> pos(1, 8);
  for (int b = 0; b < 3; ++b) {
    TrainingSample t;
    t.impression_id = b;
    t.user_id = b;
    for (int h = 0; h < b; ++h) {  // history lengths 0, 1, 2
      t.history_news.push_back(news(rng));
      t.history_positions.push_back(pos(rng));
    }
    t.positive = news(rng);
    t.positive_position = pos(rng);
    t.negatives = {news(rng)};
    t.negative_positions = {pos(rng)};
    s.batch.push_back(t);
  }
  s.model.vocab_size = vocab;
  s.model.word_dim = 3;  // exercises the projection to d
  s.model.heads = 2;
  s.model.head_dim = 2;
  s.model.title_len = title_len;
  s.model.history_len = 2;
  s.model.dropout = 0.2;
  s.model.quantizer = PositionQuantizer::fit(QuantizationMode::kSqrt, 8);
  s.train.method = Method::kDebiasGan;
  s.train.negatives = 1;
  s.train.alpha = std::uniform_real_distribution<double>(0.1, 1.5)(rng);
  s.train.dropout = 0.2;
  return s;
}

double model_gradient_error(std::uint64_t seed) {
  const TinySetup s = tiny_setup(seed);
  DebiasModel model(s.model, seed + 1);
  const std::uint64_t step_seed = seed * 31 + 7;
  auto run = [&] { return batch_loss(model, s.catalog, s.batch, s.train, step_seed); };

  model.params().zero_grad();
  backward(run().objective);
  const double h = 1e-5;
  // Errors accumulate over each objective's whole parameter vector. Per-tensor
  // ratios are meaningless for tensors whose true gradient is ~1e-8 (attention
  // over a one-item history), where finite-difference roundoff alone is ~1e-11.
  double d2[2] = {0, 0}, a2[2] = {0, 0}, n2[2] = {0, 0};
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    const int g = model.params().name_at(p).starts_with("disc.") ? 1 : 0;
    Tensor& t = model.params().at(p);
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      auto target = [&] {
        NoGradGuard ng;
        const BatchLoss l = run();
        return g ? l.l_a : l.l_b + l.l_d - s.train.alpha * l.l_a;
      };
      v[i] = orig + h;
      const double plus = target();
      v[i] = orig - h;
      const double minus = target();
      v[i] = orig;
      const double numeric = (plus - minus) / (2.0 * h);
      d2[g] += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2[g] += analytic[i] * analytic[i];
      n2[g] += numeric * numeric;
    }
  }
  double worst = 0.0;
  for (int g = 0; g < 2; ++g)
    worst = std::max(worst, std::sqrt(d2[g]) / std::max({std::sqrt(a2[g]), std::sqrt(n2[g]), 1e-8}));
  return worst;
}

double oracle_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

namespace {

// One-based rank of item i under descending score, ties by original order.
std::size_t rank_of(const std::vector<double>& s, std::size_t i) {
  std::size_t r = 1;
  for (std::size_t j = 0; j < s.size(); ++j)
    if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++r;
  return r;
}

}  // namespace

double oracle_mrr(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0.0, n = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    total += 1.0 / static_cast<double>(rank_of(s, i));
    n += 1.0;
  }
  return total / n;
}

double oracle_ndcg(const std::vector<double>& s, const std::vector<int>& y, int k) {
  double dcg = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++n_pos;
    const std::size_t r = rank_of(s, i);
    if (r <= static_cast<std::size_t>(k)) dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  double ideal = 0.0;
  for (std::size_t r = 1; r <= std::min<std::size_t>(n_pos, static_cast<std::size_t>(k)); ++r)
    ideal += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg / ideal;
}

}  // namespace debias::testkit

#include <gtest/gtest.h>

namespace debias::testkit {

std::filesystem::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() /
             (std::string("debias_") + info->test_suite_name() + "_" + info->name());
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace debias::testkit

namespace debias::testkit {

double at(const Tensor& t, std::initializer_list<std::size_t> index) {
  if (index.size() != t.rank()) throw ContractError("at: index rank does not match tensor");
  std::size_t flat = 0, axis = 0;
  for (auto i : index) flat = flat * t.dim(static_cast<int>(axis++)) + i;
  return t[flat];
}

}  // namespace debias::testkit
