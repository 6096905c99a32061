// debias: generate synthetic click logs, train, evaluate and ablate.
//
// Exit codes: 0 ok, 2 config or input error, 3 numerical abort, 4 integrity
// failure, 1 anything else.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "debias/checkpoint.hpp"
#include "debias/config.hpp"
#include "debias/experiment.hpp"

namespace fs = std::filesystem;
using namespace debias;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kNumericError = 3;
constexpr int kIntegrityError = 4;

// One command owns a run directory at a time.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw ConfigError(fmt::format("{} is locked by another command (remove {} if stale)",
                                    dir.string(), path_.string()));
    const auto pid = fmt::format("{}\n", ::getpid());
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct Options {
  std::string config;
  std::string data_dir;
  std::string out;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<std::string> preset;
  std::vector<std::string> splits;
  std::optional<std::string> tower;
  bool emit_template = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? preset_config(o.preset.value_or("desk"))
                                 : load_run_config(o.config, o.preset);
  if (o.alpha) c.train.alpha = *o.alpha;
  c.validate();
  return c;
}

void echo(const std::string& line) { std::cout << line << '\n'; }

int cmd_generate(const Options& o) {
  if (o.emit_template) {
    const auto text = to_json(preset_config(o.preset.value_or("desk"))).dump(2) + "\n";
    if (o.out.empty()) {
      std::cout << text;
    } else {
      std::ofstream f(o.out, std::ios::trunc | std::ios::binary);
      if (!f) throw ConfigError(fmt::format("cannot open {} for writing", o.out));
      f << text;
    }
    return kOk;
  }
  RunConfig c = resolve_config(o);
  if (o.seed) c.gen.seed = *o.seed;
  c.validate();
  const fs::path dir = o.out.empty() ? fs::path("data") : fs::path(o.out);
  DirLock lock(dir);
  const auto data = generate_dataset(c.gen);
  write_dataset(dir, data);
  write_position_csv(dir / "positions.csv", position_report(data.train));
  save_run_config(dir / "config.json", c);
  echo(fmt::format("wrote {} news, {}/{}/{}/{} impressions to {}", data.catalog.size(),
                   data.train.size(), data.valid.size(), data.test_biased.size(),
                   data.test_uniform.size(), dir.string()));
  return kOk;
}

fs::path default_checkpoint(const fs::path& run_dir) { return run_dir / "checkpoint.json"; }

int cmd_train(const Options& o) {
  RunConfig c = resolve_config(o);
  if (o.seed) c.train.seed = *o.seed;
  c.validate();
  if (o.data_dir.empty()) throw ConfigError("--data-dir is required");
  const auto data = read_dataset(o.data_dir);
  const fs::path run = o.out.empty() ? fs::path("runs") / c.run_id : fs::path(o.out);
  DirLock lock(run);
  save_run_config(run / "config.json", c);

  const auto t0 = std::chrono::steady_clock::now();
  auto result = train({data.catalog, data.train, data.valid, catalog_vocab(data.catalog)}, c.train,
                      [](const EpochLog& e) {
                        fmt::print(stderr, "epoch {}: L_B={:.4f} L_D={:.4f} L_A={:.4f} L={:.4f} valid_auc={:.4f}\n",
                                   e.epoch, e.l_b, e.l_d, e.l_a, e.total, e.valid_auc);
                      });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_training_log(run / "train_log.csv", result.log);
  nlohmann::json meta{{"run_id", c.run_id},
                      {"method", method_name(c.train.method)},
                      {"alpha", c.train.alpha},
                      {"seed", c.train.seed},
                      {"best_epoch", result.best_epoch},
                      {"model", model_config_to_json(result.model.config())}};
  save_checkpoint(default_checkpoint(run), result.model.params(), meta);
  echo(fmt::format("trained {} samples ({} impressions skipped) in {:.1f}s; best epoch {}; checkpoint {}",
                   result.stats.samples, result.stats.skipped_no_click + result.stats.skipped_no_negative,
                   secs, result.best_epoch, default_checkpoint(run).string()));
  return kOk;
}

DebiasModel load_model(const fs::path& checkpoint, const std::vector<NewsArticle>& catalog) {
  const auto ckpt = load_checkpoint(checkpoint);
  if (!ckpt.meta.contains("model")) throw IntegrityError("checkpoint metadata has no model config");
  const ModelConfig mc = model_config_from_json(ckpt.meta.at("model"));
  if (!catalog.empty() && catalog.front().title_tokens.size() != static_cast<std::size_t>(mc.title_len))
    throw IntegrityError(fmt::format("checkpoint expects titles of {} tokens, catalog has {}", mc.title_len,
                                     catalog.front().title_tokens.size()));
  if (catalog_vocab(catalog) > mc.vocab_size)
    throw IntegrityError(fmt::format("catalog uses token ids beyond the checkpoint vocabulary of {}",
                                     mc.vocab_size));
  DebiasModel model(mc, 0);
  apply_checkpoint(ckpt, model.params());
  return model;
}

int cmd_evaluate(const Options& o) {
  if (o.data_dir.empty()) throw ConfigError("--data-dir is required");
  if (o.out.empty() && o.checkpoint.empty()) throw ConfigError("--out (run directory) is required");
  const fs::path run = o.out.empty() ? fs::path(o.checkpoint).parent_path() : fs::path(o.out);
  std::optional<RunConfig> c;
  if (!o.config.empty()) {
    c = resolve_config(o);
  } else if (fs::exists(run / "config.json")) {
    c = load_run_config(run / "config.json", o.preset);
  } else {
    c = preset_config(o.preset.value_or("desk"));
  }
  std::vector<Split> splits = c->eval_splits;
  if (!o.splits.empty()) {
    splits.clear();
    for (const auto& s : o.splits) splits.push_back(parse_split(s));
  }
  const ServingTower tower = o.tower ? parse_tower(*o.tower) : c->tower;

  DirLock lock(run);
  const auto data = read_dataset(o.data_dir);
  const DebiasModel model =
      load_model(o.checkpoint.empty() ? default_checkpoint(run) : fs::path(o.checkpoint), data.catalog);
  const auto histories = UserHistories::from_log(data.train, model.config().history_len);
  std::vector<MetricRow> rows;
  for (auto s : splits) {
    rows.push_back({c->run_id, std::string(split_name(s)), std::string(tower_name(tower)),
                    evaluate(model, data.catalog, histories, data.split(s), tower)});
  }
  write_metrics_csv(run / "metrics.csv", rows);
  echo(metrics_csv_header());
  for (const auto& r : rows) echo(metrics_csv_line(r));
  return kOk;
}

int cmd_ablate(const Options& o) {
  RunConfig c = resolve_config(o);
  if (o.seed) c.ablation.seeds = {*o.seed};
  if (o.data_dir.empty()) throw ConfigError("--data-dir is required");
  const auto data = read_dataset(o.data_dir);
  const int vocab = catalog_vocab(data.catalog);
  const fs::path out = o.out.empty() ? fs::path("runs") / (c.run_id + "-ablation") : fs::path(o.out);
  DirLock lock(out);
  save_run_config(out / "config.json", c);

  // Identical training configs are trained once (e.g. alpha0 and alpha = 0).
  std::map<std::string, double> cache;
  auto auc_of = [&](const TrainConfig& t) {
    const auto key = to_json(RunConfig{.train = t}).at("training").dump();
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const auto r = train_and_evaluate(data, vocab, t, c.tower);
    fmt::print(stderr, "  method={} alpha={} pooling={} quantization={} seed={} -> test_uniform AUC {:.4f}\n",
               method_name(t.method), t.alpha, pooling_name(t.pooling), quantization_name(t.quantization),
               t.seed, r.test_uniform.auc);
    return cache[key] = r.test_uniform.auc;
  };

  std::ofstream ab(out / "ablation.csv", std::ios::trunc | std::ios::binary);
  ab << "variant,seed,alpha,test_uniform_auc\n";
  std::map<std::string, double> means;
  for (const auto& variant : c.ablation.variants) {
    for (auto seed : c.ablation.seeds) {
      TrainConfig t = variant_config(c.train, variant);
      t.seed = seed;
      const double a = auc_of(t);
      ab << fmt::format("{},{},{},{}\n", variant, seed, t.alpha, a);
      means[variant] += a / static_cast<double>(c.ablation.seeds.size());
    }
  }
  std::ofstream sweep(out / "alpha_sweep.csv", std::ios::trunc | std::ios::binary);
  sweep << "alpha,seed,test_uniform_auc\n";
  std::vector<std::pair<double, double>> alpha_means;
  for (double alpha : c.ablation.alpha_grid) {
    double mean = 0.0;
    for (auto seed : c.ablation.seeds) {
      TrainConfig t = variant_config(c.train, "full");
      t.alpha = alpha;
      t.seed = seed;
      const double a = auc_of(t);
      sweep << fmt::format("{},{},{}\n", alpha, seed, a);
      mean += a / static_cast<double>(c.ablation.seeds.size());
    }
    alpha_means.emplace_back(alpha, mean);
  }
  echo("variant,mean_test_uniform_auc");
  for (const auto& v : c.ablation.variants) echo(fmt::format("{},{}", v, means[v]));
  echo("alpha,mean_test_uniform_auc");
  for (auto [a, m] : alpha_means) echo(fmt::format("{},{}", a, m));
  return kOk;
}

int cmd_report_positions(const Options& o) {
  if (o.data_dir.empty()) throw ConfigError("--data-dir is required");
  const Split split = o.splits.empty() ? Split::kTrain : parse_split(o.splits.front());
  const auto path = logs_path(o.data_dir, split);
  if (!fs::exists(path)) throw ConfigError(fmt::format("missing data file {}", path.string()));
  const auto rows = position_report(read_logs(path));
  const fs::path out = o.out.empty() ? fs::path(o.data_dir) / fmt::format("positions-{}.csv", split_name(split))
                                     : fs::path(o.out);
  write_position_csv(out, rows);
  echo("position,impression_count,ctr");
  for (const auto& r : rows) echo(fmt::format("{},{},{}", r.position, r.impression_count, r.ctr));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Position-debiased click prediction on synthetic news logs"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run config");
    sub->add_option("--preset", o.preset, "desk or full");
  };
  auto* gen = app.add_subcommand("generate", "write a synthetic catalog and click logs");
  common(gen);
  gen->add_option("--out", o.out, "data directory (or template path with --emit-template)");
  gen->add_option("--seed", o.seed, "generator seed");
  gen->add_flag("--emit-template", o.emit_template, "print the full default config");

  auto* tr = app.add_subcommand("train", "train a model; writes checkpoint and train_log.csv");
  common(tr);
  tr->add_option("--data-dir", o.data_dir, "directory written by generate");
  tr->add_option("--out", o.out, "run directory");
  tr->add_option("--seed", o.seed, "training seed");
  tr->add_option("--alpha", o.alpha, "adversarial coefficient");

  auto* ev = app.add_subcommand("evaluate", "score splits with a checkpoint; writes metrics.csv");
  common(ev);
  ev->add_option("--data-dir", o.data_dir, "directory written by generate");
  ev->add_option("--out", o.out, "run directory holding checkpoint.json");
  ev->add_option("--checkpoint", o.checkpoint, "explicit checkpoint manifest");
  ev->add_option("--split", o.splits, "split(s) to score");
  ev->add_option("--tower", o.tower, "bias_invariant_default_pos or bias_aware_at_true_pos");

  auto* ab = app.add_subcommand("ablate", "train ablation variants and the alpha grid");
  common(ab);
  ab->add_option("--data-dir", o.data_dir, "directory written by generate");
  ab->add_option("--out", o.out, "output directory");
  ab->add_option("--seed", o.seed, "run a single seed instead of the configured list");
  ab->add_option("--alpha", o.alpha, "alpha of the full variant");

  auto* rp = app.add_subcommand("report-positions", "impression count and CTR per position");
  rp->add_option("--data-dir", o.data_dir, "directory written by generate");
  rp->add_option("--split", o.splits, "split to summarize (default train)");
  rp->add_option("--out", o.out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_evaluate(o);
    if (*ab) return cmd_ablate(o);
    if (*rp) return cmd_report_positions(o);
  } catch (const NumericalError& e) {
    fmt::print(stderr, "numerical abort: {}\n", e.what());
    return kNumericError;
  } catch (const IntegrityError& e) {
    fmt::print(stderr, "integrity error: {}\n", e.what());
    return kIntegrityError;
  } catch (const ParseError& e) {
    fmt::print(stderr, "parse error: {}\n", e.what());
    return kInputError;
  } catch (const ValidationError& e) {
    fmt::print(stderr, "invalid input ({}): {}\n", e.field(), e.what());
    return kInputError;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kInputError;
  } catch (const std::domain_error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kInputError;
  } catch (const std::logic_error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kInputError;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
