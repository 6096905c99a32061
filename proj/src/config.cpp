#include "debias/config.hpp"

#include <fmt/format.h>
#include <fstream>
#include <set>

namespace debias {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown fields.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", label()));
  }

  template <typename T>
  void read(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw std::invalid_argument("integer");
        if constexpr (std::is_unsigned_v<T>)
          if (!it->is_number_unsigned()) throw std::invalid_argument("non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw std::invalid_argument("number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw std::invalid_argument("string");
      }
      out = it->template get<T>();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("{}: expected {}", field(key), e.what()));
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}: {}", field(key), e.what()));
    }
  }

  const json* child(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!used_.contains(k)) throw ConfigError(fmt::format("{}: unknown field", field(k.c_str())));
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_gen(const json& j, GenConfig& g) {
  ObjectReader r(j, "generator");
  r.read("vocab_size", g.vocab_size);
  r.read("n_topics", g.n_topics);
  r.read("n_news", g.n_news);
  r.read("n_users", g.n_users);
  r.read("title_len", g.title_len);
  r.read("list_len", g.list_len);
  r.read("n_train", g.n_train);
  r.read("n_valid", g.n_valid);
  r.read("n_test_biased", g.n_test_biased);
  r.read("n_test_uniform", g.n_test_uniform);
  r.read("gamma", g.gamma);
  r.read("rel_noise", g.rel_noise);
  r.read("patience_sigma", g.patience_sigma);
  r.read("affinity_concentration", g.affinity_concentration);
  r.read("shared_word_rate", g.shared_word_rate);
  if (const json* fr = r.child("fixed_relevance")) {
    if (fr->is_null()) {
      g.fixed_relevance.reset();
    } else if (fr->is_number()) {
      g.fixed_relevance = fr->get<double>();
    } else {
      throw ConfigError("generator.fixed_relevance: expected number or null");
    }
  }
  r.read("seed", g.seed);
  r.finish();
}

void read_train(const json& j, TrainConfig& t) {
  ObjectReader r(j, "training");
  std::string s;
  try {
    s = std::string(method_name(t.method));
    r.read("method", s);
    t.method = parse_method(s);
    s = std::string(pooling_name(t.pooling));
    r.read("pooling", s);
    t.pooling = parse_pooling(s);
    s = std::string(quantization_name(t.quantization));
    r.read("quantization", s);
    t.quantization = parse_quantization(s);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("training: {}", e.what()));
  }
  r.read("alpha", t.alpha);
  r.read("negatives", t.negatives);
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read("learning_rate", t.learning_rate);
  r.read("dropout", t.dropout);
  r.read("seed", t.seed);
  r.read("word_dim", t.word_dim);
  r.read("heads", t.heads);
  r.read("head_dim", t.head_dim);
  r.read("history_len", t.history_len);
  r.read("propensity_floor", t.propensity_floor);
  r.finish();
}

void read_eval(const json& j, RunConfig& c) {
  ObjectReader r(j, "evaluation");
  std::vector<std::string> splits;
  for (auto s : c.eval_splits) splits.emplace_back(split_name(s));
  r.read("splits", splits);
  std::string tower(tower_name(c.tower));
  r.read("tower", tower);
  r.finish();
  try {
    c.eval_splits.clear();
    for (const auto& s : splits) c.eval_splits.push_back(parse_split(s));
    c.tower = parse_tower(tower);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("evaluation: {}", e.what()));
  }
}

void read_ablation(const json& j, AblationConfig& a) {
  ObjectReader r(j, "ablation");
  r.read("seeds", a.seeds);
  r.read("variants", a.variants);
  r.read("alpha_grid", a.alpha_grid);
  r.finish();
}

}  // namespace

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos)
    throw ConfigError(fmt::format("run_id '{}' must be a non-empty plain name", run_id));
  gen.validate();
  train.validate();
  if (eval_splits.empty()) throw ConfigError("evaluation.splits must not be empty");
  if (ablation.seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
  static const std::set<std::string> known{"full", "alpha0", "mean_pooling", "identity_quantization"};
  for (const auto& v : ablation.variants)
    if (!known.contains(v)) throw ConfigError(fmt::format("ablation.variants: unknown variant '{}'", v));
  for (double a : ablation.alpha_grid)
    if (!(a >= 0.0)) throw ConfigError(fmt::format("ablation.alpha_grid: alpha {} < 0", a));
}

RunConfig preset_config(const std::string& preset) {
  RunConfig c;
  c.preset = preset;
  if (preset == "desk") {
    c.train = TrainConfig::desk();
  } else if (preset == "full") {
    c.train = TrainConfig::full();
    c.gen.title_len = 30;
  } else {
    throw ConfigError(fmt::format("preset: unknown preset '{}' (expected desk or full)", preset));
  }
  return c;
}

json to_json(const RunConfig& c) {
  const auto& g = c.gen;
  const auto& t = c.train;
  json splits = json::array();
  for (auto s : c.eval_splits) splits.push_back(std::string(split_name(s)));
  return json{
      {"run_id", c.run_id},
      {"preset", c.preset},
      {"generator",
       {{"vocab_size", g.vocab_size},
        {"n_topics", g.n_topics},
        {"n_news", g.n_news},
        {"n_users", g.n_users},
        {"title_len", g.title_len},
        {"list_len", g.list_len},
        {"n_train", g.n_train},
        {"n_valid", g.n_valid},
        {"n_test_biased", g.n_test_biased},
        {"n_test_uniform", g.n_test_uniform},
        {"gamma", g.gamma},
        {"rel_noise", g.rel_noise},
        {"patience_sigma", g.patience_sigma},
        {"affinity_concentration", g.affinity_concentration},
        {"shared_word_rate", g.shared_word_rate},
        {"fixed_relevance", g.fixed_relevance ? json(*g.fixed_relevance) : json(nullptr)},
        {"seed", g.seed}}},
      {"training",
       {{"method", method_name(t.method)},
        {"alpha", t.alpha},
        {"negatives", t.negatives},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"dropout", t.dropout},
        {"seed", t.seed},
        {"word_dim", t.word_dim},
        {"heads", t.heads},
        {"head_dim", t.head_dim},
        {"history_len", t.history_len},
        {"pooling", pooling_name(t.pooling)},
        {"quantization", quantization_name(t.quantization)},
        {"propensity_floor", t.propensity_floor}}},
      {"evaluation", {{"splits", splits}, {"tower", tower_name(c.tower)}}},
      {"ablation",
       {{"seeds", c.ablation.seeds},
        {"variants", c.ablation.variants},
        {"alpha_grid", c.ablation.alpha_grid}}},
  };
}

RunConfig run_config_from_json(const json& j, const std::optional<std::string>& preset_override) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  std::string preset = "desk";
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("preset: expected string");
    preset = it->get<std::string>();
  }
  if (preset_override) preset = *preset_override;
  RunConfig c = preset_config(preset);

  ObjectReader r(j, "");
  std::string ignored;
  r.read("preset", ignored);
  r.read("run_id", c.run_id);
  if (const json* g = r.child("generator")) read_gen(*g, c.gen);
  if (const json* t = r.child("training")) read_train(*t, c.train);
  if (const json* e = r.child("evaluation")) read_eval(*e, c);
  if (const json* a = r.child("ablation")) read_ablation(*a, c.ablation);
  r.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::optional<std::string>& preset_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
  return run_config_from_json(j, preset_override);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot open {} for writing", path.string()));
  out << to_json(cfg).dump(2) << '\n';
}

json model_config_to_json(const ModelConfig& m) {
  return json{{"vocab_size", m.vocab_size},
              {"word_dim", m.word_dim},
              {"heads", m.heads},
              {"head_dim", m.head_dim},
              {"title_len", m.title_len},
              {"history_len", m.history_len},
              {"dropout", m.dropout},
              {"quantization", quantization_name(m.quantizer.mode)},
              {"n_buckets", m.quantizer.n_buckets},
              {"pooling", pooling_name(m.pooling)}};
}

ModelConfig model_config_from_json(const json& j) {
  try {
    ModelConfig m;
    m.vocab_size = j.at("vocab_size").get<int>();
    m.word_dim = j.at("word_dim").get<int>();
    m.heads = j.at("heads").get<int>();
    m.head_dim = j.at("head_dim").get<int>();
    m.title_len = j.at("title_len").get<int>();
    m.history_len = j.at("history_len").get<int>();
    m.dropout = j.at("dropout").get<double>();
    m.quantizer.mode = parse_quantization(j.at("quantization").get<std::string>());
    m.quantizer.n_buckets = j.at("n_buckets").get<int>();
    m.pooling = parse_pooling(j.at("pooling").get<std::string>());
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw IntegrityError(fmt::format("checkpoint model config: {}", e.what()));
  } catch (const ConfigError& e) {
    throw IntegrityError(fmt::format("checkpoint model config: {}", e.what()));
  }
}

}  // namespace debias
