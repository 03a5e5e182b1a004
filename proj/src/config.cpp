#include "clipstrike/config.hpp"

#include "clipstrike/evaluator.hpp"
#include "clipstrike/models.hpp"

#include <fmt/format.h>
#include <toml.hpp>

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace clipstrike {

namespace fs = std::filesystem;

namespace {

// Typed reads from one TOML table that remember which keys were consumed.
class Section {
 public:
  Section(const toml::table* table, std::string name, const std::string& source)
      : table_(table), name_(std::move(name)), source_(source) {}

  void get(const char* key, bool& out) { read(key, out, "a boolean", [](const toml::node& n) { return n.value<bool>(); }); }
  void get(const char* key, Index& out) {
    read(key, out, "an integer", [](const toml::node& n) -> std::optional<Index> {
      if (!n.is_integer()) return std::nullopt;
      return static_cast<Index>(*n.value<std::int64_t>());
    });
  }
  void get(const char* key, double& out) {
    read(key, out, "a number", [](const toml::node& n) -> std::optional<double> {
      if (!n.is_number()) return std::nullopt;
      return n.value<double>();
    });
  }
  void get(const char* key, std::string& out) {
    read(key, out, "a string", [](const toml::node& n) { return n.value<std::string>(); });
  }
  void get(const char* key, fs::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  void get(const char* key, std::vector<std::string>& out) {
    read(key, out, "an array of strings", [](const toml::node& n) -> std::optional<std::vector<std::string>> {
      const auto* array = n.as_array();
      if (!array) return std::nullopt;
      std::vector<std::string> values;
      for (const auto& item : *array) {
        if (!item.is_string()) return std::nullopt;
        values.push_back(*item.value<std::string>());
      }
      return values;
    });
  }
  void get(const char* key, std::map<std::string, std::string>& out) {
    read(key, out, "a table of strings", [](const toml::node& n) -> std::optional<std::map<std::string, std::string>> {
      const auto* table = n.as_table();
      if (!table) return std::nullopt;
      std::map<std::string, std::string> values;
      for (const auto& [k, v] : *table) {
        if (!v.is_string()) return std::nullopt;
        values[std::string(k.str())] = *v.value<std::string>();
      }
      return values;
    });
  }

  void allow(const char* key) { used_.insert(key); }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, node] : *table_) {
      if (!used_.count(std::string(key.str()))) {
        throw ConfigError(fmt::format("{}: unknown key '{}{}'", source_, name_.empty() ? "" : name_ + ".", key.str()));
      }
    }
  }

 private:
  template <typename T, typename F>
  void read(const char* key, T& out, const char* expected, F&& convert) {
    used_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    auto value = convert(*node);
    if (!value) {
      throw ConfigError(fmt::format("{}: '{}{}' must be {}", source_, name_.empty() ? "" : name_ + ".", key, expected));
    }
    out = std::move(*value);
  }

  const toml::table* table_;
  std::string name_;
  const std::string& source_;
  std::set<std::string> used_;
};

const toml::table* subtable(const toml::table& root, const char* name, const std::string& source) {
  const toml::node* node = root.get(name);
  if (!node) return nullptr;
  if (!node->is_table()) throw ConfigError(fmt::format("{}: '{}' must be a table", source, name));
  return node->as_table();
}

void apply_override(toml::table& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  std::vector<std::string> keys;
  std::stringstream parts(path);
  for (std::string part; std::getline(parts, part, '.');) keys.push_back(part);

  toml::table* table = &root;
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!table->contains(keys[i])) table->insert(keys[i], toml::table{});
    table = (*table)[keys[i]].as_table();
    if (!table) throw ConfigError("override '" + assignment + "': '" + keys[i] + "' is not a table");
  }
  try {
    toml::table parsed = toml::parse("v = " + text);
    table->insert_or_assign(keys.back(), *parsed.get("v"));
  } catch (const toml::parse_error&) {
    table->insert_or_assign(keys.back(), text);
  }
}

RunConfig from_table(const toml::table& root, const std::string& source) {
  RunConfig c;
  Section top(&root, "", source);
  Index seed = static_cast<Index>(c.seed);
  top.get("seed", seed);
  if (seed < 0) throw ConfigError(source + ": seed must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  top.get("run_id", c.run_id);
  top.get("out", c.out_root);
  for (const char* name : {"data", "clip", "surrogate", "generator", "train", "eval", "baseline", "ablation"}) {
    top.allow(name);
  }
  top.finish();

  Section data(subtable(root, "data", source), "data", source);
  data.get("dataset", c.data.dataset);
  data.get("root", c.data.root);
  data.finish();

  Section clip(subtable(root, "clip", source), "clip", source);
  clip.get("backbone", c.clip.backbone);
  clip.get("fixture", c.clip.fixture);
  clip.get("embeddings", c.clip.embeddings);
  clip.get("prompt_template", c.clip.prompt_template);
  clip.get("m_candidates", c.clip.m_candidates);
  clip.get("pair_limit", c.clip.pair_limit);
  clip.finish();

  Section surrogate(subtable(root, "surrogate", source), "surrogate", source);
  surrogate.get("arch", c.surrogate.arch);
  surrogate.get("layer", c.surrogate.layer);
  surrogate.get("weights", c.surrogate.weights);
  surrogate.finish();

  Section gen(subtable(root, "generator", source), "generator", source);
  gen.get("epsilon", c.generator.epsilon);
  gen.get("base_channels", c.generator.base_channels);
  gen.get("resblocks", c.generator.resblocks);
  gen.get("saliency_gating", c.generator.saliency_gating);
  gen.get("image_size", c.generator.image_size);
  gen.finish();

  Section train(subtable(root, "train", source), "train", source);
  train.get("epochs", c.train.epochs);
  train.get("batch_size", c.train.batch_size);
  train.get("lr", c.train.lr);
  train.get("weight_decay", c.train.weight_decay);
  train.get("alpha", c.train.weights.alpha);
  train.get("beta", c.train.weights.beta);
  train.get("mu", c.train.weights.mu);
  train.get("checkpoint_every", c.train.checkpoint_every);
  train.get("max_steps", c.train.max_steps);
  train.get("grad_clip", c.train.grad_clip);
  train.get("early_stop", c.train.early_stop);
  train.get("plateau_tolerance", c.train.plateau_tolerance);
  train.get("plateau_epochs", c.train.plateau_epochs);
  train.get("resume_from", c.train.resume_from);
  train.finish();

  Section eval(subtable(root, "eval", source), "eval", source);
  eval.get("victims", c.eval.victims);
  eval.get("weights", c.eval.weights);
  eval.get("split", c.eval.split);
  eval.get("hamming_form", c.eval.hamming_form);
  eval.get("threshold", c.eval.threshold);
  eval.get("batch_size", c.eval.batch_size);
  eval.finish();

  Section baseline(subtable(root, "baseline", source), "baseline", source);
  std::string kind = to_string(c.baseline.kind);
  baseline.get("kind", kind);
  c.baseline.kind = parse_baseline_kind(kind);
  baseline.get("epsilon", c.baseline.epsilon);
  baseline.get("steps", c.baseline.steps);
  baseline.get("step_size", c.baseline.step_size);
  baseline.get("random_start", c.baseline.random_start);
  baseline.finish();

  Section ablation(subtable(root, "ablation", source), "ablation", source);
  ablation.get("templates", c.ablation.templates);
  ablation.finish();

  return c;
}

}  // namespace

void RunConfig::validate() const {
  if (data.dataset.empty()) throw ConfigError("data.dataset must be set");
  clip.validate();
  (void)architecture_info(surrogate.arch);
  generator.validate();
  train.validate();
  for (const auto& v : eval.victims) (void)architecture_info(v);
  for (const auto& [arch, path] : eval.weights) (void)architecture_info(arch);
  (void)parse_split(eval.split);
  (void)parse_hamming_form(eval.hamming_form);
  if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) throw ConfigError("eval.threshold must lie in (0, 1)");
  if (eval.batch_size < 1) throw ConfigError("eval.batch_size must be at least 1");
  baseline.validate();
  for (const auto& t : ablation.templates) (void)PromptTemplate(t);
  if (seed > std::uint64_t(std::numeric_limits<std::int64_t>::max())) throw ConfigError("seed is too large");
  if (run_id.find('/') != std::string::npos || run_id == "." || run_id == "..") {
    throw ConfigError("run id '" + run_id + "' must be a plain directory name");
  }
}

std::string RunConfig::to_toml() const {
  auto strings = [](const std::vector<std::string>& v) {
    toml::array a;
    for (const auto& s : v) a.push_back(s);
    return a;
  };
  toml::table weights;
  for (const auto& [k, v] : eval.weights) weights.insert(k, v);
  const toml::table root{
      {"seed", static_cast<std::int64_t>(seed)},
      {"run_id", run_id},
      {"out", out_root.string()},
      {"data", toml::table{{"dataset", data.dataset}, {"root", data.root.string()}}},
      {"clip", toml::table{{"backbone", clip.backbone},
                           {"fixture", clip.fixture},
                           {"embeddings", clip.embeddings.string()},
                           {"prompt_template", clip.prompt_template},
                           {"m_candidates", static_cast<std::int64_t>(clip.m_candidates)},
                           {"pair_limit", static_cast<std::int64_t>(clip.pair_limit)}}},
      {"surrogate",
       toml::table{{"arch", surrogate.arch}, {"layer", surrogate.layer}, {"weights", surrogate.weights}}},
      {"generator", toml::table{{"epsilon", generator.epsilon},
                                {"base_channels", static_cast<std::int64_t>(generator.base_channels)},
                                {"resblocks", static_cast<std::int64_t>(generator.resblocks)},
                                {"saliency_gating", generator.saliency_gating},
                                {"image_size", static_cast<std::int64_t>(generator.image_size)}}},
      {"train", toml::table{{"epochs", static_cast<std::int64_t>(train.epochs)},
                            {"batch_size", static_cast<std::int64_t>(train.batch_size)},
                            {"lr", train.lr},
                            {"weight_decay", train.weight_decay},
                            {"alpha", train.weights.alpha},
                            {"beta", train.weights.beta},
                            {"mu", train.weights.mu},
                            {"checkpoint_every", static_cast<std::int64_t>(train.checkpoint_every)},
                            {"max_steps", static_cast<std::int64_t>(train.max_steps)},
                            {"grad_clip", train.grad_clip},
                            {"early_stop", train.early_stop},
                            {"plateau_tolerance", train.plateau_tolerance},
                            {"plateau_epochs", static_cast<std::int64_t>(train.plateau_epochs)},
                            {"resume_from", train.resume_from.string()}}},
      {"eval", toml::table{{"victims", strings(eval.victims)},
                           {"weights", weights},
                           {"split", eval.split},
                           {"hamming_form", eval.hamming_form},
                           {"threshold", eval.threshold},
                           {"batch_size", static_cast<std::int64_t>(eval.batch_size)}}},
      {"baseline", toml::table{{"kind", to_string(baseline.kind)},
                               {"epsilon", baseline.epsilon},
                               {"steps", static_cast<std::int64_t>(baseline.steps)},
                               {"step_size", baseline.step_size},
                               {"random_start", baseline.random_start}}},
      {"ablation", toml::table{{"templates", strings(ablation.templates)}}},
  };
  std::ostringstream out;
  out << root << "\n";
  return out.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_toml()); }

TrainingFingerprint RunConfig::fingerprint() const {
  TrainingFingerprint f;
  f.dataset = data.dataset + "@" + data.root.string();
  f.surrogate = surrogate.arch + ":" + surrogate.weights;
  f.surrogate_layer = surrogate.layer;
  f.clip_backbone = clip.fixture ? "fixture" : clip.backbone + ":" + clip.embeddings.string();
  f.prompt_template = clip.prompt_template;
  f.m_candidates = clip.m_candidates;
  f.pair_limit = clip.pair_limit;
  f.generator = generator;
  f.train = train;
  f.seed = seed;
  return f;
}

RunConfig parse_run_config(const std::string& text, const std::string& source,
                           const std::vector<std::string>& overrides) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("{}:{}:{}: {}", source, e.source().begin.line, e.source().begin.column,
                                  e.description()));
  }
  for (const auto& o : overrides) apply_override(root, o);
  RunConfig config = from_table(root, source);
  config.validate();
  return config;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.string(), overrides);
}

}  // namespace clipstrike
