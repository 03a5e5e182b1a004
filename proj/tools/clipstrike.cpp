#include "clipstrike/experiment.hpp"
#include "clipstrike/image_io.hpp"
#include "clipstrike/ingest.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using namespace clipstrike;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kInternalError = 2;

struct GlobalOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string run_id;
  std::string out;
  bool force = false;
  std::string log_level = "info";
};

struct CommandOptions {
  // ingest
  std::string format = "image-folder";
  std::string input;
  std::string output;
  Index limit = 0;
  bool multilabel = false;
  // attack, evaluate, export-images
  std::string checkpoint;
  std::string victims;
  std::string data;
  std::string report;
  std::string split;
  Index count = 8;
  // baseline
  std::string kind;
  // ablate-prompts
  std::vector<std::string> templates;
};

bool is_report_path(const std::string& out) {
  const auto ext = fs::path(out).extension();
  return ext == ".json" || ext == ".csv";
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

RunConfig resolve_config(const std::string& command, const GlobalOptions& g, const CommandOptions& c) {
  std::vector<std::string> overrides = g.sets;
  if (g.seed) overrides.push_back(fmt::format("seed={}", *g.seed));
  if (!g.out.empty() && !is_report_path(g.out)) overrides.push_back(fmt::format("out=\"{}\"", g.out));
  if (!c.data.empty()) overrides.push_back(fmt::format("data.root=\"{}\"", c.data));
  if (!c.split.empty()) overrides.push_back("eval.split=" + c.split);
  if (!c.kind.empty()) overrides.push_back("baseline.kind=" + c.kind);
  RunConfig config = g.config.empty() ? parse_run_config("", "<defaults>", overrides)
                                      : load_run_config(g.config, overrides);
  if (!c.victims.empty()) config.eval.victims = split_list(c.victims);
  if (!c.templates.empty()) config.ablation.templates = c.templates;
  if (!g.run_id.empty()) config.run_id = g.run_id;
  if (config.run_id.empty()) config.run_id = command + "-" + hex64(config.hash()).substr(0, 8);
  config.validate();
  return config;
}

/// Creates the run directory and writes the config snapshot before any work.
fs::path prepare_run_dir(const RunConfig& config, bool force) {
  const fs::path dir = config.run_dir();
  if (fs::exists(dir) && !force) {
    throw ConfigError("run directory " + dir.string() + " already exists; pass --force to reuse it");
  }
  fs::create_directories(dir);
  std::ofstream(dir / "config_snapshot.toml") << config.to_toml();
  spdlog::info("run {} -> {} (config hash {})", config.run_id, dir.string(), hex64(config.hash()));
  return dir;
}

void write_reports(const EvalReport& report, const fs::path& dir, const GlobalOptions& g, const CommandOptions& c,
                   const std::string& stem) {
  fs::path json_path = dir / (stem + ".json");
  fs::path csv_path = dir / (stem + ".csv");
  std::string requested = !c.report.empty() ? c.report : (is_report_path(g.out) ? g.out : "");
  if (!requested.empty()) {
    const fs::path p(requested);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    json_path = fs::path(p).replace_extension(".json");
    csv_path = fs::path(p).replace_extension(".csv");
  }
  write_report_json(report, json_path);
  write_report_csv(report, csv_path);
  spdlog::info("report written to {} and {}", json_path.string(), csv_path.string());
}

void require_checkpoint(const CommandOptions& c, const std::string& command) {
  if (c.checkpoint.empty()) {
    throw ConfigError(command + " needs a trained generator: pass --checkpoint <path> (produced by clipstrike train)");
  }
}

int cmd_ingest(const GlobalOptions& g, const CommandOptions& c) {
  if (c.output.empty()) throw ConfigError("ingest needs --output <dir>");
  if (fs::exists(c.output) && !fs::is_empty(c.output) && !g.force) {
    throw ConfigError("ingest output " + c.output + " is not empty; pass --force to overwrite");
  }
  IngestOptions options;
  options.format = parse_ingest_format(c.format);
  options.input = c.input;
  options.output = c.output;
  options.limit = c.limit;
  options.multilabel_fixture = c.multilabel;
  const auto summary = ingest(options);
  std::cout << nlohmann::json{{"classes", summary.classes}, {"train", summary.train}, {"test", summary.test}}.dump()
            << "\n";
  return kOk;
}

int cmd_train(Experiment& ex, const fs::path& dir) {
  auto generator = ex.make_generator();
  const TrainResult result = ex.train(*generator, dir, ex.config().clip.prompt_template);
  const nlohmann::json summary = {{"checkpoint", result.final_checkpoint.string()},
                                  {"steps", result.steps},
                                  {"epochs", result.epochs},
                                  {"stopped_early", result.stopped_early},
                                  {"config_hash", ex.config_hash()}};
  std::ofstream(dir / "train_summary.json") << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_attack(Experiment& ex, const fs::path& dir, const CommandOptions& c) {
  require_checkpoint(c, "attack");
  auto checkpoint = ex.load_checkpoint(c.checkpoint);
  const Dataset& data = ex.dataset(parse_split(ex.config().eval.split));
  const fs::path out = dir / "adversarial";
  DatasetWriter writer(out, data.vocabulary());
  const Attack attack = generator_attack(*checkpoint.generator, "generator", checkpoint.surrogate);
  for (const auto& indices : batch_indices(data.size(), ex.config().eval.batch_size, false, 0)) {
    const ImageBatch batch = collate(data, indices, ex.config().generator.image_size);
    const Tensor<Real> adversarial = attack.perturb(batch);
    for (Index i = 0; i < batch.size(); ++i) {
      writer.add_image(parse_split(ex.config().eval.split), batch.ids[std::size_t(i)], adversarial,
                       batch.labels[std::size_t(i)], i);
    }
  }
  std::ofstream(out / "config_hash.txt") << ex.config_hash() << "\n";
  spdlog::info("wrote {} adversarial images to {}", data.size(), out.string());
  return kOk;
}

int cmd_evaluate(Experiment& ex, const fs::path& dir, const GlobalOptions& g, const CommandOptions& c) {
  auto checkpoint = ex.load_checkpoint(c.checkpoint);
  const Attack attack = generator_attack(*checkpoint.generator, "generator", checkpoint.surrogate);
  write_reports(ex.evaluate(attack), dir, g, c, "report");
  return kOk;
}

int cmd_baseline(Experiment& ex, const fs::path& dir, const GlobalOptions& g, const CommandOptions& c) {
  const auto& spec = ex.config().baseline;
  const bool multilabel = ex.dataset(Split::Train).vocabulary().multilabel();
  Attack attack = baseline_attack(ex.surrogate(), spec, multilabel, ex.config().seed);
  attack.surrogate = ex.config().surrogate.arch;
  write_reports(ex.evaluate(attack), dir, g, c, "baseline_" + to_string(spec.kind));
  return kOk;
}

int cmd_ablate(Experiment& ex, const fs::path& dir) {
  auto templates = ex.config().ablation.templates;
  if (templates.empty()) templates.push_back(ex.config().clip.prompt_template);
  const auto rows = ablate_prompts(templates, [&](const std::string& text) {
    RunConfig variant = ex.config();
    variant.clip.prompt_template = text;
    const fs::path sub = dir / "ablation" / hex64(fnv1a(text)).substr(0, 8);
    fs::create_directories(sub);
    std::ofstream(sub / "config_snapshot.toml") << variant.to_toml();
    auto generator = ex.make_generator();
    ex.train(*generator, sub, text);
    const EvalReport report = ex.evaluate(generator_attack(*generator, "generator", variant.surrogate.arch));
    const auto& row = report.rows.front();
    if (row.status != "ok") throw ConfigError("victim " + row.victim + " " + row.status);
    return AblationRow{text, row.hs_perturbed, hex64(variant.hash())};
  });
  write_ablation_csv(rows, dir / "ablation.csv");
  for (const auto& r : rows) std::cout << fmt::format("{:8.2f}  {}\n", r.hamming, r.prompt_template);
  return kOk;
}

// One row per image: raw | perturbed | saliency, separated by white gutters.
Tensor<Real> image_grid(const Tensor<Real>& raw, const Tensor<Real>& adversarial, const Tensor<Real>& saliency) {
  constexpr Index gap = 2;
  const Index n = raw.n(), s = raw.h(), cols = 3;
  Tensor<Real> grid(Shape{1, 3, n * s + (n + 1) * gap, cols * s + (cols + 1) * gap});
  grid.array().setOnes();
  for (Index i = 0; i < n; ++i) {
    const Index top = gap + i * (s + gap);
    for (Index c = 0; c < 3; ++c) {
      for (Index y = 0; y < s; ++y) {
        for (Index x = 0; x < s; ++x) {
          grid(0, c, top + y, gap + x) = raw(i, c, y, x);
          grid(0, c, top + y, 2 * gap + s + x) = adversarial(i, c, y, x);
          grid(0, c, top + y, 3 * gap + 2 * s + x) = saliency(i, 0, y, x);
        }
      }
    }
  }
  return grid;
}

int cmd_export_images(Experiment& ex, const fs::path& dir, const CommandOptions& c) {
  require_checkpoint(c, "export-images");
  if (c.count < 1) throw ConfigError("--count must be at least 1");
  auto checkpoint = ex.load_checkpoint(c.checkpoint);
  const Dataset& data = ex.dataset(parse_split(ex.config().eval.split));
  if (data.size() == 0) throw ConfigError("the evaluation split is empty");
  std::vector<Index> indices;
  for (Index i = 0; i < std::min(c.count, data.size()); ++i) indices.push_back(i);
  const ImageBatch batch = collate(data, indices, ex.config().generator.image_size);
  const auto out = checkpoint.generator->forward(batch.images);
  const auto comp = compose_adversarial(batch.images, out, checkpoint.config.saliency_gating);
  const fs::path images = dir / "images";
  fs::create_directories(images);
  write_png(images / "grid.png", image_grid(batch.images, comp.adversarial, minmax_scale(out.saliency)));
  spdlog::info("wrote {} (columns: raw, perturbed, saliency)", (images / "grid.png").string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("clipstrike"));
  spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e level=%l %v");

  CLI::App app{"Saliency-gated CLIP-guided adversarial perturbation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  CommandOptions c;
  app.add_option("--config", g.config, "TOML run configuration");
  app.add_option("--set", g.sets, "Override a config key: section.key=value (repeatable)");
  app.add_option("--seed", g.seed, "Run seed; every component derives its own stream from it");
  app.add_option("--run-id", g.run_id, "Artifact directory name under the output root");
  app.add_option("--out", g.out, "Output root (a .json/.csv path names the report for evaluate and baseline)");
  app.add_flag("--force", g.force, "Reuse an existing run directory");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn or error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  auto* ingest_cmd = app.add_subcommand("ingest", "Convert a dataset into the on-disk layout");
  ingest_cmd->add_option("--format", c.format, "cifar10, image-folder, voc or synthetic-fixture");
  ingest_cmd->add_option("--input", c.input, "Source directory");
  ingest_cmd->add_option("--output", c.output, "Destination dataset root")->required();
  ingest_cmd->add_option("--limit", c.limit, "Samples kept per split (0 = all)");
  ingest_cmd->add_flag("--multilabel", c.multilabel, "Write the two-shape fixture variant");

  app.add_subcommand("train", "Train the perturbation generator");

  auto* attack_cmd = app.add_subcommand("attack", "Write adversarial copies of the evaluation split");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a trained generator against the victims");
  auto* export_cmd = app.add_subcommand("export-images", "Write a raw/perturbed/saliency PNG grid");
  for (auto* cmd : {attack_cmd, evaluate_cmd, export_cmd}) {
    cmd->add_option("--checkpoint", c.checkpoint, "Generator checkpoint (gen_epoch_<k>.ckpt)");
    cmd->add_option("--data", c.data, "Dataset root (sets data.root)");
    cmd->add_option("--split", c.split, "Evaluation split (train or test)");
  }
  export_cmd->add_option("--count", c.count, "Images in the grid");

  auto* baseline_cmd = app.add_subcommand("baseline", "Evaluate an FGSM or PGD baseline");
  baseline_cmd->add_option("--kind", c.kind, "fgsm or pgd (sets baseline.kind)");
  for (auto* cmd : {evaluate_cmd, baseline_cmd}) {
    cmd->add_option("--victims", c.victims, "Comma-separated victim architectures");
    cmd->add_option("--report", c.report, "Report path; the CSV goes next to it");
  }
  baseline_cmd->add_option("--data", c.data, "Dataset root (sets data.root)");

  auto* ablate_cmd = app.add_subcommand("ablate-prompts", "Train and score one generator per prompt template");
  ablate_cmd->add_option("--template", c.templates, "Prompt template (repeatable; default ablation.templates)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "ingest") return cmd_ingest(g, c);
    if ((command == "evaluate") && c.checkpoint.empty()) require_checkpoint(c, command);
    const RunConfig config = resolve_config(command, g, c);
    const fs::path dir = prepare_run_dir(config, g.force);
    Experiment ex(config);
    if (command == "train") return cmd_train(ex, dir);
    if (command == "attack") return cmd_attack(ex, dir, c);
    if (command == "evaluate") return cmd_evaluate(ex, dir, g, c);
    if (command == "baseline") return cmd_baseline(ex, dir, g, c);
    if (command == "ablate-prompts") return cmd_ablate(ex, dir);
    if (command == "export-images") return cmd_export_images(ex, dir, c);
    spdlog::error("unhandled subcommand {}", command);
    return kInternalError;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUserError;
  } catch (const TrainingError& e) {
    spdlog::error("{}", e.what());
    return kInternalError;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kInternalError;
  }
}
