#include "clipstrike/evaluator.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace clipstrike {

HammingForm parse_hamming_form(const std::string& text) {
  if (text == "iou") return HammingForm::Iou;
  if (text == "one-minus-loss") return HammingForm::OneMinusLoss;
  throw ConfigError("unknown Hamming score form '" + text + "' (expected iou or one-minus-loss)");
}

double hamming_score(const std::vector<LabelSet>& truth, const std::vector<LabelSet>& predicted, HammingForm form,
                     Index num_classes) {
  if (truth.empty()) throw std::invalid_argument("empty evaluation set");
  if (truth.size() != predicted.size()) {
    throw ShapeError(fmt::format("hamming_score: {} truths vs {} predictions", truth.size(), predicted.size()));
  }
  if (form == HammingForm::OneMinusLoss && num_classes < 1) {
    throw std::invalid_argument("one-minus-loss Hamming score needs the class count");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].empty()) throw ConfigError(fmt::format("sample {} has no true labels", i));
    LabelSet shared, either;
    std::set_intersection(truth[i].begin(), truth[i].end(), predicted[i].begin(), predicted[i].end(),
                          std::back_inserter(shared));
    std::set_union(truth[i].begin(), truth[i].end(), predicted[i].begin(), predicted[i].end(),
                   std::back_inserter(either));
    if (form == HammingForm::Iou) {
      total += double(shared.size()) / double(either.size());
    } else {
      total += 1.0 - double(either.size() - shared.size()) / double(num_classes);
    }
  }
  return 100.0 * total / double(truth.size());
}

namespace {

constexpr Index kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const Eigen::VectorXd& gaussian_kernel() {
  static const Eigen::VectorXd kernel = [] {
    Eigen::VectorXd k(kWindow);
    const double centre = (kWindow - 1) / 2.0;
    for (Index i = 0; i < kWindow; ++i) k(i) = std::exp(-(i - centre) * (i - centre) / (2 * kSigma * kSigma));
    return Eigen::VectorXd(k / k.sum());
  }();
  return kernel;
}

// Separable 'valid' Gaussian filter.
Eigen::ArrayXXd blur(const Eigen::ArrayXXd& img) {
  const auto& k = gaussian_kernel();
  const Index oh = img.rows() - kWindow + 1, ow = img.cols() - kWindow + 1;
  Eigen::ArrayXXd rows = Eigen::ArrayXXd::Zero(oh, img.cols());
  for (Index i = 0; i < kWindow; ++i) rows += k(i) * img.middleRows(i, oh);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(oh, ow);
  for (Index j = 0; j < kWindow; ++j) out += k(j) * rows.middleCols(j, ow);
  return out;
}

}  // namespace

double ssim(const Tensor<Real>& a, const Tensor<Real>& b, Index n) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: " + a.shape().str() + " vs " + b.shape().str());
  if (a.h() < kWindow || a.w() < kWindow) {
    throw ShapeError(fmt::format("ssim needs images of at least {0}x{0}, got {1}", kWindow, a.shape().str()));
  }
  double total = 0.0;
  for (Index c = 0; c < a.c(); ++c) {
    const Eigen::ArrayXXd x = a.plane(n, c).array(), y = b.plane(n, c).array();
    const Eigen::ArrayXXd mx = blur(x), my = blur(y);
    const Eigen::ArrayXXd vx = blur(x * x) - mx * mx;
    const Eigen::ArrayXXd vy = blur(y * y) - my * my;
    const Eigen::ArrayXXd cxy = blur(x * y) - mx * my;
    const Eigen::ArrayXXd map =
        ((2 * mx * my + kC1) * (2 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
    total += map.mean();
  }
  return total / double(a.c());
}

Attack identity_attack() {
  return {"identity", "", [](const ImageBatch& batch) { return batch.images; }};
}

Attack generator_attack(Generator<Real>& generator, std::string name, std::string surrogate) {
  return {std::move(name), std::move(surrogate), [&generator](const ImageBatch& batch) {
            const auto out = generator.forward(batch.images);
            return compose_adversarial(batch.images, out, generator.config().saliency_gating).adversarial;
          }};
}

EvalReport evaluate_matrix(const Attack& attack, const std::vector<VictimSpec>& victims, const Dataset& data,
                           const VictimLoader& load, const EvalOptions& options) {
  if (data.size() == 0) throw std::invalid_argument("empty evaluation set");
  const bool multilabel = data.vocabulary().multilabel();
  struct Cell {
    std::unique_ptr<Classifier> model;
    std::vector<LabelSet> raw, perturbed;
    std::string error;
  };
  std::vector<Cell> cells(victims.size());
  for (std::size_t v = 0; v < victims.size(); ++v) {
    try {
      cells[v].model = load(victims[v]);
      if (cells[v].model->num_classes() != data.vocabulary().size()) {
        throw ConfigError(fmt::format("victim has {} classes, dataset has {}", cells[v].model->num_classes(),
                                      data.vocabulary().size()));
      }
    } catch (const std::exception& e) {
      cells[v].model.reset();
      cells[v].error = e.what();
      spdlog::warn("victim {} unavailable: {}", victims[v].architecture, e.what());
    }
  }

  std::vector<LabelSet> truth;
  double ssim_sum = 0.0;
  for (const auto& indices : batch_indices(data.size(), options.batch_size, false, 0)) {
    const ImageBatch batch = collate(data, indices, options.image_size);
    const Tensor<Real> adversarial = attack.perturb(batch);
    if (adversarial.shape() != batch.images.shape()) {
      throw ShapeError("attack " + attack.name + " changed the image shape to " + adversarial.shape().str());
    }
    truth.insert(truth.end(), batch.labels.begin(), batch.labels.end());
    for (Index i = 0; i < batch.size(); ++i) ssim_sum += ssim(batch.images, adversarial, i);
    for (auto& cell : cells) {
      if (!cell.model) continue;
      try {
        auto raw = predict_labels(cell.model->logits(batch.images), multilabel, options.threshold);
        auto adv = predict_labels(cell.model->logits(adversarial), multilabel, options.threshold);
        cell.raw.insert(cell.raw.end(), raw.begin(), raw.end());
        cell.perturbed.insert(cell.perturbed.end(), adv.begin(), adv.end());
      } catch (const std::exception& e) {
        cell.model.reset();
        cell.error = e.what();
      }
    }
  }

  EvalReport report;
  const double mean_ssim = ssim_sum / double(truth.size());
  for (std::size_t v = 0; v < victims.size(); ++v) {
    EvalRow row;
    row.surrogate = attack.surrogate;
    row.attack = attack.name;
    row.victim = victims[v].architecture;
    row.box = victims[v].architecture == attack.surrogate ? "white" : "black";
    if (!cells[v].model) {
      row.status = "failed: " + cells[v].error;
      report.rows.push_back(row);
      continue;
    }
    const Index classes = data.vocabulary().size();
    row.status = "ok";
    row.samples = static_cast<Index>(truth.size());
    row.hs_raw = hamming_score(truth, cells[v].raw, options.form, classes);
    row.hs_perturbed = hamming_score(truth, cells[v].perturbed, options.form, classes);
    row.fooling_rate = fooling_rate(row.hs_raw, row.hs_perturbed);
    row.mean_ssim = mean_ssim;
    spdlog::info("{} vs {} ({}-box): HS {:.2f} -> {:.2f}, FR {:.2f}, SSIM {:.4f}", attack.name, row.victim,
                 row.box, row.hs_raw, row.hs_perturbed, row.fooling_rate, row.mean_ssim);
    report.rows.push_back(row);
  }
  return report;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"surrogate", r.surrogate},
                    {"attack", r.attack},
                    {"victim", r.victim},
                    {"box", r.box},
                    {"status", r.status},
                    {"samples", r.samples},
                    {"hs_raw", r.hs_raw},
                    {"hs_perturbed", r.hs_perturbed},
                    {"fooling_rate", r.fooling_rate},
                    {"mean_ssim", r.mean_ssim}});
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write report " + path.string());
  out << nlohmann::json{{"config_hash", report.config_hash}, {"rows", rows}}.dump(2) << "\n";
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

}  // namespace

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write report " + path.string());
  out << "surrogate,attack,victim,box,status,samples,hs_raw,hs_perturbed,fooling_rate,mean_ssim,config_hash\n";
  for (const auto& r : report.rows) {
    out << fmt::format("{},{},{},{},{},{},{:.4f},{:.4f},{:.4f},{:.6f},{}\n", csv_field(r.surrogate),
                       csv_field(r.attack), csv_field(r.victim), r.box, csv_field(r.status), r.samples, r.hs_raw,
                       r.hs_perturbed, r.fooling_rate, r.mean_ssim, report.config_hash);
  }
}

std::vector<AblationRow> ablate_prompts(const std::vector<std::string>& templates,
                                        const std::function<AblationRow(const std::string&)>& run_one) {
  std::vector<AblationRow> rows;
  for (const auto& t : templates) {
    rows.push_back(run_one(t));
    spdlog::info("template \"{}\": HS {:.2f}", t, rows.back().hamming);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.hamming < b.hamming; });
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "template,hamming_score,config_hash\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{:.4f},{}\n", csv_field(r.prompt_template), r.hamming, r.config_hash);
  }
}

}  // namespace clipstrike
