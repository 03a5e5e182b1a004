#pragma once

#include "clipstrike/data.hpp"
#include "clipstrike/generator.hpp"
#include "clipstrike/models.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace clipstrike {

enum class HammingForm {
  Iou,           ///< mean per-sample |Y ∩ Ŷ| / |Y ∪ Ŷ|
  OneMinusLoss,  ///< 1 − mean |Y △ Ŷ| / classes
};
HammingForm parse_hamming_form(const std::string& text);

/// Percentage in [0, 100]. Throws std::invalid_argument("empty evaluation set")
/// for N = 0 and ConfigError when a true label set is empty. OneMinusLoss needs
/// `num_classes`.
double hamming_score(const std::vector<LabelSet>& truth, const std::vector<LabelSet>& predicted,
                     HammingForm form = HammingForm::Iou, Index num_classes = 0);

/// Signed difference of two Hamming scores.
inline double fooling_rate(double hs_raw, double hs_perturbed) { return hs_raw - hs_perturbed; }

/// Single-scale SSIM of sample `n` of `a` and `b`: 11×11 Gaussian window
/// (σ = 1.5) over valid positions only, K1 = 0.01, K2 = 0.03, dynamic range 1,
/// averaged over channels.
double ssim(const Tensor<Real>& a, const Tensor<Real>& b, Index n = 0);

/// One image transform under evaluation, applied batch by batch.
struct Attack {
  std::string name;
  std::string surrogate;  ///< model that shaped the perturbation; empty for none
  std::function<Tensor<Real>(const ImageBatch&)> perturb;
};

Attack identity_attack();
/// x′ from a trained generator, composed exactly as during training.
Attack generator_attack(Generator<Real>& generator, std::string name, std::string surrogate);

struct VictimSpec {
  std::string architecture;
  std::string weights = "pretrained";
};
using VictimLoader = std::function<std::unique_ptr<Classifier>(const VictimSpec&)>;

struct EvalOptions {
  Index batch_size = 16;
  Index image_size = 224;
  double threshold = 0.5;
  HammingForm form = HammingForm::Iou;
};

struct EvalRow {
  std::string surrogate;
  std::string attack;
  std::string victim;
  std::string box;     ///< "white" when victim = surrogate, else "black"
  std::string status;  ///< "ok" or "failed: <reason>"
  Index samples = 0;
  double hs_raw = 0.0;
  double hs_perturbed = 0.0;
  double fooling_rate = 0.0;
  double mean_ssim = 0.0;
};

struct EvalReport {
  std::string config_hash;
  std::vector<EvalRow> rows;
};

/// Runs `attack` once per test batch and scores every victim on the raw and
/// perturbed images. A victim that fails to load gets a failed row; the rest
/// still run. Rows follow the order of `victims`.
EvalReport evaluate_matrix(const Attack& attack, const std::vector<VictimSpec>& victims, const Dataset& data,
                           const VictimLoader& load, const EvalOptions& options);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

struct AblationRow {
  std::string prompt_template;
  double hamming = 0.0;
  std::string config_hash;
};

/// Runs `run_one` for every template and returns the rows sorted by Hamming
/// score, ascending (ties keep input order).
std::vector<AblationRow> ablate_prompts(const std::vector<std::string>& templates,
                                        const std::function<AblationRow(const std::string&)>& run_one);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace clipstrike
