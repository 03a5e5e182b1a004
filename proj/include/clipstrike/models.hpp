#pragma once

#include "clipstrike/data.hpp"
#include "clipstrike/nn.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace clipstrike {

/// Frozen image classifier split into named stages so intermediate activations
/// can be read out and differentiated. Per-channel input normalization happens
/// inside, so callers always pass raw [0, 1] pixels.
class Classifier {
 public:
  using TensorT = Tensor<Real>;

  struct Stage {
    std::string name;
    std::string prefix;  ///< parameter-name prefix of the stage module
    Index channels;
    nn::ModulePtr<Real> module;
  };

  Classifier(std::string architecture, Index num_classes, Index input_size,
             Eigen::Array3d mean, Eigen::Array3d stddev);

  void add_stage(std::string name, std::string prefix, Index channels, nn::ModulePtr<Real> module);
  void set_head(nn::ModulePtr<Real> head) { head_ = std::move(head); }
  nn::Module<Real>& head() { return *head_; }

  const std::string& architecture() const { return architecture_; }
  Index num_classes() const { return num_classes_; }
  Index input_size() const { return input_size_; }
  Index stage_count() const { return static_cast<Index>(stages_.size()); }
  const Stage& stage(Index i) const { return stages_.at(static_cast<std::size_t>(i)); }
  /// -1 when absent.
  Index stage_index(const std::string& name) const;

  /// Activation after stage `last` (inclusive). Throws ShapeError when the
  /// image resolution differs from input_size().
  TensorT forward_to(const TensorT& images, Index last);
  /// Gradient w.r.t. the raw images of a loss on the activation returned by
  /// the most recent forward_to(images, last).
  TensorT backward_from(const TensorT& grad, Index last);

  /// N×classes×1×1 logits.
  TensorT logits(const TensorT& images);
  TensorT backward_logits(const TensorT& grad_logits);

  std::vector<nn::ParameterRef<Real>> parameters();
  /// Trainable classifiers accumulate parameter gradients; frozen ones never do.
  void set_trainable(bool on);
  std::uint64_t checksum();

 private:
  void check_input(const TensorT& images) const;

  std::string architecture_;
  Index num_classes_, input_size_;
  Eigen::Array3d mean_, stddev_;
  std::vector<Stage> stages_;
  nn::ModulePtr<Real> head_;
};

struct ArchitectureInfo {
  std::string id;
  std::vector<std::pair<std::string, Index>> stages;  ///< (name, channel width), input to output
  Index default_input_size;
};

std::vector<std::string> known_architectures();
/// Stage widths without allocating weights. Throws ConfigError for unknown ids.
ArchitectureInfo architecture_info(const std::string& architecture);

/// Seeded random weights (He-normal convolutions, unit batch norm). The
/// declared stage widths are checked against the built modules.
std::unique_ptr<Classifier> build_classifier(const std::string& architecture, Index num_classes,
                                             Index input_size, std::uint64_t seed);

struct FeatureExtractorSpec {
  std::string architecture;
  std::string layer;
  Index stage = -1;
  Index expected_width = 512;
};

/// Deepest stage exactly `width` channels wide, or the validated override.
/// Throws ConfigError("no compatible feature layer ...") when none fits.
FeatureExtractorSpec resolve_layer(const std::string& architecture, const std::string& override_layer = "",
                                   Index width = 512);

/// Spatially mean-pooled activations of one classifier stage.
class FeatureExtractor {
 public:
  FeatureExtractor(Classifier& model, FeatureExtractorSpec spec);

  const FeatureExtractorSpec& spec() const { return spec_; }
  Classifier& model() { return model_; }

  /// N×width features.
  RowMatrix<Real> extract(const Tensor<Real>& images);
  /// Gradient w.r.t. the images of the most recent extract().
  Tensor<Real> backward(const RowMatrix<Real>& grad_features);

 private:
  Classifier& model_;
  FeatureExtractorSpec spec_;
  Shape activation_shape_;
};

/// Softmax cross-entropy (single-label) or summed per-class binary
/// cross-entropy (multi-label), averaged over the batch, with its gradient.
struct ClassificationLoss {
  double value = 0.0;
  Tensor<Real> grad;  ///< w.r.t. the logits
};
ClassificationLoss classification_loss(const Tensor<Real>& logits, const std::vector<LabelSet>& labels,
                                       bool multilabel);

/// Argmax for single-label, sigmoid(score) ≥ threshold for multi-label.
std::vector<LabelSet> predict_labels(const Tensor<Real>& logits, bool multilabel, double threshold = 0.5);

struct ClassifierTraining {
  Index epochs = 12;
  Index batch_size = 16;
  double lr = 3e-3;
};

/// Deterministic Adam training of a desk-scale classifier on `data`. Leaves the
/// classifier frozen.
void train_classifier(Classifier& model, const Dataset& data, const ClassifierTraining& options,
                      std::uint64_t seed);

struct ClassifierSpec {
  std::string architecture;
  /// "pretrained", "random", or a path to a named-tensor archive exported from
  /// torchvision by tools/export_torchvision_weights.py.
  std::string weights = "pretrained";
  Index input_size = 224;
};

/// Builds and freezes a classifier. "pretrained" fixture architectures are
/// trained on `train_data` (deterministic per architecture, dataset and seed,
/// memoised per process); "pretrained" torchvision architectures need an
/// exported archive.
std::unique_ptr<Classifier> load_classifier(const ClassifierSpec& spec, const Dataset& train_data,
                                            std::uint64_t seed);

bool is_fixture_architecture(const std::string& architecture);

}  // namespace clipstrike
