#include "clipstrike/models.hpp"

#include "clipstrike/archive.hpp"
#include "clipstrike/optim.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <map>

namespace clipstrike {

using nn::Sequential;

// ------------------------------------------------------------- Classifier

Classifier::Classifier(std::string architecture, Index num_classes, Index input_size,
                       Eigen::Array3d mean, Eigen::Array3d stddev)
    : architecture_(std::move(architecture)),
      num_classes_(num_classes),
      input_size_(input_size),
      mean_(mean),
      stddev_(stddev) {}

void Classifier::add_stage(std::string name, std::string prefix, Index channels,
                           nn::ModulePtr<Real> module) {
  stages_.push_back({std::move(name), std::move(prefix), channels, std::move(module)});
}

Index Classifier::stage_index(const std::string& name) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (stages_[i].name == name) return static_cast<Index>(i);
  }
  return -1;
}

void Classifier::check_input(const TensorT& images) const {
  if (images.c() != 3 || images.h() != input_size_ || images.w() != input_size_) {
    throw ShapeError(fmt::format("{} expects Nx3x{}x{} images, got {}", architecture_, input_size_,
                                 input_size_, images.shape().str()));
  }
}

Tensor<Real> Classifier::forward_to(const TensorT& images, Index last) {
  check_input(images);
  if (last < 0 || last >= stage_count()) throw std::out_of_range("forward_to: stage index out of range");
  TensorT h = images;
  for (Index n = 0; n < h.n(); ++n) {
    auto s = h.sample(n);
    for (Index c = 0; c < 3; ++c) s.row(c) = (s.row(c).array() - mean_[c]) / stddev_[c];
  }
  for (Index i = 0; i <= last; ++i) h = stages_[static_cast<std::size_t>(i)].module->forward(h);
  return h;
}

Tensor<Real> Classifier::backward_from(const TensorT& grad, Index last) {
  TensorT g = grad;
  for (Index i = last; i >= 0; --i) g = stages_[static_cast<std::size_t>(i)].module->backward(g);
  for (Index n = 0; n < g.n(); ++n) {
    auto s = g.sample(n);
    for (Index c = 0; c < 3; ++c) s.row(c) /= stddev_[c];
  }
  return g;
}

Tensor<Real> Classifier::logits(const TensorT& images) {
  return head_->forward(forward_to(images, stage_count() - 1));
}

Tensor<Real> Classifier::backward_logits(const TensorT& grad_logits) {
  return backward_from(head_->backward(grad_logits), stage_count() - 1);
}

std::vector<nn::ParameterRef<Real>> Classifier::parameters() {
  std::vector<nn::ParameterRef<Real>> params;
  for (auto& s : stages_) {
    for (auto& p : s.module->parameters(s.prefix)) params.push_back(p);
  }
  for (auto& p : head_->parameters()) params.push_back(p);
  return params;
}

void Classifier::set_trainable(bool on) {
  for (auto& s : stages_) s.module->set_accumulate_grads(on);
  head_->set_accumulate_grads(on);
}

std::uint64_t Classifier::checksum() { return clipstrike::checksum(parameters()); }

// ----------------------------------------------------------- architectures

namespace {

const Eigen::Array3d kImagenetMean(0.485, 0.456, 0.406);
const Eigen::Array3d kImagenetStd(0.229, 0.224, 0.225);
const Eigen::Array3d kFixtureMean(0.5, 0.5, 0.5);
const Eigen::Array3d kFixtureStd(0.25, 0.25, 0.25);

constexpr int kPool = -1;

const std::vector<int>& vgg_layout(const std::string& arch) {
  static const std::vector<int> vgg16 = {64,  64,  kPool, 128, 128, kPool, 256, 256, 256, kPool,
                                         512, 512, 512,   kPool, 512, 512, 512, kPool};
  static const std::vector<int> vgg19 = {64,  64,  kPool, 128, 128, kPool, 256, 256, 256, 256, kPool,
                                         512, 512, 512,   512, kPool, 512, 512, 512, 512, kPool};
  return arch == "vgg16" ? vgg16 : vgg19;
}

struct ResNetLayout {
  std::vector<Index> blocks;
  bool bottleneck;
};

ResNetLayout resnet_layout(const std::string& arch) {
  if (arch == "resnet18") return {{2, 2, 2, 2}, false};
  if (arch == "resnet50") return {{3, 4, 6, 3}, true};
  return {{3, 8, 36, 3}, true};
}

std::vector<Index> densenet_layout(const std::string& arch) {
  return arch == "densenet121" ? std::vector<Index>{6, 12, 24, 16} : std::vector<Index>{6, 12, 32, 32};
}

constexpr Index kGrowth = 32;
constexpr Index kBottleneck = 4;

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

ArchitectureInfo info_for(const std::string& arch) {
  ArchitectureInfo info{arch, {}, 224};
  if (arch == "fixture-cnn") {
    info.stages = {{"block1", 16}, {"block2", 32}, {"block3", 64}, {"block4", 512}};
    info.default_input_size = 32;
  } else if (arch == "fixture-cnn-b") {
    info.stages = {{"block1", 24}, {"block2", 48}, {"block3", 512}};
    info.default_input_size = 32;
  } else if (arch == "vgg16" || arch == "vgg19") {
    Index block = 1, width = 3;
    for (const int v : vgg_layout(arch)) {
      if (v == kPool) {
        info.stages.emplace_back(fmt::format("block{}", block++), width);
      } else {
        width = v;
      }
    }
  } else if (arch == "resnet18" || arch == "resnet50" || arch == "resnet152") {
    const auto layout = resnet_layout(arch);
    info.stages.emplace_back("stem", 64);
    for (Index i = 0; i < 4; ++i) {
      info.stages.emplace_back(fmt::format("layer{}", i + 1), (Index(64) << i) * (layout.bottleneck ? 4 : 1));
    }
  } else if (arch == "densenet121" || arch == "densenet169") {
    const auto layout = densenet_layout(arch);
    Index width = 64;
    info.stages.emplace_back("stem", width);
    for (std::size_t i = 0; i < layout.size(); ++i) {
      width += layout[i] * kGrowth;
      info.stages.emplace_back(fmt::format("denseblock{}", i + 1), width);
      if (i + 1 < layout.size()) {
        width /= 2;
        info.stages.emplace_back(fmt::format("transition{}", i + 1), width);
      }
    }
    info.stages.emplace_back("norm5", width);
  } else {
    throw ConfigError(fmt::format("unknown architecture '{}' (known: {})", arch,
                                  fmt::join(known_architectures(), ", ")));
  }
  return info;
}

template <typename M, typename... Args>
std::unique_ptr<Sequential<Real>> single(const std::string& name, Args&&... args) {
  auto seq = std::make_unique<Sequential<Real>>();
  seq->template emplace<M>(name, std::forward<Args>(args)...);
  return seq;
}

void build_fixture(Classifier& model, const std::string& arch) {
  using namespace nn;
  if (arch == "fixture-cnn") {
    auto b1 = std::make_unique<Sequential<Real>>();
    b1->emplace<Conv2d<Real>>("conv", 3, 16, 3, 1, 1);
    b1->emplace<ReLU<Real>>("relu");
    b1->emplace<MaxPool2d<Real>>("pool", 2, 2);
    auto b2 = std::make_unique<Sequential<Real>>();
    b2->emplace<Conv2d<Real>>("conv", 16, 32, 3, 1, 1);
    b2->emplace<ReLU<Real>>("relu");
    b2->emplace<MaxPool2d<Real>>("pool", 2, 2);
    auto b3 = std::make_unique<Sequential<Real>>();
    b3->emplace<Conv2d<Real>>("conv", 32, 64, 3, 1, 1);
    b3->emplace<ReLU<Real>>("relu");
    model.add_stage("block1", "block1", 16, std::move(b1));
    model.add_stage("block2", "block2", 32, std::move(b2));
    model.add_stage("block3", "block3", 64, std::move(b3));
    auto b4 = std::make_unique<Sequential<Real>>();
    b4->emplace<Conv2d<Real>>("conv", 64, 512, 3, 1, 1);
    b4->emplace<ReLU<Real>>("relu");
    model.add_stage("block4", "block4", 512, std::move(b4));
    auto head = std::make_unique<Sequential<Real>>();
    head->emplace<AdaptiveAvgPool2d<Real>>("pool", 1, 1);
    head->emplace<Linear<Real>>("fc", 512, model.num_classes());
    model.set_head(std::move(head));
    return;
  }
  auto b1 = std::make_unique<Sequential<Real>>();
  b1->emplace<Conv2d<Real>>("conv", 3, 24, 5, 1, 2);
  b1->emplace<ReLU<Real>>("relu");
  b1->emplace<AvgPool2d<Real>>("pool", 2, 2);
  auto b2 = std::make_unique<Sequential<Real>>();
  b2->emplace<Conv2d<Real>>("conv", 24, 48, 3, 1, 1);
  b2->emplace<ReLU<Real>>("relu");
  b2->emplace<MaxPool2d<Real>>("pool", 2, 2);
  auto b3 = std::make_unique<Sequential<Real>>();
  b3->emplace<Conv2d<Real>>("conv", 48, 512, 3, 1, 1);
  b3->emplace<ReLU<Real>>("relu");
  model.add_stage("block1", "block1", 24, std::move(b1));
  model.add_stage("block2", "block2", 48, std::move(b2));
  model.add_stage("block3", "block3", 512, std::move(b3));
  auto head = std::make_unique<Sequential<Real>>();
  head->emplace<AdaptiveAvgPool2d<Real>>("pool", 1, 1);
  head->emplace<Linear<Real>>("fc", 512, model.num_classes());
  model.set_head(std::move(head));
}

// torchvision parameter names throughout, so exported state dicts load by name.
void build_vgg(Classifier& model, const std::string& arch) {
  using namespace nn;
  auto block = std::make_unique<Sequential<Real>>();
  Index index = 0, width = 3, stage = 1;
  for (const int v : vgg_layout(arch)) {
    if (v == kPool) {
      block->emplace<MaxPool2d<Real>>(fmt::format("features.{}", index++), 2, 2);
      model.add_stage(fmt::format("block{}", stage++), "", width, std::move(block));
      block = std::make_unique<Sequential<Real>>();
      continue;
    }
    block->emplace<Conv2d<Real>>(fmt::format("features.{}", index++), width, v, 3, 1, 1);
    block->emplace<ReLU<Real>>(fmt::format("features.{}", index++));
    width = v;
  }
  auto head = std::make_unique<Sequential<Real>>();
  head->emplace<AdaptiveAvgPool2d<Real>>("avgpool", 7, 7);
  head->emplace<Linear<Real>>("classifier.0", width * 49, 4096);
  head->emplace<ReLU<Real>>("classifier.1");
  head->emplace<Linear<Real>>("classifier.3", 4096, 4096);
  head->emplace<ReLU<Real>>("classifier.4");
  head->emplace<Linear<Real>>("classifier.6", 4096, model.num_classes());
  model.set_head(std::move(head));
}

void build_resnet(Classifier& model, const std::string& arch) {
  using namespace nn;
  const auto layout = resnet_layout(arch);
  auto stem = std::make_unique<Sequential<Real>>();
  stem->emplace<Conv2d<Real>>("conv1", 3, 64, 7, 2, 3, false);
  stem->emplace<BatchNorm2d<Real>>("bn1", 64);
  stem->emplace<ReLU<Real>>("relu");
  stem->emplace<MaxPool2d<Real>>("maxpool", 3, 2, 1);
  model.add_stage("stem", "", 64, std::move(stem));
  Index in = 64;
  for (Index layer = 0; layer < 4; ++layer) {
    const Index planes = Index(64) << layer;
    auto seq = std::make_unique<Sequential<Real>>();
    for (Index b = 0; b < layout.blocks[static_cast<std::size_t>(layer)]; ++b) {
      const Index stride = (b == 0 && layer > 0) ? 2 : 1;
      in = seq->emplace<ResNetBlock<Real>>(std::to_string(b), in, planes, stride, layout.bottleneck)
               .out_channels();
    }
    const std::string name = fmt::format("layer{}", layer + 1);
    model.add_stage(name, name, in, std::move(seq));
  }
  auto head = std::make_unique<Sequential<Real>>();
  head->emplace<AdaptiveAvgPool2d<Real>>("avgpool", 1, 1);
  head->emplace<Linear<Real>>("fc", in, model.num_classes());
  model.set_head(std::move(head));
}

void build_densenet(Classifier& model, const std::string& arch) {
  using namespace nn;
  const auto layout = densenet_layout(arch);
  auto stem = std::make_unique<Sequential<Real>>();
  stem->emplace<Conv2d<Real>>("conv0", 3, 64, 7, 2, 3, false);
  stem->emplace<BatchNorm2d<Real>>("norm0", 64);
  stem->emplace<ReLU<Real>>("relu0");
  stem->emplace<MaxPool2d<Real>>("pool0", 3, 2, 1);
  model.add_stage("stem", "features", 64, std::move(stem));
  Index width = 64;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    auto block = std::make_unique<Sequential<Real>>();
    for (Index j = 0; j < layout[i]; ++j) {
      block->emplace<DenseLayer<Real>>(fmt::format("denselayer{}", j + 1), width + j * kGrowth, kGrowth,
                                       kBottleneck);
    }
    width += layout[i] * kGrowth;
    const std::string name = fmt::format("denseblock{}", i + 1);
    model.add_stage(name, "features." + name, width, std::move(block));
    if (i + 1 == layout.size()) break;
    auto transition = std::make_unique<Sequential<Real>>();
    transition->emplace<BatchNorm2d<Real>>("norm", width);
    transition->emplace<ReLU<Real>>("relu");
    transition->emplace<Conv2d<Real>>("conv", width, width / 2, 1, 1, 0, false);
    transition->emplace<AvgPool2d<Real>>("pool", 2, 2);
    width /= 2;
    const std::string tname = fmt::format("transition{}", i + 1);
    model.add_stage(tname, "features." + tname, width, std::move(transition));
  }
  model.add_stage("norm5", "features", width, single<BatchNorm2d<Real>>("norm5", width));
  auto head = std::make_unique<Sequential<Real>>();
  head->emplace<ReLU<Real>>("relu");
  head->emplace<AdaptiveAvgPool2d<Real>>("avgpool", 1, 1);
  head->emplace<Linear<Real>>("classifier", width, model.num_classes());
  model.set_head(std::move(head));
}

void init_weights(nn::Module<Real>& module, std::mt19937_64& rng) {
  if (auto* conv = dynamic_cast<nn::Conv2d<Real>*>(&module)) {
    conv->reset_parameters(rng, std::sqrt(2.0));
  } else if (auto* linear = dynamic_cast<nn::Linear<Real>*>(&module)) {
    linear->reset_parameters(rng, 1.0);
  }
  module.visit_children([&](const std::string&, nn::Module<Real>& child) { init_weights(child, rng); });
}

}  // namespace

std::vector<std::string> known_architectures() {
  return {"fixture-cnn", "fixture-cnn-b", "vgg16",       "vgg19",      "resnet18",
          "resnet50",    "resnet152",     "densenet121", "densenet169"};
}

bool is_fixture_architecture(const std::string& architecture) { return starts_with(architecture, "fixture-"); }

ArchitectureInfo architecture_info(const std::string& architecture) { return info_for(architecture); }

std::unique_ptr<Classifier> build_classifier(const std::string& architecture, Index num_classes,
                                             Index input_size, std::uint64_t seed) {
  const ArchitectureInfo info = info_for(architecture);
  if (num_classes < 2) throw ConfigError("classifier needs at least two classes");
  const bool fixture = is_fixture_architecture(architecture);
  auto model = std::make_unique<Classifier>(architecture, num_classes, input_size,
                                            fixture ? kFixtureMean : kImagenetMean,
                                            fixture ? kFixtureStd : kImagenetStd);
  if (fixture) {
    build_fixture(*model, architecture);
  } else if (starts_with(architecture, "vgg")) {
    build_vgg(*model, architecture);
  } else if (starts_with(architecture, "resnet")) {
    build_resnet(*model, architecture);
  } else {
    build_densenet(*model, architecture);
  }
  if (model->stage_count() != static_cast<Index>(info.stages.size())) {
    throw std::logic_error("stage table out of sync for " + architecture);
  }
  for (Index i = 0; i < model->stage_count(); ++i) {
    const auto& [name, width] = info.stages[static_cast<std::size_t>(i)];
    if (model->stage(i).name != name || model->stage(i).channels != width) {
      throw std::logic_error(fmt::format("{} stage {} is {}x{}, table says {}x{}", architecture, i,
                                         model->stage(i).name, model->stage(i).channels, name, width));
    }
  }
  std::mt19937_64 rng(seed);
  for (Index i = 0; i < model->stage_count(); ++i) init_weights(*model->stage(i).module, rng);
  init_weights(model->head(), rng);
  model->set_trainable(false);
  return model;
}

// ------------------------------------------------------- feature extraction

FeatureExtractorSpec resolve_layer(const std::string& architecture, const std::string& override_layer,
                                   Index width) {
  const ArchitectureInfo info = info_for(architecture);
  FeatureExtractorSpec spec{architecture, "", -1, width};
  if (!override_layer.empty()) {
    for (std::size_t i = 0; i < info.stages.size(); ++i) {
      if (info.stages[i].first != override_layer) continue;
      if (info.stages[i].second != width) {
        throw ConfigError(fmt::format("layer '{}' of {} has {} channels; the feature layer must have {}",
                                      override_layer, architecture, info.stages[i].second, width));
      }
      spec.layer = override_layer;
      spec.stage = static_cast<Index>(i);
      return spec;
    }
    std::vector<std::string> names;
    for (const auto& s : info.stages) names.push_back(s.first);
    throw ConfigError(fmt::format("{} has no layer '{}' (layers: {})", architecture, override_layer,
                                  fmt::join(names, ", ")));
  }
  for (Index i = static_cast<Index>(info.stages.size()) - 1; i >= 0; --i) {
    if (info.stages[static_cast<std::size_t>(i)].second == width) {
      spec.layer = info.stages[static_cast<std::size_t>(i)].first;
      spec.stage = i;
      return spec;
    }
  }
  throw ConfigError(fmt::format("no compatible feature layer: {} has no {}-channel stage", architecture, width));
}

FeatureExtractor::FeatureExtractor(Classifier& model, FeatureExtractorSpec spec)
    : model_(model), spec_(std::move(spec)) {
  if (spec_.architecture != model.architecture() || spec_.stage < 0 || spec_.stage >= model.stage_count() ||
      model.stage(spec_.stage).name != spec_.layer) {
    throw std::invalid_argument("feature spec " + spec_.architecture + "/" + spec_.layer +
                                " does not match classifier " + model.architecture());
  }
}

RowMatrix<Real> FeatureExtractor::extract(const Tensor<Real>& images) {
  const Tensor<Real> act = model_.forward_to(images, spec_.stage);
  if (act.c() != spec_.expected_width) {
    throw ShapeError(fmt::format("layer {} produced {} channels, expected {}", spec_.layer, act.c(),
                                 spec_.expected_width));
  }
  activation_shape_ = act.shape();
  RowMatrix<Real> features(act.n(), act.c());
  for (Index n = 0; n < act.n(); ++n) features.row(n) = act.sample(n).rowwise().mean().transpose();
  return features;
}

Tensor<Real> FeatureExtractor::backward(const RowMatrix<Real>& grad_features) {
  if (grad_features.rows() != activation_shape_.n || grad_features.cols() != activation_shape_.c) {
    throw ShapeError("feature gradient does not match the last extract()");
  }
  Tensor<Real> grad(activation_shape_);
  const Real inv = 1.0 / static_cast<Real>(activation_shape_.plane_size());
  for (Index n = 0; n < grad.n(); ++n) {
    grad.sample(n).colwise() = grad_features.row(n).transpose() * inv;
  }
  return model_.backward_from(grad, spec_.stage);
}

// ------------------------------------------------------ classification loss

ClassificationLoss classification_loss(const Tensor<Real>& logits, const std::vector<LabelSet>& labels,
                                       bool multilabel) {
  const Index n = logits.n(), k = logits.shape().sample_size();
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("classification_loss: label count mismatch");
  ClassificationLoss out;
  out.grad = Tensor<Real>(logits.shape());
  const auto z = logits.matrix();
  auto g = out.grad.matrix();
  for (Index i = 0; i < n; ++i) {
    const auto& set = labels[static_cast<std::size_t>(i)];
    if (set.empty()) throw ConfigError("classification loss needs a label for every sample");
    if (multilabel) {
      for (Index c = 0; c < k; ++c) {
        const double y = std::binary_search(set.begin(), set.end(), c) ? 1.0 : 0.0;
        const double v = z(i, c);
        out.value += std::max(v, 0.0) - v * y + std::log1p(std::exp(-std::abs(v)));
        g(i, c) = (1.0 / (1.0 + std::exp(-v)) - y) / double(n);
      }
    } else {
      const double top = z.row(i).maxCoeff();
      const auto e = (z.row(i).array() - top).exp().eval();
      const double sum = e.sum();
      const Index y = set.front();
      out.value += std::log(sum) - (z(i, y) - top);
      g.row(i) = e / (sum * double(n));
      g(i, y) -= 1.0 / double(n);
    }
  }
  out.value /= double(n);
  return out;
}

std::vector<LabelSet> predict_labels(const Tensor<Real>& logits, bool multilabel, double threshold) {
  std::vector<LabelSet> out;
  const auto z = logits.matrix();
  for (Index i = 0; i < z.rows(); ++i) {
    LabelSet set;
    if (multilabel) {
      for (Index c = 0; c < z.cols(); ++c) {
        if (1.0 / (1.0 + std::exp(-z(i, c))) >= threshold) set.push_back(c);
      }
    } else {
      Index best = 0;
      z.row(i).maxCoeff(&best);
      set.push_back(best);
    }
    out.push_back(std::move(set));
  }
  return out;
}

void train_classifier(Classifier& model, const Dataset& data, const ClassifierTraining& options,
                      std::uint64_t seed) {
  if (data.size() == 0) throw ConfigError("cannot train a classifier on an empty dataset");
  model.set_trainable(true);
  nn::AdamWOptions adam;
  adam.lr = options.lr;
  adam.weight_decay = 0.0;
  nn::AdamW<Real> opt(model.parameters(), adam);
  const bool multilabel = data.vocabulary().multilabel();
  double last_loss = 0.0;
  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    double total = 0.0;
    const auto batches = batch_indices(data.size(), options.batch_size, true,
                                       substream(seed, "classifier.shuffle", std::uint64_t(epoch)));
    for (const auto& idx : batches) {
      const ImageBatch batch = collate(data, idx, model.input_size());
      opt.zero_grad();
      const auto loss = classification_loss(model.logits(batch.images), batch.labels, multilabel);
      model.backward_logits(loss.grad);
      opt.step();
      total += loss.value;
    }
    last_loss = total / double(batches.size());
    spdlog::debug("{} epoch {} loss {:.4f}", model.architecture(), epoch + 1, last_loss);
  }
  model.set_trainable(false);
  spdlog::info("trained {} on {} ({} epochs, final loss {:.4f})", model.architecture(), data.name(),
               options.epochs, last_loss);
}

std::unique_ptr<Classifier> load_classifier(const ClassifierSpec& spec, const Dataset& train_data,
                                            std::uint64_t seed) {
  const Index classes = train_data.vocabulary().size();
  const std::uint64_t init_seed = substream(seed, "classifier." + spec.architecture);
  auto model = build_classifier(spec.architecture, classes, spec.input_size, init_seed);
  if (spec.weights == "random") return model;

  if (spec.weights == "pretrained") {
    if (!is_fixture_architecture(spec.architecture)) {
      throw ConfigError(fmt::format(
          "pretrained weights for {} are not bundled: export them with "
          "tools/export_torchvision_weights.py --arch {} and pass the archive path as the weights",
          spec.architecture, spec.architecture));
    }
    static std::map<std::string, std::vector<std::uint8_t>> memo;
    const std::string key = fmt::format("{}|{}|{}|{}|{}", spec.architecture, train_data.name(),
                                        train_data.size(), spec.input_size, seed);
    if (const auto it = memo.find(key); it != memo.end()) {
      load_parameters(TensorArchive::parse(it->second), model->parameters());
      return model;
    }
    train_classifier(*model, train_data, ClassifierTraining{},
                     substream(seed, "classifier.train." + spec.architecture));
    TensorArchive archive;
    store_parameters(archive, model->parameters());
    memo[key] = archive.serialize();
    return model;
  }

  const TensorArchive archive = TensorArchive::load(spec.weights);
  try {
    load_parameters(archive, model->parameters());
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("weights {} do not fit {} with {} classes: {}", spec.weights,
                                  spec.architecture, classes, e.what()));
  }
  return model;
}

}  // namespace clipstrike
