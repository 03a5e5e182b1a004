#include "clipstrike/data.hpp"

#include "clipstrike/image_io.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace clipstrike {

namespace fs = std::filesystem;

LabelSet make_label_set(std::vector<Index> labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

LabelVocabulary::LabelVocabulary(std::vector<std::string> classes, bool multilabel)
    : classes_(std::move(classes)), multilabel_(multilabel) {
  if (classes_.size() < 2) throw ConfigError("label vocabulary needs at least 2 classes");
  std::set<std::string> seen;
  for (const auto& name : classes_) {
    if (name.empty()) throw ConfigError("label vocabulary contains an empty class name");
    if (!seen.insert(name).second) throw ConfigError("duplicate class name '" + name + "'");
  }
}

Index LabelVocabulary::index_of(const std::string& name) const {
  auto it = std::find(classes_.begin(), classes_.end(), name);
  return it == classes_.end() ? -1 : static_cast<Index>(it - classes_.begin());
}

Dataset Dataset::in_memory(LabelVocabulary vocabulary, std::vector<Sample> samples,
                           std::string name) {
  Dataset d;
  d.vocabulary_ = std::move(vocabulary);
  d.name_ = std::move(name);
  for (auto& s : samples) {
    d.records_.push_back({s.id, s.labels, {}});
    d.images_.push_back(std::move(s.image));
  }
  return d;
}

Dataset Dataset::on_disk(LabelVocabulary vocabulary, std::vector<Record> records,
                         std::string name, Index skipped) {
  Dataset d;
  d.vocabulary_ = std::move(vocabulary);
  d.records_ = std::move(records);
  d.name_ = std::move(name);
  d.skipped_ = skipped;
  return d;
}

Sample Dataset::sample(Index i) const {
  const Record& r = record(i);
  Sample s;
  s.id = r.id;
  s.labels = r.labels;
  s.image = images_.empty() ? read_image(r.image_path) : images_.at(static_cast<std::size_t>(i));
  return s;
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + text + "' (expected train or test)");
}

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

LabelVocabulary read_vocabulary(const fs::path& root) {
  std::ifstream in(root / "classes.txt");
  if (!in) throw ConfigError("missing vocabulary file " + (root / "classes.txt").string());
  std::vector<std::string> classes;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) classes.push_back(line);
  }
  bool multilabel = false;
  if (fs::exists(root / "meta.json")) {
    std::ifstream meta_in(root / "meta.json");
    const auto meta = nlohmann::json::parse(meta_in);
    multilabel = meta.value("multilabel", false);
  }
  return LabelVocabulary(std::move(classes), multilabel);
}

namespace {

fs::path find_image(const fs::path& dir, const std::string& id) {
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    fs::path p = dir / (id + ext);
    if (fs::exists(p)) return p;
  }
  return {};
}

Dataset load_from_disk(const std::string& name, Split split, const fs::path& root) {
  if (root.empty() || !fs::is_directory(root)) {
    throw ConfigError("dataset root '" + root.string() + "' does not exist");
  }
  LabelVocabulary vocab = read_vocabulary(root);
  const fs::path dir = root / to_string(split);
  std::vector<Dataset::Record> records;
  Index skipped = 0;
  if (!fs::is_directory(dir)) {
    spdlog::warn("split directory {} is missing; dataset is empty", dir.string());
    return Dataset::on_disk(std::move(vocab), {}, name, 0);
  }
  std::vector<fs::path> sidecars;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") sidecars.push_back(entry.path());
  }
  std::sort(sidecars.begin(), sidecars.end());
  for (const auto& sidecar : sidecars) {
    const std::string stem = sidecar.stem().string();
    // Ids carry the split so they stay unique across splits of one root.
    const std::string id = to_string(split) + "/" + stem;
    std::ifstream in(sidecar);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed label file " + sidecar.string() + ": " + e.what());
    }
    if (!meta.contains("labels") || !meta["labels"].is_array()) {
      throw ConfigError("label file " + sidecar.string() + " has no \"labels\" array");
    }
    std::vector<Index> labels;
    for (const auto& label : meta["labels"]) {
      const Index k = vocab.index_of(label.get<std::string>());
      if (k < 0) {
        throw ConfigError("label '" + label.get<std::string>() + "' in " + sidecar.string() +
                          " is not in classes.txt");
      }
      labels.push_back(k);
    }
    LabelSet set = make_label_set(std::move(labels));
    if (!vocab.multilabel() && set.size() != 1) {
      throw ConfigError("single-label dataset sample " + sidecar.string() + " has " +
                        std::to_string(set.size()) + " labels");
    }
    const fs::path image = find_image(dir, stem);
    try {
      if (image.empty()) throw std::runtime_error("no image file for " + id);
      const Tensor<Real> probe = read_image(image);
      (void)probe;
    } catch (const std::exception& e) {
      ++skipped;
      spdlog::warn("skipping sample {}: {}", id, e.what());
      continue;
    }
    records.push_back({id, std::move(set), image});
  }
  if (skipped > 0) spdlog::warn("{} corrupt or missing images skipped in {}", skipped, dir.string());
  return Dataset::on_disk(std::move(vocab), std::move(records), name, skipped);
}

}  // namespace

Dataset load_dataset(const std::string& name, Split split, const fs::path& root) {
  if (name == "synthetic-fixture" || name == "synthetic-fixture-multilabel") {
    const bool multilabel = name == "synthetic-fixture-multilabel";
    return Dataset::in_memory(synthetic_fixture_vocabulary(multilabel),
                              synthetic_fixture(split, multilabel), name);
  }
  return load_from_disk(name, split, root);
}

Tensor<Real> resize_bilinear(const Tensor<Real>& image, Index out_h, Index out_w, Index index) {
  const Index in_h = image.h(), in_w = image.w(), channels = image.c();
  if (in_h == out_h && in_w == out_w) return image.slice(index, 1);
  Tensor<Real> out(Shape{1, channels, out_h, out_w});
  const double scale_y = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double scale_x = static_cast<double>(in_w) / static_cast<double>(out_w);
  auto source = [](Index dst, double scale, Index extent, Index& lo, Index& hi, double& t) {
    double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(extent - 1));
    lo = static_cast<Index>(std::floor(src));
    hi = std::min(lo + 1, extent - 1);
    t = src - static_cast<double>(lo);
  };
  for (Index y = 0; y < out_h; ++y) {
    Index y0, y1;
    double ty;
    source(y, scale_y, in_h, y0, y1, ty);
    for (Index x = 0; x < out_w; ++x) {
      Index x0, x1;
      double tx;
      source(x, scale_x, in_w, x0, x1, tx);
      for (Index c = 0; c < channels; ++c) {
        const double v00 = image(index, c, y0, x0), v01 = image(index, c, y0, x1);
        const double v10 = image(index, c, y1, x0), v11 = image(index, c, y1, x1);
        const double top = v00 + tx * (v01 - v00);
        const double bottom = v10 + tx * (v11 - v10);
        out(0, c, y, x) = std::clamp(top + ty * (bottom - top), 0.0, 1.0);
      }
    }
  }
  return out;
}

Sample preprocess(const Sample& sample, Index target_size) {
  if (sample.image.c() != 3) {
    throw ShapeError("unsupported channel count " + std::to_string(sample.image.c()) +
                     " for sample " + sample.id);
  }
  if (target_size < 1) throw std::invalid_argument("preprocess: target_size must be positive");
  Sample out;
  out.id = sample.id;
  out.labels = sample.labels;
  out.image = resize_bilinear(sample.image, target_size, target_size);
  return out;
}

std::vector<std::vector<Index>> batch_indices(Index count, Index batch_size, bool shuffle,
                                              std::uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<Index> order(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < count; start += batch_size) {
    const Index end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

ImageBatch collate(const Dataset& dataset, const std::vector<Index>& indices, Index target_size) {
  ImageBatch batch;
  const Index n = static_cast<Index>(indices.size());
  batch.images = Tensor<Real>(Shape{n, 3, target_size, target_size});
  for (Index i = 0; i < n; ++i) {
    Sample s = preprocess(dataset.sample(indices[static_cast<std::size_t>(i)]), target_size);
    if (s.image.array().minCoeff() < 0.0 || s.image.array().maxCoeff() > 1.0) {
      throw std::runtime_error("sample " + s.id + " has pixels outside [0,1]");
    }
    batch.images.set_sample(i, s.image);
    batch.labels.push_back(std::move(s.labels));
    batch.ids.push_back(std::move(s.id));
  }
  return batch;
}

ImageBatch collate_all(const Dataset& dataset, Index target_size) {
  std::vector<Index> all(static_cast<std::size_t>(dataset.size()));
  for (Index i = 0; i < dataset.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return collate(dataset, all, target_size);
}

BatchStream::BatchStream(const Dataset& dataset, Index batch_size, bool shuffle,
                         std::uint64_t seed, Index target_size)
    : dataset_(dataset),
      order_(batch_indices(dataset.size(), batch_size, shuffle, seed)),
      target_size_(target_size) {}

bool BatchStream::next(ImageBatch& batch) {
  if (cursor_ >= order_.size()) return false;
  batch = collate(dataset_, order_[cursor_++], target_size_);
  return true;
}

// ------------------------------------------------------------- fixture

namespace {

constexpr Index kFixtureSize = 32;
const std::vector<std::string> kFixtureClasses = {"circle", "square", "triangle", "cross"};
constexpr double kFixtureColors[4][3] = {
    {0.90, 0.20, 0.20}, {0.20, 0.80, 0.25}, {0.20, 0.30, 0.90}, {0.90, 0.85, 0.10}};

bool inside_shape(Index cls, double dx, double dy, double r) {
  switch (cls) {
    case 0:
      return dx * dx + dy * dy <= r * r;
    case 1:
      return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case 2:
      return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r);
    default:
      return (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) ||
             (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
  }
}

void draw_shape(Tensor<Real>& img, Index cls, double cx, double cy, double r,
                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  double color[3];
  for (int c = 0; c < 3; ++c) color[c] = std::clamp(kFixtureColors[cls][c] + jitter(rng), 0.0, 1.0);
  for (Index y = 0; y < kFixtureSize; ++y) {
    for (Index x = 0; x < kFixtureSize; ++x) {
      if (inside_shape(cls, static_cast<double>(x) - cx, static_cast<double>(y) - cy, r)) {
        for (Index c = 0; c < 3; ++c) img(0, c, y, x) = color[c];
      }
    }
  }
}

Tensor<Real> noise_background(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> noise(-0.2, 0.2);
  std::uniform_real_distribution<double> base(0.35, 0.6);
  Tensor<Real> img(Shape{1, 3, kFixtureSize, kFixtureSize});
  const double level = base(rng);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = std::clamp(level + noise(rng), 0.0, 1.0);
  return img;
}

}  // namespace

LabelVocabulary synthetic_fixture_vocabulary(bool multilabel) {
  return LabelVocabulary(kFixtureClasses, multilabel);
}

std::vector<Sample> synthetic_fixture(Split split, bool multilabel, std::uint64_t seed) {
  const Index count = split == Split::Train ? 64 : 32;
  const std::string stream = std::string(multilabel ? "fixture.multilabel." : "fixture.") +
                             to_string(split);
  std::mt19937_64 rng(substream(seed, stream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  static const Index kPairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};

  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    Sample s;
    s.id = "fixture-" + to_string(split) + "-" + std::string(4 - std::to_string(i).size(), '0') +
           std::to_string(i);
    s.image = noise_background(rng);
    if (!multilabel) {
      const Index cls = i % 4;
      const double r = 7.0 + 3.0 * unit(rng);
      const double cx = 11.0 + 10.0 * unit(rng);
      const double cy = 11.0 + 10.0 * unit(rng);
      draw_shape(s.image, cls, cx, cy, r, rng);
      s.labels = {cls};
    } else {
      Index a = kPairs[i % 6][0], b = kPairs[i % 6][1];
      if (unit(rng) < 0.5) std::swap(a, b);
      const double r1 = 4.5 + 2.0 * unit(rng), r2 = 4.5 + 2.0 * unit(rng);
      draw_shape(s.image, a, 8.0 + 2.0 * unit(rng), 9.0 + 14.0 * unit(rng), r1, rng);
      draw_shape(s.image, b, 22.0 + 2.0 * unit(rng), 9.0 + 14.0 * unit(rng), r2, rng);
      s.labels = make_label_set({a, b});
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace clipstrike
