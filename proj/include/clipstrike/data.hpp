#pragma once

#include "clipstrike/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace clipstrike {

/// Sorted, duplicate-free class indices.
using LabelSet = std::vector<Index>;

LabelSet make_label_set(std::vector<Index> labels);

/// Ordered class names; order is significant (index = class id).
class LabelVocabulary {
 public:
  LabelVocabulary() = default;
  /// Throws ConfigError unless names are unique, non-empty and at least two.
  LabelVocabulary(std::vector<std::string> classes, bool multilabel);

  const std::vector<std::string>& classes() const { return classes_; }
  const std::string& name(Index i) const { return classes_.at(static_cast<std::size_t>(i)); }
  Index size() const { return static_cast<Index>(classes_.size()); }
  bool multilabel() const { return multilabel_; }
  /// -1 when absent.
  Index index_of(const std::string& name) const;

 private:
  std::vector<std::string> classes_;
  bool multilabel_ = false;
};

/// One image (1×3×H×W, values in [0,1]) with its label set.
struct Sample {
  Tensor<Real> image;
  LabelSet labels;
  std::string id;
};

/// N images sharing H and W.
struct ImageBatch {
  Tensor<Real> images;
  std::vector<LabelSet> labels;
  std::vector<std::string> ids;

  Index size() const { return images.n(); }
};

/// Indexed collection of samples. On-disk datasets keep only the index and
/// decode images on access; generated datasets hold their pixels.
class Dataset {
 public:
  struct Record {
    std::string id;
    LabelSet labels;
    std::filesystem::path image_path;  // empty for in-memory samples
  };

  Dataset() = default;
  static Dataset in_memory(LabelVocabulary vocabulary, std::vector<Sample> samples,
                           std::string name);
  static Dataset on_disk(LabelVocabulary vocabulary, std::vector<Record> records,
                         std::string name, Index skipped);

  const LabelVocabulary& vocabulary() const { return vocabulary_; }
  const std::string& name() const { return name_; }
  Index size() const { return static_cast<Index>(records_.size()); }
  const Record& record(Index i) const { return records_.at(static_cast<std::size_t>(i)); }
  Sample sample(Index i) const;
  /// Samples dropped at load time because their image failed to decode.
  Index skipped() const { return skipped_; }

 private:
  LabelVocabulary vocabulary_;
  std::string name_;
  std::vector<Record> records_;
  std::vector<Tensor<Real>> images_;
  Index skipped_ = 0;
};

enum class Split { Train, Test };
Split parse_split(const std::string& text);
std::string to_string(Split split);

/// Loads a dataset.
///
/// "synthetic-fixture" and "synthetic-fixture-multilabel" are generated in
/// memory (root unused). Any other name reads the directory layout
///   <root>/classes.txt            one class per line, order-significant
///   <root>/meta.json              optional {"multilabel": true}
///   <root>/<split>/<id>.png|.jpg  image
///   <root>/<split>/<id>.json      {"labels": ["dog", "person"]}
/// A missing root is a ConfigError; undecodable images are skipped with a
/// warning and counted in Dataset::skipped().
Dataset load_dataset(const std::string& name, Split split, const std::filesystem::path& root);

LabelVocabulary read_vocabulary(const std::filesystem::path& root);

/// Bilinear resize (half-pixel centers) of sample `index`; returns 1×C×h×w.
Tensor<Real> resize_bilinear(const Tensor<Real>& image, Index out_h, Index out_w,
                             Index index = 0);

/// Resizes to target_size × target_size. Throws ShapeError("unsupported channel
/// count") unless the image has three channels.
Sample preprocess(const Sample& sample, Index target_size = 224);

/// Sample order for one pass: consecutive chunks of `batch_size` indices, the
/// last possibly shorter. shuffle=false keeps dataset order.
std::vector<std::vector<Index>> batch_indices(Index count, Index batch_size, bool shuffle,
                                              std::uint64_t seed);

/// Loads, preprocesses and stacks the given samples.
ImageBatch collate(const Dataset& dataset, const std::vector<Index>& indices, Index target_size);

/// Streams preprocessed batches over one pass of the dataset.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, Index batch_size, bool shuffle, std::uint64_t seed,
              Index target_size);

  bool next(ImageBatch& batch);
  Index batches() const { return static_cast<Index>(order_.size()); }

 private:
  const Dataset& dataset_;
  std::vector<std::vector<Index>> order_;
  Index target_size_;
  std::size_t cursor_ = 0;
};

/// Stacks whole datasets for evaluation (in order).
ImageBatch collate_all(const Dataset& dataset, Index target_size);

// ----------------------------------------------------------- fixtures

/// Deterministic desk-scale fixture: coloured circles, squares, triangles and
/// crosses on noise backgrounds, 32×32. Train split has 64 samples (16 per
/// class), test split 32. The multilabel variant draws two distinct shapes
/// per image.
std::vector<Sample> synthetic_fixture(Split split, bool multilabel, std::uint64_t seed = 0);
LabelVocabulary synthetic_fixture_vocabulary(bool multilabel);

}  // namespace clipstrike
