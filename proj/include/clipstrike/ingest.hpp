#pragma once

#include "clipstrike/data.hpp"

#include <filesystem>
#include <string>

namespace clipstrike {

enum class IngestFormat {
  /// CIFAR-10 binary release: data_batch_{1..5}.bin, test_batch.bin, batches.meta.txt.
  Cifar10Binary,
  /// <input>/train/<class>/* and <input>/val|test/<class>/* (Imagenette layout).
  ImageFolder,
  /// Pascal VOC devkit year directory: Annotations/, JPEGImages/, ImageSets/Main/.
  Voc,
  /// The generated fixture, written out in the on-disk layout.
  SyntheticFixture,
};

IngestFormat parse_ingest_format(const std::string& text);

struct IngestOptions {
  IngestFormat format = IngestFormat::ImageFolder;
  std::filesystem::path input;
  std::filesystem::path output;
  /// Samples kept per split, in source order; 0 = all.
  Index limit = 0;
  bool multilabel_fixture = false;
};


struct IngestSummary {
  Index classes = 0;
  Index train = 0;
  Index test = 0;
};

/// Writes samples in the on-disk layout load_dataset reads: classes.txt,
/// meta.json, and <split>/<id>.png|.jpg with a <split>/<id>.json label file.
class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& root, const LabelVocabulary& vocabulary);

  void add_image(Split split, const std::string& id, const Tensor<Real>& image, const LabelSet& labels,
                 Index index = 0);
  /// Copies an encoded image file as is.
  void add_file(Split split, const std::string& id, const std::filesystem::path& source, const LabelSet& labels);

  IngestSummary summary() const { return {vocabulary_.size(), counts_[0], counts_[1]}; }

 private:
  void add_labels(Split split, const std::string& id, const LabelSet& labels);

  std::filesystem::path root_;
  LabelVocabulary vocabulary_;
  Index counts_[2] = {0, 0};
};

/// Converts a dataset into the layout load_dataset reads. Existing files in
/// `output` are overwritten.
IngestSummary ingest(const IngestOptions& options);

}  // namespace clipstrike
