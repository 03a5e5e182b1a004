#include "clipstrike/ingest.hpp"

#include "clipstrike/archive.hpp"
#include "clipstrike/image_io.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

namespace clipstrike {

namespace fs = std::filesystem;

IngestFormat parse_ingest_format(const std::string& text) {
  if (text == "cifar10") return IngestFormat::Cifar10Binary;
  if (text == "image-folder") return IngestFormat::ImageFolder;
  if (text == "voc") return IngestFormat::Voc;
  if (text == "synthetic-fixture") return IngestFormat::SyntheticFixture;
  throw ConfigError("unknown ingest format '" + text + "' (expected cifar10, image-folder, voc or synthetic-fixture)");
}

DatasetWriter::DatasetWriter(const fs::path& root, const LabelVocabulary& vocabulary)
    : root_(root), vocabulary_(vocabulary) {
  for (const char* split : {"train", "test"}) fs::create_directories(root / split);
  std::ofstream classes(root / "classes.txt");
  for (const auto& name : vocabulary.classes()) classes << name << "\n";
  std::ofstream(root / "meta.json") << nlohmann::json{{"multilabel", vocabulary.multilabel()}}.dump() << "\n";
}

void DatasetWriter::add_image(Split split, const std::string& id, const Tensor<Real>& image, const LabelSet& labels,
                              Index index) {
  write_png(root_ / to_string(split) / (id + ".png"), image, index);
  add_labels(split, id, labels);
}

void DatasetWriter::add_file(Split split, const std::string& id, const fs::path& source, const LabelSet& labels) {
  std::string ext = source.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  fs::copy_file(source, root_ / to_string(split) / (id + ext), fs::copy_options::overwrite_existing);
  add_labels(split, id, labels);
}

void DatasetWriter::add_labels(Split split, const std::string& id, const LabelSet& labels) {
  nlohmann::json names = nlohmann::json::array();
  for (Index k : labels) names.push_back(vocabulary_.name(k));
  std::ofstream(root_ / to_string(split) / (id + ".json")) << nlohmann::json{{"labels", names}}.dump() << "\n";
  ++counts_[split == Split::Train ? 0 : 1];
}

namespace {

void require_dir(const fs::path& path) {
  if (!fs::is_directory(path)) throw ConfigError("ingest input " + path.string() + " is not a directory");
}

bool under_limit(Index count, Index limit) { return limit == 0 || count < limit; }

IngestSummary ingest_cifar10(const IngestOptions& o) {
  require_dir(o.input);
  std::vector<std::string> classes;
  std::ifstream meta(o.input / "batches.meta.txt");
  if (!meta) throw ConfigError("missing " + (o.input / "batches.meta.txt").string());
  for (std::string line; std::getline(meta, line);) {
    if (!line.empty()) classes.push_back(line);
  }
  const LabelVocabulary vocabulary(classes, false);
  DatasetWriter writer(o.output, vocabulary);

  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  const std::vector<std::pair<Split, std::vector<std::string>>> files = {
      {Split::Train,
       {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"}},
      {Split::Test, {"test_batch.bin"}}};
  for (const auto& [split, names] : files) {
    Index count = 0;
    for (const auto& name : names) {
      const auto bytes = read_file_bytes(o.input / name);
      if (bytes.size() % kRecord != 0) throw ConfigError(name + " is not a CIFAR-10 binary batch");
      for (std::size_t r = 0; r < bytes.size() / kRecord && under_limit(count, o.limit); ++r, ++count) {
        const std::uint8_t* rec = bytes.data() + r * kRecord;
        if (rec[0] >= classes.size()) throw ConfigError(fmt::format("{}: label {} out of range", name, rec[0]));
        Tensor<Real> image(Shape{1, 3, 32, 32});
        for (Index i = 0; i < image.size(); ++i) image.data()[i] = rec[1 + i] / 255.0;
        writer.add_image(split, fmt::format("{:05d}", count), image, {Index(rec[0])});
      }
    }
  }
  return writer.summary();
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

IngestSummary ingest_image_folder(const IngestOptions& o) {
  require_dir(o.input / "train");
  std::vector<std::string> classes;
  for (const auto& d : sorted_entries(o.input / "train", true)) classes.push_back(d.filename().string());
  const LabelVocabulary vocabulary(classes, false);
  DatasetWriter writer(o.output, vocabulary);
  const fs::path test_dir = fs::is_directory(o.input / "val") ? o.input / "val" : o.input / "test";
  for (const auto& [split, dir] : {std::pair{Split::Train, o.input / "train"}, std::pair{Split::Test, test_dir}}) {
    if (!fs::is_directory(dir)) continue;
    Index count = 0;
    for (Index k = 0; k < vocabulary.size(); ++k) {
      const fs::path class_dir = dir / vocabulary.name(k);
      if (!fs::is_directory(class_dir)) continue;
      for (const auto& file : sorted_entries(class_dir, false)) {
        if (!under_limit(count, o.limit)) break;
        std::string ext = file.extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
        writer.add_file(split, vocabulary.name(k) + "_" + file.stem().string(), file, {k});
        ++count;
      }
    }
  }
  return writer.summary();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

// Object class names of one VOC annotation, in file order.
std::vector<std::string> voc_objects(const fs::path& xml) {
  std::ifstream in(xml);
  if (!in) throw ConfigError("missing annotation " + xml.string());
  std::stringstream text;
  text << in.rdbuf();
  const std::string s = text.str();
  static const std::regex object(R"(<object>[\s\S]*?<name>\s*([^<\s]+)\s*</name>)");
  std::vector<std::string> names;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), object); it != std::sregex_iterator(); ++it) {
    names.push_back((*it)[1].str());
  }
  return names;
}

IngestSummary ingest_voc(const IngestOptions& o) {
  require_dir(o.input / "Annotations");
  const fs::path sets = o.input / "ImageSets" / "Main";
  std::vector<std::pair<Split, std::vector<std::string>>> splits;
  splits.emplace_back(Split::Train, read_lines(sets / "train.txt"));
  splits.emplace_back(Split::Test, read_lines(fs::exists(sets / "test.txt") ? sets / "test.txt" : sets / "val.txt"));
  for (auto& [split, ids] : splits) {
    if (o.limit > 0 && Index(ids.size()) > o.limit) ids.resize(std::size_t(o.limit));
  }

  std::set<std::string> names;
  std::map<std::string, std::vector<std::string>> objects;
  for (const auto& [split, ids] : splits) {
    for (const auto& id : ids) {
      objects[id] = voc_objects(o.input / "Annotations" / (id + ".xml"));
      names.insert(objects[id].begin(), objects[id].end());
    }
  }
  const LabelVocabulary vocabulary(std::vector<std::string>(names.begin(), names.end()), true);
  DatasetWriter writer(o.output, vocabulary);
  for (const auto& [split, ids] : splits) {
    for (const auto& id : ids) {
      LabelSet labels;
      for (const auto& name : objects[id]) labels.push_back(vocabulary.index_of(name));
      labels = make_label_set(labels);
      if (labels.empty()) {
        spdlog::warn("voc image {} has no objects; skipped", id);
        continue;
      }
      writer.add_file(split, id, o.input / "JPEGImages" / (id + ".jpg"), labels);
    }
  }
  return writer.summary();
}

IngestSummary ingest_fixture(const IngestOptions& o) {
  const LabelVocabulary vocabulary = synthetic_fixture_vocabulary(o.multilabel_fixture);
  DatasetWriter writer(o.output, vocabulary);
  for (Split split : {Split::Train, Split::Test}) {
    const auto samples = synthetic_fixture(split, o.multilabel_fixture);
    for (std::size_t i = 0; i < samples.size() && under_limit(Index(i), o.limit); ++i) {
      writer.add_image(split, samples[i].id, samples[i].image, samples[i].labels);
    }
  }
  return writer.summary();
}

}  // namespace

IngestSummary ingest(const IngestOptions& options) {
  if (options.output.empty()) throw ConfigError("ingest needs an output directory");
  if (options.limit < 0) throw ConfigError("ingest limit must be >= 0");
  IngestSummary summary;
  switch (options.format) {
    case IngestFormat::Cifar10Binary: summary = ingest_cifar10(options); break;
    case IngestFormat::ImageFolder: summary = ingest_image_folder(options); break;
    case IngestFormat::Voc: summary = ingest_voc(options); break;
    case IngestFormat::SyntheticFixture: summary = ingest_fixture(options); break;
  }
  spdlog::info("ingested {} classes, {} train and {} test samples into {}", summary.classes, summary.train,
               summary.test, options.output.string());
  return summary;
}

}  // namespace clipstrike
