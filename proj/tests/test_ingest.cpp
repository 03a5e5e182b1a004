#include "clipstrike/archive.hpp"
#include "clipstrike/image_io.hpp"
#include "clipstrike/ingest.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace clipstrike;
using clipstrike::testing::TempDir;
namespace fs = std::filesystem;

TEST_CASE("fixture ingest round-trips through the on-disk loader") {
  TempDir dir("clipstrike_ingest_fixture");
  const auto summary = ingest({IngestFormat::SyntheticFixture, {}, dir.path / "ds", 0, false});
  CHECK(summary.classes == 4);
  CHECK(summary.train == 64);
  CHECK(summary.test == 32);
  const Dataset memory = load_dataset("synthetic-fixture", Split::Test, {});
  const Dataset disk = load_dataset("fixture-on-disk", Split::Test, dir.path / "ds");
  REQUIRE(disk.size() == memory.size());
  CHECK(disk.vocabulary().classes() == memory.vocabulary().classes());
  for (Index i = 0; i < disk.size(); ++i) {
    const Sample a = memory.sample(i), b = disk.sample(i);
    REQUIRE(a.labels == b.labels);
    // PNG stores 8 bits per channel.
    REQUIRE((a.image.array() - b.image.array()).abs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
  }

  const auto multi = ingest({IngestFormat::SyntheticFixture, {}, dir.path / "multi", 5, true});
  CHECK(multi.train == 5);
  const Dataset m = load_dataset("multi", Split::Train, dir.path / "multi");
  CHECK(m.vocabulary().multilabel());
  CHECK(m.record(0).labels.size() == 2);
}

TEST_CASE("cifar10 binary ingest") {
  TempDir dir("clipstrike_ingest_cifar");
  const fs::path src = dir.path / "cifar-10-batches-bin";
  fs::create_directories(src);
  std::ofstream(src / "batches.meta.txt") << "airplane\nautomobile\nbird\ncat\ndeer\ndog\nfrog\nhorse\nship\ntruck\n\n";
  auto batch = [](std::uint8_t label0, int records) {
    std::vector<std::uint8_t> bytes;
    for (int r = 0; r < records; ++r) {
      bytes.push_back(std::uint8_t((label0 + r) % 10));
      for (int i = 0; i < 3072; ++i) bytes.push_back(std::uint8_t((i / 1024) * 100 + r));
    }
    return bytes;
  };
  for (int k = 1; k <= 5; ++k) write_file_bytes(src / ("data_batch_" + std::to_string(k) + ".bin"), batch(k, 3));
  write_file_bytes(src / "test_batch.bin", batch(7, 4));

  const auto summary = ingest({IngestFormat::Cifar10Binary, src, dir.path / "out", 0, false});
  CHECK(summary.classes == 10);
  CHECK(summary.train == 15);
  CHECK(summary.test == 4);
  const Dataset test = load_dataset("cifar10", Split::Test, dir.path / "out");
  REQUIRE(test.size() == 4);
  CHECK(test.record(0).labels == LabelSet{7});
  CHECK(test.vocabulary().name(7) == "horse");
  const Sample s = test.sample(1);
  CHECK(s.image(0, 0, 0, 0) == doctest::Approx(1 / 255.0));
  CHECK(s.image(0, 2, 31, 31) == doctest::Approx(201 / 255.0));

  CHECK(ingest({IngestFormat::Cifar10Binary, src, dir.path / "limited", 4, false}).train == 4);
  write_file_bytes(src / "test_batch.bin", std::vector<std::uint8_t>(100));
  CHECK_THROWS_AS(ingest({IngestFormat::Cifar10Binary, src, dir.path / "bad", 0, false}), ConfigError);
}

TEST_CASE("image-folder and voc ingest") {
  TempDir dir("clipstrike_ingest_folders");
  Tensor<Real> image(Shape{1, 3, 8, 8});
  image.array() = 0.5;
  const fs::path folder = dir.path / "imagenette";
  for (const char* split : {"train", "val"}) {
    for (const char* cls : {"n01", "n02"}) {
      fs::create_directories(folder / split / cls);
      write_png(folder / split / cls / "a.png", image);
      write_png(folder / split / cls / "b.PNG", image);
      std::ofstream(folder / split / cls / "notes.txt") << "x";
    }
  }
  const auto s = ingest({IngestFormat::ImageFolder, folder, dir.path / "nette", 0, false});
  CHECK(s.classes == 2);
  CHECK(s.train == 4);
  CHECK(s.test == 4);
  const Dataset nette = load_dataset("nette", Split::Train, dir.path / "nette");
  CHECK(nette.size() == 4);
  CHECK(nette.sample(3).labels == LabelSet{1});

  const fs::path voc = dir.path / "VOC2007";
  fs::create_directories(voc / "Annotations");
  fs::create_directories(voc / "JPEGImages");
  fs::create_directories(voc / "ImageSets" / "Main");
  std::ofstream(voc / "ImageSets" / "Main" / "train.txt") << "000001\n000002\n";
  std::ofstream(voc / "ImageSets" / "Main" / "val.txt") << "000003\n";
  const char* objects[] = {"<object><name>person</name><bndbox/></object><object><name>dog</name></object>",
                           "<object>\n  <name>dog</name>\n</object><object><name>dog</name></object>",
                           "<object><name>cat</name></object>"};
  for (int i = 0; i < 3; ++i) {
    const std::string id = "00000" + std::to_string(i + 1);
    std::ofstream(voc / "Annotations" / (id + ".xml")) << "<annotation><filename>x</filename>" << objects[i]
                                                       << "</annotation>";
    write_png(voc / "JPEGImages" / (id + ".jpg"), image);  // decoders sniff the signature
  }
  const auto v = ingest({IngestFormat::Voc, voc, dir.path / "voc", 0, false});
  CHECK(v.classes == 3);
  CHECK(v.train == 2);
  CHECK(v.test == 1);
  const Dataset train = load_dataset("voc-style", Split::Train, dir.path / "voc");
  CHECK(train.vocabulary().multilabel());
  CHECK(train.vocabulary().classes() == std::vector<std::string>{"cat", "dog", "person"});
  CHECK(train.record(0).labels == LabelSet{1, 2});
  CHECK(train.record(1).labels == LabelSet{1});

  CHECK_THROWS_AS(ingest({IngestFormat::ImageFolder, dir.path / "missing", dir.path / "x", 0, false}), ConfigError);
  CHECK_THROWS_AS(parse_ingest_format("coco"), ConfigError);
}
