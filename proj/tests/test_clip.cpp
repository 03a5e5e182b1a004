#include "clipstrike/clip.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>

using namespace clipstrike;

namespace {

LabelVocabulary animals(Index count) {
  std::vector<std::string> names;
  for (Index i = 0; i < count; ++i) names.push_back("class" + std::to_string(i));
  return LabelVocabulary(names, false);
}

ImageBatch random_batch(std::mt19937_64& rng, Index n, Index size) {
  ImageBatch batch;
  batch.images = clipstrike::testing::random_tensor(Shape{n, 3, size, size}, rng, 0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    batch.labels.push_back({0});
    batch.ids.push_back("img" + std::to_string(i));
  }
  return batch;
}

}  // namespace

TEST_CASE("cosine similarity") {
  const Eigen::Vector2d e1(1, 0), e2(0, 1);
  CHECK(cosine_similarity(e1, e1) == 1.0);
  CHECK(cosine_similarity(e1, e2) == 0.0);
  CHECK(cosine_similarity(e1, (-e1).eval()) == -1.0);
  const Eigen::Vector3d a(1, 2, 3), b(-2, 0.5, 1);
  CHECK(cosine_similarity(a, b) == doctest::Approx(cosine_similarity(b, a)));
  CHECK(cosine_similarity((4.0 * a).eval(), b) == doctest::Approx(cosine_similarity(a, b)));
  CHECK_THROWS_WITH_AS(cosine_similarity(Eigen::Vector2d(0, 0), e1), "degenerate embedding",
                       std::domain_error);
}

TEST_CASE("least-similar selection") {
  std::mt19937_64 rng(31);
  RowMatrix<double> prompts(3, 2);
  prompts << 1, 0, 0, 1, -1, 0;
  const Vector<double> image = Eigen::Vector2d(1, 0);
  const auto s = select_least_similar(image, prompts, 0, rng);
  CHECK(s.index == 2);
  CHECK(s.similarity == -1.0);
  CHECK(select_least_similar(image, prompts.topRows(1), 0, rng).index == 0);

  RowMatrix<double> tied(3, 2);
  tied << 1, 0, 0, 1, 0, 1;
  CHECK(select_least_similar(image, tied, 0, rng).index == 1);
  CHECK_THROWS_AS(select_least_similar(image, prompts, 4, rng), std::invalid_argument);
}

TEST_CASE("selection over all prompts equals an exhaustive scan") {
  std::mt19937_64 rng(32);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<Index> count(1, 12), dim(2, 16);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  int mismatches = 0, scale_changes = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index m = count(rng), k = dim(rng);
    RowMatrix<double> prompts(m, k);
    Vector<double> image(k);
    for (Index i = 0; i < prompts.size(); ++i) prompts.data()[i] = normal(rng);
    for (Index i = 0; i < k; ++i) image[i] = normal(rng);

    Index best = 0;
    double best_cos = 2.0;
    for (Index i = 0; i < m; ++i) {
      double dot = 0, na = 0, nb = 0;
      for (Index j = 0; j < k; ++j) {
        dot += image[j] * prompts(i, j);
        na += image[j] * image[j];
        nb += prompts(i, j) * prompts(i, j);
      }
      const double c = dot / std::sqrt(na * nb);
      if (c < best_cos) {
        best_cos = c;
        best = i;
      }
    }
    const Index picked = select_least_similar(image, prompts, 0, rng).index;
    mismatches += picked != best;
    const Vector<double> scaled = scale(rng) * image;
    scale_changes += select_least_similar(scaled, prompts, m, rng).index != picked;
  }
  CHECK(mismatches == 0);
  CHECK(scale_changes == 0);
}

TEST_CASE("sampled candidates are reproducible and come from the subset") {
  std::mt19937_64 rng(33);
  RowMatrix<double> prompts = RowMatrix<double>::Random(10, 4);
  const Vector<double> image = Vector<double>::Random(4);
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 20; ++i) {
    const auto sa = select_least_similar(image, prompts, 3, a);
    const auto sb = select_least_similar(image, prompts, 3, b);
    CHECK(sa.index == sb.index);
    CHECK(sa.similarity >= select_least_similar(image, prompts, 0, rng).similarity);
  }
}

TEST_CASE("prompt templates") {
  const PromptTemplate pair("a photo of a {label1} and {label2}");
  CHECK(pair.arity() == 2);
  CHECK(pair.fill({"dog", "person"}) == "a photo of a dog and person");
  const PromptTemplate single("a photo of a {label}");
  CHECK(single.fill({"cat"}) == "a photo of a cat");
  CHECK_THROWS_AS(PromptTemplate("a photo"), ConfigError);
  CHECK_THROWS_AS(PromptTemplate("a {label} with {colour}"), ConfigError);
  CHECK_THROWS_AS(PromptTemplate("a {label1} only"), ConfigError);
  CHECK_THROWS_AS(PromptTemplate("a {label} and {label2}"), ConfigError);

  const auto vocab = animals(10);
  CHECK(label_tuples(vocab, 1).size() == 10);
  CHECK(label_tuples(vocab, 2).size() == 90);
  const auto capped = label_tuples(vocab, 2, 5);
  CHECK(capped.size() == 5);
  CHECK(capped[0] == std::vector<Index>{0, 1});
}

TEST_CASE("fixture encoder contract") {
  FixtureClip clip(1, 32);
  std::mt19937_64 rng(34);
  ImageBatch batch = random_batch(rng, 4, 32);
  batch.images.set_sample(3, batch.images, 1);
  const auto emb = clip.encode_images(batch);
  CHECK(emb.rows() == 4);
  CHECK(emb.cols() == 512);
  for (Index i = 0; i < 4; ++i) CHECK(emb.row(i).norm() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK((emb.row(1).array() == emb.row(3).array()).all());
  CHECK_THROWS_WITH_AS(clip.encode_images(random_batch(rng, 1, 16)),
                       doctest::Contains("3x32x32"), ShapeError);

  const auto vocab = animals(10);
  const PromptTemplate tmpl("a photo of a {label}");
  const auto first = encode_prompts(vocab, label_tuples(vocab, 1), tmpl, clip);
  const auto second = encode_prompts(vocab, label_tuples(vocab, 1), tmpl, clip);
  CHECK(first.size() == 10);
  CHECK(first.embeddings.rows() == 10);
  CHECK((first.embeddings.array() == second.embeddings.array()).all());
  CHECK(first.embeddings.row(0).dot(first.embeddings.row(1)) < 0.999);

  const auto word_order = clip.encode_text({"dog and person", "person and dog"});
  CHECK(word_order.row(0).dot(word_order.row(1)) < 0.999);
}

TEST_CASE("prompt cache encodes once") {
  FixtureClip clip(2, 32);
  PromptCache cache(clip);
  const auto vocab = animals(4);
  const PromptTemplate tmpl("a photo of a {label}");
  const PromptSet& a = cache.get(vocab, tmpl);
  const PromptSet& b = cache.get(vocab, tmpl);
  CHECK(&a == &b);
  CHECK(clip.text_calls() == 1);
  cache.get(vocab, PromptTemplate("an image of a {label}"));
  CHECK(clip.text_calls() == 2);
}

TEST_CASE("real backbones need an embedding table") {
  ClipConfig config;
  CHECK_THROWS_WITH_AS(make_clip(config, 0, 224), doctest::Contains("export_clip_embeddings"),
                       ConfigError);

  const auto path = std::filesystem::temp_directory_path() / "clipstrike_test_table.json";
  nlohmann::json doc;
  doc["backbone"] = "vit-b-16";
  doc["dim"] = 3;
  doc["image_size"] = 4;
  doc["text"]["a photo of a cat"] = {1.0, 0.0, 0.0};
  doc["text"]["a photo of a dog"] = {0.0, 2.0, 0.0};
  doc["images"]["img0"] = {0.0, 0.0, 5.0};
  std::ofstream(path) << doc.dump();

  config.embeddings = path;
  auto clip = make_clip(config, 0, 224);
  CHECK(clip->embedding_dim() == 3);
  const auto t = clip->encode_text({"a photo of a dog"});
  CHECK(t(0, 1) == 1.0);
  std::mt19937_64 rng(1);
  CHECK(clip->encode_images(random_batch(rng, 1, 4))(0, 2) == 1.0);
  CHECK_THROWS_AS(clip->encode_text({"a photo of a bird"}), ConfigError);
  CHECK_THROWS_AS(clip->encode_images(random_batch(rng, 2, 4)), ConfigError);

  config.backbone = "vit-b-32";
  CHECK_THROWS_AS(make_clip(config, 0, 224), ConfigError);
  std::filesystem::remove(path);
}
