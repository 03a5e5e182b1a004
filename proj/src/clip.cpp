#include "clipstrike/clip.hpp"

#include "clipstrike/archive.hpp"
#include "clipstrike/nn.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cctype>
#include <numeric>

namespace clipstrike {

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  bool single = false, first = false, second = false;
  for (std::size_t pos = 0; (pos = text_.find('{', pos)) != std::string::npos;) {
    const std::size_t end = text_.find('}', pos);
    if (end == std::string::npos) throw ConfigError("prompt template '" + text_ + "' has an unclosed '{'");
    const std::string field = text_.substr(pos + 1, end - pos - 1);
    if (field == "label") {
      single = true;
    } else if (field == "label1") {
      first = true;
    } else if (field == "label2") {
      second = true;
    } else {
      throw ConfigError("prompt template '" + text_ + "' has unknown placeholder {" + field + "}");
    }
    pos = end + 1;
  }
  if (single && (first || second)) {
    throw ConfigError("prompt template '" + text_ + "' mixes {label} with {label1}/{label2}");
  }
  if (first != second) throw ConfigError("prompt template '" + text_ + "' needs both {label1} and {label2}");
  if (!single && !first) throw ConfigError("prompt template '" + text_ + "' has no label placeholder");
  arity_ = single ? 1 : 2;
}

std::string PromptTemplate::fill(const std::vector<std::string>& labels) const {
  if (static_cast<Index>(labels.size()) != arity_) {
    throw std::invalid_argument(fmt::format("template '{}' takes {} labels, got {}", text_, arity_,
                                            labels.size()));
  }
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = text_.find('{', pos);
    if (open == std::string::npos) break;
    const std::size_t close = text_.find('}', open);
    out.append(text_, pos, open - pos);
    const std::string field = text_.substr(open + 1, close - open - 1);
    out += field == "label2" ? labels[1] : labels[0];
    pos = close + 1;
  }
  out.append(text_, pos);
  return out;
}

std::vector<std::vector<Index>> label_tuples(const LabelVocabulary& vocabulary, Index arity,
                                             Index pair_limit) {
  std::vector<std::vector<Index>> tuples;
  const Index k = vocabulary.size();
  if (arity == 1) {
    for (Index i = 0; i < k; ++i) tuples.push_back({i});
    return tuples;
  }
  if (arity != 2) throw std::invalid_argument("label_tuples: arity must be 1 or 2");
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      if (i == j) continue;
      if (pair_limit > 0 && static_cast<Index>(tuples.size()) == pair_limit) return tuples;
      tuples.push_back({i, j});
    }
  }
  return tuples;
}

namespace {

void normalize_rows(RowMatrix<Real>& m, const char* what) {
  for (Index i = 0; i < m.rows(); ++i) {
    const Real norm = m.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw std::domain_error(fmt::format("degenerate embedding for {} {}", what, i));
    }
    m.row(i) /= norm;
  }
}

void fill_normal(RowMatrix<Real>& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

constexpr Index kTokenDim = 64;
constexpr Index kHidden = 256;
constexpr Index kPooled = 8;

}  // namespace

RowMatrix<Real> ClipEncoderPair::encode_text(const std::vector<std::string>& texts) {
  ++text_calls_;
  RowMatrix<Real> out = raw_text(texts);
  normalize_rows(out, "prompt");
  return out;
}

RowMatrix<Real> ClipEncoderPair::encode_images(const ImageBatch& batch) {
  const Index s = image_size();
  if (batch.images.h() != s || batch.images.w() != s || batch.images.c() != 3) {
    throw ShapeError(fmt::format("{} image encoder expects 3x{}x{} images, got {}", name(), s, s,
                                 batch.images.shape().str()));
  }
  RowMatrix<Real> out = raw_images(batch);
  normalize_rows(out, "image");
  return out;
}

FixtureClip::FixtureClip(std::uint64_t seed, Index image_size, Index embedding_dim)
    : seed_(seed), image_size_(image_size) {
  if (image_size < kPooled) {
    throw ConfigError(fmt::format("fixture CLIP needs images of at least {}px", kPooled));
  }
  std::mt19937_64 rng(substream(seed, "clip.fixture.weights"));
  text_hidden_.resize(kHidden, kTokenDim);
  text_out_.resize(embedding_dim, kHidden);
  image_hidden_.resize(kHidden, 3 * kPooled * kPooled);
  image_out_.resize(embedding_dim, kHidden);
  fill_normal(text_hidden_, 2.0 / std::sqrt(double(kTokenDim)), rng);
  fill_normal(text_out_, 1.0 / std::sqrt(double(kHidden)), rng);
  fill_normal(image_hidden_, 4.0 / std::sqrt(double(3 * kPooled * kPooled)), rng);
  fill_normal(image_out_, 1.0 / std::sqrt(double(kHidden)), rng);
}

std::uint64_t FixtureClip::weights_checksum() const {
  Fnv1a h;
  h.update_value(seed_);
  for (const auto* m : {&text_hidden_, &text_out_, &image_hidden_, &image_out_}) {
    h.update(m->data(), static_cast<std::size_t>(m->size()) * sizeof(Real));
  }
  return h.digest();
}

Vector<Real> FixtureClip::token_vector(std::string_view kind, const std::string& token) const {
  std::mt19937_64 rng(substream(seed_, kind, fnv1a(token)));
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector<Real> v(kTokenDim);
  for (Index i = 0; i < kTokenDim; ++i) v[i] = dist(rng);
  return v;
}

RowMatrix<Real> FixtureClip::raw_text(const std::vector<std::string>& texts) {
  RowMatrix<Real> pooled = RowMatrix<Real>::Zero(static_cast<Index>(texts.size()), kTokenDim);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto tokens = tokenize(texts[i]);
    if (tokens.empty()) throw std::domain_error("empty prompt cannot be encoded");
    Vector<Real> acc = Vector<Real>::Zero(kTokenDim);
    for (const auto& t : tokens) acc += token_vector("clip.token", t);
    acc /= double(tokens.size());
    // Bigrams make the embedding sensitive to word order.
    if (tokens.size() > 1) {
      Vector<Real> bigrams = Vector<Real>::Zero(kTokenDim);
      for (std::size_t k = 1; k < tokens.size(); ++k) {
        bigrams += token_vector("clip.bigram", tokens[k - 1] + " " + tokens[k]);
      }
      acc += 0.5 * bigrams / double(tokens.size() - 1);
    }
    pooled.row(static_cast<Index>(i)) = acc.transpose();
  }
  const RowMatrix<Real> hidden = (pooled * text_hidden_.transpose()).array().tanh().matrix();
  return hidden * text_out_.transpose();
}

RowMatrix<Real> FixtureClip::raw_images(const ImageBatch& batch) {
  nn::AdaptiveAvgPool2d<Real> pool(kPooled, kPooled);
  const Tensor<Real> pooled = pool.forward(batch.images);
  const RowMatrix<Real> centered = pooled.matrix().array() - 0.5;
  const RowMatrix<Real> hidden = (centered * image_hidden_.transpose()).array().tanh().matrix();
  return hidden * image_out_.transpose();
}

std::unique_ptr<PrecomputedClip> PrecomputedClip::load(const std::filesystem::path& path,
                                                       const std::string& backbone) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed CLIP embedding table " + path.string() + ": " + e.what());
  }
  auto clip = std::unique_ptr<PrecomputedClip>(new PrecomputedClip());
  clip->path_ = path;
  clip->backbone_ = doc.value("backbone", std::string());
  if (clip->backbone_ != backbone) {
    throw ConfigError(fmt::format("embedding table {} was exported for backbone '{}', config asks for '{}'",
                                  path.string(), clip->backbone_, backbone));
  }
  clip->dim_ = doc.value("dim", Index(0));
  clip->image_size_ = doc.value("image_size", Index(224));
  clip->checksum_ = Fnv1a().update(bytes.data(), bytes.size()).digest();
  auto read_table = [&](const char* key, std::map<std::string, Vector<Real>>& table) {
    if (!doc.contains(key)) return;
    for (const auto& [name, values] : doc[key].items()) {
      const auto v = values.get<std::vector<double>>();
      if (static_cast<Index>(v.size()) != clip->dim_) {
        throw ConfigError(fmt::format("embedding '{}' in {} has width {}, expected {}", name,
                                      path.string(), v.size(), clip->dim_));
      }
      table[name] = Eigen::Map<const Vector<Real>>(v.data(), clip->dim_);
    }
  };
  read_table("text", clip->text_);
  read_table("images", clip->images_);
  spdlog::info("loaded {} text and {} image embeddings from {}", clip->text_.size(),
               clip->images_.size(), path.string());
  return clip;
}

RowMatrix<Real> PrecomputedClip::raw_text(const std::vector<std::string>& texts) {
  RowMatrix<Real> out(static_cast<Index>(texts.size()), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto it = text_.find(texts[i]);
    if (it == text_.end()) {
      throw ConfigError(fmt::format(
          "prompt '{}' is missing from {}; re-run tools/export_clip_embeddings.py with this template",
          texts[i], path_.string()));
    }
    out.row(static_cast<Index>(i)) = it->second.transpose();
  }
  return out;
}

RowMatrix<Real> PrecomputedClip::raw_images(const ImageBatch& batch) {
  RowMatrix<Real> out(batch.size(), dim_);
  for (Index i = 0; i < batch.size(); ++i) {
    const auto& id = batch.ids.at(static_cast<std::size_t>(i));
    const auto it = images_.find(id);
    if (it == images_.end()) {
      throw ConfigError(fmt::format(
          "image '{}' is missing from {}; re-run tools/export_clip_embeddings.py on this dataset", id,
          path_.string()));
    }
    out.row(i) = it->second.transpose();
  }
  return out;
}

void ClipConfig::validate() const {
  (void)PromptTemplate{prompt_template};
  if (m_candidates < 0) throw ConfigError("clip.m_candidates must be >= 0 (0 = all prompts)");
  if (pair_limit < 0) throw ConfigError("clip.pair_limit must be >= 0 (0 = no limit)");
}

std::unique_ptr<ClipEncoderPair> make_clip(const ClipConfig& config, std::uint64_t seed,
                                           Index image_size) {
  config.validate();
  if (config.fixture) return std::make_unique<FixtureClip>(substream(seed, "clip"), image_size);
  if (config.embeddings.empty()) {
    throw ConfigError(fmt::format(
        "clip.backbone = '{}' needs an embedding table: run tools/export_clip_embeddings.py and set "
        "clip.embeddings, or set clip.fixture = true for the seeded stand-in encoder",
        config.backbone));
  }
  return PrecomputedClip::load(config.embeddings, config.backbone);
}

PromptSet encode_prompts(const LabelVocabulary& vocabulary, const std::vector<std::vector<Index>>& tuples,
                         const PromptTemplate& prompt_template, ClipEncoderPair& encoder) {
  if (tuples.empty()) throw std::invalid_argument("encode_prompts: no label tuples");
  PromptSet set;
  for (const auto& tuple : tuples) {
    std::vector<std::string> names;
    for (const Index k : tuple) names.push_back(vocabulary.name(k));
    set.prompts.push_back(prompt_template.fill(names));
    set.source_labels.push_back(tuple);
  }
  set.embeddings = encoder.encode_text(set.prompts);
  return set;
}

const PromptSet& PromptCache::get(const LabelVocabulary& vocabulary, const PromptTemplate& prompt_template,
                                  Index pair_limit) {
  const auto key = std::make_pair(prompt_template.text(), pair_limit);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    const auto tuples = label_tuples(vocabulary, prompt_template.arity(), pair_limit);
    it = cache_.emplace(key, encode_prompts(vocabulary, tuples, prompt_template, encoder_)).first;
  }
  return it->second;
}

Selection select_least_similar(const Vector<Real>& image, const RowMatrix<Real>& prompts,
                               Index m_candidates, std::mt19937_64& rng) {
  const Index total = prompts.rows();
  if (total == 0) throw std::invalid_argument("select_least_similar: empty prompt set");
  if (m_candidates < 0 || m_candidates > total) {
    throw std::invalid_argument(fmt::format("m_candidates must be in [0, {}], got {}", total, m_candidates));
  }
  std::vector<Index> candidates(static_cast<std::size_t>(total));
  std::iota(candidates.begin(), candidates.end(), Index(0));
  if (m_candidates != 0 && m_candidates != total) {
    std::vector<Index> drawn;
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(drawn), m_candidates, rng);
    candidates = std::move(drawn);
  }
  Selection best;
  for (const Index i : candidates) {
    const double s = cosine_similarity(image, prompts.row(i).transpose());
    if (best.index < 0 || s < best.similarity) best = {i, s};
  }
  return best;
}

}  // namespace clipstrike
