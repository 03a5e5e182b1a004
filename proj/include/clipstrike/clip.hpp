#pragma once

#include "clipstrike/data.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace clipstrike {

/// Text template with `{label}` or `{label1}`/`{label2}` placeholders.
class PromptTemplate {
 public:
  /// Throws ConfigError when the template has no placeholder, mixes the
  /// single and two-label forms, or contains an unknown `{...}` field.
  explicit PromptTemplate(std::string text);

  const std::string& text() const { return text_; }
  /// Number of labels a prompt names: 1 or 2.
  Index arity() const { return arity_; }
  std::string fill(const std::vector<std::string>& labels) const;

 private:
  std::string text_;
  Index arity_ = 1;
};

/// Label tuples a template is expanded over: every class for arity 1, every
/// ordered pair of distinct classes for arity 2, truncated to `pair_limit`
/// tuples (0 = no limit) in lexicographic index order.
std::vector<std::vector<Index>> label_tuples(const LabelVocabulary& vocabulary, Index arity,
                                             Index pair_limit = 0);

struct PromptSet {
  std::vector<std::string> prompts;
  RowMatrix<Real> embeddings;  ///< M×K, unit rows
  std::vector<std::vector<Index>> source_labels;

  Index size() const { return static_cast<Index>(prompts.size()); }
};

/// Frozen image/text encoder pair mapping both modalities to K-dim unit vectors.
class ClipEncoderPair {
 public:
  virtual ~ClipEncoderPair() = default;

  virtual std::string name() const = 0;
  virtual Index embedding_dim() const = 0;
  /// Square input resolution the image encoder accepts.
  virtual Index image_size() const = 0;
  virtual std::uint64_t weights_checksum() const = 0;

  /// One unit row per text. Throws std::domain_error on a zero or non-finite
  /// embedding.
  RowMatrix<Real> encode_text(const std::vector<std::string>& texts);
  /// One unit row per image. Throws ShapeError naming the expected size when
  /// the batch resolution differs.
  RowMatrix<Real> encode_images(const ImageBatch& batch);

  /// Number of encode_text calls so far.
  Index text_calls() const { return text_calls_; }

 protected:
  virtual RowMatrix<Real> raw_text(const std::vector<std::string>& texts) = 0;
  virtual RowMatrix<Real> raw_images(const ImageBatch& batch) = 0;

 private:
  Index text_calls_ = 0;
};

/// Seeded random frozen projection network with the CLIP contract, for runs
/// without model downloads. Text: hashed token and bigram embeddings, mean
/// pooled, tanh MLP. Image: 8×8 average pool, tanh MLP.
class FixtureClip final : public ClipEncoderPair {
 public:
  FixtureClip(std::uint64_t seed, Index image_size, Index embedding_dim = 512);

  std::string name() const override { return "fixture"; }
  Index embedding_dim() const override { return text_out_.rows(); }
  Index image_size() const override { return image_size_; }
  std::uint64_t weights_checksum() const override;

 protected:
  RowMatrix<Real> raw_text(const std::vector<std::string>& texts) override;
  RowMatrix<Real> raw_images(const ImageBatch& batch) override;

 private:
  Vector<Real> token_vector(std::string_view kind, const std::string& token) const;

  std::uint64_t seed_;
  Index image_size_;
  RowMatrix<Real> text_hidden_, text_out_;
  RowMatrix<Real> image_hidden_, image_out_;
};

/// Lookup table produced offline by tools/export_clip_embeddings.py from a
/// real CLIP checkpoint: prompt → text embedding, sample id → image embedding.
class PrecomputedClip final : public ClipEncoderPair {
 public:
  static std::unique_ptr<PrecomputedClip> load(const std::filesystem::path& path,
                                               const std::string& backbone);

  std::string name() const override { return backbone_; }
  Index embedding_dim() const override { return dim_; }
  Index image_size() const override { return image_size_; }
  std::uint64_t weights_checksum() const override { return checksum_; }

 protected:
  RowMatrix<Real> raw_text(const std::vector<std::string>& texts) override;
  RowMatrix<Real> raw_images(const ImageBatch& batch) override;

 private:
  std::filesystem::path path_;
  std::string backbone_;
  Index dim_ = 0;
  Index image_size_ = 224;
  std::uint64_t checksum_ = 0;
  std::map<std::string, Vector<Real>> text_, images_;
};

struct ClipConfig {
  std::string backbone = "vit-b-16";
  bool fixture = false;
  std::filesystem::path embeddings;  ///< table for non-fixture backbones
  std::string prompt_template = "a photo of a {label}";
  Index m_candidates = 0;            ///< 0 = all prompts
  Index pair_limit = 0;              ///< cap on two-label tuples, 0 = all

  void validate() const;
};

/// Throws ConfigError with remediation when a real backbone has no embedding table.
std::unique_ptr<ClipEncoderPair> make_clip(const ClipConfig& config, std::uint64_t seed,
                                           Index image_size);

PromptSet encode_prompts(const LabelVocabulary& vocabulary,
                         const std::vector<std::vector<Index>>& tuples,
                         const PromptTemplate& prompt_template, ClipEncoderPair& encoder);

/// Encodes each (template, pair_limit) at most once per encoder.
class PromptCache {
 public:
  explicit PromptCache(ClipEncoderPair& encoder) : encoder_(encoder) {}

  const PromptSet& get(const LabelVocabulary& vocabulary, const PromptTemplate& prompt_template,
                       Index pair_limit = 0);

 private:
  ClipEncoderPair& encoder_;
  std::map<std::pair<std::string, Index>, PromptSet> cache_;
};

/// Cosine of the angle between a and b. Throws std::domain_error("degenerate
/// embedding") when either is zero.
template <typename A, typename B>
double cosine_similarity(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double na = static_cast<double>(a.norm());
  const double nb = static_cast<double>(b.norm());
  if (!(na > 0.0) || !(nb > 0.0)) throw std::domain_error("degenerate embedding");
  const double dot = static_cast<double>(a.reshaped().dot(b.reshaped()));
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

struct Selection {
  Index index = -1;
  double similarity = 0.0;
};

/// Prompt row least cosine-similar to `image` among `m_candidates` rows drawn
/// without replacement. m_candidates = 0 or M scans every row and leaves `rng`
/// untouched; m_candidates > M throws std::invalid_argument. Ties go to the
/// lowest prompt index.
Selection select_least_similar(const Vector<Real>& image, const RowMatrix<Real>& prompts,
                               Index m_candidates, std::mt19937_64& rng);

}  // namespace clipstrike
