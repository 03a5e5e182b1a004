#pragma once

#include "clipstrike/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace clipstrike {

/// Named-tensor container used for model weights and training checkpoints.
///
/// Layout (little-endian):
///   "CSTW" | u32 version | u64 meta_len | meta JSON bytes | u64 count |
///   count × { u32 name_len | name | u8 dtype (0=f32, 1=f64) | u32 ndim |
///             i64 dims[ndim] | raw values }
/// Entries are written in name order so identical content serializes to
/// identical bytes. tools/export_torchvision_weights.py writes the same format.
class TensorArchive {
 public:
  struct Entry {
    std::vector<std::int64_t> dims;
    std::vector<double> values;
  };

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  template <typename Scalar>
  void put(const std::string& name, const Tensor<Scalar>& t) {
    Entry e;
    e.dims = {t.n(), t.c(), t.h(), t.w()};
    e.values.assign(t.data(), t.data() + t.size());
    entries_[name] = std::move(e);
  }

  /// Copies entry `name` into `out`. Shapes must agree after padding the
  /// stored dims with trailing ones to rank 4.
  template <typename Scalar>
  void get(const std::string& name, Tensor<Scalar>& out) const {
    const Entry& e = entry(name);
    check_shape(name, e, out.shape());
    for (Index i = 0; i < out.size(); ++i) {
      out.data()[i] = static_cast<Scalar>(e.values[static_cast<std::size_t>(i)]);
    }
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& entry(const std::string& name) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive parse(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  static void check_shape(const std::string& name, const Entry& e, const Shape& shape);

  nlohmann::json metadata_ = nlohmann::json::object();
  std::map<std::string, Entry> entries_;
};

template <typename Scalar>
void store_parameters(TensorArchive& archive, const std::vector<nn::ParameterRef<Scalar>>& params,
                      const std::string& prefix = "") {
  for (const auto& p : params) archive.put(prefix + p.name, *p.value);
}

/// Loads every parameter (and buffer) from the archive; missing entries are an error.
template <typename Scalar>
void load_parameters(const TensorArchive& archive,
                     const std::vector<nn::ParameterRef<Scalar>>& params,
                     const std::string& prefix = "") {
  for (const auto& p : params) archive.get(prefix + p.name, *p.value);
}

/// FNV-1a over every parameter value in order.
template <typename Scalar>
std::uint64_t checksum(const std::vector<nn::ParameterRef<Scalar>>& params) {
  Fnv1a h;
  for (const auto& p : params) {
    h.update(p.name);
    hash_tensor(h, *p.value);
  }
  return h.digest();
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace clipstrike
