#include "clipstrike/archive.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace clipstrike {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void pod(const T& value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void raw(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + size);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  template <typename T>
  T pod() {
    T value;
    raw(&value, sizeof(T));
    return value;
  }
  void raw(void* out, std::size_t size) {
    if (offset_ + size > bytes_.size()) throw std::runtime_error("tensor archive truncated");
    std::memcpy(out, bytes_.data() + offset_, size);
    offset_ += size;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t offset_ = 0;
};

}  // namespace

const TensorArchive::Entry& TensorArchive::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("tensor archive has no entry '" + name + "'");
  return it->second;
}

void TensorArchive::check_shape(const std::string& name, const Entry& e, const Shape& shape) {
  std::vector<std::int64_t> dims = e.dims;
  while (dims.size() < 4) dims.push_back(1);
  const std::vector<std::int64_t> want = {shape.n, shape.c, shape.h, shape.w};
  if (dims != want) {
    std::string got;
    for (auto d : e.dims) got += (got.empty() ? "" : "x") + std::to_string(d);
    throw ShapeError("tensor archive entry '" + name + "' has shape " + got + ", expected " +
                     shape.str());
  }
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  const std::string meta = metadata_.dump();
  w.pod(static_cast<std::uint64_t>(meta.size()));
  w.raw(meta.data(), meta.size());
  w.pod(static_cast<std::uint64_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    w.pod(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.pod(static_cast<std::uint8_t>(1));
    w.pod(static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) w.pod(d);
    w.raw(e.values.data(), e.values.size() * sizeof(double));
  }
  return std::move(w.bytes);
}

TensorArchive TensorArchive::parse(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a tensor archive (bad magic)");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) {
    throw std::runtime_error("unsupported tensor archive version " + std::to_string(version));
  }
  TensorArchive archive;
  std::string meta(r.pod<std::uint64_t>(), '\0');
  r.raw(meta.data(), meta.size());
  archive.metadata_ = nlohmann::json::parse(meta);
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(r.pod<std::uint32_t>(), '\0');
    r.raw(name.data(), name.size());
    const auto dtype = r.pod<std::uint8_t>();
    Entry e;
    e.dims.resize(r.pod<std::uint32_t>());
    std::int64_t total = 1;
    for (auto& d : e.dims) {
      d = r.pod<std::int64_t>();
      if (d < 0) throw std::runtime_error("tensor archive entry '" + name + "' has negative dim");
      total *= d;
    }
    e.values.resize(static_cast<std::size_t>(total));
    if (dtype == 1) {
      r.raw(e.values.data(), e.values.size() * sizeof(double));
    } else if (dtype == 0) {
      std::vector<float> tmp(e.values.size());
      r.raw(tmp.data(), tmp.size() * sizeof(float));
      std::copy(tmp.begin(), tmp.end(), e.values.begin());
    } else {
      throw std::runtime_error("tensor archive entry '" + name + "' has unknown dtype");
    }
    archive.entries_[name] = std::move(e);
  }
  return archive;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void TensorArchive::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  return parse(read_file_bytes(path));
}

}  // namespace clipstrike
