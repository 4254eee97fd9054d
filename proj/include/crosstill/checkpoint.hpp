#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//
//   "XDST1"                      5-byte magic
//   u32  format version          (kCheckpointVersion)
//   u64  config length, bytes    canonical JSON of EncoderConfig, sorted keys
//   u64  tensor count
//   per tensor:
//     u32 name length, name bytes
//     u32 rank, rank x u64 dims
//     numel x f32 payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "crosstill/encoder.hpp"

namespace crosstill {

inline constexpr char kCheckpointMagic[5] = {'X', 'D', 'S', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

class ByteWriter {
 public:
  template <class U>
  void put(U value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    U value;
    get_bytes(&value, sizeof(U), what);
    return value;
  }
  void get_bytes(void* out, std::size_t n, const char* what) {
    if (n > bytes_.size() - offset_)
      throw FormatError("checkpoint truncated at offset " + std::to_string(offset_) + " while reading " + what);
    std::memcpy(out, bytes_.data() + offset_, n);
    offset_ += n;
  }
  std::size_t offset() const { return offset_; }
  bool at_end() const { return offset_ == bytes_.size(); }

 private:
  const std::vector<char>& bytes_;
  std::size_t offset_ = 0;
};

}  // namespace detail

inline std::string canonical_config(const EncoderConfig& cfg) { return nlohmann::json(cfg).dump(); }

template <class T>
std::vector<char> serialize_checkpoint(const SentenceEncoder<T>& encoder) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(kCheckpointVersion);
  const std::string config = canonical_config(encoder.config());
  w.put(static_cast<std::uint64_t>(config.size()));
  w.put_bytes(config.data(), config.size());
  const auto params = encoder.parameters();
  w.put(static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    w.put(static_cast<std::uint32_t>(p.name.size()));
    w.put_bytes(p.name.data(), p.name.size());
    w.put(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.put(static_cast<std::uint64_t>(d));
    for (T x : p.tensor.data()) w.put(static_cast<float>(x));
  }
  return w.bytes();
}

template <class T = float>
SentenceEncoder<T> deserialize_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  char magic[sizeof(kCheckpointMagic)];
  r.get_bytes(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw FormatError("bad checkpoint magic at offset 0");
  const auto version_offset = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset " +
                      std::to_string(version_offset));
  const auto config_len = r.get<std::uint64_t>("config length");
  if (config_len > bytes.size())
    throw FormatError("config length " + std::to_string(config_len) + " exceeds file size at offset " +
                      std::to_string(r.offset() - 8));
  std::string config_text(config_len, '\0');
  const auto config_offset = r.offset();
  r.get_bytes(config_text.data(), config_len, "config");
  EncoderConfig cfg;
  try {
    cfg = nlohmann::json::parse(config_text).get<EncoderConfig>();
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid config JSON at offset " + std::to_string(config_offset) + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("invalid config at offset " + std::to_string(config_offset) + ": " + e.what());
  }

  Rng rng(0);
  SentenceEncoder<T> encoder(cfg, rng);
  auto params = encoder.parameters();
  const auto count_offset = r.offset();
  const auto count = r.get<std::uint64_t>("tensor count");
  if (count != params.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors but config implies " +
                      std::to_string(params.size()) + " (offset " + std::to_string(count_offset) + ")");
  for (auto& p : params) {
    const auto entry_offset = r.offset();
    const auto name_len = r.get<std::uint32_t>("name length");
    if (name_len > bytes.size()) throw FormatError("name length out of range at offset " + std::to_string(entry_offset));
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len, "tensor name");
    if (name != p.name)
      throw FormatError("expected tensor '" + p.name + "' but found '" + name + "' at offset " +
                        std::to_string(entry_offset));
    const auto rank = r.get<std::uint32_t>("rank");
    Shape dims;
    for (std::uint32_t i = 0; i < rank && i < 8; ++i) dims.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
    if (dims != p.tensor.shape())
      throw FormatError("tensor '" + name + "' has dims " + shape_str(dims) + " but config implies " +
                        shape_str(p.tensor.shape()) + " (offset " + std::to_string(entry_offset) + ")");
    auto values = p.tensor.data();
    std::vector<float> payload(values.size());
    r.get_bytes(payload.data(), payload.size() * sizeof(float), "tensor payload");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(payload[i]);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last tensor at offset " + std::to_string(r.offset()));
  return encoder;
}

template <class T>
void save_checkpoint(const SentenceEncoder<T>& encoder, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(encoder);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

template <class T = float>
SentenceEncoder<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(read_file_bytes(path));
}

/// FNV-1a 64-bit digest, used to compare checkpoints across runs.
inline std::uint64_t fnv1a64(const std::vector<char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace crosstill
