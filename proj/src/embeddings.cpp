#include "tbg/embeddings.hpp"

#include <cmath>

#include "tbg/serialize.hpp"

namespace tbg {

namespace {
constexpr char kMagic[4] = {'T', 'B', 'G', 'E'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

std::string encode_embedding_file(const EmbeddingFile& f) {
  if (f.values.size() != f.keys.size() * std::size_t(f.dim))
    throw Error("SHAPE", "embedding file: values do not match count x dim");
  for (std::size_t i = 0; i < f.values.size(); ++i)
    if (!std::isfinite(f.values[i]))
      throw Error("NON_FINITE",
                  "embedding file: non-finite value at flat index " +
                      std::to_string(i));
  BinaryWriter payload;
  payload.u16(kVersion);
  payload.u64(f.keys.size());
  payload.u32(f.dim);
  for (const auto& k : f.keys) payload.str(k);
  for (float v : f.values) payload.f32(v);

  BinaryWriter out;
  out.bytes(kMagic, 4);
  out.bytes(payload.data().data(), payload.size());
  out.u32(crc32_bytes(payload.data()));
  return out.take();
}

EmbeddingFile decode_embedding_file(const std::string& bytes,
                                    const std::string& what) {
  BinaryReader r(bytes, what);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw Error("BAD_MAGIC", what + ": not a TBG-EMB file (magic mismatch)");
  if (bytes.size() < 8) throw Error("TRUNCATED", what + ": no room for CRC");
  const std::string payload = bytes.substr(4, bytes.size() - 8);
  BinaryReader crc_tail(bytes.data() + bytes.size() - 4, 4, what);
  if (crc_tail.u32() != crc32_bytes(payload))
    throw Error("BAD_CRC", what + ": payload CRC32 mismatch");

  BinaryReader p(payload, what);
  const std::uint16_t version = p.u16();
  if (version != kVersion)
    throw Error("BAD_VERSION",
                what + ": unsupported TBG-EMB version " + std::to_string(version));
  const std::uint64_t count = p.u64();
  const std::uint32_t dim = p.u32();
  EmbeddingFile f;
  f.dim = dim;
  f.keys.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) f.keys.push_back(p.str());
  f.values.resize(count * dim);
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    const std::size_t file_off = 4 + p.offset();  // magic + payload position
    f.values[i] = p.f32();
    if (!std::isfinite(f.values[i]))
      throw Error("NON_FINITE", what + ": non-finite value at byte offset " +
                                    std::to_string(file_off));
  }
  if (!p.at_end())
    throw Error("TRAILING_BYTES", what + ": unexpected trailing payload bytes");
  return f;
}

void write_embedding_file(const std::string& path, const EmbeddingFile& f) {
  atomic_write_file(path, encode_embedding_file(f));
}

EmbeddingFile read_embedding_file(const std::string& path) {
  return decode_embedding_file(read_file(path), path);
}

TextEmbeddingMatrix read_embedding_matrix(std::span<const std::string> paths,
                                          const GraphUniverse& universe) {
  TextEmbeddingMatrix m;
  m.count = universe.size();
  std::vector<bool> seen(universe.size(), false);
  std::string tag;
  for (const auto& path : paths) {
    EmbeddingFile f = read_embedding_file(path);
    if (m.dim == 0) {
      m.dim = f.dim;
      m.values.assign(std::size_t(m.count) * m.dim, 0.0f);
    } else if (f.dim != m.dim) {
      throw Error("DIM_MISMATCH",
                  path + ": dim " + std::to_string(f.dim) +
                      " != previously loaded dim " + std::to_string(m.dim));
    }
    for (std::size_t i = 0; i < f.keys.size(); ++i) {
      auto id = universe.find_registry_key(f.keys[i]);
      if (!id)
        throw Error("UNKNOWN_KEY",
                    path + ": key '" + f.keys[i] + "' not in the universe");
      if (seen[*id])
        throw Error("DUPLICATE_KEY",
                    path + ": key '" + f.keys[i] + "' appears twice");
      seen[*id] = true;
      std::copy(f.values.begin() + i * m.dim, f.values.begin() + (i + 1) * m.dim,
                m.mutable_row(*id));
    }
    if (!tag.empty()) tag += "+";
    tag += path;
  }
  for (NodeIndex i = 0; i < universe.size(); ++i)
    if (!seen[i])
      throw Error("MISSING_ROW", "node '" + universe.registry_key(i) +
                                     "' has no embedding row");
  m.source_tag = tag;
  return m;
}

}  // namespace tbg
