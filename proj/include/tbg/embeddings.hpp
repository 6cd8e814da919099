#pragma once

#include <span>
#include <string>
#include <vector>

#include "tbg/universe.hpp"

namespace tbg {

// Frozen semantic vectors, one row per registered node. Values are binary32
// end to end: ingestion must never alter a bit.
struct TextEmbeddingMatrix {
  std::uint32_t dim = 0;
  NodeIndex count = 0;
  std::vector<float> values;  // count x dim
  std::string source_tag;

  std::span<const float> row(NodeIndex i) const {
    return {values.data() + std::size_t(i) * dim, dim};
  }
  float* mutable_row(NodeIndex i) { return values.data() + std::size_t(i) * dim; }
};

// On-disk TBG-EMB content before key resolution. Keys are either universe
// registry keys ("domain|u|key") or opaque cache keys (prompt hashes).
struct EmbeddingFile {
  std::uint32_t dim = 0;
  std::vector<std::string> keys;
  std::vector<float> values;  // keys.size() x dim
};

std::string encode_embedding_file(const EmbeddingFile& f);
EmbeddingFile decode_embedding_file(const std::string& bytes,
                                    const std::string& what);
void write_embedding_file(const std::string& path, const EmbeddingFile& f);
EmbeddingFile read_embedding_file(const std::string& path);

// Reads one or more TBG-EMB files and resolves every key against the
// universe registry. Every registered node must end up with exactly one row.
TextEmbeddingMatrix read_embedding_matrix(std::span<const std::string> paths,
                                          const GraphUniverse& universe);

}  // namespace tbg
