#include "tbg/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tbg/serialize.hpp"

namespace tbg {

const char* semantic_mode_name(SemanticMode m) {
  switch (m) {
    case SemanticMode::PretrainCrossDomain: return "pretrain-cross-domain";
    case SemanticMode::FinetuneSrcTgt: return "finetune-src-tgt";
    case SemanticMode::FinetuneTgtGlobal: return "finetune-tgt-global";
  }
  return "?";
}

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

bool mode_ok(SemanticMode mode, DomainId da, DomainId db, DomainId target) {
  switch (mode) {
    case SemanticMode::PretrainCrossDomain:
      return da != db;
    case SemanticMode::FinetuneSrcTgt:
      return (da == target) != (db == target);
    case SemanticMode::FinetuneTgtGlobal:
      return da == target || db == target;
  }
  return false;
}

}  // namespace

NeighborLists topk_cosine_neighbors(const TextEmbeddingMatrix& matrix,
                                    std::span<const NodeIndex> queries,
                                    std::span<const NodeIndex> candidates,
                                    int k) {
  if (k < 1) throw Error("BAD_K", "topk_cosine_neighbors: k must be >= 1");
  if (queries.empty() || candidates.empty())
    throw Error("EMPTY_INPUT", "topk_cosine_neighbors: empty query or candidate set");

  NeighborLists out;
  out.queries.reserve(queries.size());
  for (const NodeIndex q : queries) {
    std::vector<Neighbor> scored;
    scored.reserve(candidates.size());
    const auto qrow = matrix.row(q);
    for (const NodeIndex c : candidates) {
      if (c == q) continue;
      scored.push_back({c, cosine(qrow, matrix.row(c))});
    }
    auto better = [](const Neighbor& x, const Neighbor& y) {
      if (x.similarity != y.similarity) return x.similarity > y.similarity;
      return x.node < y.node;
    };
    const std::size_t take = std::min<std::size_t>(scored.size(), std::size_t(k));
    std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), better);
    scored.resize(take);
    out.append(q, std::move(scored));
  }
  return out;
}

SemanticEdgeSet build_semantic_edges(const NeighborLists& neighbors,
                                     double gamma, SemanticMode mode,
                                     std::span<const DomainId> domain_labels,
                                     std::span<const NodeKind> kind_labels,
                                     DomainId target_domain, int k_cap) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw Error("BAD_GAMMA", "gamma must be in (0,1)");
  if (k_cap < 1) throw Error("BAD_K", "k_cap must be >= 1");

  // Threshold + predicate; collect undirected pairs once (a < b).
  std::map<std::pair<NodeIndex, NodeIndex>, double> kept;
  for (std::size_t qi = 0; qi < neighbors.queries.size(); ++qi) {
    const NodeIndex q = neighbors.queries[qi];
    for (const auto& nb : neighbors.lists[qi]) {
      if (!(nb.similarity > gamma)) continue;
      if (nb.node == q) continue;
      if (kind_labels[q] != kind_labels[nb.node]) continue;
      if (!mode_ok(mode, domain_labels[q], domain_labels[nb.node], target_domain))
        continue;
      const NodeIndex lo = std::min(q, nb.node);
      const NodeIndex hi = std::max(q, nb.node);
      kept.emplace(std::make_pair(lo, hi), nb.similarity);
    }
  }

  // Per-node cap by highest similarity; an edge must be kept on both sides.
  std::map<NodeIndex, std::vector<std::pair<double, NodeIndex>>> adj;
  for (const auto& [pair, sim] : kept) {
    adj[pair.first].emplace_back(sim, pair.second);
    adj[pair.second].emplace_back(sim, pair.first);
  }
  auto rank_order = [](const std::pair<double, NodeIndex>& x,
                       const std::pair<double, NodeIndex>& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  };
  std::map<std::pair<NodeIndex, NodeIndex>, int> keep_votes;
  for (auto& [node, list] : adj) {
    std::sort(list.begin(), list.end(), rank_order);
    const std::size_t take = std::min<std::size_t>(list.size(), std::size_t(k_cap));
    for (std::size_t i = 0; i < take; ++i) {
      const NodeIndex lo = std::min(node, list[i].second);
      const NodeIndex hi = std::max(node, list[i].second);
      keep_votes[std::make_pair(lo, hi)]++;
    }
  }

  SemanticEdgeSet out;
  out.mode = mode;
  out.gamma = gamma;
  out.k_cap = k_cap;
  for (const auto& [pair, sim] : kept)
    if (keep_votes[pair] == 2) out.edges.push_back({pair.first, pair.second, sim});
  return out;
}

SemanticEdgeSet build_mode_edges(const TextEmbeddingMatrix& matrix,
                                 std::span<const DomainId> domain_labels,
                                 std::span<const NodeKind> kind_labels,
                                 SemanticMode mode, DomainId target_domain,
                                 double gamma, int k_cap) {
  const std::size_t n = domain_labels.size();
  NeighborLists merged;
  for (const NodeKind kind : {NodeKind::User, NodeKind::Item}) {
    // Candidate sets depend only on (kind, query domain is/is not target,
    // query domain id), so group queries by domain.
    std::map<DomainId, std::vector<NodeIndex>> by_domain;
    for (std::size_t i = 0; i < n; ++i)
      if (kind_labels[i] == kind)
        by_domain[domain_labels[i]].push_back(static_cast<NodeIndex>(i));

    for (const auto& [dom, queries] : by_domain) {
      std::vector<NodeIndex> candidates;
      for (std::size_t i = 0; i < n; ++i) {
        if (kind_labels[i] != kind) continue;
        if (!mode_ok(mode, dom, domain_labels[i], target_domain)) continue;
        candidates.push_back(static_cast<NodeIndex>(i));
      }
      if (candidates.empty()) continue;
      NeighborLists part =
          topk_cosine_neighbors(matrix, queries, candidates, k_cap);
      for (std::size_t i = 0; i < part.queries.size(); ++i)
        merged.append(part.queries[i], std::move(part.lists[i]));
    }
  }
  return build_semantic_edges(merged, gamma, mode, domain_labels, kind_labels,
                              target_domain, k_cap);
}

namespace {
constexpr char kMagicN[4] = {'T', 'B', 'G', 'N'};
constexpr std::uint16_t kVersionN = 1;
}  // namespace

std::string encode_neighbor_cache(const NeighborCache& c) {
  BinaryWriter payload;
  payload.u16(kVersionN);
  payload.u64(c.query_keys.size());
  payload.u32(static_cast<std::uint32_t>(c.k));
  for (const auto& k : c.query_keys) payload.str(k);
  for (const auto& list : c.lists) {
    payload.u32(static_cast<std::uint32_t>(list.size()));
    for (const auto& [key, sim] : list) {
      payload.str(key);
      payload.f32(sim);
    }
  }
  BinaryWriter out;
  out.bytes(kMagicN, 4);
  out.bytes(payload.data().data(), payload.size());
  out.u32(crc32_bytes(payload.data()));
  return out.take();
}

NeighborCache decode_neighbor_cache(const std::string& bytes,
                                    const std::string& what) {
  BinaryReader r(bytes, what);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagicN, 4) != 0)
    throw Error("BAD_MAGIC", what + ": not a TBGN file");
  if (bytes.size() < 8) throw Error("TRUNCATED", what + ": no room for CRC");
  const std::string payload = bytes.substr(4, bytes.size() - 8);
  BinaryReader crc_tail(bytes.data() + bytes.size() - 4, 4, what);
  if (crc_tail.u32() != crc32_bytes(payload))
    throw Error("BAD_CRC", what + ": payload CRC32 mismatch");

  BinaryReader p(payload, what);
  if (p.u16() != kVersionN)
    throw Error("BAD_VERSION", what + ": unsupported TBGN version");
  const std::uint64_t count = p.u64();
  NeighborCache c;
  c.k = static_cast<int>(p.u32());
  for (std::uint64_t i = 0; i < count; ++i) c.query_keys.push_back(p.str());
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t m = p.u32();
    std::vector<std::pair<std::string, float>> list;
    list.reserve(m);
    for (std::uint32_t j = 0; j < m; ++j) {
      std::string key = p.str();
      const float sim = p.f32();
      list.emplace_back(std::move(key), sim);
    }
    c.lists.push_back(std::move(list));
  }
  if (!p.at_end())
    throw Error("TRAILING_BYTES", what + ": unexpected trailing payload bytes");
  return c;
}

void write_neighbor_cache(const std::string& path, const NeighborCache& c) {
  atomic_write_file(path, encode_neighbor_cache(c));
}

NeighborCache read_neighbor_cache(const std::string& path) {
  return decode_neighbor_cache(read_file(path), path);
}

}  // namespace tbg
