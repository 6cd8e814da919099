#pragma once

#include <span>
#include <vector>

#include "tbg/embeddings.hpp"
#include "tbg/graph.hpp"

namespace tbg {

enum class SemanticMode {
  PretrainCrossDomain,  // endpoints in different source domains
  FinetuneSrcTgt,       // exactly one endpoint in the target domain
  FinetuneTgtGlobal,    // at least one endpoint in the target domain
};

const char* semantic_mode_name(SemanticMode m);

struct Neighbor {
  NodeIndex node;
  double similarity;
};

// Per-query candidate suggestions, possibly merged from several searches.
struct NeighborLists {
  std::vector<NodeIndex> queries;
  std::vector<std::vector<Neighbor>> lists;

  void append(NodeIndex query, std::vector<Neighbor> list) {
    queries.push_back(query);
    lists.push_back(std::move(list));
  }
};

// Exact search: for each query its k highest-cosine candidates (self
// excluded), descending similarity, ties by ascending candidate index.
// Cosine against a zero vector is 0.
NeighborLists topk_cosine_neighbors(const TextEmbeddingMatrix& matrix,
                                    std::span<const NodeIndex> queries,
                                    std::span<const NodeIndex> candidates,
                                    int k);

// Thresholded same-kind similarity edges. Stored once per undirected pair
// with a < b; the set is symmetric by construction.
struct SemanticEdgeSet {
  struct Edge {
    NodeIndex a, b;
    double similarity;
  };
  std::vector<Edge> edges;
  SemanticMode mode = SemanticMode::PretrainCrossDomain;
  double gamma = 0.99;
  int k_cap = 20;

  std::vector<EdgePair> pairs() const {
    std::vector<EdgePair> out;
    out.reserve(edges.size());
    for (const auto& e : edges) out.emplace_back(e.a, e.b);
    return out;
  }
};

// Keeps pairs with similarity > gamma that satisfy the mode predicate,
// symmetrizes, then enforces the per-node cap by highest similarity (an
// edge survives only if both endpoints keep it).
SemanticEdgeSet build_semantic_edges(const NeighborLists& neighbors,
                                     double gamma, SemanticMode mode,
                                     std::span<const DomainId> domain_labels,
                                     std::span<const NodeKind> kind_labels,
                                     DomainId target_domain, int k_cap);

// Groups queries by (kind, domain), searches the mode-compatible candidate
// set for each group, and assembles the edge set.
SemanticEdgeSet build_mode_edges(const TextEmbeddingMatrix& matrix,
                                 std::span<const DomainId> domain_labels,
                                 std::span<const NodeKind> kind_labels,
                                 SemanticMode mode, DomainId target_domain,
                                 double gamma, int k_cap);

// TBGN neighbor-list cache (same header style as TBG-EMB).
struct NeighborCache {
  int k = 0;
  std::vector<std::string> query_keys;
  std::vector<std::vector<std::pair<std::string, float>>> lists;
};

std::string encode_neighbor_cache(const NeighborCache& c);
NeighborCache decode_neighbor_cache(const std::string& bytes,
                                    const std::string& what);
void write_neighbor_cache(const std::string& path, const NeighborCache& c);
NeighborCache read_neighbor_cache(const std::string& path);

}  // namespace tbg
