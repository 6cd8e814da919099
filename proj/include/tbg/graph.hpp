#pragma once

#include <span>
#include <utility>
#include <vector>

#include "tbg/common.hpp"

namespace tbg {

using EdgePair = std::pair<NodeIndex, NodeIndex>;

// Undirected graph in CSR form. Invariants: symmetric (both directions
// stored), no self loops, no duplicates, columns sorted within each row.
// Interaction and semantic edges all carry weight 1 until normalization.
struct Graph {
  NodeIndex num_nodes = 0;
  std::vector<std::uint64_t> row_offsets;  // size num_nodes + 1
  std::vector<NodeIndex> col_indices;
  std::vector<double> edge_values;

  std::uint64_t stored_entries() const { return col_indices.size(); }
  std::uint64_t undirected_edges() const { return col_indices.size() / 2; }
  NodeIndex degree(NodeIndex v) const {
    return static_cast<NodeIndex>(row_offsets[v + 1] - row_offsets[v]);
  }
  std::span<const NodeIndex> neighbors(NodeIndex v) const {
    return {col_indices.data() + row_offsets[v],
            col_indices.data() + row_offsets[v + 1]};
  }
};

// Same CSR layout, edge values replaced by 1/sqrt(deg(a)*deg(b)).
// Rows of zero-degree nodes are empty.
struct NormalizedGraph {
  NodeIndex num_nodes = 0;
  std::vector<std::uint64_t> row_offsets;
  std::vector<NodeIndex> col_indices;
  std::vector<double> edge_values;
  std::uint64_t structure_fingerprint = 0;  // fingerprint of the source Graph
};

// Deduplicates, symmetrizes and sorts. Self loops and out-of-range
// endpoints are construction errors.
Graph build_csr(std::span<const EdgePair> edges, NodeIndex num_nodes);

NormalizedGraph symmetric_normalize(const Graph& g);

// Hash of the CSR structure (node count, offsets, columns).
std::uint64_t graph_fingerprint(const Graph& g);

struct GraphPart {
  const Graph* graph;
  NodeIndex offset;  // node range in the merged graph: [offset, offset+n)
};

// Disjoint union of parts plus extra (semantic) edges, symmetrized. A
// semantic edge that duplicates an interaction edge collapses to a single
// unweighted edge.
Graph merge_graphs(std::span<const GraphPart> parts,
                   std::span<const EdgePair> extra_edges,
                   NodeIndex total_nodes);

// Convenience overload: parts packed back to back in the given order.
Graph merge_graphs(std::span<const Graph* const> parts,
                   std::span<const EdgePair> extra_edges);

}  // namespace tbg
