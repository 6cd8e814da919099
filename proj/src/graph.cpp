#include "tbg/graph.hpp"

#include <algorithm>
#include <cmath>

namespace tbg {

namespace {

Graph csr_from_directed(std::vector<EdgePair>&& directed, NodeIndex num_nodes) {
  std::sort(directed.begin(), directed.end());
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());

  Graph g;
  g.num_nodes = num_nodes;
  g.row_offsets.assign(static_cast<std::size_t>(num_nodes) + 1, 0);
  g.col_indices.reserve(directed.size());
  for (const auto& [a, b] : directed) g.row_offsets[a + 1]++;
  for (NodeIndex v = 0; v < num_nodes; ++v)
    g.row_offsets[v + 1] += g.row_offsets[v];
  for (const auto& [a, b] : directed) g.col_indices.push_back(b);
  g.edge_values.assign(g.col_indices.size(), 1.0);
  return g;
}

}  // namespace

Graph build_csr(std::span<const EdgePair> edges, NodeIndex num_nodes) {
  std::vector<EdgePair> directed;
  directed.reserve(edges.size() * 2);
  for (const auto& [a, b] : edges) {
    if (a >= num_nodes || b >= num_nodes)
      throw Error("GRAPH_RANGE",
                  "edge endpoint out of range: (" + std::to_string(a) + "," +
                      std::to_string(b) + ") with num_nodes=" +
                      std::to_string(num_nodes));
    if (a == b)
      throw Error("GRAPH_SELF_LOOP",
                  "self-loop pair rejected: (" + std::to_string(a) + "," +
                      std::to_string(b) + ")");
    directed.emplace_back(a, b);
    directed.emplace_back(b, a);
  }
  return csr_from_directed(std::move(directed), num_nodes);
}

NormalizedGraph symmetric_normalize(const Graph& g) {
  NormalizedGraph n;
  n.num_nodes = g.num_nodes;
  n.row_offsets = g.row_offsets;
  n.col_indices = g.col_indices;
  n.edge_values.resize(g.col_indices.size());
  n.structure_fingerprint = graph_fingerprint(g);
  for (NodeIndex v = 0; v < g.num_nodes; ++v) {
    const double dv = static_cast<double>(g.degree(v));
    for (std::uint64_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e) {
      const double du = static_cast<double>(g.degree(g.col_indices[e]));
      n.edge_values[e] = 1.0 / std::sqrt(dv * du);
    }
  }
  return n;
}

std::uint64_t graph_fingerprint(const Graph& g) {
  std::uint64_t h = fnv1a64(&g.num_nodes, sizeof(g.num_nodes));
  h = fnv1a64(g.row_offsets.data(), g.row_offsets.size() * sizeof(std::uint64_t), h);
  h = fnv1a64(g.col_indices.data(), g.col_indices.size() * sizeof(NodeIndex), h);
  return h;
}

Graph merge_graphs(std::span<const GraphPart> parts,
                   std::span<const EdgePair> extra_edges,
                   NodeIndex total_nodes) {
  // Validate that part ranges are disjoint and inside [0, total_nodes).
  std::vector<std::pair<NodeIndex, NodeIndex>> ranges;
  for (const auto& p : parts) {
    const NodeIndex lo = p.offset;
    const std::uint64_t hi64 =
        static_cast<std::uint64_t>(p.offset) + p.graph->num_nodes;
    if (hi64 > total_nodes)
      throw Error("GRAPH_RANGE", "part node range exceeds merged node count");
    ranges.emplace_back(lo, static_cast<NodeIndex>(hi64));
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i)
    if (ranges[i].first < ranges[i - 1].second)
      throw Error("GRAPH_OVERLAP", "overlapping node ranges in merge_graphs");

  std::vector<EdgePair> directed;
  for (const auto& p : parts) {
    const Graph& g = *p.graph;
    for (NodeIndex v = 0; v < g.num_nodes; ++v)
      for (std::uint64_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e)
        directed.emplace_back(v + p.offset, g.col_indices[e] + p.offset);
  }
  for (const auto& [a, b] : extra_edges) {
    if (a >= total_nodes || b >= total_nodes)
      throw Error("GRAPH_RANGE",
                  "extra edge endpoint out of merged range: (" +
                      std::to_string(a) + "," + std::to_string(b) + ")");
    if (a == b)
      throw Error("GRAPH_SELF_LOOP", "self-loop in extra edges");
    directed.emplace_back(a, b);
    directed.emplace_back(b, a);
  }
  return csr_from_directed(std::move(directed), total_nodes);
}

Graph merge_graphs(std::span<const Graph* const> parts,
                   std::span<const EdgePair> extra_edges) {
  std::vector<GraphPart> packed;
  NodeIndex offset = 0;
  for (const Graph* g : parts) {
    packed.push_back({g, offset});
    offset += g->num_nodes;
  }
  return merge_graphs(packed, extra_edges, offset);
}

}  // namespace tbg
