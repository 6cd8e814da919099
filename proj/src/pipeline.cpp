#include "tbg/pipeline.hpp"

#include <algorithm>

namespace tbg {

std::vector<std::pair<NodeIndex, NodeIndex>> domain_train_edges(
    const SplitDataset& split, DomainId domain) {
  std::vector<std::pair<NodeIndex, NodeIndex>> edges;
  for (const auto& r : split.train)
    if (r.domain == domain) edges.emplace_back(r.user, r.item);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

namespace {

// Interaction graph of one domain in domain-local coordinates.
Graph domain_graph_local(const GraphUniverse& universe,
                         const SplitDataset& split, DomainId d) {
  const auto range = universe.domain_range(d);
  const NodeIndex n = range.end - range.begin;
  std::vector<EdgePair> pairs;
  for (const auto& [u, v] : domain_train_edges(split, d))
    pairs.emplace_back(u - range.begin, v - range.begin);
  return build_csr(pairs, n);
}

std::vector<DomainId> label_domains(const GraphUniverse& u) {
  std::vector<DomainId> v(u.size());
  for (NodeIndex i = 0; i < u.size(); ++i) v[i] = u.domain_of(i);
  return v;
}

std::vector<NodeKind> label_kinds(const GraphUniverse& u) {
  std::vector<NodeKind> v(u.size());
  for (NodeIndex i = 0; i < u.size(); ++i) v[i] = u.kind_of(i);
  return v;
}

}  // namespace

std::vector<DomainSlice> PretrainAssembly::domain_slices(double alpha,
                                                         int layers) const {
  std::vector<DomainSlice> out;
  for (std::size_t i = 0; i < domain_graphs.size(); ++i)
    out.push_back({{&domain_norm[i], alpha, layers}, domain_offsets[i]});
  return out;
}

PropagationPlan PretrainAssembly::global_plan(double alpha, int layers) const {
  return {&global_norm, alpha, layers};
}

PretrainAssembly assemble_pretrain(const GraphUniverse& universe,
                                   const SplitDataset& split,
                                   const TextEmbeddingMatrix& text,
                                   double gamma, int k_cap) {
  PretrainAssembly a;
  for (DomainId d = 0; d < universe.num_domains(); ++d) {
    a.domains.push_back(d);
    a.domain_offsets.push_back(universe.domain_range(d).begin);
    a.domain_graphs.push_back(domain_graph_local(universe, split, d));
    a.domain_norm.push_back(symmetric_normalize(a.domain_graphs.back()));
  }
  const auto domains = label_domains(universe);
  const auto kinds = label_kinds(universe);
  // Target id is irrelevant for the pretrain mode predicate; pass a
  // sentinel no node carries.
  const auto no_target = static_cast<DomainId>(universe.num_domains());
  a.edges = build_mode_edges(text, domains, kinds,
                             SemanticMode::PretrainCrossDomain, no_target,
                             gamma, k_cap);
  std::vector<GraphPart> parts;
  for (std::size_t i = 0; i < a.domain_graphs.size(); ++i)
    parts.push_back({&a.domain_graphs[i], a.domain_offsets[i]});
  const auto extra = a.edges.pairs();
  a.global_graph = merge_graphs(parts, extra, universe.size());
  a.global_norm = symmetric_normalize(a.global_graph);
  return a;
}

FinetuneAssembly assemble_finetune(const GraphUniverse& universe,
                                   DomainId target_domain,
                                   const SplitDataset& source_split,
                                   const SplitDataset& target_split,
                                   const TextEmbeddingMatrix& text,
                                   double gamma, int k_cap) {
  FinetuneAssembly a;
  a.target_domain = target_domain;
  const auto trange = universe.domain_range(target_domain);
  if (trange.end != universe.size())
    throw Error("TARGET_ORDER",
                "target domain nodes must be registered after source nodes");
  a.target_universe_begin = trange.begin;
  a.n_target = trange.end - trange.begin;
  a.n_source = trange.begin;

  // Labels and text rows in stack coordinates (target block first).
  a.stack_domains.resize(universe.size());
  a.stack_kinds.resize(universe.size());
  a.text_stack.dim = text.dim;
  a.text_stack.count = universe.size();
  a.text_stack.values.resize(std::size_t(universe.size()) * text.dim);
  a.text_stack.source_tag = text.source_tag + "|stacked";
  for (NodeIndex u = 0; u < universe.size(); ++u) {
    const NodeIndex s = a.stack_of_universe(u);
    a.stack_domains[s] = universe.domain_of(u);
    a.stack_kinds[s] = universe.kind_of(u);
    const auto row = text.row(u);
    std::copy(row.begin(), row.end(),
              a.text_stack.values.begin() + std::size_t(s) * text.dim);
  }

  // Target interaction subgraph; local coordinates coincide with the stack.
  a.target_graph = domain_graph_local(universe, target_split, target_domain);

  // Source subgraphs and the pretrain semantic edges are rebuilt exactly as
  // in pre-training (universe coordinates), then shifted into the stack.
  std::vector<Graph> src_graphs;
  std::vector<GraphPart> src_parts_stack;
  std::vector<NodeIndex> src_offsets;
  for (DomainId d = 0; d < universe.num_domains(); ++d) {
    if (d == target_domain) continue;
    src_graphs.push_back(domain_graph_local(universe, source_split, d));
    src_offsets.push_back(universe.domain_range(d).begin);
  }
  src_parts_stack.reserve(src_graphs.size());
  for (std::size_t i = 0; i < src_graphs.size(); ++i)
    src_parts_stack.push_back({&src_graphs[i], src_offsets[i] + a.n_target});

  // Pretrain-mode edges over source nodes only, then shifted by n_target.
  std::vector<DomainId> src_domains(a.n_source);
  std::vector<NodeKind> src_kinds(a.n_source);
  TextEmbeddingMatrix src_text;
  src_text.dim = text.dim;
  src_text.count = a.n_source;
  src_text.values.assign(text.values.begin(),
                         text.values.begin() + std::size_t(a.n_source) * text.dim);
  for (NodeIndex u = 0; u < a.n_source; ++u) {
    src_domains[u] = universe.domain_of(u);
    src_kinds[u] = universe.kind_of(u);
  }
  SemanticEdgeSet pre_edges =
      build_mode_edges(src_text, src_domains, src_kinds,
                       SemanticMode::PretrainCrossDomain, target_domain, gamma,
                       k_cap);
  std::vector<EdgePair> pre_pairs_stack;
  for (const auto& e : pre_edges.edges)
    pre_pairs_stack.emplace_back(e.a + a.n_target, e.b + a.n_target);

  // Fingerprints of the pre-training graphs as the checkpoint recorded them
  // (source universe coordinates).
  for (const auto& g : src_graphs)
    a.source_domain_fingerprints.push_back(graph_fingerprint(g));
  {
    std::vector<GraphPart> src_parts_universe;
    for (std::size_t i = 0; i < src_graphs.size(); ++i)
      src_parts_universe.push_back({&src_graphs[i], src_offsets[i]});
    const Graph global_pre = merge_graphs(src_parts_universe,
                                          pre_edges.pairs(), a.n_source);
    a.global_pre_fingerprint = graph_fingerprint(global_pre);
  }

  a.src_tgt_edges =
      build_mode_edges(a.text_stack, a.stack_domains, a.stack_kinds,
                       SemanticMode::FinetuneSrcTgt, target_domain, gamma, k_cap);
  a.tgt_edges =
      build_mode_edges(a.text_stack, a.stack_domains, a.stack_kinds,
                       SemanticMode::FinetuneTgtGlobal, target_domain, gamma,
                       k_cap);

  // Cross-domain local graph: target + sources + src-tgt semantic edges.
  {
    std::vector<GraphPart> parts = src_parts_stack;
    parts.insert(parts.begin(), {&a.target_graph, 0});
    a.cross_graph = merge_graphs(parts, a.src_tgt_edges.pairs(), a.total());
    a.cross_norm = symmetric_normalize(a.cross_graph);
  }

  // Enhanced global graph: pretrain global + target + tgt-involving edges.
  {
    std::vector<GraphPart> parts = src_parts_stack;
    parts.insert(parts.begin(), {&a.target_graph, 0});
    std::vector<EdgePair> extra = pre_pairs_stack;
    const auto tgt_pairs = a.tgt_edges.pairs();
    extra.insert(extra.end(), tgt_pairs.begin(), tgt_pairs.end());
    a.global_fine_graph = merge_graphs(parts, extra, a.total());
    a.global_fine_norm = symmetric_normalize(a.global_fine_graph);
  }
  return a;
}

}  // namespace tbg
