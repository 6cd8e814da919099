#pragma once

#include <span>
#include <vector>

#include "tbg/embeddings.hpp"
#include "tbg/graph.hpp"
#include "tbg/ingest.hpp"
#include "tbg/propagation.hpp"
#include "tbg/semantic.hpp"

namespace tbg {

// Pre-training graphs, universe coordinates (sources only): one interaction
// subgraph per domain in local coordinates plus the semantic global graph.
struct PretrainAssembly {
  std::vector<DomainId> domains;          // offset order
  std::vector<NodeIndex> domain_offsets;  // universe offset per domain
  std::vector<Graph> domain_graphs;       // local coordinates
  std::vector<NormalizedGraph> domain_norm;
  Graph global_graph;  // union of subgraphs + pretrain semantic edges
  NormalizedGraph global_norm;
  SemanticEdgeSet edges;

  std::vector<DomainSlice> domain_slices(double alpha, int layers) const;
  PropagationPlan global_plan(double alpha, int layers) const;
};

PretrainAssembly assemble_pretrain(const GraphUniverse& universe,
                                   const SplitDataset& split,
                                   const TextEmbeddingMatrix& text,
                                   double gamma, int k_cap);

// Fine-tuning graphs in stack coordinates: the target block comes first
// ([0, n_target)), then all source nodes in universe order shifted by
// n_target. Universe ids themselves keep sources first so checkpoint ids
// stay stable.
struct FinetuneAssembly {
  DomainId target_domain = 0;
  NodeIndex n_target = 0;
  NodeIndex n_source = 0;
  NodeIndex target_universe_begin = 0;

  Graph target_graph;  // target-local coordinates (== stack coordinates)
  Graph cross_graph;   // stack coords: target + sources + src-tgt edges
  NormalizedGraph cross_norm;
  Graph global_fine_graph;  // stack coords: pretrain global + target + tgt edges
  NormalizedGraph global_fine_norm;
  SemanticEdgeSet src_tgt_edges;  // stack coords
  SemanticEdgeSet tgt_edges;      // stack coords

  TextEmbeddingMatrix text_stack;       // rows reordered to stack coords
  std::vector<DomainId> stack_domains;  // labels in stack coords
  std::vector<NodeKind> stack_kinds;

  // Reconstructions of the pre-training graphs, for checkpoint validation.
  std::vector<std::uint64_t> source_domain_fingerprints;  // domain id order
  std::uint64_t global_pre_fingerprint = 0;

  NodeIndex total() const { return n_target + n_source; }
  NodeIndex stack_of_universe(NodeIndex u) const {
    return u >= target_universe_begin ? u - target_universe_begin
                                      : u + n_target;
  }
  NodeIndex universe_of_stack(NodeIndex s) const {
    return s < n_target ? s + target_universe_begin : s - n_target;
  }

  PropagationPlan cross_plan(double alpha, int layers) const {
    return {&cross_norm, alpha, layers};
  }
  PropagationPlan global_plan(double alpha, int layers) const {
    return {&global_fine_norm, alpha, layers};
  }
};

// `universe` holds the source domains first and the target domain last.
// The source split must be the one the checkpoint was trained on; the
// target split governs the target interaction graph.
FinetuneAssembly assemble_finetune(const GraphUniverse& universe,
                                   DomainId target_domain,
                                   const SplitDataset& source_split,
                                   const SplitDataset& target_split,
                                   const TextEmbeddingMatrix& text,
                                   double gamma, int k_cap);

// Deduplicated per-domain train edge set (user, item), sorted.
std::vector<std::pair<NodeIndex, NodeIndex>> domain_train_edges(
    const SplitDataset& split, DomainId domain);

}  // namespace tbg
