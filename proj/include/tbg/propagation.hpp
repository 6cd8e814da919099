#pragma once

#include <span>
#include <vector>

#include "tbg/graph.hpp"

namespace tbg {

// Residual propagation H^(l+1) = (1-alpha) * A_hat * H^(l) + alpha * H^(l),
// applied `layers` times. alpha = 1 is the bitwise identity.
struct PropagationPlan {
  const NormalizedGraph* graph = nullptr;
  double alpha = 0.5;
  int layers = 2;

  void validate() const {
    if (graph == nullptr) throw Error("PLAN", "propagation plan has no graph");
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw Error("PLAN", "alpha must be in [0,1]");
    if (layers < 1) throw Error("PLAN", "layers must be >= 1");
  }
};

// Per-layer inputs retained for the backward pass, plus enough identity to
// reject stale or mismatched caches.
struct LayerCache {
  std::uint64_t graph_fingerprint = 0;
  double alpha = 0.5;
  int layers = 0;
  std::vector<Matrix> layer_inputs;  // H^(0) .. H^(L-1)
};

Matrix grec_forward(const PropagationPlan& plan, const Matrix& h0,
                    LayerCache* cache = nullptr);
Matrix32 grec_forward(const PropagationPlan& plan, const Matrix32& h0);

// The operator is self-adjoint (A_hat symmetric), so the exact adjoint is
// the forward operator applied to the output gradient.
Matrix grec_backward(const PropagationPlan& plan, const LayerCache& cache,
                     const Matrix& grad_out);

// Pre-training: each domain block of the local table propagates on its own
// subgraph; the global table propagates on the semantic global graph. The
// two tables never mix here.
struct DomainSlice {
  PropagationPlan plan;  // graph in domain-local coordinates
  NodeIndex offset;      // first row of this domain in the stacked table
};

struct HierarchicalForward {
  Matrix local_out;
  Matrix global_out;
  std::vector<LayerCache> domain_caches;
  LayerCache global_cache;
};

HierarchicalForward hierarchical_pretrain_forward(
    std::span<const DomainSlice> domain_plans, const PropagationPlan& global_plan,
    const Matrix& h_local, const Matrix& h_global);

// Adjoint of the hierarchical forward; returns (grad_h_local, grad_h_global).
std::pair<Matrix, Matrix> hierarchical_pretrain_backward(
    std::span<const DomainSlice> domain_plans, const PropagationPlan& global_plan,
    const HierarchicalForward& fwd, const Matrix& grad_local_out,
    const Matrix& grad_global_out);

// Fine-tuning: one plan over the cross-domain local graph, one over the
// enhanced global graph. Tables arrive stacked target-block-first.
struct FinetuneForward {
  Matrix local_out;
  Matrix global_out;
  LayerCache local_cache;
  LayerCache global_cache;
};

FinetuneForward finetune_forward(const PropagationPlan& cross_plan,
                                 const PropagationPlan& global_fine_plan,
                                 const Matrix& h_local_stack,
                                 const Matrix& h_global_stack);

}  // namespace tbg
