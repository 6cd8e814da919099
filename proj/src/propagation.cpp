#include "tbg/propagation.hpp"

#include <cmath>

namespace tbg {

namespace {

// One layer: out = (1-alpha) * A_hat * in + alpha * in. Each output row is
// reduced sequentially in column order, so results do not depend on any
// parallel schedule.
template <typename S>
void grec_layer(const NormalizedGraph& g, double alpha, const Mat<S>& in,
                Mat<S>& out) {
  const std::size_t dim = in.cols;
  const S a = static_cast<S>(alpha);
  const S one_minus_a = static_cast<S>(1.0 - alpha);
  for (NodeIndex v = 0; v < g.num_nodes; ++v) {
    const S* src = in.row(v);
    S* dst = out.row(v);
    for (std::size_t j = 0; j < dim; ++j) dst[j] = a * src[j];
    for (std::uint64_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e) {
      const S w = one_minus_a * static_cast<S>(g.edge_values[e]);
      const S* nb = in.row(g.col_indices[e]);
      for (std::size_t j = 0; j < dim; ++j) dst[j] += w * nb[j];
    }
  }
}

template <typename S>
Mat<S> grec_apply(const PropagationPlan& plan, const Mat<S>& h0,
                  std::vector<Matrix>* keep_inputs) {
  plan.validate();
  const NormalizedGraph& g = *plan.graph;
  if (h0.rows != g.num_nodes)
    throw Error("SHAPE", "propagation input has " + std::to_string(h0.rows) +
                             " rows, graph has " + std::to_string(g.num_nodes) +
                             " nodes");
  if (plan.alpha == 1.0) {
    // Pure residual: identity, bit for bit.
    if (keep_inputs)
      for (int l = 0; l < plan.layers; ++l) {
        if constexpr (std::is_same_v<S, double>) keep_inputs->push_back(h0);
      }
    return h0;
  }
  Mat<S> cur = h0;
  Mat<S> next(h0.rows, h0.cols);
  for (int l = 0; l < plan.layers; ++l) {
    if (keep_inputs) {
      if constexpr (std::is_same_v<S, double>) keep_inputs->push_back(cur);
    }
    grec_layer(g, plan.alpha, cur, next);
    std::swap(cur, next);
  }
  return cur;
}

}  // namespace

Matrix grec_forward(const PropagationPlan& plan, const Matrix& h0,
                    LayerCache* cache) {
  std::vector<Matrix> inputs;
  Matrix out = grec_apply(plan, h0, cache ? &inputs : nullptr);
  if (cache) {
    cache->graph_fingerprint = plan.graph->structure_fingerprint;
    cache->alpha = plan.alpha;
    cache->layers = plan.layers;
    cache->layer_inputs = std::move(inputs);
  }
  return out;
}

Matrix32 grec_forward(const PropagationPlan& plan, const Matrix32& h0) {
  return grec_apply(plan, h0, nullptr);
}

Matrix grec_backward(const PropagationPlan& plan, const LayerCache& cache,
                     const Matrix& grad_out) {
  plan.validate();
  if (cache.graph_fingerprint != plan.graph->structure_fingerprint ||
      cache.alpha != plan.alpha || cache.layers != plan.layers ||
      static_cast<int>(cache.layer_inputs.size()) != plan.layers)
    throw Error("CACHE_MISMATCH",
                "layer cache does not match the propagation plan");
  if (!cache.layer_inputs.empty() &&
      !cache.layer_inputs.front().same_shape(grad_out))
    throw Error("SHAPE", "gradient shape does not match cached forward");
  return grec_apply(plan, grad_out, nullptr);
}

namespace {

void check_partition(std::span<const DomainSlice> domain_plans,
                     NodeIndex total) {
  NodeIndex covered = 0;
  for (const auto& s : domain_plans) {
    if (s.offset != covered)
      throw Error("PARTITION", "domain slices must tile the table in order");
    covered += s.plan.graph->num_nodes;
  }
  if (covered != total)
    throw Error("PARTITION",
                "global graph has " + std::to_string(total) +
                    " nodes but domain subgraphs cover " +
                    std::to_string(covered));
}

Matrix slice_rows(const Matrix& m, NodeIndex begin, NodeIndex count) {
  Matrix s(count, m.cols);
  std::copy(m.row(begin), m.row(begin) + std::size_t(count) * m.cols,
            s.a.begin());
  return s;
}

void paste_rows(Matrix& dst, const Matrix& src, NodeIndex begin) {
  std::copy(src.a.begin(), src.a.end(), dst.row(begin));
}

}  // namespace

HierarchicalForward hierarchical_pretrain_forward(
    std::span<const DomainSlice> domain_plans, const PropagationPlan& global_plan,
    const Matrix& h_local, const Matrix& h_global) {
  global_plan.validate();
  if (h_local.rows != h_global.rows || h_local.cols != h_global.cols)
    throw Error("SHAPE", "local and global tables must have equal shape");
  check_partition(domain_plans, static_cast<NodeIndex>(h_local.rows));
  if (h_global.rows != global_plan.graph->num_nodes)
    throw Error("SHAPE", "global table rows != global graph nodes");

  HierarchicalForward out;
  out.local_out = Matrix(h_local.rows, h_local.cols);
  out.domain_caches.resize(domain_plans.size());
  for (std::size_t d = 0; d < domain_plans.size(); ++d) {
    const auto& s = domain_plans[d];
    const NodeIndex n = s.plan.graph->num_nodes;
    Matrix block = slice_rows(h_local, s.offset, n);
    Matrix prop = grec_forward(s.plan, block, &out.domain_caches[d]);
    paste_rows(out.local_out, prop, s.offset);
  }
  out.global_out = grec_forward(global_plan, h_global, &out.global_cache);
  return out;
}

std::pair<Matrix, Matrix> hierarchical_pretrain_backward(
    std::span<const DomainSlice> domain_plans, const PropagationPlan& global_plan,
    const HierarchicalForward& fwd, const Matrix& grad_local_out,
    const Matrix& grad_global_out) {
  Matrix grad_local(grad_local_out.rows, grad_local_out.cols);
  for (std::size_t d = 0; d < domain_plans.size(); ++d) {
    const auto& s = domain_plans[d];
    const NodeIndex n = s.plan.graph->num_nodes;
    Matrix block = slice_rows(grad_local_out, s.offset, n);
    Matrix g = grec_backward(s.plan, fwd.domain_caches[d], block);
    paste_rows(grad_local, g, s.offset);
  }
  Matrix grad_global =
      grec_backward(global_plan, fwd.global_cache, grad_global_out);
  return {std::move(grad_local), std::move(grad_global)};
}

FinetuneForward finetune_forward(const PropagationPlan& cross_plan,
                                 const PropagationPlan& global_fine_plan,
                                 const Matrix& h_local_stack,
                                 const Matrix& h_global_stack) {
  cross_plan.validate();
  global_fine_plan.validate();
  if (h_local_stack.rows != cross_plan.graph->num_nodes)
    throw Error("SHAPE", "cross graph nodes != stacked local table rows");
  if (h_global_stack.rows != global_fine_plan.graph->num_nodes)
    throw Error("SHAPE", "global fine graph nodes != stacked global table rows");
  FinetuneForward out;
  out.local_out = grec_forward(cross_plan, h_local_stack, &out.local_cache);
  out.global_out =
      grec_forward(global_fine_plan, h_global_stack, &out.global_cache);
  return out;
}

}  // namespace tbg
