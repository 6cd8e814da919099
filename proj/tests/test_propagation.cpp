#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "tbg/propagation.hpp"

using namespace tbg;

namespace {

NormalizedGraph norm_graph(const std::vector<EdgePair>& edges, NodeIndex n) {
  return symmetric_normalize(build_csr(edges, n));
}

double dot_all(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.a.size(); ++i) s += a.a[i] * b.a[i];
  return s;
}

}  // namespace

TEST_CASE("grec_forward: single edge, alpha 0.5, L=1, identity input") {
  const NormalizedGraph g = norm_graph({{0, 1}}, 2);
  const PropagationPlan plan{&g, 0.5, 1};
  Matrix h0(2, 2);
  h0(0, 0) = 1.0;
  h0(1, 1) = 1.0;
  const Matrix h1 = grec_forward(plan, h0);
  CHECK(h1(0, 0) == doctest::Approx(0.5));
  CHECK(h1(0, 1) == doctest::Approx(0.5));
  CHECK(h1(1, 0) == doctest::Approx(0.5));
  CHECK(h1(1, 1) == doctest::Approx(0.5));
}

TEST_CASE("grec_forward: alpha=1 is the identity, bit for bit") {
  Rng rng(42);
  const NormalizedGraph g =
      norm_graph(oracle::random_edges(20, 40, rng), 20);
  const Matrix h0 = oracle::random_matrix(20, 8, rng);
  const PropagationPlan plan{&g, 1.0, 3};
  const Matrix h = grec_forward(plan, h0);
  CHECK(h.a == h0.a);
}

TEST_CASE("grec_forward: matches dense operator oracle, both precisions") {
  Rng rng(9);
  for (int trial = 0; trial < 8; ++trial) {
    const NodeIndex n = 5 + static_cast<NodeIndex>(rng.uniform_index(46));
    const auto edges = oracle::random_edges(n, 3 * n, rng);
    const NormalizedGraph g = norm_graph(edges, n);
    const PropagationPlan plan{&g, 0.5, 3};
    const Matrix h0 = oracle::random_matrix(n, 6, rng);
    const Matrix got = grec_forward(plan, h0);
    const Matrix want =
        oracle::apply_dense(oracle::grec_operator(g, 0.5, 3), h0);
    CHECK(oracle::max_abs_diff(got, want) <= 1e-10);

    Matrix32 h0f(n, 6);
    for (std::size_t i = 0; i < h0.a.size(); ++i)
      h0f.a[i] = static_cast<float>(h0.a[i]);
    const Matrix32 gotf = grec_forward(plan, h0f);
    double worst = 0.0;
    for (std::size_t i = 0; i < gotf.a.size(); ++i)
      worst = std::max(worst, std::abs(double(gotf.a[i]) - want.a[i]));
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("grec_forward: zero-degree rows scale by alpha^L") {
  const NormalizedGraph g = norm_graph({{0, 1}}, 3);  // node 2 isolated
  const PropagationPlan plan{&g, 0.5, 3};
  Matrix h0(3, 2);
  h0(2, 0) = 8.0;
  h0(2, 1) = -16.0;
  const Matrix h = grec_forward(plan, h0);
  CHECK(h(2, 0) == 1.0);   // 8 * 0.5^3
  CHECK(h(2, 1) == -2.0);
}

TEST_CASE("grec_forward: dimension mismatch error") {
  const NormalizedGraph g = norm_graph({{0, 1}}, 2);
  const PropagationPlan plan{&g, 0.5, 1};
  const Matrix h0(3, 2);
  CHECK_THROWS_AS(grec_forward(plan, h0), Error);
}

TEST_CASE("grec_backward: alpha=1 passes gradient through") {
  const NormalizedGraph g = norm_graph({{0, 1}}, 2);
  const PropagationPlan plan{&g, 1.0, 2};
  LayerCache cache;
  const Matrix h0 = Matrix(2, 3);
  grec_forward(plan, h0, &cache);
  Matrix grad(2, 3);
  grad(0, 1) = 4.0;
  const Matrix back = grec_backward(plan, cache, grad);
  CHECK(back.a == grad.a);
}

TEST_CASE("grec_backward: single edge hand computation") {
  const NormalizedGraph g = norm_graph({{0, 1}}, 2);
  const PropagationPlan plan{&g, 0.5, 1};
  LayerCache cache;
  Matrix h0(2, 2);
  grec_forward(plan, h0, &cache);
  Matrix grad(2, 2);
  grad(0, 0) = 1.0;
  const Matrix back = grec_backward(plan, cache, grad);
  CHECK(back(0, 0) == doctest::Approx(0.5));
  CHECK(back(1, 0) == doctest::Approx(0.5));
  CHECK(back(0, 1) == 0.0);
  CHECK(back(1, 1) == 0.0);
}

TEST_CASE("grec_backward: rejects mismatched cache") {
  const NormalizedGraph g1 = norm_graph({{0, 1}}, 2);
  const NormalizedGraph g2 = norm_graph({{0, 1}, {1, 2}}, 3);
  const PropagationPlan p1{&g1, 0.5, 1};
  const PropagationPlan p2{&g2, 0.5, 1};
  LayerCache cache;
  grec_forward(p1, Matrix(2, 2), &cache);
  CHECK_THROWS_AS(grec_backward(p2, cache, Matrix(3, 2)), Error);
  const PropagationPlan p3{&g1, 0.25, 1};
  CHECK_THROWS_AS(grec_backward(p3, cache, Matrix(2, 2)), Error);
}

TEST_CASE("grec_backward: directional finite differences") {
  Rng rng(77);
  const NodeIndex n = 24;
  const NormalizedGraph g = norm_graph(oracle::random_edges(n, 60, rng), n);
  const PropagationPlan plan{&g, 0.5, 2};
  const Matrix h0 = oracle::random_matrix(n, 4, rng);
  const Matrix w = oracle::random_matrix(n, 4, rng);  // loss = <W, forward(H)>
  const Matrix delta = oracle::random_matrix(n, 4, rng);

  LayerCache cache;
  grec_forward(plan, h0, &cache);
  const Matrix grad_h0 = grec_backward(plan, cache, w);
  const double analytic = dot_all(grad_h0, delta);

  const double eps = 1e-4;
  Matrix plus = h0, minus = h0;
  for (std::size_t i = 0; i < h0.a.size(); ++i) {
    plus.a[i] += eps * delta.a[i];
    minus.a[i] -= eps * delta.a[i];
  }
  const double f_plus = dot_all(grec_forward(plan, plus), w);
  const double f_minus = dot_all(grec_forward(plan, minus), w);
  const double fd = (f_plus - f_minus) / (2.0 * eps);
  CHECK(std::abs(fd - analytic) <= 1e-4 * std::max(1.0, std::abs(fd)));
}

TEST_CASE("propagation is linear") {
  Rng rng(3);
  const NodeIndex n = 16;
  const NormalizedGraph g = norm_graph(oracle::random_edges(n, 30, rng), n);
  const PropagationPlan plan{&g, 0.5, 2};
  const Matrix x = oracle::random_matrix(n, 5, rng);
  const Matrix y = oracle::random_matrix(n, 5, rng);
  const double a = 1.75, b = -0.5;
  Matrix combo(n, 5);
  for (std::size_t i = 0; i < combo.a.size(); ++i)
    combo.a[i] = a * x.a[i] + b * y.a[i];
  const Matrix fc = grec_forward(plan, combo);
  const Matrix fx = grec_forward(plan, x);
  const Matrix fy = grec_forward(plan, y);
  for (std::size_t i = 0; i < combo.a.size(); ++i)
    CHECK(std::abs(fc.a[i] - (a * fx.a[i] + b * fy.a[i])) <= 1e-9);
}

TEST_CASE("propagation is self-adjoint") {
  Rng rng(4);
  const NodeIndex n = 20;
  const NormalizedGraph g = norm_graph(oracle::random_edges(n, 50, rng), n);
  const PropagationPlan plan{&g, 0.5, 3};
  const Matrix x = oracle::random_matrix(n, 4, rng);
  const Matrix y = oracle::random_matrix(n, 4, rng);
  const double lhs = dot_all(grec_forward(plan, x), y);
  const double rhs = dot_all(x, grec_forward(plan, y));
  CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs)));
}

TEST_CASE("spectral boundedness: Frobenius norm never grows") {
  Rng rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    const NodeIndex n = 10 + static_cast<NodeIndex>(rng.uniform_index(30));
    const NormalizedGraph g = norm_graph(oracle::random_edges(n, 3 * n, rng), n);
    const double alpha = rng.uniform();
    const PropagationPlan plan{&g, alpha, 1 + int(rng.uniform_index(4))};
    const Matrix x = oracle::random_matrix(n, 6, rng);
    const Matrix y = grec_forward(plan, x);
    CHECK(oracle::frobenius(y) <= oracle::frobenius(x) * 1.0 + 1e-6);
  }
}

TEST_CASE("disconnected components are independent") {
  Rng rng(13);
  // component A: nodes 0..9, component B: nodes 10..19
  auto ea = oracle::random_edges(10, 16, rng);
  std::vector<EdgePair> eb_orig = oracle::random_edges(10, 16, rng);
  std::vector<EdgePair> all = ea;
  for (const auto& [a, b] : eb_orig) all.emplace_back(a + 10, b + 10);
  const NormalizedGraph g = norm_graph(all, 20);

  // permuted labels within component B: relabel i -> 10 + (i+3) % 10
  std::vector<EdgePair> permuted = ea;
  for (const auto& [a, b] : eb_orig)
    permuted.emplace_back(10 + (a + 3) % 10, 10 + (b + 3) % 10);
  const NormalizedGraph gp = norm_graph(permuted, 20);

  Matrix h0(20, 3);
  Rng init(5);
  for (std::size_t i = 0; i < h0.a.size(); ++i) h0.a[i] = init.normal();
  // permute rows of component B to match the relabeling
  Matrix h0p = h0;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j) h0p(10 + (i + 3) % 10, j) = h0(10 + i, j);

  const PropagationPlan plan{&g, 0.5, 2};
  const PropagationPlan planp{&gp, 0.5, 2};
  const Matrix out = grec_forward(plan, h0);
  const Matrix outp = grec_forward(planp, h0p);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j) CHECK(out(i, j) == outp(i, j));
}

TEST_CASE("hierarchical pretrain: single domain degenerate case") {
  Rng rng(21);
  const auto edges = oracle::random_edges(12, 20, rng);
  const Graph g = build_csr(edges, 12);
  const NormalizedGraph ng = symmetric_normalize(g);
  const DomainSlice slices[] = {{{&ng, 0.5, 2}, 0}};
  const PropagationPlan global{&ng, 0.5, 2};
  const Matrix h = oracle::random_matrix(12, 4, rng);
  const auto fwd = hierarchical_pretrain_forward(slices, global, h, h);
  CHECK(fwd.local_out.a == fwd.global_out.a);
}

TEST_CASE("hierarchical pretrain: block-diagonal equals per-domain") {
  Rng rng(22);
  const auto e1 = oracle::random_edges(8, 12, rng);
  const auto e2 = oracle::random_edges(7, 10, rng);
  const Graph g1 = build_csr(e1, 8);
  const Graph g2 = build_csr(e2, 7);
  const NormalizedGraph n1 = symmetric_normalize(g1);
  const NormalizedGraph n2 = symmetric_normalize(g2);
  const Graph* parts[] = {&g1, &g2};
  const Graph merged = merge_graphs(parts, {});
  const NormalizedGraph nm = symmetric_normalize(merged);

  const DomainSlice slices[] = {{{&n1, 0.5, 2}, 0}, {{&n2, 0.5, 2}, 8}};
  const PropagationPlan global{&nm, 0.5, 2};
  const Matrix h = oracle::random_matrix(15, 4, rng);
  const auto fwd = hierarchical_pretrain_forward(slices, global, h, h);
  // no semantic edges: global propagation on the disjoint union equals the
  // per-domain propagation when tables start equal
  CHECK(oracle::max_abs_diff(fwd.local_out, fwd.global_out) <= 1e-12);
}

TEST_CASE("hierarchical pretrain: one bridge perturbs only its neighborhood") {
  Rng rng(23);
  const auto e1 = oracle::random_edges(10, 14, rng);
  const auto e2 = oracle::random_edges(10, 14, rng);
  const Graph g1 = build_csr(e1, 10);
  const Graph g2 = build_csr(e2, 10);
  const Graph* parts[] = {&g1, &g2};
  const Graph no_bridge = merge_graphs(parts, {});
  const std::vector<EdgePair> bridge{{2, 13}};
  const Graph with_bridge = merge_graphs(parts, bridge);
  const NormalizedGraph nb = symmetric_normalize(no_bridge);
  const NormalizedGraph wb = symmetric_normalize(with_bridge);

  const Matrix h = oracle::random_matrix(20, 4, rng);
  const PropagationPlan pnb{&nb, 0.5, 2};
  const PropagationPlan pwb{&wb, 0.5, 2};
  const Matrix a = grec_forward(pnb, h);
  const Matrix b = grec_forward(pwb, h);

  // Dense oracle: nodes within 2 hops of an endpoint may change.
  const oracle::Dense mb = oracle::grec_operator(wb, 0.5, 2);
  const oracle::Dense mn = oracle::grec_operator(nb, 0.5, 2);
  for (NodeIndex v = 0; v < 20; ++v) {
    bool operator_row_changed = false;
    for (NodeIndex j = 0; j < 20; ++j)
      if (std::abs(mb.at(v, j) - mn.at(v, j)) > 1e-15)
        operator_row_changed = true;
    double row_diff = 0.0;
    for (int j = 0; j < 4; ++j)
      row_diff = std::max(row_diff, std::abs(a(v, j) - b(v, j)));
    if (!operator_row_changed) CHECK(row_diff <= 1e-12);
  }
  // the bridged endpoints themselves must change
  double endpoint_diff = 0.0;
  for (int j = 0; j < 4; ++j) {
    endpoint_diff = std::max(endpoint_diff, std::abs(a(2, j) - b(2, j)));
    endpoint_diff = std::max(endpoint_diff, std::abs(a(13, j) - b(13, j)));
  }
  CHECK(endpoint_diff > 1e-9);
}

TEST_CASE("hierarchical pretrain: partition mismatch rejected") {
  Rng rng(24);
  const Graph g1 = build_csr(oracle::random_edges(8, 12, rng), 8);
  const NormalizedGraph n1 = symmetric_normalize(g1);
  const DomainSlice slices[] = {{{&n1, 0.5, 2}, 0}};
  const Graph big = build_csr(oracle::random_edges(12, 14, rng), 12);
  const NormalizedGraph nbig = symmetric_normalize(big);
  const PropagationPlan global{&nbig, 0.5, 2};
  CHECK_THROWS_AS(hierarchical_pretrain_forward(
                      slices, global, Matrix(12, 4), Matrix(12, 4)),
                  Error);
}

TEST_CASE("finetune_forward: isolated target rows scale by alpha^L") {
  // stack: target nodes {0,1} isolated, source nodes {2,3} connected
  const std::vector<EdgePair> cross_edges{{2, 3}};
  const NormalizedGraph cross = norm_graph(cross_edges, 4);
  const PropagationPlan cplan{&cross, 0.5, 2};
  Matrix local(4, 2), global(4, 2);
  local(0, 0) = 4.0;
  local(1, 1) = -4.0;
  const auto fwd = finetune_forward(cplan, cplan, local, global);
  CHECK(fwd.local_out(0, 0) == 1.0);  // 4 * 0.25
  CHECK(fwd.local_out(1, 1) == -1.0);
}

TEST_CASE("finetune_forward: single semantic edge transfers the source row") {
  // target node 0 zero-init, bridged to source node 1 (degree: both 1)
  const NormalizedGraph cross = norm_graph({{0, 1}}, 2);
  const PropagationPlan cplan{&cross, 0.5, 1};
  Matrix local(2, 3);
  local(1, 0) = 2.0;
  local(1, 1) = -6.0;
  local(1, 2) = 10.0;
  const auto fwd = finetune_forward(cplan, cplan, local, Matrix(2, 3));
  // target row = (1 - alpha) / sqrt(d_t * d_s) * source row
  for (int j = 0; j < 3; ++j)
    CHECK(fwd.local_out(0, j) == doctest::Approx(0.5 * local(1, j)));
}

TEST_CASE("finetune_forward: matches dense oracle on a 3-block stack") {
  Rng rng(31);
  const auto et = oracle::random_edges(12, 16, rng);
  const auto e1 = oracle::random_edges(24, 40, rng);
  const auto e2 = oracle::random_edges(24, 40, rng);
  const Graph gt = build_csr(et, 12);
  const Graph g1 = build_csr(e1, 24);
  const Graph g2 = build_csr(e2, 24);
  const GraphPart parts[] = {{&gt, 0}, {&g1, 12}, {&g2, 36}};
  const std::vector<EdgePair> sem{{0, 15}, {3, 40}, {7, 22}};
  const Graph cross = merge_graphs(parts, sem, 60);
  const NormalizedGraph nc = symmetric_normalize(cross);
  const PropagationPlan plan{&nc, 0.5, 2};
  const Matrix h = oracle::random_matrix(60, 5, rng);
  const auto fwd = finetune_forward(plan, plan, h, h);
  const Matrix want =
      oracle::apply_dense(oracle::grec_operator(nc, 0.5, 2), h);
  CHECK(oracle::max_abs_diff(fwd.local_out, want) <= 1e-6);
  CHECK(oracle::max_abs_diff(fwd.global_out, want) <= 1e-6);
}

TEST_CASE("finetune_forward: node count mismatch rejected") {
  const NormalizedGraph cross = norm_graph({{0, 1}}, 2);
  const PropagationPlan plan{&cross, 0.5, 1};
  CHECK_THROWS_AS(finetune_forward(plan, plan, Matrix(3, 2), Matrix(2, 2)),
                  Error);
}
