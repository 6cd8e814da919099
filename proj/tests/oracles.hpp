// Test-only reference implementations: dense linear algebra oracles,
// brute-force neighbor search, and small random fixtures. Everything here
// is independent of the library's sparse/blocked code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "tbg/graph.hpp"
#include "tbg/rng.hpp"

namespace oracle {

struct Dense {
  std::size_t n = 0;
  std::vector<double> a;
  Dense() = default;
  explicit Dense(std::size_t n_) : n(n_), a(n_ * n_, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

inline Dense densify(const tbg::Graph& g) {
  Dense d(g.num_nodes);
  for (tbg::NodeIndex v = 0; v < g.num_nodes; ++v)
    for (std::uint64_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e)
      d.at(v, g.col_indices[e]) = g.edge_values[e];
  return d;
}

inline Dense densify(const tbg::NormalizedGraph& g) {
  Dense d(g.num_nodes);
  for (tbg::NodeIndex v = 0; v < g.num_nodes; ++v)
    for (std::uint64_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e)
      d.at(v, g.col_indices[e]) = g.edge_values[e];
  return d;
}

inline Dense matmul(const Dense& x, const Dense& y) {
  Dense z(x.n);
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t k = 0; k < x.n; ++k) {
      const double v = x.at(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < x.n; ++j) z.at(i, j) += v * y.at(k, j);
    }
  return z;
}

// ((1-alpha) * A_hat + alpha * I)^layers as a dense matrix.
inline Dense grec_operator(const tbg::NormalizedGraph& g, double alpha,
                           int layers) {
  Dense m = densify(g);
  for (auto& v : m.a) v *= (1.0 - alpha);
  for (std::size_t i = 0; i < m.n; ++i) m.at(i, i) += alpha;
  Dense acc(m.n);
  for (std::size_t i = 0; i < m.n; ++i) acc.at(i, i) = 1.0;
  for (int l = 0; l < layers; ++l) acc = matmul(acc, m);
  return acc;
}

inline tbg::Matrix apply_dense(const Dense& m, const tbg::Matrix& x) {
  tbg::Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t k = 0; k < m.n; ++k) {
      const double v = m.at(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < x.cols; ++j) y(i, j) += v * x(k, j);
    }
  return y;
}

inline std::vector<tbg::EdgePair> random_edges(tbg::NodeIndex n,
                                               std::size_t m, tbg::Rng& rng) {
  std::set<std::pair<tbg::NodeIndex, tbg::NodeIndex>> seen;
  std::vector<tbg::EdgePair> out;
  std::size_t guard = 0;
  while (out.size() < m && guard++ < m * 50) {
    const auto a = static_cast<tbg::NodeIndex>(rng.uniform_index(n));
    const auto b = static_cast<tbg::NodeIndex>(rng.uniform_index(n));
    if (a == b) continue;
    const auto key = std::make_pair(std::min(a, b), std::max(a, b));
    if (seen.insert(key).second) out.emplace_back(a, b);
  }
  return out;
}

inline tbg::Matrix random_matrix(std::size_t rows, std::size_t cols,
                                 tbg::Rng& rng, double scale = 1.0) {
  tbg::Matrix m(rows, cols);
  for (auto& v : m.a) v = rng.normal() * scale;
  return m;
}

inline double max_abs_diff(const tbg::Matrix& a, const tbg::Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.a.size(); ++i)
    worst = std::max(worst, std::abs(a.a[i] - b.a[i]));
  return worst;
}

inline double frobenius(const tbg::Matrix& m) {
  double s = 0.0;
  for (const double v : m.a) s += v * v;
  return std::sqrt(s);
}

}  // namespace oracle
