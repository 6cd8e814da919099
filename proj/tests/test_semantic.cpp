#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "oracles.hpp"
#include "tbg/semantic.hpp"

using namespace tbg;

namespace {

TextEmbeddingMatrix make_matrix(const std::vector<std::vector<float>>& rows) {
  TextEmbeddingMatrix m;
  m.count = static_cast<NodeIndex>(rows.size());
  m.dim = rows.empty() ? 0 : static_cast<std::uint32_t>(rows[0].size());
  for (const auto& r : rows) m.values.insert(m.values.end(), r.begin(), r.end());
  return m;
}

double cos_oracle(std::span<const float> a, std::span<const float> b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += (long double)(a[i]) * b[i];
    na += (long double)(a[i]) * a[i];
    nb += (long double)(b[i]) * b[i];
  }
  if (na <= 0 || nb <= 0) return 0.0;
  return double(dot / (std::sqrt(na) * std::sqrt(nb)));
}

bool oracle_mode_ok(SemanticMode mode, DomainId da, DomainId db, DomainId t) {
  if (mode == SemanticMode::PretrainCrossDomain) return da != db;
  if (mode == SemanticMode::FinetuneSrcTgt) return (da == t) != (db == t);
  return da == t || db == t;
}

// Independent reimplementation of the full edge-set definition using plain
// O(n^2) scans and set algebra.
std::set<std::pair<NodeIndex, NodeIndex>> oracle_edges(
    const TextEmbeddingMatrix& m, const std::vector<DomainId>& dom,
    const std::vector<NodeKind>& kind, SemanticMode mode, DomainId target,
    double gamma, int k_cap) {
  const NodeIndex n = m.count;
  std::set<std::pair<NodeIndex, NodeIndex>> kept;
  for (NodeIndex q = 0; q < n; ++q) {
    std::vector<std::pair<double, NodeIndex>> cands;
    for (NodeIndex c = 0; c < n; ++c) {
      if (c == q || kind[c] != kind[q]) continue;
      if (!oracle_mode_ok(mode, dom[q], dom[c], target)) continue;
      cands.emplace_back(cos_oracle(m.row(q), m.row(c)), c);
    }
    std::sort(cands.begin(), cands.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    if (cands.size() > std::size_t(k_cap)) cands.resize(k_cap);
    for (const auto& [sim, c] : cands)
      if (sim > gamma) kept.insert({std::min(q, c), std::max(q, c)});
  }
  // per-node cap by similarity, edge survives only if kept on both sides
  std::map<NodeIndex, std::vector<std::pair<double, NodeIndex>>> adj;
  for (const auto& [a, b] : kept) {
    const double s = cos_oracle(m.row(a), m.row(b));
    adj[a].emplace_back(s, b);
    adj[b].emplace_back(s, a);
  }
  std::set<std::pair<NodeIndex, std::pair<NodeIndex, NodeIndex>>> votes;
  std::map<std::pair<NodeIndex, NodeIndex>, int> vote_count;
  for (auto& [node, list] : adj) {
    std::sort(list.begin(), list.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    if (list.size() > std::size_t(k_cap)) list.resize(k_cap);
    for (const auto& [s, other] : list)
      vote_count[{std::min(node, other), std::max(node, other)}]++;
  }
  std::set<std::pair<NodeIndex, NodeIndex>> out;
  for (const auto& [e, v] : vote_count)
    if (v == 2) out.insert(e);
  return out;
}

std::set<std::pair<NodeIndex, NodeIndex>> to_set(const SemanticEdgeSet& s) {
  std::set<std::pair<NodeIndex, NodeIndex>> out;
  for (const auto& e : s.edges) out.insert({e.a, e.b});
  return out;
}

}  // namespace

TEST_CASE("topk: identical vectors have similarity 1") {
  const auto m = make_matrix({{1, 0}, {1, 0}});
  const std::vector<NodeIndex> q{0}, c{0, 1};
  const auto lists = topk_cosine_neighbors(m, q, c, 3);
  REQUIRE(lists.lists[0].size() == 1);  // self excluded
  CHECK(lists.lists[0][0].node == 1);
  CHECK(lists.lists[0][0].similarity == doctest::Approx(1.0));
}

TEST_CASE("topk: orthogonal vectors have similarity 0") {
  const auto m = make_matrix({{1, 0}, {0, 1}});
  const std::vector<NodeIndex> q{0}, c{1};
  const auto lists = topk_cosine_neighbors(m, q, c, 1);
  CHECK(lists.lists[0][0].similarity == doctest::Approx(0.0));
}

TEST_CASE("topk: zero vector cosine is defined as 0") {
  const auto m = make_matrix({{0, 0}, {1, 1}});
  const std::vector<NodeIndex> q{0}, c{1};
  const auto lists = topk_cosine_neighbors(m, q, c, 1);
  CHECK(lists.lists[0][0].similarity == 0.0);
}

TEST_CASE("topk: 300 random unit vectors match the exhaustive oracle") {
  Rng rng(55);
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 300; ++i) {
    std::vector<float> v(16);
    double norm = 0;
    for (auto& x : v) {
      x = static_cast<float>(rng.normal());
      norm += double(x) * x;
    }
    for (auto& x : v) x = static_cast<float>(x / std::sqrt(norm));
    rows.push_back(std::move(v));
  }
  const auto m = make_matrix(rows);
  std::vector<NodeIndex> all(300);
  for (NodeIndex i = 0; i < 300; ++i) all[i] = i;
  const auto lists = topk_cosine_neighbors(m, all, all, 20);

  for (NodeIndex q = 0; q < 300; ++q) {
    // oracle: full sort of all pairwise cosines
    std::vector<std::pair<double, NodeIndex>> scored;
    for (NodeIndex c = 0; c < 300; ++c) {
      if (c == q) continue;
      double dot = 0, na = 0, nb = 0;
      for (int j = 0; j < 16; ++j) {
        dot += double(m.row(q)[j]) * m.row(c)[j];
        na += double(m.row(q)[j]) * m.row(q)[j];
        nb += double(m.row(c)[j]) * m.row(c)[j];
      }
      scored.emplace_back(dot / (std::sqrt(na) * std::sqrt(nb)), c);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    REQUIRE(lists.lists[q].size() == 20);
    for (int r = 0; r < 20; ++r) {
      CHECK(lists.lists[q][r].node == scored[r].second);
      CHECK(lists.lists[q][r].similarity == scored[r].first);
    }
  }
}

TEST_CASE("build_semantic_edges: threshold pass and strict boundary") {
  // two nodes in different domains, cosine ~0.995
  const float a = 1.0f;
  const auto m = make_matrix({{a, 0.1f}, {a, 0.0f}});
  const std::vector<DomainId> dom{0, 1};
  const std::vector<NodeKind> kind{NodeKind::Item, NodeKind::Item};
  const auto set1 = build_mode_edges(m, dom, kind,
                                     SemanticMode::PretrainCrossDomain, 2,
                                     0.99, 20);
  REQUIRE(set1.edges.size() == 1);
  const double sim = set1.edges[0].similarity;
  CHECK(sim > 0.99);
  // gamma exactly at the similarity: strict > excludes the pair
  const auto set2 = build_mode_edges(m, dom, kind,
                                     SemanticMode::PretrainCrossDomain, 2, sim,
                                     20);
  CHECK(set2.edges.empty());
}

TEST_CASE("build_semantic_edges: gamma outside (0,1) rejected") {
  const auto m = make_matrix({{1, 0}, {1, 0}});
  const std::vector<DomainId> dom{0, 1};
  const std::vector<NodeKind> kind{NodeKind::Item, NodeKind::Item};
  CHECK_THROWS_AS(build_mode_edges(m, dom, kind,
                                   SemanticMode::PretrainCrossDomain, 2, 1.0, 5),
                  Error);
  CHECK_THROWS_AS(build_mode_edges(m, dom, kind,
                                   SemanticMode::PretrainCrossDomain, 2, 0.0, 5),
                  Error);
}

TEST_CASE("build_semantic_edges: every mode matches the O(n^2) oracle") {
  Rng rng(66);
  // 3 domains x 50 nodes (25 users + 25 items each), clustered vectors so
  // many pairs clear high thresholds
  std::vector<std::vector<float>> rows;
  std::vector<DomainId> dom;
  std::vector<NodeKind> kind;
  std::vector<std::vector<double>> anchors;
  for (int a = 0; a < 10; ++a) {
    std::vector<double> v(8);
    for (auto& x : v) x = rng.normal();
    anchors.push_back(v);
  }
  for (DomainId d = 0; d < 3; ++d)
    for (int i = 0; i < 50; ++i) {
      const auto& anchor = anchors[i % 10];
      std::vector<float> v(8);
      for (int j = 0; j < 8; ++j)
        v[j] = static_cast<float>(anchor[j] + 0.05 * rng.normal());
      rows.push_back(std::move(v));
      dom.push_back(d);
      kind.push_back(i < 25 ? NodeKind::User : NodeKind::Item);
    }
  const auto m = make_matrix(rows);
  const DomainId target = 2;

  for (const auto mode :
       {SemanticMode::PretrainCrossDomain, SemanticMode::FinetuneSrcTgt,
        SemanticMode::FinetuneTgtGlobal})
    for (const double gamma : {0.9, 0.95, 0.99, 0.995}) {
      const auto got =
          to_set(build_mode_edges(m, dom, kind, mode, target, gamma, 20));
      const auto want = oracle_edges(m, dom, kind, mode, target, gamma, 20);
      CHECK(got == want);
    }
}

TEST_CASE("gamma monotonicity: higher gamma gives a nested edge set") {
  Rng rng(67);
  std::vector<std::vector<float>> rows;
  std::vector<DomainId> dom;
  std::vector<NodeKind> kind;
  for (DomainId d = 0; d < 2; ++d)
    for (int i = 0; i < 40; ++i) {
      std::vector<float> v(6);
      for (auto& x : v) x = static_cast<float>(rng.normal());
      // pull vectors toward a shared direction so cosines are high
      v[0] = std::abs(v[0]) + 3.0f;
      rows.push_back(std::move(v));
      dom.push_back(d);
      kind.push_back(NodeKind::Item);
    }
  const auto m = make_matrix(rows);
  std::set<std::pair<NodeIndex, NodeIndex>> prev;
  bool first = true;
  for (const double gamma : {0.9, 0.95, 0.99, 0.995}) {
    const auto cur = to_set(build_mode_edges(
        m, dom, kind, SemanticMode::PretrainCrossDomain, 2, gamma, 20));
    if (!first)
      for (const auto& e : cur) CHECK(prev.count(e) == 1);
    prev = cur;
    first = false;
  }
}

TEST_CASE("mode soundness: no edge violates its domain predicate") {
  Rng rng(68);
  std::vector<std::vector<float>> rows;
  std::vector<DomainId> dom;
  std::vector<NodeKind> kind;
  for (DomainId d = 0; d < 3; ++d)
    for (int i = 0; i < 30; ++i) {
      std::vector<float> v{float(rng.normal() * 0.1 + 2.0),
                           float(rng.normal() * 0.1)};
      rows.push_back(v);
      dom.push_back(d);
      kind.push_back(i % 2 == 0 ? NodeKind::User : NodeKind::Item);
    }
  const auto m = make_matrix(rows);
  const DomainId target = 2;
  for (const auto mode :
       {SemanticMode::PretrainCrossDomain, SemanticMode::FinetuneSrcTgt,
        SemanticMode::FinetuneTgtGlobal}) {
    const auto set = build_mode_edges(m, dom, kind, mode, target, 0.9, 20);
    for (const auto& e : set.edges) {
      CHECK(kind[e.a] == kind[e.b]);
      CHECK(e.a != e.b);
      CHECK(oracle_mode_ok(mode, dom[e.a], dom[e.b], target));
      CHECK(e.similarity > 0.9);
    }
  }
}

TEST_CASE("scale invariance: rescaling a row does not change the edge set") {
  Rng rng(69);
  std::vector<std::vector<float>> rows;
  std::vector<DomainId> dom;
  std::vector<NodeKind> kind;
  for (DomainId d = 0; d < 2; ++d)
    for (int i = 0; i < 20; ++i) {
      std::vector<float> v(4);
      for (auto& x : v) x = static_cast<float>(rng.normal() + 1.5);
      rows.push_back(v);
      dom.push_back(d);
      kind.push_back(NodeKind::Item);
    }
  auto m = make_matrix(rows);
  const auto base = to_set(build_mode_edges(
      m, dom, kind, SemanticMode::PretrainCrossDomain, 2, 0.9, 10));
  // power-of-two scaling keeps float cosines bit-identical
  for (NodeIndex i = 0; i < m.count; i += 3)
    for (std::uint32_t j = 0; j < m.dim; ++j) m.mutable_row(i)[j] *= 4.0f;
  const auto scaled = to_set(build_mode_edges(
      m, dom, kind, SemanticMode::PretrainCrossDomain, 2, 0.9, 10));
  CHECK(base == scaled);
}

TEST_CASE("TBGN neighbor cache round-trips bit-exactly") {
  NeighborCache c;
  c.k = 3;
  c.query_keys = {"d0|u|alice", "d1|i|book"};
  c.lists = {{{"d1|u|bob", 0.75f}, {"d0|u|carol", 0.5f}},
             {{"d0|i|lamp", 0.25f}}};
  const std::string bytes = encode_neighbor_cache(c);
  const NeighborCache back = decode_neighbor_cache(bytes, "test");
  CHECK(back.k == c.k);
  CHECK(back.query_keys == c.query_keys);
  CHECK(back.lists == c.lists);
  CHECK(encode_neighbor_cache(back) == bytes);

  // corruption is detected
  std::string bad = bytes;
  bad[10] = static_cast<char>(bad[10] ^ 0x40);
  CHECK_THROWS_AS(decode_neighbor_cache(bad, "test"), Error);
}
