#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "oracles.hpp"
#include "tbg/evaluation.hpp"
#include "tbg/model.hpp"

using namespace tbg;

namespace {

// A universe with one domain: `users` users followed by `items` items, with
// given test records. Train/valid stay empty unless listed.
struct Fixture {
  GraphUniverse universe;
  SplitDataset split;
};

Fixture make_fixture(int users, int items,
                     const std::vector<std::pair<int, int>>& test_pairs,
                     const std::vector<std::pair<int, int>>& train_pairs = {}) {
  Fixture f;
  const DomainId d = f.universe.add_domain("d");
  for (int i = 0; i < users; ++i)
    f.universe.register_node("u" + std::to_string(i), NodeKind::User, d);
  for (int i = 0; i < items; ++i)
    f.universe.register_node("i" + std::to_string(i), NodeKind::Item, d);
  f.universe.freeze();
  std::uint64_t idx = 0;
  for (const auto& [u, v] : train_pairs)
    f.split.train.push_back({static_cast<NodeIndex>(u),
                             static_cast<NodeIndex>(users + v), 0, 0, idx++});
  for (const auto& [u, v] : test_pairs)
    f.split.test.push_back({static_cast<NodeIndex>(u),
                            static_cast<NodeIndex>(users + v), 10, 0, idx++});
  return f;
}

// Embeddings whose pairwise dot products we can steer per item.
Matrix scored_embeddings(int users, int items,
                         const std::vector<double>& item_scores) {
  Matrix m(users + items, 2);
  for (int u = 0; u < users; ++u) m(u, 0) = 1.0;
  for (int i = 0; i < items; ++i) m(users + i, 0) = item_scores[i];
  return m;
}

}  // namespace

TEST_CASE("sample_eval_negatives: 101 items with one positive forces all 100") {
  Fixture f = make_fixture(1, 101, {{0, 0}});
  Rng rng(1);
  const auto instances = sample_eval_negatives(f.split, f.universe,
                                               SplitPart::Test, 100, rng);
  REQUIRE(instances.size() == 1);
  CHECK(instances[0].negatives.size() == 100);
  std::set<NodeIndex> negs(instances[0].negatives.begin(),
                           instances[0].negatives.end());
  CHECK(negs.size() == 100);
  CHECK(negs.count(instances[0].pos_item) == 0);
}

TEST_CASE("sample_eval_negatives: deterministic under a fixed seed") {
  Fixture f = make_fixture(5, 50, {{0, 0}, {1, 3}, {2, 7}, {3, 9}, {4, 11}});
  Rng r1(9), r2(9);
  const auto a = sample_eval_negatives(f.split, f.universe, SplitPart::Test, 20, r1);
  const auto b = sample_eval_negatives(f.split, f.universe, SplitPart::Test, 20, r2);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].negatives == b[i].negatives);
}

TEST_CASE("sample_eval_negatives: excludes all known positives") {
  Fixture f = make_fixture(1, 20, {{0, 5}}, {{0, 1}, {0, 2}, {0, 3}});
  Rng rng(3);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 16, rng);
  REQUIRE(instances.size() == 1);
  // known positives: items 1,2,3 (train) and 5 (test)
  for (const NodeIndex n : instances[0].negatives) {
    CHECK(n != f.split.test[0].item);
    for (const auto& t : f.split.train) CHECK(n != t.item);
  }
  CHECK(instances[0].negatives.size() == 16);
}

TEST_CASE("sample_eval_negatives: clips when candidates run short") {
  Fixture f = make_fixture(1, 6, {{0, 0}});
  Rng rng(4);
  EvalSampleStats stats;
  const auto instances = sample_eval_negatives(f.split, f.universe,
                                               SplitPart::Test, 100, rng,
                                               nullptr, &stats);
  REQUIRE(instances.size() == 1);
  CHECK(instances[0].negatives.size() == 5);
  CHECK(stats.clipped_instances == 1);
}

TEST_CASE("sample_eval_negatives: uniform inclusion, chi-square at 3 sigma") {
  // 10^4 instances, each drawing 1 negative from the same 499 candidates
  std::vector<std::pair<int, int>> tests;
  for (int i = 0; i < 10000; ++i) tests.emplace_back(i, 0);
  Fixture f = make_fixture(10000, 500, tests);
  Rng rng(5);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 1, rng);
  REQUIRE(instances.size() == 10000);
  std::map<NodeIndex, int> counts;
  for (const auto& inst : instances) counts[inst.negatives[0]]++;
  const double expect = 10000.0 / 499.0;
  double chi2 = 0.0;
  for (NodeIndex item = 10001; item < 10500; ++item) {
    const double obs = counts.count(item) ? counts[item] : 0.0;
    chi2 += (obs - expect) * (obs - expect) / expect;
  }
  const double dof = 498.0;
  CHECK(chi2 <= dof + 3.0 * std::sqrt(2.0 * dof));
}

TEST_CASE("auc: positive above all negatives gives 1.0") {
  // 3 users, 11 items; positive item 0 scores highest
  std::vector<double> scores(11, 0.1);
  scores[0] = 5.0;
  Fixture f = make_fixture(3, 11, {{0, 0}, {1, 0}, {2, 0}});
  Rng rng(6);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 10, rng);
  const Matrix emb = scored_embeddings(3, 11, scores);
  CHECK(instance_auc(instances, emb) == 1.0);
}

TEST_CASE("auc: positive tied with every negative gives exactly 0.5") {
  std::vector<double> scores(11, 1.0);
  Fixture f = make_fixture(1, 11, {{0, 0}});
  Rng rng(7);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 10, rng);
  const Matrix emb = scored_embeddings(1, 11, scores);
  CHECK(instance_auc(instances, emb) == 0.5);
}

TEST_CASE("auc: equals brute-force pairwise counting on random scores") {
  Rng rng(8);
  std::vector<ScoredInstance> scored;
  for (int i = 0; i < 50; ++i) {
    ScoredInstance s;
    s.domain = 0;
    s.user = static_cast<NodeIndex>(i);
    s.pos = std::round(rng.normal() * 4.0) / 4.0;  // force ties sometimes
    for (int j = 0; j < 30; ++j)
      s.negs.push_back(std::round(rng.normal() * 4.0) / 4.0);
    scored.push_back(std::move(s));
  }
  // brute-force oracle: explicit pair loop
  double want = 0.0;
  for (const auto& s : scored) {
    double acc = 0.0;
    for (const double n : s.negs) {
      if (n < s.pos) acc += 1.0;
      if (n == s.pos) acc += 0.5;
    }
    want += acc / double(s.negs.size());
  }
  want /= double(scored.size());
  CHECK(auc(scored) == want);
}

TEST_CASE("auc: non-finite score is an error naming the pair") {
  Fixture f = make_fixture(1, 11, {{0, 0}});
  Rng rng(9);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 10, rng);
  Matrix emb(12, 2);
  emb(0, 0) = std::numeric_limits<double>::infinity();
  emb(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(score_instances(instances, emb), Error);
}

TEST_CASE("rank_metrics: positive ranked first of 101") {
  std::vector<double> scores(101, 0.0);
  for (int i = 0; i < 101; ++i) scores[i] = i == 0 ? 10.0 : -double(i);
  Fixture f = make_fixture(1, 101, {{0, 0}});
  Rng rng(10);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 100, rng);
  const Matrix emb = scored_embeddings(1, 101, scores);
  const auto r = rank_metrics(instances, emb, 10);
  CHECK(r.recall == 1.0);
  CHECK(r.precision == doctest::Approx(0.1));
}

TEST_CASE("rank_metrics: positive ranked 11th misses the top 10") {
  std::vector<double> scores(101);
  for (int i = 0; i < 101; ++i) scores[i] = -double(i);
  scores[0] = -10.5;  // exactly 10 negatives above the positive
  Fixture f = make_fixture(1, 101, {{0, 0}});
  Rng rng(11);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 100, rng);
  const Matrix emb = scored_embeddings(1, 101, scores);
  const auto r = rank_metrics(instances, emb, 10);
  CHECK(r.recall == 0.0);
}

TEST_CASE("rank_metrics: matches an exhaustive sort oracle on random pools") {
  Rng rng(12);
  const int users = 8, items = 40;
  std::vector<std::pair<int, int>> tests;
  for (int u = 0; u < users; ++u) {
    tests.emplace_back(u, int(rng.uniform_index(items)));
    if (u % 2 == 0) tests.emplace_back(u, int(rng.uniform_index(items)));
  }
  Fixture f = make_fixture(users, items, tests);
  Rng srng(13);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 12, srng);
  Matrix emb(users + items, 3);
  for (auto& v : emb.a) v = rng.normal();

  for (const int k : {3, 10}) {
    const auto got = rank_metrics(instances, emb, k);

    // oracle: per user pools assembled with plain sets, full sorts
    std::map<NodeIndex, std::set<NodeIndex>> pos, neg;
    for (const auto& inst : instances) {
      pos[inst.user].insert(inst.pos_item);
      for (const auto n : inst.negatives) neg[inst.user].insert(n);
    }
    double recall_sum = 0, prec_sum = 0;
    int user_count = 0;
    for (const auto& [user, positives] : pos) {
      std::vector<std::pair<double, NodeIndex>> pool;
      auto add_item = [&](NodeIndex item) {
        const double s =
            score(std::span<const double>(emb.row(user), 3),
                  std::span<const double>(emb.row(item), 3));
        pool.emplace_back(s, item);
      };
      for (const auto v : positives) add_item(v);
      for (const auto v : neg[user]) add_item(v);
      std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      int hits = 0;
      for (int i = 0; i < k && i < int(pool.size()); ++i)
        if (positives.count(pool[i].second)) ++hits;
      recall_sum += double(hits) / double(positives.size());
      prec_sum += double(hits) / double(k);
      ++user_count;
    }
    CHECK(got.users == std::uint64_t(user_count));
    CHECK(got.recall == doctest::Approx(recall_sum / user_count).epsilon(1e-12));
    CHECK(got.precision == doctest::Approx(prec_sum / user_count).epsilon(1e-12));
  }
}

TEST_CASE("rank_metrics: recall non-decreasing in K, precision*K bounded") {
  Rng rng(14);
  std::vector<std::pair<int, int>> tests;
  for (int u = 0; u < 6; ++u)
    for (int rep = 0; rep < 2; ++rep)
      tests.emplace_back(u, int(rng.uniform_index(30)));
  Fixture f = make_fixture(6, 30, tests);
  Rng srng(15);
  const auto instances =
      sample_eval_negatives(f.split, f.universe, SplitPart::Test, 10, srng);
  Matrix emb(36, 4);
  for (auto& v : emb.a) v = rng.normal();
  double prev = 0.0;
  for (const int k : {1, 5, 10, 20}) {
    const auto r = rank_metrics(instances, emb, k);
    CHECK(r.recall >= prev);
    prev = r.recall;
  }
}

TEST_CASE("auc is invariant under strictly monotone score transforms") {
  Rng rng(16);
  std::vector<ScoredInstance> scored;
  for (int i = 0; i < 20; ++i) {
    ScoredInstance s;
    s.pos = rng.normal();
    for (int j = 0; j < 15; ++j) s.negs.push_back(rng.normal());
    scored.push_back(std::move(s));
  }
  const double base = auc(scored);
  auto transformed = scored;
  for (auto& s : transformed) {
    s.pos = std::exp(2.0 * s.pos) + 7.0;
    for (auto& n : s.negs) n = std::exp(2.0 * n) + 7.0;
  }
  CHECK(auc(transformed) == base);
}

TEST_CASE("compute_metrics: per-domain breakdown and domain-mean style") {
  // two domains with different AUC: mean over domains, not instances
  GraphUniverse u;
  u.add_domain("a");
  u.register_node("u0", NodeKind::User, 0);
  for (int i = 0; i < 3; ++i)
    u.register_node("i" + std::to_string(i), NodeKind::Item, 0);
  u.add_domain("b");
  u.register_node("u1", NodeKind::User, 1);
  for (int i = 0; i < 3; ++i)
    u.register_node("j" + std::to_string(i), NodeKind::Item, 1);
  u.freeze();

  std::vector<EvalInstance> instances;
  instances.push_back({0, 1, {2, 3}, 0});  // domain a: pos above both
  instances.push_back({4, 5, {6, 7}, 1});  // domain b: pos below both

  Matrix emb(8, 1);
  emb(0, 0) = 1.0;
  emb(1, 0) = 5.0;  // a: positive wins
  emb(2, 0) = 1.0;
  emb(3, 0) = 0.0;
  emb(4, 0) = 1.0;
  emb(5, 0) = -5.0;  // b: positive loses
  emb(6, 0) = 1.0;
  emb(7, 0) = 2.0;

  const auto rep = compute_metrics(instances, emb, {"a", "b"}, "hash", "build");
  REQUIRE(rep.per_domain.size() == 2);
  CHECK(rep.per_domain[0].auc == 1.0);
  CHECK(rep.per_domain[1].auc == 0.0);
  CHECK(rep.auc_mean == 0.5);
  CHECK(rep.total_instances == 2);
  CHECK(rep.config_hash == "hash");

  const auto j = rep.to_json();
  CHECK(j["auc_mean"] == 0.5);
  CHECK(j["per_domain"].size() == 2);
  const std::string csv = rep.to_csv();
  CHECK(csv.find("a,auc,1") != std::string::npos);
  CHECK(csv.find("mean,auc,0.5") != std::string::npos);
  // every metric value lies in [0, 1]
  for (const auto& dm : rep.per_domain) {
    for (const double v : {dm.auc, dm.recall10, dm.recall20, dm.precision10,
                           dm.precision20}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(dm.recall20 >= dm.recall10);
  }
}
