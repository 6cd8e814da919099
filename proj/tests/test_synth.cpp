#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tbg/protocol.hpp"
#include "tbg/synth.hpp"

using namespace tbg;

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na <= 0 || nb <= 0) return 0;
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("generate: same seed gives bitwise identical outputs") {
  SynthSpec spec;
  spec.n_domains = 2;
  spec.users_per_domain = 30;
  spec.items_per_domain = 30;
  spec.density = 0.05;
  const SynthResult a = generate(spec);
  const SynthResult b = generate(spec);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].user_key == b.records[i].user_key);
    CHECK(a.records[i].item_key == b.records[i].item_key);
    CHECK(a.records[i].timestamp == b.records[i].timestamp);
  }
  CHECK(a.embeddings.values == b.embeddings.values);
  CHECK(a.embeddings.keys == b.embeddings.keys);
  CHECK(render_interaction_log(a.records) == render_interaction_log(b.records));
}

TEST_CASE("generate: density is honored exactly at desk scale") {
  SynthSpec spec;
  spec.n_domains = 1;
  spec.users_per_domain = 100;
  spec.items_per_domain = 100;
  spec.density = 0.01;
  const SynthResult r = generate(spec);
  // thresholded sampling hits the requested count; trivially within 3 sigma
  CHECK(r.records.size() == 100);
}

TEST_CASE("generate: rho=1 with zero noise gives matched-pair cosine 1") {
  SynthSpec spec;
  spec.n_domains = 2;
  spec.users_per_domain = 20;
  spec.items_per_domain = 20;
  spec.density = 0.2;  // dense enough that most nodes appear
  spec.shared_rho = 1.0;
  spec.noise = 0.0;
  const SynthResult r = generate(spec);
  const auto& u = r.universe;
  int matched = 0;
  for (int i = 0; i < 20; ++i) {
    const std::string key = "i" + std::string(i < 10 ? "000" : "00") +
                            std::to_string(i);
    const auto a = u.find(key, NodeKind::Item, 0);
    const auto b = u.find(key, NodeKind::Item, 1);
    if (!a || !b) continue;  // node absent if it drew no interactions
    const auto m = resolve_embedding_file(r.embeddings, u);
    CHECK(cosine(m.row(*a), m.row(*b)) == doctest::Approx(1.0).epsilon(1e-6));
    ++matched;
  }
  CHECK(matched > 0);
}

TEST_CASE("generate: rho=0 matched pairs look like random pairs") {
  // Monte-Carlo over 5 seeds: mean cosine of matched pairs vs random pairs
  double matched_sum = 0, random_sum = 0;
  int matched_n = 0, random_n = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthSpec spec;
    spec.n_domains = 2;
    spec.users_per_domain = 40;
    spec.items_per_domain = 40;
    spec.density = 0.15;
    spec.shared_rho = 0.0;
    spec.noise = 0.05;
    spec.seed = seed;
    const SynthResult r = generate(spec);
    const auto m = resolve_embedding_file(r.embeddings, r.universe);
    Rng rng(seed * 11);
    for (int i = 0; i < 40; ++i) {
      char key[8];
      std::snprintf(key, sizeof(key), "i%04d", i);
      const auto a = r.universe.find(key, NodeKind::Item, 0);
      const auto b = r.universe.find(key, NodeKind::Item, 1);
      if (a && b) {
        matched_sum += cosine(m.row(*a), m.row(*b));
        ++matched_n;
      }
      // random cross-domain pair
      char key2[8];
      std::snprintf(key2, sizeof(key2), "i%04d",
                    int(rng.uniform_index(40)));
      const auto c = r.universe.find(key2, NodeKind::Item, 1);
      if (a && c && *c != *b) {
        random_sum += cosine(m.row(*a), m.row(*c));
        ++random_n;
      }
    }
  }
  REQUIRE(matched_n > 20);
  REQUIRE(random_n > 20);
  const double matched_mean = matched_sum / matched_n;
  const double random_mean = random_sum / random_n;
  CHECK(std::abs(matched_mean - random_mean) < 0.1);
}

TEST_CASE("generate: rho=0.8 matched pairs are far more similar than random") {
  SynthSpec spec;
  spec.n_domains = 2;
  spec.users_per_domain = 40;
  spec.items_per_domain = 40;
  spec.density = 0.15;
  spec.shared_rho = 0.8;
  spec.noise = 0.1;
  const SynthResult r = generate(spec);
  const auto m = resolve_embedding_file(r.embeddings, r.universe);
  double matched_sum = 0;
  int matched_n = 0;
  for (int i = 0; i < 40; ++i) {
    char key[8];
    std::snprintf(key, sizeof(key), "i%04d", i);
    const auto a = r.universe.find(key, NodeKind::Item, 0);
    const auto b = r.universe.find(key, NodeKind::Item, 1);
    if (a && b) {
      matched_sum += cosine(m.row(*a), m.row(*b));
      ++matched_n;
    }
  }
  REQUIRE(matched_n > 10);
  CHECK(matched_sum / matched_n > 0.8);
}

TEST_CASE("generate: zero-interaction parameters rejected") {
  SynthSpec spec;
  spec.n_domains = 1;
  spec.users_per_domain = 5;
  spec.items_per_domain = 5;
  spec.density = 0.001;  // rounds to zero interactions
  CHECK_THROWS_AS(generate(spec), Error);
  spec.density = -0.1;
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("generate: every registered node carries an embedding row") {
  SynthSpec spec;
  spec.n_domains = 3;
  spec.users_per_domain = 25;
  spec.items_per_domain = 25;
  spec.density = 0.05;
  const SynthResult r = generate(spec);
  CHECK(r.embeddings.keys.size() == r.universe.size());
  CHECK_NOTHROW(resolve_embedding_file(r.embeddings, r.universe));
  CHECK(r.latents.rows == r.universe.size());
}

TEST_CASE("spec json round-trip") {
  SynthSpec spec;
  spec.n_domains = 4;
  spec.density = 0.03;
  const auto j = spec.to_json();
  const SynthSpec back = SynthSpec::from_json(j);
  CHECK(back.to_json() == j);
}
