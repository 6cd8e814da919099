#include "tbg/synth.hpp"

#include <algorithm>
#include <cmath>

#include "tbg/rng.hpp"

namespace tbg {

void SynthSpec::validate() const {
  if (n_domains < 1) throw Error("BAD_SPEC", "n_domains must be >= 1");
  if (users_per_domain < 1 || items_per_domain < 2)
    throw Error("BAD_SPEC", "need >= 1 user and >= 2 items per domain");
  if (latent_dim < 1) throw Error("BAD_SPEC", "latent_dim must be >= 1");
  if (!(shared_rho >= 0.0 && shared_rho <= 1.0))
    throw Error("BAD_SPEC", "shared_rho must be in [0,1]");
  if (!(density > 0.0 && density <= 1.0))
    throw Error("BAD_SPEC", "density must be in (0,1]");
  if (noise < 0.0) throw Error("BAD_SPEC", "noise must be >= 0");
  if (text_dim < 0 || text_dim > latent_dim)
    throw Error("BAD_SPEC", "text_dim must be in [0, latent_dim]");
}

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json j;
  j["n_domains"] = n_domains;
  j["users_per_domain"] = users_per_domain;
  j["items_per_domain"] = items_per_domain;
  j["latent_dim"] = latent_dim;
  j["shared_rho"] = shared_rho;
  j["density"] = density;
  j["noise"] = noise;
  j["text_dim"] = text_dim;
  j["seed"] = seed;
  return j;
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("n_domains", s.n_domains);
  get("users_per_domain", s.users_per_domain);
  get("items_per_domain", s.items_per_domain);
  get("latent_dim", s.latent_dim);
  get("shared_rho", s.shared_rho);
  get("density", s.density);
  get("noise", s.noise);
  get("text_dim", s.text_dim);
  get("seed", s.seed);
  s.validate();
  return s;
}

namespace {

std::string pad(int v) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%04d", v);
  return buf;
}

std::vector<double> draw_latent(Rng& rng, int dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

SynthResult generate(const SynthSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  const int k = spec.latent_dim;
  const double rho = spec.shared_rho;

  SynthResult out;
  for (int d = 0; d < spec.n_domains; ++d)
    out.domain_names.push_back("d" + std::to_string(d));

  // Shared archetypes: user/item index i plays the same role in every
  // domain, blended with a domain-specific component.
  Rng shared_rng = root.fork("latent/shared");
  std::vector<std::vector<double>> shared_users, shared_items;
  for (int i = 0; i < spec.users_per_domain; ++i)
    shared_users.push_back(draw_latent(shared_rng, k));
  for (int i = 0; i < spec.items_per_domain; ++i)
    shared_items.push_back(draw_latent(shared_rng, k));

  struct DomainData {
    std::vector<std::vector<double>> user_latents, item_latents;
  };
  std::vector<DomainData> domains(spec.n_domains);
  for (int d = 0; d < spec.n_domains; ++d) {
    Rng dr = root.fork("latent/domain" + std::to_string(d));
    for (int i = 0; i < spec.users_per_domain; ++i) {
      auto own = draw_latent(dr, k);
      for (int j = 0; j < k; ++j)
        own[j] = rho * shared_users[i][j] + (1.0 - rho) * own[j];
      domains[d].user_latents.push_back(std::move(own));
    }
    for (int i = 0; i < spec.items_per_domain; ++i) {
      auto own = draw_latent(dr, k);
      for (int j = 0; j < k; ++j)
        own[j] = rho * shared_items[i][j] + (1.0 - rho) * own[j];
      domains[d].item_latents.push_back(std::move(own));
    }
  }

  // Interactions: top density*U*V pairs by noisy affinity.
  for (int d = 0; d < spec.n_domains; ++d) {
    Rng ir = root.fork("interactions/domain" + std::to_string(d));
    const std::uint64_t total =
        std::uint64_t(spec.users_per_domain) * spec.items_per_domain;
    const auto want = static_cast<std::uint64_t>(std::llround(
        spec.density * static_cast<double>(total)));
    if (want == 0)
      throw Error("BAD_SPEC", "density produces zero interactions");

    struct ScoredPair {
      double score;
      int u, v;
    };
    std::vector<ScoredPair> pairs;
    pairs.reserve(total);
    for (int u = 0; u < spec.users_per_domain; ++u)
      for (int v = 0; v < spec.items_per_domain; ++v) {
        double dot = 0.0;
        for (int j = 0; j < k; ++j)
          dot += domains[d].user_latents[u][j] * domains[d].item_latents[v][j];
        pairs.push_back({dot + spec.noise * std::sqrt(double(k)) * ir.normal(),
                         u, v});
      }
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.u != b.u) return a.u < b.u;
      return a.v < b.v;
    });
    pairs.resize(std::min<std::size_t>(want, pairs.size()));

    Rng tr = root.fork("timestamps/domain" + std::to_string(d));
    std::vector<InteractionRecord> recs;
    for (const auto& p : pairs) {
      InteractionRecord r;
      r.domain = out.domain_names[d];
      r.user_key = "u" + pad(p.u);
      r.item_key = "i" + pad(p.v);
      r.timestamp = static_cast<std::int64_t>(tr.uniform_index(1000000));
      r.review_text = "user u" + pad(p.u) + " found item i" + pad(p.v) +
                      " tag" + std::to_string((p.u * 131 + p.v * 31) % 32);
      r.item_meta["title"] = "Item i" + pad(p.v) + " type" +
                             std::to_string(p.v % 16);
      r.item_meta["description"] =
          "synthetic item " + std::to_string(p.v) + " of " + out.domain_names[d];
      r.item_meta["features"] = "f" + std::to_string(p.v % 5);
      r.item_meta["brand"] = "brand" + std::to_string(p.v % 7);
      r.item_meta["price"] = std::to_string((p.v % 50) + 1);
      r.item_meta["salesRank"] = std::to_string(p.v + 1);
      recs.push_back(std::move(r));
    }
    std::stable_sort(recs.begin(), recs.end(),
                     [](const InteractionRecord& a, const InteractionRecord& b) {
                       return a.timestamp < b.timestamp;
                     });
    out.records.insert(out.records.end(), recs.begin(), recs.end());
  }

  out.universe = build_universe(out.records);

  // Text embeddings: the leading text_dim latent coordinates plus Gaussian
  // noise, f32. The trailing coordinates stay behavioral-only signal.
  const int td = spec.text_dim > 0 ? spec.text_dim : (k + 1) / 2;
  Rng er = root.fork("text-noise");
  out.latents = Matrix(out.universe.size(), k);
  out.embeddings.dim = static_cast<std::uint32_t>(td);
  out.embeddings.keys.reserve(out.universe.size());
  out.embeddings.values.reserve(std::size_t(out.universe.size()) * td);
  for (NodeIndex i = 0; i < out.universe.size(); ++i) {
    const NodeRecord& n = out.universe.node(i);
    const int idx = std::stoi(n.key.substr(1));
    const auto& lat = n.kind == NodeKind::User
                          ? domains[n.domain].user_latents[idx]
                          : domains[n.domain].item_latents[idx];
    out.embeddings.keys.push_back(out.universe.registry_key(i));
    for (int j = 0; j < k; ++j) out.latents(i, j) = lat[j];
    for (int j = 0; j < td; ++j)
      out.embeddings.values.push_back(
          static_cast<float>(lat[j] + spec.noise * er.normal()));
  }
  return out;
}

std::string render_interaction_log(std::span<const InteractionRecord> records) {
  std::string s =
      "user\titem\ttimestamp\tdomain\treview\ttitle\tdescription\tfeatures\t"
      "brand\tprice\tsalesRank\n";
  auto meta = [](const InteractionRecord& r, const char* key) -> std::string {
    auto it = r.item_meta.find(key);
    return it == r.item_meta.end() ? "" : it->second;
  };
  for (const auto& r : records) {
    s += r.user_key + "\t" + r.item_key + "\t" + std::to_string(r.timestamp) +
         "\t" + r.domain + "\t" + r.review_text + "\t" + meta(r, "title") +
         "\t" + meta(r, "description") + "\t" + meta(r, "features") + "\t" +
         meta(r, "brand") + "\t" + meta(r, "price") + "\t" +
         meta(r, "salesRank") + "\n";
  }
  return s;
}

}  // namespace tbg
