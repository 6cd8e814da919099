#pragma once

#include <nlohmann/json.hpp>

#include "tbg/embeddings.hpp"
#include "tbg/ingest.hpp"

namespace tbg {

// Desk-scale multi-domain generator. Items (and users) across domains share
// a rho-weighted latent component, so text similarity tracks behavioral
// similarity and cross-domain transfer has real signal to find.
struct SynthSpec {
  int n_domains = 3;
  int users_per_domain = 300;
  int items_per_domain = 300;
  int latent_dim = 16;
  double shared_rho = 0.8;  // 0 = independent domains, 1 = identical latents
  double density = 0.02;
  double noise = 0.1;
  // Text reveals only this many leading latent coordinates (plus noise);
  // interactions use the full latent dot, so collaborative signal is never
  // fully recoverable from text alone. 0 means ceil(latent_dim / 2).
  int text_dim = 0;
  std::uint64_t seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthResult {
  std::vector<std::string> domain_names;
  std::vector<InteractionRecord> records;  // grouped by domain
  GraphUniverse universe;                  // frozen, sources+targets alike
  EmbeddingFile embeddings;                // registry keys, one row per node
  Matrix latents;                          // ground truth, universe order
};

SynthResult generate(const SynthSpec& spec);

// Interaction log in the ingest format (tab-delimited, with header).
std::string render_interaction_log(std::span<const InteractionRecord> records);

}  // namespace tbg
