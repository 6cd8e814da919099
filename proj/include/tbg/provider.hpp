#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "tbg/embeddings.hpp"
#include "tbg/prompts.hpp"

namespace tbg {

using json = nlohmann::json;

// Wire contract: POST {"inputs":[strings]} -> {"embeddings":[[numbers]]}.
class EmbeddingTransport {
 public:
  virtual ~EmbeddingTransport() = default;
  virtual json post(const json& body) = 0;
};

// Talks to a real endpoint. Auth token comes from the TBG_EMBED_TOKEN
// environment variable unless set explicitly.
class HttpEmbeddingTransport : public EmbeddingTransport {
 public:
  explicit HttpEmbeddingTransport(std::string url, std::string auth_token = "");
  json post(const json& body) override;

 private:
  std::string base_;
  std::string path_;
  std::string token_;
};

// Deterministic provider: each input maps to a unit vector seeded by the
// hash of its text. Used by tests and by provider-free pipeline runs.
class HashEmbeddingTransport : public EmbeddingTransport {
 public:
  explicit HashEmbeddingTransport(std::uint32_t dim) : dim_(dim) {}
  json post(const json& body) override;

 private:
  std::uint32_t dim_;
};

struct ProviderConfig {
  int batch_size = 16;
  int max_retries = 3;
  int backoff_initial_ms = 50;
  std::string cache_path;  // TBG-EMB keyed by prompt content hash; "" = off
};

struct FetchStats {
  std::uint64_t requests = 0;
  std::uint64_t retries = 0;
  std::uint64_t cache_hits = 0;
};

std::string prompt_cache_key(const std::string& prompt,
                             const std::string& template_version);

// One vector per prompt, ordered by NodeId. Results are cached so a rerun
// with a warm cache issues zero requests.
TextEmbeddingMatrix fetch_embeddings(EmbeddingTransport& transport,
                                     const PromptSet& prompts,
                                     const GraphUniverse& universe,
                                     const ProviderConfig& cfg,
                                     FetchStats* stats = nullptr);

}  // namespace tbg
