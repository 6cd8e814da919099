#include "tbg/provider.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_map>

#include <httplib.h>

#include "tbg/rng.hpp"
#include "tbg/serialize.hpp"

namespace tbg {

HttpEmbeddingTransport::HttpEmbeddingTransport(std::string url,
                                               std::string auth_token)
    : token_(std::move(auth_token)) {
  if (token_.empty()) {
    if (const char* env = std::getenv("TBG_EMBED_TOKEN")) token_ = env;
  }
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw Error("BAD_URL", "provider url must start with http://");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    base_ = url;
    path_ = "/";
  } else {
    base_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
}

json HttpEmbeddingTransport::post(const json& body) {
  httplib::Client client(base_);
  client.set_connection_timeout(10, 0);
  client.set_read_timeout(60, 0);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res)
    throw Error("PROVIDER_UNREACHABLE",
                "provider request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error("PROVIDER_HTTP",
                "provider returned HTTP " + std::to_string(res->status));
  json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded())
    throw Error("PROVIDER_BAD_JSON", "provider returned invalid JSON");
  return parsed;
}

json HashEmbeddingTransport::post(const json& body) {
  json out;
  out["embeddings"] = json::array();
  for (const auto& input : body.at("inputs")) {
    const std::string text = input.get<std::string>();
    Rng rng(fnv1a64(text));
    std::vector<double> v(dim_);
    double norm_sq = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm_sq += x * x;
    }
    const double inv = norm_sq > 0.0 ? 1.0 / std::sqrt(norm_sq) : 0.0;
    json row = json::array();
    for (double x : v) row.push_back(static_cast<float>(x * inv));
    out["embeddings"].push_back(std::move(row));
  }
  return out;
}

std::string prompt_cache_key(const std::string& prompt,
                             const std::string& template_version) {
  return hex64(fnv1a64(prompt, fnv1a64(template_version)));
}

namespace {

json post_with_retries(EmbeddingTransport& transport, const json& body,
                       const ProviderConfig& cfg, FetchStats* stats) {
  int attempt = 0;
  while (true) {
    try {
      if (stats) stats->requests++;
      return transport.post(body);
    } catch (const Error&) {
      if (attempt >= cfg.max_retries) throw;
      const int delay_ms = cfg.backoff_initial_ms * (1 << attempt);
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      ++attempt;
      if (stats) stats->retries++;
    }
  }
}

}  // namespace

TextEmbeddingMatrix fetch_embeddings(EmbeddingTransport& transport,
                                     const PromptSet& prompts,
                                     const GraphUniverse& universe,
                                     const ProviderConfig& cfg,
                                     FetchStats* stats) {
  if (prompts.prompts.size() != universe.size())
    throw Error("SHAPE", "prompt set does not cover the universe");
  if (cfg.batch_size < 1) throw Error("BAD_CONFIG", "batch_size must be >= 1");

  std::vector<std::string> keys(universe.size());
  for (NodeIndex i = 0; i < universe.size(); ++i)
    keys[i] = prompt_cache_key(prompts.prompts[i], prompts.template_version);

  std::unordered_map<std::string, std::vector<float>> cache;
  std::uint32_t dim = 0;
  if (!cfg.cache_path.empty() && file_exists(cfg.cache_path)) {
    EmbeddingFile f = read_embedding_file(cfg.cache_path);
    dim = f.dim;
    for (std::size_t i = 0; i < f.keys.size(); ++i)
      cache[f.keys[i]] = {f.values.begin() + i * f.dim,
                          f.values.begin() + (i + 1) * f.dim};
  }

  std::vector<NodeIndex> missing;
  std::unordered_map<std::string, bool> pending;
  for (NodeIndex i = 0; i < universe.size(); ++i) {
    if (cache.count(keys[i])) {
      if (stats) stats->cache_hits++;
    } else if (!pending.count(keys[i])) {
      pending.emplace(keys[i], true);
      missing.push_back(i);
    }
  }

  bool cache_dirty = false;
  for (std::size_t start = 0; start < missing.size();
       start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(
        missing.size(), start + static_cast<std::size_t>(cfg.batch_size));
    json body;
    body["inputs"] = json::array();
    for (std::size_t i = start; i < end; ++i)
      body["inputs"].push_back(prompts.prompts[missing[i]]);
    const json reply = post_with_retries(transport, body, cfg, stats);
    if (!reply.contains("embeddings") || !reply["embeddings"].is_array() ||
        reply["embeddings"].size() != end - start)
      throw Error("PROVIDER_BAD_REPLY",
                  "provider reply does not match the request batch");
    for (std::size_t i = start; i < end; ++i) {
      const auto& row = reply["embeddings"][i - start];
      if (dim == 0) dim = static_cast<std::uint32_t>(row.size());
      if (row.size() != dim)
        throw Error("DIM_DRIFT",
                    "embedding dimension drifted across batches: " +
                        std::to_string(row.size()) + " vs " + std::to_string(dim));
      std::vector<float> v(dim);
      for (std::uint32_t j = 0; j < dim; ++j) {
        v[j] = row[j].get<float>();
        if (!std::isfinite(v[j]))
          throw Error("NON_FINITE", "provider returned a non-finite value");
      }
      cache[keys[missing[i]]] = std::move(v);
      cache_dirty = true;
    }
  }

  if (!cfg.cache_path.empty() && cache_dirty) {
    EmbeddingFile f;
    f.dim = dim;
    std::vector<std::string> sorted_keys;
    sorted_keys.reserve(cache.size());
    for (const auto& [k, _] : cache) sorted_keys.push_back(k);
    std::sort(sorted_keys.begin(), sorted_keys.end());
    for (const auto& k : sorted_keys) {
      f.keys.push_back(k);
      const auto& v = cache[k];
      f.values.insert(f.values.end(), v.begin(), v.end());
    }
    write_embedding_file(cfg.cache_path, f);
  }

  if (dim == 0) throw Error("EMPTY", "no embeddings produced");
  TextEmbeddingMatrix m;
  m.dim = dim;
  m.count = universe.size();
  m.values.resize(std::size_t(m.count) * dim);
  m.source_tag = "provider";
  for (NodeIndex i = 0; i < universe.size(); ++i) {
    const auto it = cache.find(keys[i]);
    if (it == cache.end() || it->second.size() != dim)
      throw Error("PROVIDER_BAD_REPLY",
                  "missing or misshapen embedding for node " + std::to_string(i));
    std::copy(it->second.begin(), it->second.end(), m.mutable_row(i));
  }
  return m;
}

}  // namespace tbg
