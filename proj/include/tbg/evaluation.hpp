#pragma once

#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "tbg/common.hpp"
#include "tbg/ingest.hpp"
#include "tbg/rng.hpp"

namespace tbg {

enum class SplitPart { Train, Valid, Test };

struct EvalInstance {
  NodeIndex user;
  NodeIndex pos_item;
  std::vector<NodeIndex> negatives;  // no duplicates, none a known positive
  DomainId domain;
};

struct EvalSampleStats {
  std::uint64_t skipped_no_candidates = 0;
  std::uint64_t clipped_instances = 0;  // fewer candidates than n_neg
};

// Uniform without-replacement negatives from the same domain's items,
// excluding the user's train+valid+test positives. Deterministic under rng.
std::vector<EvalInstance> sample_eval_negatives(
    const SplitDataset& split, const GraphUniverse& universe, SplitPart part,
    int n_neg, Rng& rng, const DomainId* domain_filter = nullptr,
    EvalSampleStats* stats = nullptr);

struct ScoredInstance {
  double pos;
  std::vector<double> negs;
  DomainId domain;
  NodeIndex user;
  NodeIndex pos_item;
};

// score() over final embeddings; errors name the offending node pair.
std::vector<ScoredInstance> score_instances(
    std::span<const EvalInstance> instances, const Matrix& final_embeddings);

// Mean over instances of (#negatives strictly below the positive +
// 0.5 * ties) / n_neg.
double auc(std::span<const ScoredInstance> scored);

// Convenience: score + per-domain AUC averaged over domains.
double instance_auc(std::span<const EvalInstance> instances,
                    const Matrix& final_embeddings);
double mean_domain_auc(std::span<const EvalInstance> instances,
                       const Matrix& final_embeddings);

struct RankMetricsResult {
  double recall = 0.0;
  double precision = 0.0;
  std::uint64_t users = 0;
};

// Per user: pool = the user's test positives + their sampled negatives,
// ranked by score (ties by ascending item index); means over users.
RankMetricsResult rank_metrics(std::span<const EvalInstance> instances,
                               const Matrix& final_embeddings, int k);

struct DomainMetrics {
  std::string domain;
  double auc = 0.0;
  double recall10 = 0.0, recall20 = 0.0;
  double precision10 = 0.0, precision20 = 0.0;
  std::uint64_t instances = 0;
  std::uint64_t users = 0;
};

struct MetricsReport {
  std::vector<DomainMetrics> per_domain;
  double auc_mean = 0.0;
  double recall10_mean = 0.0, recall20_mean = 0.0;
  double precision10_mean = 0.0, precision20_mean = 0.0;
  std::uint64_t total_instances = 0;
  std::string config_hash;
  std::string build_id;

  nlohmann::json to_json() const;
  std::string to_csv() const;  // one row per domain x metric
};

MetricsReport compute_metrics(std::span<const EvalInstance> instances,
                              const Matrix& final_embeddings,
                              const std::vector<std::string>& domain_names,
                              const std::string& config_hash,
                              const std::string& build_id);

}  // namespace tbg
