#include "tbg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tbg/model.hpp"

namespace tbg {

std::vector<EvalInstance> sample_eval_negatives(
    const SplitDataset& split, const GraphUniverse& universe, SplitPart part,
    int n_neg, Rng& rng, const DomainId* domain_filter,
    EvalSampleStats* stats) {
  if (n_neg < 1) throw Error("BAD_CONFIG", "n_neg must be >= 1");
  const std::vector<SplitRecord>* records = nullptr;
  switch (part) {
    case SplitPart::Train: records = &split.train; break;
    case SplitPart::Valid: records = &split.valid; break;
    case SplitPart::Test: records = &split.test; break;
  }

  // Known positives per user across train + valid + test of their domain.
  std::map<NodeIndex, std::set<NodeIndex>> known;
  for (const auto* part_records : {&split.train, &split.valid, &split.test})
    for (const auto& r : *part_records) known[r.user].insert(r.item);

  std::vector<EvalInstance> out;
  for (const auto& r : *records) {
    if (domain_filter && r.domain != *domain_filter) continue;
    const auto range = universe.domain_range(r.domain);
    const auto& user_known = known[r.user];
    std::vector<NodeIndex> candidates;
    for (NodeIndex item = range.users_end; item < range.end; ++item)
      if (!user_known.count(item)) candidates.push_back(item);
    if (candidates.empty()) {
      if (stats) stats->skipped_no_candidates++;
      continue;
    }
    const auto take = std::min<std::size_t>(candidates.size(),
                                            static_cast<std::size_t>(n_neg));
    if (take < static_cast<std::size_t>(n_neg) && stats)
      stats->clipped_instances++;
    // Partial Fisher-Yates for without-replacement sampling.
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + rng.uniform_index(candidates.size() - i);
      std::swap(candidates[i], candidates[j]);
    }
    EvalInstance inst;
    inst.user = r.user;
    inst.pos_item = r.item;
    inst.domain = r.domain;
    inst.negatives.assign(candidates.begin(), candidates.begin() + take);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<ScoredInstance> score_instances(
    std::span<const EvalInstance> instances, const Matrix& final_embeddings) {
  const std::size_t dim = final_embeddings.cols;
  auto score_pair = [&](NodeIndex u, NodeIndex v) {
    const double s = score(
        std::span<const double>(final_embeddings.row(u), dim),
        std::span<const double>(final_embeddings.row(v), dim));
    if (!std::isfinite(s))
      throw Error("NON_FINITE_SCORE",
                  "non-finite score for node pair (" + std::to_string(u) + "," +
                      std::to_string(v) + ")");
    return s;
  };
  std::vector<ScoredInstance> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    ScoredInstance s;
    s.user = inst.user;
    s.pos_item = inst.pos_item;
    s.domain = inst.domain;
    s.pos = score_pair(inst.user, inst.pos_item);
    s.negs.reserve(inst.negatives.size());
    for (const NodeIndex n : inst.negatives)
      s.negs.push_back(score_pair(inst.user, n));
    out.push_back(std::move(s));
  }
  return out;
}

double auc(std::span<const ScoredInstance> scored) {
  if (scored.empty()) throw Error("EMPTY_INPUT", "auc: no instances");
  double total = 0.0;
  for (const auto& s : scored) {
    if (!std::isfinite(s.pos))
      throw Error("NON_FINITE_SCORE", "auc: non-finite positive score");
    double below = 0.0;
    for (const double n : s.negs) {
      if (!std::isfinite(n))
        throw Error("NON_FINITE_SCORE", "auc: non-finite negative score");
      if (n < s.pos)
        below += 1.0;
      else if (n == s.pos)
        below += 0.5;
    }
    total += below / static_cast<double>(s.negs.size());
  }
  return total / static_cast<double>(scored.size());
}

double instance_auc(std::span<const EvalInstance> instances,
                    const Matrix& final_embeddings) {
  const auto scored = score_instances(instances, final_embeddings);
  return auc(scored);
}

double mean_domain_auc(std::span<const EvalInstance> instances,
                       const Matrix& final_embeddings) {
  const auto scored = score_instances(instances, final_embeddings);
  std::map<DomainId, std::vector<ScoredInstance>> by_domain;
  for (const auto& s : scored) by_domain[s.domain].push_back(s);
  double sum = 0.0;
  for (const auto& [d, group] : by_domain) sum += auc(group);
  return sum / static_cast<double>(by_domain.size());
}

namespace {

struct UserPool {
  std::set<NodeIndex> positives;
  std::set<NodeIndex> negatives;
};

RankMetricsResult rank_metrics_pooled(std::span<const EvalInstance> instances,
                                      const Matrix& final_embeddings, int k) {
  // Pool per user: all test positives plus all sampled negatives.
  std::map<NodeIndex, UserPool> pools;
  for (const auto& inst : instances) {
    auto& p = pools[inst.user];
    p.positives.insert(inst.pos_item);
    for (const NodeIndex n : inst.negatives) p.negatives.insert(n);
  }
  const std::size_t dim = final_embeddings.cols;
  RankMetricsResult res;
  double recall_sum = 0.0, precision_sum = 0.0;
  for (const auto& [user, pool] : pools) {
    if (pool.positives.empty()) continue;
    std::vector<std::pair<double, NodeIndex>> ranked;
    auto add = [&](NodeIndex item) {
      const double s =
          score(std::span<const double>(final_embeddings.row(user), dim),
                std::span<const double>(final_embeddings.row(item), dim));
      ranked.emplace_back(s, item);
    };
    for (const NodeIndex v : pool.positives) add(v);
    for (const NodeIndex v : pool.negatives) add(v);
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;  // ties by ascending item index
              });
    const std::size_t top = std::min<std::size_t>(ranked.size(),
                                                  static_cast<std::size_t>(k));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < top; ++i)
      if (pool.positives.count(ranked[i].second)) ++hits;
    recall_sum += static_cast<double>(hits) /
                  static_cast<double>(pool.positives.size());
    precision_sum += static_cast<double>(hits) / static_cast<double>(k);
    res.users++;
  }
  if (res.users > 0) {
    res.recall = recall_sum / static_cast<double>(res.users);
    res.precision = precision_sum / static_cast<double>(res.users);
  }
  return res;
}

}  // namespace

RankMetricsResult rank_metrics(std::span<const EvalInstance> instances,
                               const Matrix& final_embeddings, int k) {
  if (k < 1) throw Error("BAD_CONFIG", "rank_metrics: k must be >= 1");
  score_instances(instances, final_embeddings);  // finiteness gate
  return rank_metrics_pooled(instances, final_embeddings, k);
}

MetricsReport compute_metrics(std::span<const EvalInstance> instances,
                              const Matrix& final_embeddings,
                              const std::vector<std::string>& domain_names,
                              const std::string& config_hash,
                              const std::string& build_id) {
  MetricsReport rep;
  rep.config_hash = config_hash;
  rep.build_id = build_id;
  rep.total_instances = instances.size();

  std::map<DomainId, std::vector<EvalInstance>> by_domain;
  for (const auto& inst : instances) by_domain[inst.domain].push_back(inst);

  for (const auto& [d, group] : by_domain) {
    DomainMetrics dm;
    dm.domain = d < domain_names.size() ? domain_names[d]
                                        : "domain-" + std::to_string(d);
    dm.instances = group.size();
    const auto scored = score_instances(group, final_embeddings);
    dm.auc = auc(scored);
    const auto r10 = rank_metrics(group, final_embeddings, 10);
    const auto r20 = rank_metrics(group, final_embeddings, 20);
    dm.recall10 = r10.recall;
    dm.precision10 = r10.precision;
    dm.recall20 = r20.recall;
    dm.precision20 = r20.precision;
    dm.users = r10.users;
    rep.per_domain.push_back(std::move(dm));
  }
  const double nd = rep.per_domain.empty()
                        ? 1.0
                        : static_cast<double>(rep.per_domain.size());
  for (const auto& dm : rep.per_domain) {
    rep.auc_mean += dm.auc / nd;
    rep.recall10_mean += dm.recall10 / nd;
    rep.recall20_mean += dm.recall20 / nd;
    rep.precision10_mean += dm.precision10 / nd;
    rep.precision20_mean += dm.precision20 / nd;
  }
  return rep;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["auc_mean"] = auc_mean;
  j["recall10_mean"] = recall10_mean;
  j["recall20_mean"] = recall20_mean;
  j["precision10_mean"] = precision10_mean;
  j["precision20_mean"] = precision20_mean;
  j["total_instances"] = total_instances;
  j["config_hash"] = config_hash;
  j["build_id"] = build_id;
  j["per_domain"] = nlohmann::json::array();
  for (const auto& dm : per_domain) {
    nlohmann::json d;
    d["domain"] = dm.domain;
    d["auc"] = dm.auc;
    d["recall10"] = dm.recall10;
    d["recall20"] = dm.recall20;
    d["precision10"] = dm.precision10;
    d["precision20"] = dm.precision20;
    d["instances"] = dm.instances;
    d["users"] = dm.users;
    j["per_domain"].push_back(std::move(d));
  }
  return j;
}

std::string MetricsReport::to_csv() const {
  std::string csv = "domain,metric,value\n";
  char buf[64];
  auto row = [&](const std::string& domain, const char* metric, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    csv += domain + "," + metric + "," + buf + "\n";
  };
  for (const auto& dm : per_domain) {
    row(dm.domain, "auc", dm.auc);
    row(dm.domain, "recall@10", dm.recall10);
    row(dm.domain, "recall@20", dm.recall20);
    row(dm.domain, "precision@10", dm.precision10);
    row(dm.domain, "precision@20", dm.precision20);
  }
  row("mean", "auc", auc_mean);
  row("mean", "recall@10", recall10_mean);
  row("mean", "recall@20", recall20_mean);
  row("mean", "precision@10", precision10_mean);
  row("mean", "precision@20", precision20_mean);
  return csv;
}

}  // namespace tbg
