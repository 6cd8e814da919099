#pragma once

#include "tbg/evaluation.hpp"
#include "tbg/synth.hpp"
#include "tbg/training.hpp"

namespace tbg {

struct TransferOptions {
  double coldstart_fraction = 1.0;  // < 1 subsamples the target train split
  bool shuffle_target_text = false;  // control: permute target text rows
  std::uint64_t shuffle_seed = 7;
  bool run_finetune = true;
  std::string build_id = "dev";
};

struct TransferRun {
  MetricsReport zeroshot_metrics;
  MetricsReport finetune_metrics;  // valid only when run_finetune
  std::vector<double> zeroshot_scores;  // per test instance, paired order
  std::vector<double> finetune_scores;
  std::uint64_t semantic_edges_pre = 0;
  std::uint64_t semantic_edges_src_tgt = 0;
  std::uint64_t semantic_edges_tgt = 0;
  std::uint64_t target_train_edges = 0;
  Checkpoint finetuned_checkpoint;
};

// Full pretrain -> (zeroshot, finetune) -> eval pipeline on in-memory data.
// `joint_text` rows follow the joint universe (sources first, target last).
TransferRun run_transfer(const std::vector<InteractionRecord>& src_records,
                         const std::vector<InteractionRecord>& tgt_records,
                         const TextEmbeddingMatrix& joint_text,
                         const TrainConfig& cfg, const TransferOptions& opt);

// Target-only training from random init (no pre-training, no bridges);
// returns target test AUC under the same evaluation protocol.
double run_scratch_baseline(const std::vector<InteractionRecord>& tgt_records,
                            const TextEmbeddingMatrix& tgt_text,
                            const TrainConfig& cfg);

// In-memory strict key resolution (counterpart of read_embedding_matrix).
TextEmbeddingMatrix resolve_embedding_file(const EmbeddingFile& f,
                                           const GraphUniverse& universe);

struct ProtocolConfig {
  SynthSpec synth;
  TrainConfig train;
  std::string target_domain;  // default: last generated domain
  std::vector<double> gammas = {0.9, 0.95, 0.99, 0.995};
  std::vector<int> mask_types = {0, 1, 2, 3, 4};
  std::vector<double> mask_rates = {0.1, 0.2, 0.5};
  double coldstart_fraction = 0.05;
  int k_recent = 10;
  double truncation_quantile = 0.95;
  std::uint32_t hash_embed_dim = 32;  // masking protocol embedding provider
  std::string build_id = "dev";
};

struct ProtocolRow {
  std::string protocol;
  nlohmann::json params;  // protocol-specific knobs for this row
  MetricsReport report;
  std::uint64_t semantic_edges_pre = 0;
  std::uint64_t semantic_edges_tgt = 0;
};

nlohmann::json protocol_rows_to_json(std::span<const ProtocolRow> rows);
std::string protocol_rows_to_csv(std::span<const ProtocolRow> rows);

// name: "gamma-sweep" | "masking" | "cold-start"
std::vector<ProtocolRow> run_protocol(const std::string& name,
                                      const ProtocolConfig& cfg);

}  // namespace tbg
