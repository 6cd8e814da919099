#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <optional>

#include "tbg/model.hpp"
#include "tbg/pipeline.hpp"
#include "tbg/rng.hpp"

namespace tbg {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 1024;
  double lambda_reg = 1e-5;  // pre-train
  double eta_reg = 1e-5;     // fine-tune
  double alpha = 0.5;
  double gamma = 0.99;
  int layers = 2;
  int d = 64;
  int h = 64;
  int epochs = 50;
  int finetune_epochs = 30;
  int patience = 5;
  std::uint64_t seed = 42;
  int k_cap = 20;
  int n_neg_eval = 100;
  int negatives_per_positive = 1;
  bool freeze_target_global = false;
  std::string precision = "float64";

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct BprTriple {
  NodeIndex user;
  NodeIndex pos_item;
  NodeIndex neg_item;
  DomainId domain;
};

// Per-domain sampling index over deduplicated train edges.
struct DomainTrainIndex {
  DomainId domain = 0;
  std::vector<std::pair<NodeIndex, NodeIndex>> edges;  // (user, item), sorted
  std::vector<NodeIndex> items;                        // all items of the domain
  std::map<NodeIndex, std::vector<NodeIndex>> positives;  // user -> sorted items

  bool is_positive(NodeIndex user, NodeIndex item) const;
};

DomainTrainIndex build_train_index(const GraphUniverse& universe,
                                   const SplitDataset& split, DomainId domain);

// Positives uniform over train edges; negatives uniform over the domain's
// items, rejection-resampled away from the user's train positives (cap 100
// tries, then accepted under a warning counter).
std::vector<BprTriple> sample_bpr_triples(const DomainTrainIndex& index,
                                          int batch_size, Rng& rng,
                                          std::uint64_t* forced_accepts = nullptr);

struct BprLoss {
  double loss = 0.0;                 // mean over the batch
  std::vector<double> grad_pos;      // d loss / d s+
  std::vector<double> grad_neg;      // d loss / d s-
};

BprLoss bpr_loss(std::span<const double> scores_pos,
                 std::span<const double> scores_neg);

struct AdamState {
  Matrix m;
  Matrix v;
  std::int64_t t = 0;
};

void adam_step(Matrix& params, const Matrix& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct EarlyStopDecision {
  bool stop = false;
  int best_epoch = 0;  // index into history
};

// Stops once the best value has not strictly improved for `patience`
// consecutive epochs. Ties never reset patience.
EarlyStopDecision early_stop(std::span<const double> history, int patience);

// ---- full-model loss (fusion + scoring + BPR + regularization) ----

// Which adapter serves the local path of a node (stack/universe coords).
enum class LocalAdapterRoute { SourceOnly, TargetFirstBlock };

struct BatchLossResult {
  double total = 0.0;
  double bpr = 0.0;
  double reg = 0.0;  // regularization component (already weighted)
};

// Pre-training loss over one batch, with optional gradients.
BatchLossResult pretrain_batch_loss(const PretrainAssembly& assembly,
                                    const TrainConfig& cfg,
                                    const ModelParams& params,
                                    const TextEmbeddingMatrix& text,
                                    std::span<const BprTriple> batch,
                                    ModelParams* grads);

// Fine-tuning loss over one batch (stack coordinates), with optional
// gradients. Frozen blocks receive exactly zero gradient.
BatchLossResult finetune_batch_loss(const FinetuneAssembly& assembly,
                                    const TrainConfig& cfg,
                                    const ModelParams& params,
                                    std::span<const BprTriple> batch,
                                    ModelParams* grads);

// Final embeddings (N x 2d) for every node, from propagated + fused tables.
Matrix pretrain_final_embeddings(const PretrainAssembly& assembly,
                                 const TrainConfig& cfg,
                                 const ModelParams& params,
                                 const TextEmbeddingMatrix& text);
Matrix finetune_final_embeddings(const FinetuneAssembly& assembly,
                                 const TrainConfig& cfg,
                                 const ModelParams& params);

// ---- checkpointing ----

struct EpochLogRow {
  int epoch = 0;
  double loss = 0.0;
  double bpr = 0.0;
  double reg = 0.0;
  double val_auc = 0.0;
  double wall_ms = 0.0;
};

struct Checkpoint {
  std::uint16_t version = 1;
  std::string stage;  // "pretrain" | "finetune" | "zeroshot"
  nlohmann::json config;
  std::string config_hash;
  nlohmann::json meta;  // domains, counts, target, fingerprints, history
  ModelParams params;
  std::map<std::string, AdamState> opt;
  int epoch = 0;
  int best_epoch = 0;
  std::vector<double> val_history;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// ---- drivers ----

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLogRow> log;
  std::uint64_t forced_negative_accepts = 0;
};

// Eq. 9 optimization over the source domains; returns the best-validation
// checkpoint.
TrainResult pretrain(const GraphUniverse& universe, const SplitDataset& split,
                     const TextEmbeddingMatrix& text, const TrainConfig& cfg);

// Eq. 15 optimization over the target domain with source blocks frozen.
// Zero epochs leaves the assembled model untouched (training-free mode).
TrainResult finetune(const Checkpoint& source_checkpoint,
                     const GraphUniverse& universe,
                     const SplitDataset& source_split,
                     const SplitDataset& target_split, DomainId target_domain,
                     const TextEmbeddingMatrix& text, const TrainConfig& cfg);

struct InferenceResult {
  Checkpoint checkpoint;        // stage "zeroshot"
  Matrix final_embeddings;      // stack coords, N x 2d
  FinetuneAssembly assembly;
};

// Graph assembly + forward with zero optimization steps.
InferenceResult training_free_infer(const Checkpoint& source_checkpoint,
                                    const GraphUniverse& universe,
                                    const SplitDataset& source_split,
                                    const SplitDataset& target_split,
                                    DomainId target_domain,
                                    const TextEmbeddingMatrix& text,
                                    const TrainConfig& cfg);

std::string canonical_config_hash(const nlohmann::json& config);

}  // namespace tbg
