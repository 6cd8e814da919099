#pragma once

#include <span>
#include <string>
#include <vector>

#include "tbg/ingest.hpp"

namespace tbg {

struct PromptSet {
  std::vector<std::string> prompts;  // one per NodeIndex
  double truncation_quantile = 0.95;
  int k_recent = 10;
  std::size_t cap = 0;  // resolved byte cap (quantile of raw lengths)
  std::string template_version = "v1";
};

// Masking protocol knobs (robustness study). Types:
//   0 id text, 1 reviews, 2 titles, 3 descriptions+features,
//   4 price/brand/salesRank.
struct MaskSpec {
  int type = -1;  // -1 disables masking
  double rate = 0.0;
  std::uint64_t seed = 0;
};

struct MaskedRecords {
  std::vector<InteractionRecord> records;
  std::vector<bool> id_masked;  // per NodeIndex: hide key text in prompts
  std::uint64_t masked_nodes = 0;
};

// Zeroes the designated field group for a seeded `rate` fraction of nodes.
MaskedRecords apply_mask(std::span<const InteractionRecord> records,
                         const GraphUniverse& universe, const MaskSpec& spec);

// Builds per-node prompts from train-split history: for users, the k most
// recent items with their reviews; for items, attributes plus the k most
// recent interacting users with reviews. All prompts are hard-truncated at
// the q-quantile of raw prompt lengths.
PromptSet build_prompts(std::span<const InteractionRecord> records,
                        const GraphUniverse& universe,
                        const SplitDataset& split, int k_recent,
                        double truncation_quantile,
                        const std::vector<bool>* id_masked = nullptr);

}  // namespace tbg
