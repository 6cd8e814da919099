#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tbg/universe.hpp"

namespace tbg {

struct InteractionRecord {
  std::string user_key;
  std::string item_key;
  std::int64_t timestamp = 0;
  std::string domain;
  std::string review_text;                       // empty when absent
  std::map<std::string, std::string> item_meta;  // title, description, ...
};

struct LogFormat {
  char delimiter = '\t';
};

struct ParseResult {
  std::vector<InteractionRecord> records;
  std::uint64_t skipped_rows = 0;
};

// Header row must name user, item, timestamp, domain. Optional columns:
// review, title, description, features, brand, price, salesRank. Malformed
// rows are skipped and counted.
ParseResult parse_interactions(const std::string& path, const LogFormat& fmt = {});
ParseResult parse_interactions_text(const std::string& text,
                                    const std::string& what,
                                    const LogFormat& fmt = {});

// Builds the node registry from records: domains in first-appearance order,
// within each domain users sorted by key, then items sorted by key. The
// result is frozen.
GraphUniverse build_universe(std::span<const InteractionRecord> records);

struct SplitRecord {
  NodeIndex user;
  NodeIndex item;
  std::int64_t timestamp;
  DomainId domain;
  std::uint64_t record_index;  // position in the input record list
};

struct SplitDataset {
  std::vector<SplitRecord> train;
  std::vector<SplitRecord> valid;
  std::vector<SplitRecord> test;
  double fractions[3] = {0.8, 0.1, 0.1};
};

// Global sort by timestamp across all domains jointly, stable tie-break by
// input order. Cold users/items outside the train slice are kept.
SplitDataset temporal_split(std::span<const InteractionRecord> records,
                            const GraphUniverse& universe,
                            double f_train = 0.8, double f_valid = 0.1,
                            double f_test = 0.1);

}  // namespace tbg
