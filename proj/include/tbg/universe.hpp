#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tbg/common.hpp"

namespace tbg {

struct NodeRecord {
  std::string key;  // external key, unique within (domain, kind)
  NodeKind kind;
  DomainId domain;
};

// Node registry shared by every stage. Indices are dense and contiguous;
// each domain occupies one contiguous block, users before items. Frozen
// universes reject insertion, so NodeIds are stable for the lifetime of a
// pipeline run and across runs given the same inputs.
class GraphUniverse {
 public:
  DomainId add_domain(const std::string& name);
  DomainId domain_id(const std::string& name) const;  // throws if unknown
  const std::string& domain_name(DomainId d) const { return domain_names_.at(d); }
  std::size_t num_domains() const { return domain_names_.size(); }

  NodeIndex register_node(const std::string& key, NodeKind kind, DomainId domain);
  void freeze();
  bool frozen() const { return frozen_; }

  NodeIndex size() const { return static_cast<NodeIndex>(nodes_.size()); }
  const NodeRecord& node(NodeIndex i) const { return nodes_.at(i); }
  DomainId domain_of(NodeIndex i) const { return nodes_[i].domain; }
  NodeKind kind_of(NodeIndex i) const { return nodes_[i].kind; }

  std::optional<NodeIndex> find(const std::string& key, NodeKind kind,
                                DomainId domain) const;
  // Composite registry key "domain|u/i|key"; used by the TBGE format.
  std::string registry_key(NodeIndex i) const;
  std::optional<NodeIndex> find_registry_key(const std::string& rk) const;

  struct DomainRange {
    NodeIndex begin = 0;
    NodeIndex users_end = 0;  // users: [begin, users_end), items: [users_end, end)
    NodeIndex end = 0;
  };
  const DomainRange& domain_range(DomainId d) const { return ranges_.at(d); }
  NodeIndex domain_node_count(DomainId d) const {
    const auto& r = ranges_.at(d);
    return r.end - r.begin;
  }
  NodeIndex domain_item_count(DomainId d) const {
    const auto& r = ranges_.at(d);
    return r.end - r.users_end;
  }

 private:
  static std::string composite(const std::string& key, NodeKind kind, DomainId domain);

  std::vector<std::string> domain_names_;
  std::unordered_map<std::string, DomainId> domain_ids_;
  std::vector<NodeRecord> nodes_;
  std::unordered_map<std::string, NodeIndex> index_;
  std::vector<DomainRange> ranges_;
  bool frozen_ = false;
};

}  // namespace tbg
