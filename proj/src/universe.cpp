#include "tbg/universe.hpp"

namespace tbg {

std::string GraphUniverse::composite(const std::string& key, NodeKind kind,
                                     DomainId domain) {
  std::string s = std::to_string(domain);
  s.push_back('|');
  s.push_back(kind_char(kind));
  s.push_back('|');
  s += key;
  return s;
}

DomainId GraphUniverse::add_domain(const std::string& name) {
  if (frozen_) throw Error("UNIVERSE_FROZEN", "cannot add domain after freeze");
  auto it = domain_ids_.find(name);
  if (it != domain_ids_.end()) return it->second;
  const auto id = static_cast<DomainId>(domain_names_.size());
  domain_names_.push_back(name);
  domain_ids_.emplace(name, id);
  ranges_.push_back({size(), size(), size()});
  return id;
}

DomainId GraphUniverse::domain_id(const std::string& name) const {
  auto it = domain_ids_.find(name);
  if (it == domain_ids_.end())
    throw Error("UNKNOWN_DOMAIN", "unknown domain: " + name);
  return it->second;
}

NodeIndex GraphUniverse::register_node(const std::string& key, NodeKind kind,
                                       DomainId domain) {
  if (frozen_)
    throw Error("UNIVERSE_FROZEN", "cannot register node after freeze");
  if (domain >= ranges_.size())
    throw Error("UNKNOWN_DOMAIN", "domain id out of range");
  const std::string ck = composite(key, kind, domain);
  auto it = index_.find(ck);
  if (it != index_.end()) return it->second;

  // Domain blocks stay contiguous with users before items; registration
  // must therefore proceed domain by domain, users first.
  auto& r = ranges_[domain];
  if (r.begin == r.end) {
    r.begin = r.users_end = r.end = size();
  }
  if (r.end != size())
    throw Error("UNIVERSE_ORDER",
                "domain '" + domain_names_[domain] +
                    "' is no longer the open registration block");
  if (kind == NodeKind::User && r.users_end != r.end)
    throw Error("UNIVERSE_ORDER",
                "users must be registered before items within a domain");

  const NodeIndex id = size();
  nodes_.push_back({key, kind, domain});
  index_.emplace(ck, id);
  if (kind == NodeKind::User) r.users_end = id + 1;
  r.end = id + 1;
  return id;
}

void GraphUniverse::freeze() { frozen_ = true; }

std::optional<NodeIndex> GraphUniverse::find(const std::string& key,
                                             NodeKind kind,
                                             DomainId domain) const {
  auto it = index_.find(composite(key, kind, domain));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string GraphUniverse::registry_key(NodeIndex i) const {
  const auto& n = nodes_.at(i);
  return domain_names_.at(n.domain) + "|" + kind_char(n.kind) + "|" + n.key;
}

std::optional<NodeIndex> GraphUniverse::find_registry_key(
    const std::string& rk) const {
  const auto p1 = rk.find('|');
  if (p1 == std::string::npos) return std::nullopt;
  const auto p2 = rk.find('|', p1 + 1);
  if (p2 == std::string::npos || p2 != p1 + 2) return std::nullopt;
  const std::string dom = rk.substr(0, p1);
  const char kc = rk[p1 + 1];
  if (kc != 'u' && kc != 'i') return std::nullopt;
  auto dit = domain_ids_.find(dom);
  if (dit == domain_ids_.end()) return std::nullopt;
  return find(rk.substr(p2 + 1), kc == 'u' ? NodeKind::User : NodeKind::Item,
              dit->second);
}

}  // namespace tbg
