#include "tbg/prompts.hpp"

#include <algorithm>
#include <cmath>

#include "tbg/rng.hpp"

namespace tbg {

namespace {

// Truncate to at most `cap` bytes without splitting a UTF-8 sequence.
std::string truncate_utf8(const std::string& s, std::size_t cap) {
  if (s.size() <= cap) return s;
  std::size_t end = cap;
  while (end > 0 && (static_cast<unsigned char>(s[end]) & 0xC0) == 0x80) --end;
  return s.substr(0, end);
}

std::string meta_or_empty(const std::map<std::string, std::string>& meta,
                          const char* key) {
  auto it = meta.find(key);
  return it == meta.end() ? std::string() : it->second;
}

}  // namespace

MaskedRecords apply_mask(std::span<const InteractionRecord> records,
                         const GraphUniverse& universe, const MaskSpec& spec) {
  MaskedRecords out;
  out.records.assign(records.begin(), records.end());
  out.id_masked.assign(universe.size(), false);
  if (spec.type < 0 || spec.rate <= 0.0) return out;
  if (spec.type > 4) throw Error("BAD_MASK", "unknown mask type");
  if (spec.rate > 1.0) throw Error("BAD_MASK", "mask rate must be <= 1");

  const auto n = static_cast<std::uint64_t>(universe.size());
  const auto want = static_cast<std::uint64_t>(
      std::llround(spec.rate * static_cast<double>(n)));
  std::vector<NodeIndex> ids(universe.size());
  for (NodeIndex i = 0; i < universe.size(); ++i) ids[i] = i;
  Rng rng(spec.seed);
  // Partial Fisher-Yates: the first `want` slots are the masked set.
  for (std::uint64_t i = 0; i < want && i < n; ++i) {
    const auto j = i + rng.uniform_index(n - i);
    std::swap(ids[i], ids[j]);
  }
  std::vector<bool> masked(universe.size(), false);
  for (std::uint64_t i = 0; i < want && i < n; ++i) masked[ids[i]] = true;
  out.masked_nodes = std::min(want, n);

  auto node_of = [&](const InteractionRecord& r, NodeKind k) {
    const DomainId d = universe.domain_id(r.domain);
    return universe.find(k == NodeKind::User ? r.user_key : r.item_key, k, d);
  };

  for (auto& r : out.records) {
    const auto u = node_of(r, NodeKind::User);
    const auto v = node_of(r, NodeKind::Item);
    const bool user_masked = u && masked[*u];
    const bool item_masked = v && masked[*v];
    switch (spec.type) {
      case 0:
        if (user_masked && u) out.id_masked[*u] = true;
        if (item_masked && v) out.id_masked[*v] = true;
        break;
      case 1:
        if (user_masked || item_masked) r.review_text.clear();
        break;
      case 2:
        if (item_masked) r.item_meta.erase("title");
        break;
      case 3:
        if (item_masked) {
          r.item_meta.erase("description");
          r.item_meta.erase("features");
        }
        break;
      case 4:
        if (item_masked) {
          r.item_meta.erase("price");
          r.item_meta.erase("brand");
          r.item_meta.erase("salesRank");
        }
        break;
      default:
        break;
    }
  }
  return out;
}

PromptSet build_prompts(std::span<const InteractionRecord> records,
                        const GraphUniverse& universe,
                        const SplitDataset& split, int k_recent,
                        double truncation_quantile,
                        const std::vector<bool>* id_masked) {
  if (records.empty()) throw Error("EMPTY_INPUT", "build_prompts: no records");
  if (!(truncation_quantile > 0.0 && truncation_quantile <= 1.0))
    throw Error("BAD_QUANTILE", "truncation_quantile must be in (0,1]");
  if (k_recent < 1) throw Error("BAD_K", "k_recent must be >= 1");

  const NodeIndex n = universe.size();
  auto masked = [&](NodeIndex i) {
    return id_masked && i < id_masked->size() && (*id_masked)[i];
  };
  auto key_text = [&](NodeIndex i) {
    return masked(i) ? std::string("[masked]") : universe.node(i).key;
  };

  // Static metadata: first record in input order mentioning the item.
  std::vector<const InteractionRecord*> item_meta_src(n, nullptr);
  for (const auto& r : records) {
    const DomainId d = universe.domain_id(r.domain);
    if (auto v = universe.find(r.item_key, NodeKind::Item, d))
      if (!item_meta_src[*v]) item_meta_src[*v] = &r;
  }

  // Interaction history comes from the train split only. Train records are
  // already timestamp-sorted with a stable tie-break, so the last k entries
  // per node are the k most recent.
  std::vector<std::vector<std::uint64_t>> history(n);
  for (const auto& sr : split.train) {
    history[sr.user].push_back(sr.record_index);
    history[sr.item].push_back(sr.record_index);
  }

  PromptSet ps;
  ps.k_recent = k_recent;
  ps.truncation_quantile = truncation_quantile;
  ps.prompts.resize(n);

  for (NodeIndex i = 0; i < n; ++i) {
    const NodeRecord& node = universe.node(i);
    const auto& hist = history[i];
    const std::size_t take =
        std::min<std::size_t>(hist.size(), static_cast<std::size_t>(k_recent));
    std::string p;
    if (node.kind == NodeKind::User) {
      p = "User " + key_text(i) + " in domain " + universe.domain_name(node.domain) +
          ".";
      if (take > 0) {
        p += " Recent interactions:";
        for (std::size_t j = 0; j < take; ++j) {
          const auto& r = records[hist[hist.size() - 1 - j]];
          const DomainId d = universe.domain_id(r.domain);
          const auto item_id = universe.find(r.item_key, NodeKind::Item, d);
          p += " item " + (item_id ? key_text(*item_id) : r.item_key);
          const std::string title = meta_or_empty(r.item_meta, "title");
          if (!title.empty()) p += " \"" + title + "\"";
          if (!r.review_text.empty()) p += " review: \"" + r.review_text + "\"";
          p += ";";
        }
      }
    } else {
      p = "Item " + key_text(i) + " in domain " + universe.domain_name(node.domain) +
          ".";
      if (const InteractionRecord* src = item_meta_src[i]) {
        const struct {
          const char* key;
          const char* label;
        } fields[] = {{"title", " Title: "},       {"description", " Description: "},
                      {"features", " Features: "}, {"brand", " Brand: "},
                      {"price", " Price: "},       {"salesRank", " Sales rank: "}};
        for (const auto& f : fields) {
          const std::string v = meta_or_empty(src->item_meta, f.key);
          if (!v.empty()) p += f.label + v + ".";
        }
      }
      if (take > 0) {
        p += " Recent interactions:";
        for (std::size_t j = 0; j < take; ++j) {
          const auto& r = records[hist[hist.size() - 1 - j]];
          const DomainId d = universe.domain_id(r.domain);
          const auto user_id = universe.find(r.user_key, NodeKind::User, d);
          p += " user " + (user_id ? key_text(*user_id) : r.user_key);
          if (!r.review_text.empty()) p += " review: \"" + r.review_text + "\"";
          p += ";";
        }
      }
    }
    ps.prompts[i] = std::move(p);
  }

  // Quantile cap over raw lengths of all prompts: the ceil(q*n)-th smallest.
  std::vector<std::size_t> lengths;
  lengths.reserve(ps.prompts.size());
  for (const auto& s : ps.prompts) lengths.push_back(s.size());
  std::sort(lengths.begin(), lengths.end());
  const auto rank = static_cast<std::size_t>(std::ceil(
      truncation_quantile * static_cast<double>(lengths.size()) - 1e-9));
  ps.cap = lengths[std::max<std::size_t>(rank, 1) - 1];
  for (auto& s : ps.prompts) s = truncate_utf8(s, ps.cap);
  return ps;
}

}  // namespace tbg
