#include "tbg/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "tbg/serialize.hpp"

namespace tbg {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::optional<std::int64_t> parse_i64(const std::string& s) {
  std::int64_t v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) return std::nullopt;
  return v;
}

const char* kMetaColumns[] = {"title",  "description", "features",
                              "brand",  "price",       "salesRank"};

}  // namespace

ParseResult parse_interactions_text(const std::string& text,
                                    const std::string& what,
                                    const LogFormat& fmt) {
  ParseResult res;
  std::size_t pos = 0;
  auto next_line = [&](std::string& line) -> bool {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;
    return true;
  };

  std::string header;
  if (!next_line(header))
    throw Error("PARSE_HEADER", what + ": empty interaction log");
  const auto cols = split_line(header, fmt.delimiter);
  std::map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < cols.size(); ++i) col_of[cols[i]] = i;
  for (const char* required : {"user", "item", "timestamp", "domain"})
    if (!col_of.count(required))
      throw Error("PARSE_HEADER",
                  what + ": missing mandatory column '" + required + "'");

  std::string line;
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto f = split_line(line, fmt.delimiter);
    if (f.size() != cols.size()) {
      res.skipped_rows++;
      continue;
    }
    InteractionRecord rec;
    rec.user_key = f[col_of["user"]];
    rec.item_key = f[col_of["item"]];
    rec.domain = f[col_of["domain"]];
    const auto ts = parse_i64(f[col_of["timestamp"]]);
    if (rec.user_key.empty() || rec.item_key.empty() || rec.domain.empty() ||
        !ts || *ts < 0) {
      res.skipped_rows++;
      continue;
    }
    rec.timestamp = *ts;
    if (auto it = col_of.find("review"); it != col_of.end())
      rec.review_text = f[it->second];
    for (const char* mc : kMetaColumns)
      if (auto it = col_of.find(mc); it != col_of.end() && !f[it->second].empty())
        rec.item_meta[mc] = f[it->second];
    res.records.push_back(std::move(rec));
  }
  return res;
}

ParseResult parse_interactions(const std::string& path, const LogFormat& fmt) {
  return parse_interactions_text(read_file(path), path, fmt);
}

GraphUniverse build_universe(std::span<const InteractionRecord> records) {
  GraphUniverse u;
  std::vector<std::string> domain_order;
  std::map<std::string, std::set<std::string>> users, items;
  for (const auto& r : records) {
    if (!users.count(r.domain)) domain_order.push_back(r.domain);
    users[r.domain].insert(r.user_key);
    items[r.domain].insert(r.item_key);
  }
  for (const auto& d : domain_order) {
    const DomainId id = u.add_domain(d);
    for (const auto& k : users[d]) u.register_node(k, NodeKind::User, id);
    for (const auto& k : items[d]) u.register_node(k, NodeKind::Item, id);
  }
  u.freeze();
  return u;
}

SplitDataset temporal_split(std::span<const InteractionRecord> records,
                            const GraphUniverse& universe, double f_train,
                            double f_valid, double f_test) {
  if (records.empty())
    throw Error("EMPTY_INPUT", "temporal_split: no records");
  if (std::abs(f_train + f_valid + f_test - 1.0) > 1e-9)
    throw Error("BAD_FRACTIONS", "split fractions must sum to 1");

  std::vector<SplitRecord> all;
  all.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const DomainId d = universe.domain_id(r.domain);
    const auto uid = universe.find(r.user_key, NodeKind::User, d);
    const auto iid = universe.find(r.item_key, NodeKind::Item, d);
    if (!uid || !iid)
      throw Error("UNKNOWN_KEY", "record references unregistered node");
    all.push_back({*uid, *iid, r.timestamp, d, i});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const SplitRecord& a, const SplitRecord& b) {
                     return a.timestamp < b.timestamp;
                   });

  const std::size_t n = all.size();
  const auto b1 = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * f_train + 1e-9));
  const auto b2 = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * (f_train + f_valid) + 1e-9));

  SplitDataset out;
  out.fractions[0] = f_train;
  out.fractions[1] = f_valid;
  out.fractions[2] = f_test;
  out.train.assign(all.begin(), all.begin() + b1);
  out.valid.assign(all.begin() + b1, all.begin() + b2);
  out.test.assign(all.begin() + b2, all.end());
  return out;
}

}  // namespace tbg
