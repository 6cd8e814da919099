// tbg: batch experiment runner for text-bridged cross-domain graph
// recommendation. Subcommands cover the whole pipeline: synth, prompts,
// embed, edges, pretrain, finetune, zeroshot, eval, protocol.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "tbg/protocol.hpp"
#include "tbg/provider.hpp"
#include "tbg/serialize.hpp"

#ifndef TBG_BUILD_ID
#define TBG_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using tbg::json;

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::string protocol_name;
  // overrides
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma;
  std::optional<double> lr;
  std::optional<int> layers;
  std::optional<int> epochs;
};

struct Loaded {
  json config;      // effective config (defaults + file + overrides)
  fs::path base;    // directory for resolving relative paths
  fs::path out;     // output directory
  std::string config_hash;
};

json default_config() {
  json j;
  j["train"] = tbg::TrainConfig{}.to_json();
  j["synth"] = tbg::SynthSpec{}.to_json();
  j["data"] = {{"logs", json::array()},
               {"target_log", ""},
               {"embeddings", json::array()},
               {"target_embeddings", json::array()},
               {"target_domain", ""}};
  j["prompts"] = {{"k_recent", 10}, {"truncation_quantile", 0.95}};
  j["provider"] = {{"url", ""},
                   {"batch_size", 16},
                   {"max_retries", 3},
                   {"hash_dim", 32},
                   {"cache", ""}};
  j["protocol"] = {{"gammas", {0.9, 0.95, 0.99, 0.995}},
                   {"mask_types", {0, 1, 2, 3, 4}},
                   {"mask_rates", {0.1, 0.2, 0.5}},
                   {"coldstart_fraction", 0.05},
                   {"hash_embed_dim", 32}};
  j["output_dir"] = "out";
  return j;
}

void merge_into(json& base, const json& add) {
  for (auto it = add.begin(); it != add.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

Loaded load_config(const CliOptions& opt) {
  Loaded l;
  l.config = default_config();
  l.base = fs::current_path();
  if (!opt.config_path.empty()) {
    const std::string text = tbg::read_file(opt.config_path);
    json file = json::parse(text, nullptr, false);
    if (file.is_discarded())
      throw tbg::Error("BAD_CONFIG", "config is not valid JSON: " + opt.config_path);
    merge_into(l.config, file);
    l.base = fs::absolute(fs::path(opt.config_path)).parent_path();
  }
  if (opt.seed) {
    l.config["train"]["seed"] = *opt.seed;
    l.config["synth"]["seed"] = *opt.seed;
  }
  if (opt.gamma) l.config["train"]["gamma"] = *opt.gamma;
  if (opt.lr) l.config["train"]["lr"] = *opt.lr;
  if (opt.layers) l.config["train"]["layers"] = *opt.layers;
  if (opt.epochs) {
    l.config["train"]["epochs"] = *opt.epochs;
    l.config["train"]["finetune_epochs"] = *opt.epochs;
  }
  l.out = opt.out_dir.empty()
              ? l.base / l.config["output_dir"].get<std::string>()
              : fs::path(opt.out_dir);
  l.config_hash = tbg::canonical_config_hash(l.config);
  return l;
}

fs::path resolve(const Loaded& l, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : l.base / path;
}

std::vector<std::string> resolve_list(const Loaded& l, const json& arr) {
  std::vector<std::string> out;
  for (const auto& p : arr) out.push_back(resolve(l, p.get<std::string>()).string());
  return out;
}

std::int64_t unix_time_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void write_json(const fs::path& path, const json& j) {
  tbg::atomic_write_file(path.string(), j.dump(2) + "\n");
}

void write_run_manifest(const Loaded& l, const std::string& command,
                        const std::vector<std::string>& artifacts) {
  json m;
  m["command"] = command;
  m["config_hash"] = l.config_hash;
  m["build_id"] = TBG_BUILD_ID;
  m["artifacts"] = artifacts;
  m["timestamp_ms"] = unix_time_ms();
  write_json(l.out / ("run_" + command + ".json"), m);
}

struct DataBundle {
  std::vector<tbg::InteractionRecord> src_records;
  std::vector<tbg::InteractionRecord> tgt_records;  // empty if no target
  tbg::GraphUniverse universe;  // sources first, then target if present
  tbg::SplitDataset src_split;
  tbg::SplitDataset tgt_split;  // valid only when target present
  std::optional<tbg::DomainId> target_domain;
};

DataBundle load_data(const Loaded& l, bool with_target) {
  DataBundle b;
  const auto logs = resolve_list(l, l.config["data"]["logs"]);
  if (logs.empty()) throw tbg::Error("BAD_CONFIG", "data.logs is empty");
  for (const auto& path : logs) {
    const auto parsed = tbg::parse_interactions(path);
    b.src_records.insert(b.src_records.end(), parsed.records.begin(),
                         parsed.records.end());
  }
  if (with_target) {
    const std::string tlog = l.config["data"]["target_log"].get<std::string>();
    if (tlog.empty()) throw tbg::Error("BAD_CONFIG", "data.target_log is empty");
    b.tgt_records = tbg::parse_interactions(resolve(l, tlog).string()).records;
    if (b.tgt_records.empty())
      throw tbg::Error("EMPTY_INPUT", "target log has no valid rows");
    std::vector<tbg::InteractionRecord> joint = b.src_records;
    joint.insert(joint.end(), b.tgt_records.begin(), b.tgt_records.end());
    b.universe = tbg::build_universe(joint);
    b.target_domain = b.universe.domain_id(b.tgt_records.front().domain);
    b.tgt_split = tbg::temporal_split(b.tgt_records, b.universe);
    tbg::GraphUniverse src_universe = tbg::build_universe(b.src_records);
    b.src_split = tbg::temporal_split(b.src_records, src_universe);
  } else {
    b.universe = tbg::build_universe(b.src_records);
    b.src_split = tbg::temporal_split(b.src_records, b.universe);
  }
  return b;
}

tbg::TextEmbeddingMatrix load_embeddings(const Loaded& l,
                                         const tbg::GraphUniverse& universe,
                                         bool with_target) {
  auto paths = resolve_list(l, l.config["data"]["embeddings"]);
  if (with_target) {
    const auto extra = resolve_list(l, l.config["data"]["target_embeddings"]);
    paths.insert(paths.end(), extra.begin(), extra.end());
  }
  if (paths.empty()) throw tbg::Error("BAD_CONFIG", "data.embeddings is empty");
  return tbg::read_embedding_matrix(paths, universe);
}

void write_epoch_log(const fs::path& path,
                     const std::vector<tbg::EpochLogRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    json j;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["bpr"] = r.bpr;
    j["reg"] = r.reg;
    j["val_auc"] = r.val_auc;
    j["wall_ms"] = r.wall_ms;
    out += j.dump() + "\n";
  }
  tbg::atomic_write_file(path.string(), out);
}

// Metrics artifact: JSON with a timestamp field that is excluded from the
// canonical hash, plus a flat CSV for plotting.
void write_metrics(const Loaded& l, const tbg::MetricsReport& report,
                   const std::string& stem) {
  json j = report.to_json();
  j["canonical_hash"] = tbg::hex64(tbg::fnv1a64(j.dump()));
  j["timestamp_ms"] = unix_time_ms();
  write_json(l.out / (stem + ".json"), j);
  tbg::atomic_write_file((l.out / (stem + ".csv")).string(), report.to_csv());
}

// ---------------------------------------------------------------------------

int cmd_synth(const Loaded& l) {
  const auto spec = tbg::SynthSpec::from_json(l.config["synth"]);
  const tbg::SynthResult res = tbg::generate(spec);
  fs::create_directories(l.out);

  json manifest;
  manifest["config_hash"] = l.config_hash;
  manifest["build_id"] = TBG_BUILD_ID;
  std::vector<std::string> artifacts;
  json data;
  data["logs"] = json::array();
  data["embeddings"] = json::array();

  for (std::size_t d = 0; d < res.domain_names.size(); ++d) {
    const std::string& name = res.domain_names[d];
    std::vector<tbg::InteractionRecord> recs;
    for (const auto& r : res.records)
      if (r.domain == name) recs.push_back(r);
    const std::string log_name = "log_" + name + ".tsv";
    tbg::atomic_write_file((l.out / log_name).string(),
                           tbg::render_interaction_log(recs));
    std::uint64_t checksum = 0xcbf29ce484222325ull;
    for (const auto& r : recs) {
      checksum = tbg::fnv1a64(r.user_key, checksum);
      checksum = tbg::fnv1a64(r.item_key, checksum);
    }
    manifest["rows"][name] = recs.size();
    manifest["key_checksum"][name] = tbg::hex64(checksum);

    tbg::EmbeddingFile ef;
    ef.dim = res.embeddings.dim;
    for (std::size_t i = 0; i < res.embeddings.keys.size(); ++i) {
      const auto& key = res.embeddings.keys[i];
      if (key.rfind(name + "|", 0) != 0) continue;
      ef.keys.push_back(key);
      ef.values.insert(ef.values.end(),
                       res.embeddings.values.begin() + i * ef.dim,
                       res.embeddings.values.begin() + (i + 1) * ef.dim);
    }
    const std::string emb_name = "emb_" + name + ".tbge";
    tbg::write_embedding_file((l.out / emb_name).string(), ef);
    artifacts.push_back(log_name);
    artifacts.push_back(emb_name);
    const bool is_target = d + 1 == res.domain_names.size();
    if (is_target) {
      data["target_log"] = log_name;
      data["target_embeddings"].push_back(emb_name);
      data["target_domain"] = name;
    } else {
      data["logs"].push_back(log_name);
      data["embeddings"].push_back(emb_name);
    }
  }
  write_json(l.out / "synth_manifest.json", manifest);

  // Ready-to-run experiment config wiring the generated files together.
  json exp = l.config;
  exp["data"] = data;
  exp["output_dir"] = ".";
  write_json(l.out / "experiment.json", exp);
  artifacts.push_back("synth_manifest.json");
  artifacts.push_back("experiment.json");
  write_run_manifest(l, "synth", artifacts);
  return 0;
}

int cmd_prompts(const Loaded& l) {
  const bool with_target =
      !l.config["data"]["target_log"].get<std::string>().empty();
  DataBundle b = load_data(l, with_target);
  std::vector<tbg::InteractionRecord> records = b.src_records;
  records.insert(records.end(), b.tgt_records.begin(), b.tgt_records.end());
  const tbg::SplitDataset split = tbg::temporal_split(records, b.universe);
  const auto ps = tbg::build_prompts(
      records, b.universe, split, l.config["prompts"]["k_recent"].get<int>(),
      l.config["prompts"]["truncation_quantile"].get<double>());
  fs::create_directories(l.out);
  std::string out;
  for (tbg::NodeIndex i = 0; i < b.universe.size(); ++i) {
    json j;
    j["key"] = b.universe.registry_key(i);
    j["prompt"] = ps.prompts[i];
    out += j.dump() + "\n";
  }
  tbg::atomic_write_file((l.out / "prompts.jsonl").string(), out);
  json stats{{"cap", ps.cap},
             {"k_recent", ps.k_recent},
             {"truncation_quantile", ps.truncation_quantile},
             {"template_version", ps.template_version},
             {"count", ps.prompts.size()},
             {"config_hash", l.config_hash},
             {"build_id", TBG_BUILD_ID}};
  write_json(l.out / "prompts_stats.json", stats);
  write_run_manifest(l, "prompts", {"prompts.jsonl", "prompts_stats.json"});
  return 0;
}

int cmd_embed(const Loaded& l) {
  const bool with_target =
      !l.config["data"]["target_log"].get<std::string>().empty();
  DataBundle b = load_data(l, with_target);
  std::vector<tbg::InteractionRecord> records = b.src_records;
  records.insert(records.end(), b.tgt_records.begin(), b.tgt_records.end());
  const tbg::SplitDataset split = tbg::temporal_split(records, b.universe);
  const auto ps = tbg::build_prompts(
      records, b.universe, split, l.config["prompts"]["k_recent"].get<int>(),
      l.config["prompts"]["truncation_quantile"].get<double>());

  tbg::ProviderConfig pc;
  pc.batch_size = l.config["provider"]["batch_size"].get<int>();
  pc.max_retries = l.config["provider"]["max_retries"].get<int>();
  const std::string cache = l.config["provider"]["cache"].get<std::string>();
  fs::create_directories(l.out);
  pc.cache_path = cache.empty() ? (l.out / "embed_cache.tbge").string()
                                : resolve(l, cache).string();

  const std::string url = l.config["provider"]["url"].get<std::string>();
  std::unique_ptr<tbg::EmbeddingTransport> transport;
  if (url.empty())
    transport = std::make_unique<tbg::HashEmbeddingTransport>(
        l.config["provider"]["hash_dim"].get<std::uint32_t>());
  else
    transport = std::make_unique<tbg::HttpEmbeddingTransport>(url);

  tbg::FetchStats stats;
  const auto matrix = tbg::fetch_embeddings(*transport, ps, b.universe, pc, &stats);

  tbg::EmbeddingFile ef;
  ef.dim = matrix.dim;
  for (tbg::NodeIndex i = 0; i < b.universe.size(); ++i) {
    ef.keys.push_back(b.universe.registry_key(i));
    const auto row = matrix.row(i);
    ef.values.insert(ef.values.end(), row.begin(), row.end());
  }
  tbg::write_embedding_file((l.out / "embeddings.tbge").string(), ef);
  json j{{"requests", stats.requests},
         {"retries", stats.retries},
         {"cache_hits", stats.cache_hits},
         {"dim", matrix.dim},
         {"count", b.universe.size()},
         {"config_hash", l.config_hash},
         {"build_id", TBG_BUILD_ID}};
  write_json(l.out / "embed_stats.json", j);
  write_run_manifest(l, "embed", {"embeddings.tbge", "embed_stats.json"});
  return 0;
}

int cmd_edges(const Loaded& l) {
  const bool with_target =
      !l.config["data"]["target_log"].get<std::string>().empty();
  DataBundle b = load_data(l, with_target);
  const auto text = load_embeddings(l, b.universe, with_target);
  const auto cfg = tbg::TrainConfig::from_json(l.config["train"]);

  std::vector<tbg::DomainId> domains(b.universe.size());
  std::vector<tbg::NodeKind> kinds(b.universe.size());
  std::vector<tbg::NodeIndex> all_nodes(b.universe.size());
  for (tbg::NodeIndex i = 0; i < b.universe.size(); ++i) {
    domains[i] = b.universe.domain_of(i);
    kinds[i] = b.universe.kind_of(i);
    all_nodes[i] = i;
  }

  fs::create_directories(l.out);
  json summary;
  summary["gamma"] = cfg.gamma;
  summary["k_cap"] = cfg.k_cap;
  summary["config_hash"] = l.config_hash;
  summary["build_id"] = TBG_BUILD_ID;

  const tbg::DomainId sentinel =
      b.target_domain ? *b.target_domain
                      : static_cast<tbg::DomainId>(b.universe.num_domains());
  auto count_mode = [&](tbg::SemanticMode mode) {
    const auto set = tbg::build_mode_edges(text, domains, kinds, mode, sentinel,
                                           cfg.gamma, cfg.k_cap);
    return set.edges.size();
  };
  summary["edges"]["pretrain-cross-domain"] =
      count_mode(tbg::SemanticMode::PretrainCrossDomain);
  if (b.target_domain) {
    summary["edges"]["finetune-src-tgt"] =
        count_mode(tbg::SemanticMode::FinetuneSrcTgt);
    summary["edges"]["finetune-tgt-global"] =
        count_mode(tbg::SemanticMode::FinetuneTgtGlobal);
  }

  // Generic same-kind neighbor cache, reusable across modes.
  std::vector<tbg::NodeIndex> users, items;
  for (tbg::NodeIndex i = 0; i < b.universe.size(); ++i)
    (kinds[i] == tbg::NodeKind::User ? users : items).push_back(i);
  tbg::NeighborCache cache;
  cache.k = cfg.k_cap;
  auto add_lists = [&](const std::vector<tbg::NodeIndex>& group) {
    if (group.empty()) return;
    const auto lists =
        tbg::topk_cosine_neighbors(text, group, group, cfg.k_cap);
    for (std::size_t i = 0; i < lists.queries.size(); ++i) {
      cache.query_keys.push_back(b.universe.registry_key(lists.queries[i]));
      std::vector<std::pair<std::string, float>> entries;
      for (const auto& nb : lists.lists[i])
        entries.emplace_back(b.universe.registry_key(nb.node),
                             static_cast<float>(nb.similarity));
      cache.lists.push_back(std::move(entries));
    }
  };
  add_lists(users);
  add_lists(items);
  tbg::write_neighbor_cache((l.out / "edges.tbgn").string(), cache);
  write_json(l.out / "edges_summary.json", summary);
  write_run_manifest(l, "edges", {"edges.tbgn", "edges_summary.json"});
  return 0;
}

int cmd_pretrain(const Loaded& l) {
  DataBundle b = load_data(l, false);
  const auto text = load_embeddings(l, b.universe, false);
  const auto cfg = tbg::TrainConfig::from_json(l.config["train"]);
  const tbg::TrainResult res = tbg::pretrain(b.universe, b.src_split, text, cfg);
  fs::create_directories(l.out);
  tbg::Checkpoint c = res.checkpoint;
  c.config_hash = l.config_hash;
  tbg::save_checkpoint((l.out / "checkpoint.tbgc").string(), c);
  write_epoch_log(l.out / "epochs_pretrain.jsonl", res.log);
  write_run_manifest(l, "pretrain", {"checkpoint.tbgc", "epochs_pretrain.jsonl"});
  return 0;
}

struct FinetuneInputs {
  DataBundle bundle;
  tbg::TextEmbeddingMatrix text;
  tbg::Checkpoint source;
  tbg::TrainConfig cfg;
};

FinetuneInputs load_finetune_inputs(const Loaded& l, const CliOptions& opt) {
  FinetuneInputs in{load_data(l, true), {}, {}, {}};
  in.text = load_embeddings(l, in.bundle.universe, true);
  const std::string ckpt_path =
      opt.checkpoint.empty()
          ? (l.out / "checkpoint.tbgc").string()
          : resolve(l, opt.checkpoint).string();
  in.source = tbg::load_checkpoint(ckpt_path);
  in.cfg = tbg::TrainConfig::from_json(l.config["train"]);
  return in;
}

int cmd_finetune(const Loaded& l, const CliOptions& opt) {
  FinetuneInputs in = load_finetune_inputs(l, opt);
  const tbg::TrainResult res =
      tbg::finetune(in.source, in.bundle.universe, in.bundle.src_split,
                    in.bundle.tgt_split, *in.bundle.target_domain, in.text,
                    in.cfg);
  fs::create_directories(l.out);
  tbg::Checkpoint c = res.checkpoint;
  c.config_hash = l.config_hash;
  tbg::save_checkpoint((l.out / "checkpoint_ft.tbgc").string(), c);
  write_epoch_log(l.out / "epochs_finetune.jsonl", res.log);
  write_run_manifest(l, "finetune",
                     {"checkpoint_ft.tbgc", "epochs_finetune.jsonl"});
  return 0;
}

int cmd_zeroshot(const Loaded& l, const CliOptions& opt) {
  FinetuneInputs in = load_finetune_inputs(l, opt);
  tbg::InferenceResult res = tbg::training_free_infer(
      in.source, in.bundle.universe, in.bundle.src_split, in.bundle.tgt_split,
      *in.bundle.target_domain, in.text, in.cfg);
  fs::create_directories(l.out);
  res.checkpoint.config_hash = l.config_hash;
  tbg::save_checkpoint((l.out / "checkpoint_zs.tbgc").string(), res.checkpoint);
  write_run_manifest(l, "zeroshot", {"checkpoint_zs.tbgc"});
  return 0;
}

int cmd_eval(const Loaded& l, const CliOptions& opt) {
  const std::string ckpt_path =
      opt.checkpoint.empty() ? (l.out / "checkpoint_ft.tbgc").string()
                             : resolve(l, opt.checkpoint).string();
  const tbg::Checkpoint c = tbg::load_checkpoint(ckpt_path);
  // Assembly-relevant settings come from the checkpoint so evaluation sees
  // exactly the graphs the model was trained on.
  const auto cfg = tbg::TrainConfig::from_json(c.config);
  fs::create_directories(l.out);

  std::vector<std::string> domain_names;

  if (c.stage == "pretrain") {
    DataBundle b = load_data(l, false);
    const auto text = load_embeddings(l, b.universe, false);
    const auto assembly =
        tbg::assemble_pretrain(b.universe, b.src_split, text, cfg.gamma, cfg.k_cap);
    for (std::size_t i = 0; i < assembly.domain_graphs.size(); ++i) {
      const std::string key =
          "domain:" + b.universe.domain_name(assembly.domains[i]);
      if (c.meta["fingerprints"][key].get<std::string>() !=
          tbg::hex64(tbg::graph_fingerprint(assembly.domain_graphs[i])))
        throw tbg::Error("FINGERPRINT_MISMATCH",
                         "checkpoint does not match source graphs (" + key + ")");
    }
    for (tbg::DomainId d = 0; d < b.universe.num_domains(); ++d)
      domain_names.push_back(b.universe.domain_name(d));
    tbg::Rng eval_rng = tbg::Rng(cfg.seed).fork("eval/test");
    const auto instances =
        tbg::sample_eval_negatives(b.src_split, b.universe, tbg::SplitPart::Test,
                                   cfg.n_neg_eval, eval_rng, nullptr);
    const auto final =
        tbg::pretrain_final_embeddings(assembly, cfg, c.params, text);
    const auto report = tbg::compute_metrics(instances, final, domain_names,
                                             c.config_hash, TBG_BUILD_ID);
    write_metrics(l, report, "metrics");
  } else {
    DataBundle b = load_data(l, true);
    const auto text = load_embeddings(l, b.universe, true);
    const auto assembly = tbg::assemble_finetune(
        b.universe, *b.target_domain, b.src_split, b.tgt_split, text, cfg.gamma,
        cfg.k_cap);
    const auto want_cross = c.meta["fingerprints"]["cross"].get<std::string>();
    if (want_cross != tbg::hex64(tbg::graph_fingerprint(assembly.cross_graph)))
      throw tbg::Error("FINGERPRINT_MISMATCH",
                       "checkpoint does not match the fine-tune graphs (cross)");
    const auto want_gf = c.meta["fingerprints"]["global_fine"].get<std::string>();
    if (want_gf !=
        tbg::hex64(tbg::graph_fingerprint(assembly.global_fine_graph)))
      throw tbg::Error(
          "FINGERPRINT_MISMATCH",
          "checkpoint does not match the fine-tune graphs (global_fine)");

    for (tbg::DomainId d = 0; d < b.universe.num_domains(); ++d)
      domain_names.push_back(b.universe.domain_name(d));
    tbg::Rng eval_rng = tbg::Rng(cfg.seed).fork("eval/test");
    auto instances =
        tbg::sample_eval_negatives(b.tgt_split, b.universe, tbg::SplitPart::Test,
                                   cfg.n_neg_eval, eval_rng,
                                   &*b.target_domain);
    for (auto& inst : instances) {
      inst.user = assembly.stack_of_universe(inst.user);
      inst.pos_item = assembly.stack_of_universe(inst.pos_item);
      for (auto& n : inst.negatives) n = assembly.stack_of_universe(n);
    }
    const auto final = tbg::finetune_final_embeddings(assembly, cfg, c.params);
    const auto report = tbg::compute_metrics(instances, final, domain_names,
                                             c.config_hash, TBG_BUILD_ID);
    write_metrics(l, report, "metrics");
  }
  write_run_manifest(l, "eval", {"metrics.json", "metrics.csv"});
  return 0;
}

int cmd_protocol(const Loaded& l, const CliOptions& opt) {
  if (opt.protocol_name.empty())
    throw tbg::Error("BAD_CONFIG", "protocol requires --name");
  tbg::ProtocolConfig pc;
  pc.synth = tbg::SynthSpec::from_json(l.config["synth"]);
  pc.train = tbg::TrainConfig::from_json(l.config["train"]);
  pc.target_domain = l.config["data"]["target_domain"].get<std::string>();
  pc.gammas = l.config["protocol"]["gammas"].get<std::vector<double>>();
  pc.mask_types = l.config["protocol"]["mask_types"].get<std::vector<int>>();
  pc.mask_rates = l.config["protocol"]["mask_rates"].get<std::vector<double>>();
  pc.coldstart_fraction = l.config["protocol"]["coldstart_fraction"].get<double>();
  pc.hash_embed_dim = l.config["protocol"]["hash_embed_dim"].get<std::uint32_t>();
  pc.k_recent = l.config["prompts"]["k_recent"].get<int>();
  pc.truncation_quantile = l.config["prompts"]["truncation_quantile"].get<double>();
  pc.build_id = TBG_BUILD_ID;

  const auto rows = tbg::run_protocol(opt.protocol_name, pc);
  fs::create_directories(l.out);
  json j;
  j["protocol"] = opt.protocol_name;
  j["config_hash"] = l.config_hash;
  j["build_id"] = TBG_BUILD_ID;
  j["rows"] = tbg::protocol_rows_to_json(rows);
  const std::string stem = "protocol_" + opt.protocol_name;
  write_json(l.out / (stem + ".json"), j);
  tbg::atomic_write_file((l.out / (stem + ".csv")).string(),
                         tbg::protocol_rows_to_csv(rows));
  write_run_manifest(l, "protocol", {stem + ".json", stem + ".csv"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tbg: text-bridged graph recommendation pipeline"};
  app.set_version_flag("--version", std::string("tbg 0.1.0 (") + TBG_BUILD_ID + ")");
  app.require_subcommand(1);

  CliOptions opt;
  app.add_option("-c,--config", opt.config_path, "experiment config (JSON)");
  app.add_option("-o,--out", opt.out_dir, "output directory override");
  app.add_option("--seed", opt.seed, "override train+synth seed");
  app.add_option("--gamma", opt.gamma, "override semantic threshold");
  app.add_option("--lr", opt.lr, "override learning rate");
  app.add_option("--layers", opt.layers, "override propagation layers");
  app.add_option("--epochs", opt.epochs, "override epoch counts");
  app.add_option("--checkpoint", opt.checkpoint, "checkpoint path");

  const char* names[] = {"synth",    "prompts",  "embed", "edges",   "pretrain",
                         "finetune", "zeroshot", "eval",  "protocol"};
  std::map<std::string, CLI::App*> subs;
  for (const char* n : names) subs[n] = app.add_subcommand(n);
  subs["protocol"]->add_option("--name", opt.protocol_name,
                               "gamma-sweep | masking | cold-start");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << std::flush;
    return 2;
  }

  try {
    const Loaded l = load_config(opt);
    if (subs["synth"]->parsed()) return cmd_synth(l);
    if (subs["prompts"]->parsed()) return cmd_prompts(l);
    if (subs["embed"]->parsed()) return cmd_embed(l);
    if (subs["edges"]->parsed()) return cmd_edges(l);
    if (subs["pretrain"]->parsed()) return cmd_pretrain(l);
    if (subs["finetune"]->parsed()) return cmd_finetune(l, opt);
    if (subs["zeroshot"]->parsed()) return cmd_zeroshot(l, opt);
    if (subs["eval"]->parsed()) return cmd_eval(l, opt);
    if (subs["protocol"]->parsed()) return cmd_protocol(l, opt);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const tbg::Error& e) {
    json err{{"error", {{"code", e.code()}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err{{"error", {{"code", "INTERNAL"}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
