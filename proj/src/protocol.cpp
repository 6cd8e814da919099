#include "tbg/protocol.hpp"

#include <algorithm>
#include <cmath>

#include "tbg/provider.hpp"

namespace tbg {

TextEmbeddingMatrix resolve_embedding_file(const EmbeddingFile& f,
                                           const GraphUniverse& universe) {
  TextEmbeddingMatrix m;
  m.dim = f.dim;
  m.count = universe.size();
  m.values.assign(std::size_t(m.count) * m.dim, 0.0f);
  m.source_tag = "memory";
  std::vector<bool> seen(universe.size(), false);
  for (std::size_t i = 0; i < f.keys.size(); ++i) {
    const auto id = universe.find_registry_key(f.keys[i]);
    if (!id) throw Error("UNKNOWN_KEY", "embedding key '" + f.keys[i] +
                                            "' not in the universe");
    if (seen[*id]) throw Error("DUPLICATE_KEY", "duplicate key " + f.keys[i]);
    seen[*id] = true;
    std::copy(f.values.begin() + i * f.dim, f.values.begin() + (i + 1) * f.dim,
              m.mutable_row(*id));
  }
  for (NodeIndex i = 0; i < universe.size(); ++i)
    if (!seen[i])
      throw Error("MISSING_ROW",
                  "node '" + universe.registry_key(i) + "' has no embedding");
  return m;
}

namespace {

TextEmbeddingMatrix slice_rows(const TextEmbeddingMatrix& m, NodeIndex begin,
                               NodeIndex count) {
  TextEmbeddingMatrix out;
  out.dim = m.dim;
  out.count = count;
  out.source_tag = m.source_tag;
  out.values.assign(m.values.begin() + std::size_t(begin) * m.dim,
                    m.values.begin() + std::size_t(begin + count) * m.dim);
  return out;
}

void coldstart_subsample(SplitDataset& split, double fraction,
                         std::uint64_t seed) {
  if (fraction >= 1.0) return;
  const auto keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(split.train.size())));
  Rng rng(seed);
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < keep && i < order.size(); ++i) {
    const auto j = i + rng.uniform_index(order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());  // keep temporal order
  std::vector<SplitRecord> kept;
  kept.reserve(order.size());
  for (const auto i : order) kept.push_back(split.train[i]);
  split.train = std::move(kept);
}

}  // namespace

TransferRun run_transfer(const std::vector<InteractionRecord>& src_records,
                         const std::vector<InteractionRecord>& tgt_records,
                         const TextEmbeddingMatrix& joint_text,
                         const TrainConfig& cfg, const TransferOptions& opt) {
  if (src_records.empty() || tgt_records.empty())
    throw Error("EMPTY_INPUT", "run_transfer: need source and target records");

  // Stage universes. Source ids are a stable prefix of the joint universe.
  GraphUniverse src_universe = build_universe(src_records);
  std::vector<InteractionRecord> joint_records = src_records;
  joint_records.insert(joint_records.end(), tgt_records.begin(),
                       tgt_records.end());
  GraphUniverse joint_universe = build_universe(joint_records);
  const DomainId target_domain =
      joint_universe.domain_id(tgt_records.front().domain);
  if (joint_universe.domain_range(target_domain).end != joint_universe.size())
    throw Error("TARGET_ORDER", "target domain must come after all sources");

  TextEmbeddingMatrix text = joint_text;
  if (text.count != joint_universe.size())
    throw Error("SHAPE", "joint text matrix does not cover the joint universe");
  if (opt.shuffle_target_text) {
    const NodeIndex begin = joint_universe.domain_range(target_domain).begin;
    const NodeIndex n = joint_universe.size() - begin;
    Rng rng(opt.shuffle_seed);
    std::vector<NodeIndex> perm(n);
    for (NodeIndex i = 0; i < n; ++i) perm[i] = i;
    for (NodeIndex i = 0; i + 1 < n; ++i) {
      const auto j = i + rng.uniform_index(n - i);
      std::swap(perm[i], perm[j]);
    }
    TextEmbeddingMatrix shuffled = text;
    for (NodeIndex i = 0; i < n; ++i) {
      const auto src_row = text.row(begin + perm[i]);
      std::copy(src_row.begin(), src_row.end(),
                shuffled.mutable_row(begin + i));
    }
    text = std::move(shuffled);
  }

  const SplitDataset src_split = temporal_split(src_records, src_universe);
  SplitDataset tgt_split = temporal_split(tgt_records, joint_universe);
  coldstart_subsample(tgt_split, opt.coldstart_fraction,
                      Rng(cfg.seed).fork("coldstart").seed());

  const TextEmbeddingMatrix src_text =
      slice_rows(text, 0, src_universe.size());

  const TrainResult pre = pretrain(src_universe, src_split, src_text, cfg);

  TransferRun run;
  run.semantic_edges_pre =
      pre.checkpoint.meta.at("semantic_edges_pre").get<std::uint64_t>();
  run.target_train_edges = tgt_split.train.size();

  // Paired evaluation instances on the target test split.
  Rng eval_rng = Rng(cfg.seed).fork("eval/test");
  const std::vector<EvalInstance> test_instances =
      sample_eval_negatives(tgt_split, joint_universe, SplitPart::Test,
                            cfg.n_neg_eval, eval_rng, &target_domain);

  const auto domain_names = [&] {
    std::vector<std::string> names;
    for (DomainId d = 0; d < joint_universe.num_domains(); ++d)
      names.push_back(joint_universe.domain_name(d));
    return names;
  }();

  auto eval_with = [&](const FinetuneAssembly& assembly, const Matrix& final,
                       MetricsReport& report, std::vector<double>& scores) {
    std::vector<EvalInstance> mapped = test_instances;
    for (auto& inst : mapped) {
      inst.user = assembly.stack_of_universe(inst.user);
      inst.pos_item = assembly.stack_of_universe(inst.pos_item);
      for (auto& n : inst.negatives) n = assembly.stack_of_universe(n);
    }
    report = compute_metrics(mapped, final, domain_names,
                             canonical_config_hash(cfg.to_json()), opt.build_id);
    const auto scored = score_instances(mapped, final);
    scores.clear();
    for (const auto& s : scored) {
      scores.push_back(s.pos);
      scores.insert(scores.end(), s.negs.begin(), s.negs.end());
    }
  };

  InferenceResult zs =
      training_free_infer(pre.checkpoint, joint_universe, src_split, tgt_split,
                          target_domain, text, cfg);
  run.semantic_edges_src_tgt = zs.assembly.src_tgt_edges.edges.size();
  run.semantic_edges_tgt = zs.assembly.tgt_edges.edges.size();
  eval_with(zs.assembly, zs.final_embeddings, run.zeroshot_metrics,
            run.zeroshot_scores);

  if (opt.run_finetune) {
    TrainResult ft = finetune(pre.checkpoint, joint_universe, src_split,
                              tgt_split, target_domain, text, cfg);
    const Matrix final =
        finetune_final_embeddings(zs.assembly, cfg, ft.checkpoint.params);
    eval_with(zs.assembly, final, run.finetune_metrics, run.finetune_scores);
    run.finetuned_checkpoint = std::move(ft.checkpoint);
  }
  return run;
}

double run_scratch_baseline(const std::vector<InteractionRecord>& tgt_records,
                            const TextEmbeddingMatrix& tgt_text,
                            const TrainConfig& cfg) {
  GraphUniverse universe = build_universe(tgt_records);
  const SplitDataset split = temporal_split(tgt_records, universe);

  // Single-domain training re-uses the pre-training machinery: with one
  // domain there are no cross-domain pairs, so the global graph is just the
  // interaction graph.
  TrainConfig scratch_cfg = cfg;
  scratch_cfg.epochs = cfg.epochs + cfg.finetune_epochs;  // generous budget
  const TrainResult res = pretrain(universe, split, tgt_text, scratch_cfg);

  Rng eval_rng = Rng(cfg.seed).fork("eval/test");
  const DomainId d0 = 0;
  const auto instances = sample_eval_negatives(
      split, universe, SplitPart::Test, cfg.n_neg_eval, eval_rng, &d0);
  const PretrainAssembly assembly = assemble_pretrain(
      universe, split, tgt_text, scratch_cfg.gamma, scratch_cfg.k_cap);
  const Matrix final = pretrain_final_embeddings(assembly, scratch_cfg,
                                                 res.checkpoint.params, tgt_text);
  return instance_auc(instances, final);
}

// ---------------------------------------------------------------------------
// Appendix-style protocols over the synthetic fixture
// ---------------------------------------------------------------------------

namespace {

struct FixtureData {
  SynthResult synth;
  std::vector<InteractionRecord> src_records, tgt_records;
  DomainId target_domain;
};

FixtureData make_fixture(const ProtocolConfig& cfg) {
  FixtureData f{generate(cfg.synth), {}, {}, 0};
  const std::string target = cfg.target_domain.empty()
                                 ? f.synth.domain_names.back()
                                 : cfg.target_domain;
  for (const auto& r : f.synth.records)
    (r.domain == target ? f.tgt_records : f.src_records).push_back(r);
  if (f.tgt_records.empty())
    throw Error("UNKNOWN_DOMAIN", "target domain has no records: " + target);
  return f;
}

// Joint text matrix (sources first, target last) from the synth embeddings.
TextEmbeddingMatrix fixture_joint_text(const FixtureData& f) {
  std::vector<InteractionRecord> joint = f.src_records;
  joint.insert(joint.end(), f.tgt_records.begin(), f.tgt_records.end());
  const GraphUniverse ju = build_universe(joint);
  return resolve_embedding_file(f.synth.embeddings, ju);
}

ProtocolRow pipeline_row(const std::string& protocol, nlohmann::json params,
                         const FixtureData& f, const TextEmbeddingMatrix& text,
                         const TrainConfig& train, const TransferOptions& opt) {
  const TransferRun run =
      run_transfer(f.src_records, f.tgt_records, text, train, opt);
  ProtocolRow row;
  row.protocol = protocol;
  row.params = std::move(params);
  row.report = run.finetune_metrics;
  row.semantic_edges_pre = run.semantic_edges_pre;
  row.semantic_edges_tgt = run.semantic_edges_tgt;
  return row;
}

std::vector<ProtocolRow> run_gamma_sweep(const ProtocolConfig& cfg) {
  const FixtureData f = make_fixture(cfg);
  const TextEmbeddingMatrix text = fixture_joint_text(f);
  TransferOptions opt;
  opt.build_id = cfg.build_id;
  std::vector<ProtocolRow> rows;
  for (const double gamma : cfg.gammas) {
    TrainConfig t = cfg.train;
    t.gamma = gamma;
    rows.push_back(pipeline_row("gamma-sweep", {{"gamma", gamma}}, f, text, t, opt));
  }
  return rows;
}

std::vector<ProtocolRow> run_masking(const ProtocolConfig& cfg) {
  const FixtureData f = make_fixture(cfg);
  std::vector<InteractionRecord> joint = f.src_records;
  joint.insert(joint.end(), f.tgt_records.begin(), f.tgt_records.end());
  const GraphUniverse ju = build_universe(joint);

  TransferOptions opt;
  opt.build_id = cfg.build_id;

  // The masking pipeline derives embeddings from prompts (deterministic
  // hash provider), so zeroed field groups actually change the model input.
  auto masked_run = [&](int type, double rate) {
    MaskSpec spec{type, rate, Rng(cfg.train.seed).fork("mask").seed()};
    const MaskedRecords masked = apply_mask(joint, ju, spec);
    const SplitDataset prompt_split = temporal_split(masked.records, ju);
    const PromptSet prompts =
        build_prompts(masked.records, ju, prompt_split, cfg.k_recent,
                      cfg.truncation_quantile, &masked.id_masked);
    HashEmbeddingTransport provider(cfg.hash_embed_dim);
    ProviderConfig pc;
    pc.batch_size = 64;
    const TextEmbeddingMatrix text =
        fetch_embeddings(provider, prompts, ju, pc, nullptr);
    std::vector<InteractionRecord> masked_src, masked_tgt;
    for (const auto& r : masked.records)
      (r.domain == f.tgt_records.front().domain ? masked_tgt : masked_src)
          .push_back(r);
    nlohmann::json params{{"type", type}, {"rate", rate}};
    return pipeline_row("masking", params, FixtureData{{}, masked_src,
                        masked_tgt, 0}, text, cfg.train, opt);
  };

  std::vector<ProtocolRow> rows;
  rows.push_back(masked_run(-1, 0.0));  // baseline: no masking
  for (const int type : cfg.mask_types)
    for (const double rate : cfg.mask_rates) rows.push_back(masked_run(type, rate));
  return rows;
}

std::vector<ProtocolRow> run_coldstart(const ProtocolConfig& cfg) {
  const FixtureData f = make_fixture(cfg);
  const TextEmbeddingMatrix text = fixture_joint_text(f);
  std::vector<ProtocolRow> rows;
  for (const double frac : {1.0, cfg.coldstart_fraction}) {
    TransferOptions opt;
    opt.build_id = cfg.build_id;
    opt.coldstart_fraction = frac;
    nlohmann::json params{{"train_fraction", frac}};
    rows.push_back(pipeline_row("cold-start", params, f, text, cfg.train, opt));
  }
  return rows;
}

}  // namespace

std::vector<ProtocolRow> run_protocol(const std::string& name,
                                      const ProtocolConfig& cfg) {
  cfg.train.validate();
  cfg.synth.validate();
  if (name == "gamma-sweep") return run_gamma_sweep(cfg);
  if (name == "masking") return run_masking(cfg);
  if (name == "cold-start") return run_coldstart(cfg);
  throw Error("UNKNOWN_PROTOCOL", "unknown protocol: " + name);
}

nlohmann::json protocol_rows_to_json(std::span<const ProtocolRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["protocol"] = r.protocol;
    j["params"] = r.params;
    j["metrics"] = r.report.to_json();
    j["semantic_edges_pre"] = r.semantic_edges_pre;
    j["semantic_edges_tgt"] = r.semantic_edges_tgt;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::string protocol_rows_to_csv(std::span<const ProtocolRow> rows) {
  std::string csv = "protocol,params,domain,metric,value\n";
  char buf[64];
  for (const auto& r : rows) {
    const std::string params = r.params.dump();
    std::string quoted = "\"";
    for (const char c : params) {
      if (c == '"') quoted += "\"\"";
      else quoted += c;
    }
    quoted += "\"";
    auto add = [&](const std::string& domain, const char* metric, double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      csv += r.protocol + "," + quoted + "," + domain + "," + metric + "," +
             buf + "\n";
    };
    for (const auto& dm : r.report.per_domain) {
      add(dm.domain, "auc", dm.auc);
      add(dm.domain, "recall@10", dm.recall10);
      add(dm.domain, "recall@20", dm.recall20);
      add(dm.domain, "precision@10", dm.precision10);
      add(dm.domain, "precision@20", dm.precision20);
    }
    add("mean", "auc", r.report.auc_mean);
    add("mean", "semantic_edges_pre", double(r.semantic_edges_pre));
    add("mean", "semantic_edges_tgt", double(r.semantic_edges_tgt));
  }
  return csv;
}

}  // namespace tbg
