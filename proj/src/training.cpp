#include "tbg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "tbg/evaluation.hpp"
#include "tbg/serialize.hpp"

namespace tbg {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error("BAD_CONFIG", "lr must be positive");
  if (batch_size < 1) throw Error("BAD_CONFIG", "batch_size must be >= 1");
  if (lambda_reg < 0.0 || eta_reg < 0.0)
    throw Error("BAD_CONFIG", "regularization weights must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw Error("BAD_CONFIG", "alpha must be in [0,1]");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw Error("BAD_CONFIG", "gamma must be in (0,1)");
  if (layers < 1 || layers > 4)
    throw Error("BAD_CONFIG", "layers must be in 1..4");
  if (d < 1 || h < 1) throw Error("BAD_CONFIG", "d and h must be >= 1");
  if (epochs < 0 || finetune_epochs < 0)
    throw Error("BAD_CONFIG", "epochs must be >= 0");
  if (patience < 1) throw Error("BAD_CONFIG", "patience must be >= 1");
  if (k_cap < 1) throw Error("BAD_CONFIG", "k_cap must be >= 1");
  if (n_neg_eval < 1) throw Error("BAD_CONFIG", "n_neg_eval must be >= 1");
  if (negatives_per_positive < 1)
    throw Error("BAD_CONFIG", "negatives_per_positive must be >= 1");
  if (precision != "float64")
    throw Error("BAD_CONFIG",
                "training runs in float64; the float32 kernel is exposed for "
                "inference benchmarks only");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["lambda_reg"] = lambda_reg;
  j["eta_reg"] = eta_reg;
  j["alpha"] = alpha;
  j["gamma"] = gamma;
  j["layers"] = layers;
  j["d"] = d;
  j["h"] = h;
  j["epochs"] = epochs;
  j["finetune_epochs"] = finetune_epochs;
  j["patience"] = patience;
  j["seed"] = seed;
  j["k_cap"] = k_cap;
  j["n_neg_eval"] = n_neg_eval;
  j["negatives_per_positive"] = negatives_per_positive;
  j["freeze_target_global"] = freeze_target_global;
  j["precision"] = precision;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("lr", c.lr);
  get("batch_size", c.batch_size);
  get("lambda_reg", c.lambda_reg);
  get("eta_reg", c.eta_reg);
  get("alpha", c.alpha);
  get("gamma", c.gamma);
  get("layers", c.layers);
  get("d", c.d);
  get("h", c.h);
  get("epochs", c.epochs);
  get("finetune_epochs", c.finetune_epochs);
  get("patience", c.patience);
  get("seed", c.seed);
  get("k_cap", c.k_cap);
  get("n_neg_eval", c.n_neg_eval);
  get("negatives_per_positive", c.negatives_per_positive);
  get("freeze_target_global", c.freeze_target_global);
  get("precision", c.precision);
  c.validate();
  return c;
}

std::string canonical_config_hash(const nlohmann::json& config) {
  return hex64(fnv1a64(config.dump()));
}

bool DomainTrainIndex::is_positive(NodeIndex user, NodeIndex item) const {
  auto it = positives.find(user);
  if (it == positives.end()) return false;
  return std::binary_search(it->second.begin(), it->second.end(), item);
}

DomainTrainIndex build_train_index(const GraphUniverse& universe,
                                   const SplitDataset& split, DomainId domain) {
  DomainTrainIndex idx;
  idx.domain = domain;
  idx.edges = domain_train_edges(split, domain);
  const auto range = universe.domain_range(domain);
  for (NodeIndex i = range.users_end; i < range.end; ++i) idx.items.push_back(i);
  for (const auto& [u, v] : idx.edges) idx.positives[u].push_back(v);
  for (auto& [u, items] : idx.positives) std::sort(items.begin(), items.end());
  return idx;
}

std::vector<BprTriple> sample_bpr_triples(const DomainTrainIndex& index,
                                          int batch_size, Rng& rng,
                                          std::uint64_t* forced_accepts) {
  if (index.edges.empty())
    throw Error("DOMAIN_TOO_SMALL", "domain has no train edges");
  if (index.items.size() < 2)
    throw Error("DOMAIN_TOO_SMALL", "domain has fewer than 2 items");
  std::vector<BprTriple> out;
  out.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    const auto& [user, pos] = index.edges[rng.uniform_index(index.edges.size())];
    NodeIndex neg = 0;
    bool ok = false;
    for (int tries = 0; tries < 100; ++tries) {
      neg = index.items[rng.uniform_index(index.items.size())];
      if (!index.is_positive(user, neg)) {
        ok = true;
        break;
      }
    }
    if (!ok && forced_accepts) (*forced_accepts)++;
    out.push_back({user, pos, neg, index.domain});
  }
  return out;
}

BprLoss bpr_loss(std::span<const double> scores_pos,
                 std::span<const double> scores_neg) {
  if (scores_pos.size() != scores_neg.size())
    throw Error("SHAPE", "bpr_loss: score vectors differ in length");
  const std::size_t n = scores_pos.size();
  BprLoss out;
  out.grad_pos.resize(n);
  out.grad_neg.resize(n);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = scores_pos[i] - scores_neg[i];
    // -log sigmoid(x) = softplus(-x), evaluated without overflow
    const double sp = x > 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
    acc += sp;
    const double g = -sigmoid(-x) * inv_n;
    out.grad_pos[i] = g;
    out.grad_neg[i] = -g;
  }
  out.loss = acc * inv_n;
  return out;
}

void adam_step(Matrix& params, const Matrix& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (!params.same_shape(grads))
    throw Error("SHAPE", "adam_step: parameter/gradient shape mismatch");
  if (state.m.a.empty()) {
    state.m = Matrix(params.rows, params.cols);
    state.v = Matrix(params.rows, params.cols);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.a.size(); ++i) {
    const double g = grads.a[i];
    if (!std::isfinite(g))
      throw Error("NON_FINITE_GRAD", "adam_step: non-finite gradient");
    state.m.a[i] = beta1 * state.m.a[i] + (1.0 - beta1) * g;
    state.v.a[i] = beta2 * state.v.a[i] + (1.0 - beta2) * g * g;
    const double mhat = state.m.a[i] / bc1;
    const double vhat = state.v.a[i] / bc2;
    params.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

EarlyStopDecision early_stop(std::span<const double> history, int patience) {
  if (history.empty()) throw Error("EMPTY_INPUT", "early_stop: empty history");
  EarlyStopDecision d;
  double best = history[0];
  d.best_epoch = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] > best) {  // strict improvement; ties never reset patience
      best = history[i];
      d.best_epoch = static_cast<int>(i);
    }
  }
  d.stop = static_cast<int>(history.size() - 1) - d.best_epoch >= patience;
  return d;
}

// ---------------------------------------------------------------------------
// Full-model loss core: fusion, scoring, BPR + regularization, and the exact
// chain rule back to the propagated tables and adapter weights.
// ---------------------------------------------------------------------------

namespace {

ModelParams zero_like(const ModelParams& p) {
  ModelParams z;
  z.h_local_src = Matrix(p.h_local_src.rows, p.h_local_src.cols);
  z.h_global_src = Matrix(p.h_global_src.rows, p.h_global_src.cols);
  z.adapter_src.w_down = Matrix(p.adapter_src.w_down.rows, p.adapter_src.w_down.cols);
  z.adapter_src.w_up = Matrix(p.adapter_src.w_up.rows, p.adapter_src.w_up.cols);
  z.adapter_global.w_down =
      Matrix(p.adapter_global.w_down.rows, p.adapter_global.w_down.cols);
  z.adapter_global.w_up =
      Matrix(p.adapter_global.w_up.rows, p.adapter_global.w_up.cols);
  z.has_target = p.has_target;
  if (p.has_target) {
    z.h_local_tgt = Matrix(p.h_local_tgt.rows, p.h_local_tgt.cols);
    z.h_global_tgt = Matrix(p.h_global_tgt.rows, p.h_global_tgt.cols);
    z.adapter_tgt.w_down =
        Matrix(p.adapter_tgt.w_down.rows, p.adapter_tgt.w_down.cols);
    z.adapter_tgt.w_up = Matrix(p.adapter_tgt.w_up.rows, p.adapter_tgt.w_up.cols);
  }
  return z;
}

struct NodeFusion {
  std::vector<double> final_vec;  // 2d
  AdapterCache local_cache, global_cache;
  std::vector<double> local_adapter_out, global_adapter_out;
  std::vector<double> grad_final;  // lazily sized
};

// Shared fusion/score/backward machinery over already-propagated tables.
struct LossEngine {
  const Matrix& p_local;
  const Matrix& p_global;
  const TextEmbeddingMatrix& text;
  const ModelParams& params;
  NodeIndex target_block;  // nodes < target_block route to adapter_tgt

  const Adapter& local_adapter(NodeIndex n) const {
    return (params.has_target && n < target_block) ? params.adapter_tgt
                                                   : params.adapter_src;
  }
  Adapter* local_adapter_grad(NodeIndex n, ModelParams* grads) const {
    if (!grads) return nullptr;
    return (params.has_target && n < target_block) ? &grads->adapter_tgt
                                                   : &grads->adapter_src;
  }

  NodeFusion fuse_node(NodeIndex n) const {
    NodeFusion f;
    const std::size_t d = p_local.cols;
    const auto trow = text.row(n);
    f.local_adapter_out =
        adapter_forward(local_adapter(n), trow, &f.local_cache);
    f.global_adapter_out =
        adapter_forward(params.adapter_global, trow, &f.global_cache);
    std::vector<double> hl =
        l2_normalize(std::span<const double>(p_local.row(n), d));
    std::vector<double> hl_text = l2_normalize(f.local_adapter_out);
    std::vector<double> hg =
        l2_normalize(std::span<const double>(p_global.row(n), d));
    std::vector<double> hg_text = l2_normalize(f.global_adapter_out);
    f.final_vec.resize(2 * d);
    for (std::size_t j = 0; j < d; ++j) {
      f.final_vec[j] = hl[j] + hl_text[j];
      f.final_vec[d + j] = hg[j] + hg_text[j];
    }
    return f;
  }

  void backward_node(NodeIndex n, const NodeFusion& f, Matrix& grad_p_local,
                     Matrix& grad_p_global, ModelParams* grads) const {
    const std::size_t d = p_local.cols;
    const std::span<const double> g_local(f.grad_final.data(), d);
    const std::span<const double> g_global(f.grad_final.data() + d, d);

    auto gl_id = l2_normalize_backward(
        std::span<const double>(p_local.row(n), d), g_local);
    for (std::size_t j = 0; j < d; ++j) grad_p_local(n, j) += gl_id[j];
    auto gg_id = l2_normalize_backward(
        std::span<const double>(p_global.row(n), d), g_global);
    for (std::size_t j = 0; j < d; ++j) grad_p_global(n, j) += gg_id[j];

    if (grads) {
      auto gl_text = l2_normalize_backward(f.local_adapter_out, g_local);
      adapter_backward(local_adapter(n), f.local_cache, gl_text,
                       *local_adapter_grad(n, grads));
      auto gg_text = l2_normalize_backward(f.global_adapter_out, g_global);
      adapter_backward(params.adapter_global, f.global_cache, gg_text,
                       grads->adapter_global);
    }
  }
};

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Fused scores + loss + grad accumulation over the propagated tables.
BatchLossResult batch_core(const LossEngine& eng,
                           std::span<const BprTriple> batch, double reg_weight,
                           Matrix* grad_p_local, Matrix* grad_p_global,
                           ModelParams* grads) {
  if (batch.empty()) throw Error("EMPTY_INPUT", "empty training batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  std::map<NodeIndex, NodeFusion> fused;
  auto touch = [&](NodeIndex n) {
    if (!fused.count(n)) fused.emplace(n, eng.fuse_node(n));
  };
  for (const auto& t : batch) {
    touch(t.user);
    touch(t.pos_item);
    touch(t.neg_item);
  }

  std::vector<double> sp(batch.size()), sn(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& t = batch[i];
    sp[i] = dot(fused.at(t.user).final_vec, fused.at(t.pos_item).final_vec);
    sn[i] = dot(fused.at(t.user).final_vec, fused.at(t.neg_item).final_vec);
  }
  const BprLoss bl = bpr_loss(sp, sn);

  double reg_raw = 0.0;
  for (const auto& t : batch)
    for (const NodeIndex n : {t.user, t.pos_item, t.neg_item})
      reg_raw += dot(fused.at(n).final_vec, fused.at(n).final_vec);

  BatchLossResult res;
  res.bpr = bl.loss;
  res.reg = reg_weight * reg_raw * inv_b;
  res.total = res.bpr + res.reg;

  if (grad_p_local) {
    for (auto& [n, f] : fused) f.grad_final.assign(f.final_vec.size(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& t = batch[i];
      auto& fu = fused.at(t.user);
      auto& fp = fused.at(t.pos_item);
      auto& fn = fused.at(t.neg_item);
      for (std::size_t j = 0; j < fu.final_vec.size(); ++j) {
        fu.grad_final[j] += bl.grad_pos[i] * fp.final_vec[j] +
                            bl.grad_neg[i] * fn.final_vec[j];
        fp.grad_final[j] += bl.grad_pos[i] * fu.final_vec[j];
        fn.grad_final[j] += bl.grad_neg[i] * fu.final_vec[j];
      }
    }
    const double reg_g = 2.0 * reg_weight * inv_b;
    for (const auto& t : batch)
      for (const NodeIndex n : {t.user, t.pos_item, t.neg_item}) {
        auto& f = fused.at(n);
        for (std::size_t j = 0; j < f.final_vec.size(); ++j)
          f.grad_final[j] += reg_g * f.final_vec[j];
      }
    for (const auto& [n, f] : fused)
      eng.backward_node(n, f, *grad_p_local, *grad_p_global, grads);
  }
  return res;
}

void zero_frozen(const ModelParams& params, ModelParams& grads) {
  grads.for_each_block([&](const std::string& name, Matrix& m) {
    if (params.is_frozen(name)) m.fill(0.0);
  });
}

Matrix fused_table(const Matrix& p_local, const Matrix& p_global,
                   const ModelParams& params, const TextEmbeddingMatrix& text,
                   NodeIndex target_block) {
  const LossEngine eng{p_local, p_global, text, params, target_block};
  const std::size_t d = p_local.cols;
  Matrix out(p_local.rows, 2 * d);
  for (NodeIndex n = 0; n < p_local.rows; ++n) {
    const NodeFusion f = eng.fuse_node(n);
    std::copy(f.final_vec.begin(), f.final_vec.end(), out.row(n));
  }
  return out;
}

}  // namespace

BatchLossResult pretrain_batch_loss(const PretrainAssembly& assembly,
                                    const TrainConfig& cfg,
                                    const ModelParams& params,
                                    const TextEmbeddingMatrix& text,
                                    std::span<const BprTriple> batch,
                                    ModelParams* grads) {
  const auto slices = assembly.domain_slices(cfg.alpha, cfg.layers);
  const auto gplan = assembly.global_plan(cfg.alpha, cfg.layers);
  const HierarchicalForward fwd = hierarchical_pretrain_forward(
      slices, gplan, params.h_local_src, params.h_global_src);

  const LossEngine eng{fwd.local_out, fwd.global_out, text, params, 0};
  Matrix grad_pl, grad_pg;
  if (grads) {
    grad_pl = Matrix(fwd.local_out.rows, fwd.local_out.cols);
    grad_pg = Matrix(fwd.global_out.rows, fwd.global_out.cols);
  }
  const BatchLossResult res =
      batch_core(eng, batch, cfg.lambda_reg, grads ? &grad_pl : nullptr,
                 grads ? &grad_pg : nullptr, grads);
  if (grads) {
    auto [gl, gg] =
        hierarchical_pretrain_backward(slices, gplan, fwd, grad_pl, grad_pg);
    grads->h_local_src = std::move(gl);
    grads->h_global_src = std::move(gg);
    zero_frozen(params, *grads);
  }
  return res;
}

BatchLossResult finetune_batch_loss(const FinetuneAssembly& assembly,
                                    const TrainConfig& cfg,
                                    const ModelParams& params,
                                    std::span<const BprTriple> batch,
                                    ModelParams* grads) {
  if (!params.has_target)
    throw Error("NO_TARGET", "finetune loss requires target blocks");
  const NodeIndex T = assembly.n_target;
  const std::size_t d = params.h_local_src.cols;

  Matrix local_stack(assembly.total(), d), global_stack(assembly.total(), d);
  std::copy(params.h_local_tgt.a.begin(), params.h_local_tgt.a.end(),
            local_stack.row(0));
  std::copy(params.h_local_src.a.begin(), params.h_local_src.a.end(),
            local_stack.row(T));
  std::copy(params.h_global_tgt.a.begin(), params.h_global_tgt.a.end(),
            global_stack.row(0));
  std::copy(params.h_global_src.a.begin(), params.h_global_src.a.end(),
            global_stack.row(T));

  const auto cplan = assembly.cross_plan(cfg.alpha, cfg.layers);
  const auto gplan = assembly.global_plan(cfg.alpha, cfg.layers);
  const FinetuneForward fwd =
      finetune_forward(cplan, gplan, local_stack, global_stack);

  const LossEngine eng{fwd.local_out, fwd.global_out, assembly.text_stack,
                       params, T};
  Matrix grad_pl, grad_pg;
  if (grads) {
    grad_pl = Matrix(fwd.local_out.rows, fwd.local_out.cols);
    grad_pg = Matrix(fwd.global_out.rows, fwd.global_out.cols);
  }
  const BatchLossResult res =
      batch_core(eng, batch, cfg.eta_reg, grads ? &grad_pl : nullptr,
                 grads ? &grad_pg : nullptr, grads);
  if (grads) {
    const Matrix gl = grec_backward(cplan, fwd.local_cache, grad_pl);
    const Matrix gg = grec_backward(gplan, fwd.global_cache, grad_pg);
    auto split_rows = [&](const Matrix& m, Matrix& tgt, Matrix& src) {
      tgt = Matrix(T, d);
      src = Matrix(m.rows - T, d);
      std::copy(m.row(0), m.row(0) + std::size_t(T) * d, tgt.a.begin());
      std::copy(m.row(T), m.row(T) + (m.rows - T) * d, src.a.begin());
    };
    split_rows(gl, grads->h_local_tgt, grads->h_local_src);
    split_rows(gg, grads->h_global_tgt, grads->h_global_src);
    zero_frozen(params, *grads);
  }
  return res;
}

Matrix pretrain_final_embeddings(const PretrainAssembly& assembly,
                                 const TrainConfig& cfg,
                                 const ModelParams& params,
                                 const TextEmbeddingMatrix& text) {
  const auto slices = assembly.domain_slices(cfg.alpha, cfg.layers);
  const auto gplan = assembly.global_plan(cfg.alpha, cfg.layers);
  const HierarchicalForward fwd = hierarchical_pretrain_forward(
      slices, gplan, params.h_local_src, params.h_global_src);
  return fused_table(fwd.local_out, fwd.global_out, params, text, 0);
}

Matrix finetune_final_embeddings(const FinetuneAssembly& assembly,
                                 const TrainConfig& cfg,
                                 const ModelParams& params) {
  if (!params.has_target)
    throw Error("NO_TARGET", "finetune embeddings require target blocks");
  const NodeIndex T = assembly.n_target;
  const std::size_t d = params.h_local_src.cols;
  Matrix local_stack(assembly.total(), d), global_stack(assembly.total(), d);
  std::copy(params.h_local_tgt.a.begin(), params.h_local_tgt.a.end(),
            local_stack.row(0));
  std::copy(params.h_local_src.a.begin(), params.h_local_src.a.end(),
            local_stack.row(T));
  std::copy(params.h_global_tgt.a.begin(), params.h_global_tgt.a.end(),
            global_stack.row(0));
  std::copy(params.h_global_src.a.begin(), params.h_global_src.a.end(),
            global_stack.row(T));
  const FinetuneForward fwd =
      finetune_forward(assembly.cross_plan(cfg.alpha, cfg.layers),
                       assembly.global_plan(cfg.alpha, cfg.layers), local_stack,
                       global_stack);
  return fused_table(fwd.local_out, fwd.global_out, params,
                     assembly.text_stack, T);
}

// ---------------------------------------------------------------------------
// Checkpoint format (TBGC)
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagicC[4] = {'T', 'B', 'G', 'C'};

void write_tensor(BinaryWriter& w, const Matrix& m) {
  w.u64(m.rows);
  w.u64(m.cols);
  for (double v : m.a) w.f64(v);
}

Matrix read_tensor(BinaryReader& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  Matrix m(rows, cols);
  for (auto& v : m.a) v = r.f64();
  return m;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  BinaryWriter p;
  p.u16(c.version);
  p.str(c.stage);
  p.str(c.config.dump());
  p.str(c.config_hash);
  p.str(c.meta.dump());
  p.i64(c.epoch);
  p.i64(c.best_epoch);
  p.u64(c.val_history.size());
  for (double v : c.val_history) p.f64(v);

  std::vector<std::pair<std::string, const Matrix*>> tensors;
  const_cast<ModelParams&>(c.params).for_each_block(
      [&](const std::string& name, Matrix& m) { tensors.emplace_back(name, &m); });
  p.u8(c.params.has_target ? 1 : 0);
  p.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    p.str(name);
    write_tensor(p, *m);
  }
  p.u32(static_cast<std::uint32_t>(c.params.frozen.size()));
  for (const auto& name : c.params.frozen) p.str(name);
  p.u32(static_cast<std::uint32_t>(c.opt.size()));
  for (const auto& [name, st] : c.opt) {
    p.str(name);
    p.i64(st.t);
    write_tensor(p, st.m);
    write_tensor(p, st.v);
  }

  BinaryWriter out;
  out.bytes(kMagicC, 4);
  out.bytes(p.data().data(), p.size());
  out.u32(crc32_bytes(p.data()));
  return out.take();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what) {
  BinaryReader r(bytes, what);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagicC, 4) != 0)
    throw Error("BAD_MAGIC", what + ": not a TBGC checkpoint");
  if (bytes.size() < 8) throw Error("TRUNCATED", what + ": no room for CRC");
  const std::string payload = bytes.substr(4, bytes.size() - 8);
  BinaryReader crc_tail(bytes.data() + bytes.size() - 4, 4, what);
  if (crc_tail.u32() != crc32_bytes(payload))
    throw Error("BAD_CRC", what + ": payload CRC32 mismatch");

  BinaryReader p(payload, what);
  Checkpoint c;
  c.version = p.u16();
  if (c.version != 1)
    throw Error("BAD_VERSION", what + ": unsupported checkpoint version");
  c.stage = p.str();
  c.config = nlohmann::json::parse(p.str());
  c.config_hash = p.str();
  c.meta = nlohmann::json::parse(p.str());
  c.epoch = static_cast<int>(p.i64());
  c.best_epoch = static_cast<int>(p.i64());
  const std::uint64_t hist = p.u64();
  for (std::uint64_t i = 0; i < hist; ++i) c.val_history.push_back(p.f64());

  c.params.has_target = p.u8() != 0;
  const std::uint32_t n_tensors = p.u32();
  std::map<std::string, Matrix> by_name;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = p.str();
    by_name[name] = read_tensor(p);
  }
  auto take = [&](const char* name) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw Error("MISSING_TENSOR", what + ": missing tensor " + name);
    return std::move(it->second);
  };
  c.params.h_local_src = take("h_local_src");
  c.params.h_global_src = take("h_global_src");
  c.params.adapter_src.w_down = take("adapter_src.w_down");
  c.params.adapter_src.w_up = take("adapter_src.w_up");
  c.params.adapter_global.w_down = take("adapter_global.w_down");
  c.params.adapter_global.w_up = take("adapter_global.w_up");
  if (c.params.has_target) {
    c.params.h_local_tgt = take("h_local_tgt");
    c.params.h_global_tgt = take("h_global_tgt");
    c.params.adapter_tgt.w_down = take("adapter_tgt.w_down");
    c.params.adapter_tgt.w_up = take("adapter_tgt.w_up");
  }
  const std::uint32_t n_frozen = p.u32();
  for (std::uint32_t i = 0; i < n_frozen; ++i) c.params.frozen.insert(p.str());
  const std::uint32_t n_opt = p.u32();
  for (std::uint32_t i = 0; i < n_opt; ++i) {
    std::string name = p.str();
    AdamState st;
    st.t = p.i64();
    st.m = read_tensor(p);
    st.v = read_tensor(p);
    c.opt.emplace(std::move(name), std::move(st));
  }
  if (!p.at_end())
    throw Error("TRAILING_BYTES", what + ": unexpected trailing payload bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  atomic_write_file(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!file_exists(path))
    throw Error("MISSING_CHECKPOINT", "checkpoint not found: " + path);
  return decode_checkpoint(read_file(path), path);
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

namespace {

Matrix normal_init(std::size_t rows, std::size_t cols, double stddev, Rng rng) {
  Matrix m(rows, cols);
  for (auto& v : m.a) v = rng.normal() * stddev;
  return m;
}

double wall_ms_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

TrainResult pretrain(const GraphUniverse& universe, const SplitDataset& split,
                     const TextEmbeddingMatrix& text, const TrainConfig& cfg) {
  cfg.validate();
  if (universe.num_domains() == 0)
    throw Error("EMPTY_INPUT", "pretrain: universe has no domains");

  const PretrainAssembly assembly =
      assemble_pretrain(universe, split, text, cfg.gamma, cfg.k_cap);

  Rng root(cfg.seed);
  ModelParams params;
  params.h_local_src =
      normal_init(universe.size(), cfg.d, 0.01, root.fork("init/local"));
  params.h_global_src =
      normal_init(universe.size(), cfg.d, 0.01, root.fork("init/global"));
  {
    Rng r1 = root.fork("init/adapter_src");
    params.adapter_src = make_adapter(text.dim, cfg.h, cfg.d, r1);
    Rng r2 = root.fork("init/adapter_global");
    params.adapter_global = make_adapter(text.dim, cfg.h, cfg.d, r2);
  }

  std::vector<DomainTrainIndex> indexes;
  for (DomainId d = 0; d < universe.num_domains(); ++d)
    indexes.push_back(build_train_index(universe, split, d));

  Rng eval_rng = root.fork("eval/valid");
  const std::vector<EvalInstance> valid_instances = sample_eval_negatives(
      split, universe, SplitPart::Valid, cfg.n_neg_eval, eval_rng, nullptr);

  std::map<std::string, AdamState> opt;
  Rng sample_rng = root.fork("bpr");

  TrainResult result;
  ModelParams best_params = params;
  std::map<std::string, AdamState> best_opt;
  int best_epoch = 0;
  double best_auc = -1.0;
  std::vector<double> history;
  // The untrained state competes for best-validation too.
  if (cfg.epochs > 0 && !valid_instances.empty()) {
    const Matrix final = pretrain_final_embeddings(assembly, cfg, params, text);
    best_auc = mean_domain_auc(valid_instances, final);
    history.push_back(best_auc);
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0, bpr_sum = 0.0, reg_sum = 0.0;
    std::uint64_t example_count = 0;
    for (auto& index : indexes) {
      std::uint64_t remaining =
          index.edges.size() *
          static_cast<std::uint64_t>(cfg.negatives_per_positive);
      while (remaining > 0) {
        const int b = static_cast<int>(std::min<std::uint64_t>(
            remaining, static_cast<std::uint64_t>(cfg.batch_size)));
        const auto batch = sample_bpr_triples(index, b, sample_rng,
                                              &result.forced_negative_accepts);
        ModelParams grads = zero_like(params);
        const BatchLossResult r =
            pretrain_batch_loss(assembly, cfg, params, text, batch, &grads);
        if (!std::isfinite(r.total))
          throw Error("NON_FINITE_LOSS",
                      "pretrain: non-finite loss at epoch " +
                          std::to_string(epoch) + ", domain " +
                          universe.domain_name(index.domain) +
                          ", first triple (" + std::to_string(batch[0].user) +
                          "," + std::to_string(batch[0].pos_item) + "," +
                          std::to_string(batch[0].neg_item) + ")");
        params.for_each_block([&](const std::string& name, Matrix& m) {
          if (params.is_frozen(name)) return;
          Matrix* g = nullptr;
          grads.for_each_block([&](const std::string& gname, Matrix& gm) {
            if (gname == name) g = &gm;
          });
          adam_step(m, *g, opt[name], cfg.lr);
        });
        loss_sum += r.total * b;
        bpr_sum += r.bpr * b;
        reg_sum += r.reg * b;
        example_count += b;
        remaining -= b;
      }
    }

    double val_auc = 0.5;
    if (!valid_instances.empty()) {
      const Matrix final =
          pretrain_final_embeddings(assembly, cfg, params, text);
      val_auc = mean_domain_auc(valid_instances, final);
    }
    history.push_back(val_auc);
    const double denom = example_count > 0 ? double(example_count) : 1.0;
    result.log.push_back({epoch, loss_sum / denom, bpr_sum / denom,
                          reg_sum / denom, val_auc, wall_ms_since(t0)});
    if (val_auc > best_auc) {
      best_auc = val_auc;
      best_epoch = static_cast<int>(history.size()) - 1;
      best_params = params;
      best_opt = opt;
    }
    if (early_stop(history, cfg.patience).stop) break;
  }

  Checkpoint& c = result.checkpoint;
  c.stage = "pretrain";
  c.config = cfg.to_json();
  c.config_hash = canonical_config_hash(c.config);
  c.params = cfg.epochs > 0 ? std::move(best_params) : std::move(params);
  c.opt = cfg.epochs > 0 ? std::move(best_opt) : std::move(opt);
  c.epoch = static_cast<int>(result.log.size());
  c.best_epoch = best_epoch;
  c.val_history = history;

  nlohmann::json meta;
  meta["domains"] = nlohmann::json::array();
  for (DomainId d = 0; d < universe.num_domains(); ++d)
    meta["domains"].push_back(universe.domain_name(d));
  meta["node_count"] = universe.size();
  meta["d_text"] = text.dim;
  nlohmann::json fps;
  for (std::size_t i = 0; i < assembly.domain_graphs.size(); ++i)
    fps["domain:" + universe.domain_name(assembly.domains[i])] =
        hex64(graph_fingerprint(assembly.domain_graphs[i]));
  fps["global_pre"] = hex64(graph_fingerprint(assembly.global_graph));
  meta["fingerprints"] = fps;
  meta["semantic_edges_pre"] = assembly.edges.edges.size();
  c.meta = meta;
  return result;
}

namespace {

// Shared by finetune() and training_free_infer(): rebuilds graphs, checks
// fingerprints, and initializes target blocks.
struct FinetuneSetup {
  FinetuneAssembly assembly;
  ModelParams params;
};

FinetuneSetup prepare_finetune(const Checkpoint& source_checkpoint,
                               const GraphUniverse& universe,
                               const SplitDataset& source_split,
                               const SplitDataset& target_split,
                               DomainId target_domain,
                               const TextEmbeddingMatrix& text,
                               const TrainConfig& cfg) {
  cfg.validate();
  if (source_checkpoint.stage != "pretrain")
    throw Error("BAD_STAGE", "finetune requires a pretrain checkpoint");

  FinetuneSetup s{assemble_finetune(universe, target_domain, source_split,
                                    target_split, text, cfg.gamma, cfg.k_cap),
                  {}};

  // Fingerprint gate: the source graphs must be the ones the checkpoint was
  // trained on.
  const auto& fps = source_checkpoint.meta.at("fingerprints");
  std::size_t src_i = 0;
  for (DomainId d = 0; d < universe.num_domains(); ++d) {
    if (d == target_domain) continue;
    const std::string key = "domain:" + universe.domain_name(d);
    if (!fps.contains(key) ||
        fps.at(key).get<std::string>() !=
            hex64(s.assembly.source_domain_fingerprints.at(src_i)))
      throw Error("FINGERPRINT_MISMATCH",
                  "checkpoint does not match source graphs (" + key + ")");
    ++src_i;
  }
  if (fps.at("global_pre").get<std::string>() !=
      hex64(s.assembly.global_pre_fingerprint))
    throw Error("FINGERPRINT_MISMATCH",
                "checkpoint does not match source graphs (global_pre)");

  const auto& src = source_checkpoint.params;
  if (src.h_local_src.rows != s.assembly.n_source)
    throw Error("SHAPE", "checkpoint table rows != source node count");
  if (src.adapter_src.d_text() != text.dim)
    throw Error("DIM_MISMATCH",
                "text embedding dim does not match checkpoint adapters");

  s.params = src;
  s.params.has_target = true;
  const std::size_t d = src.h_local_src.cols;
  s.params.h_local_tgt = Matrix(s.assembly.n_target, d);
  s.params.h_global_tgt = Matrix(s.assembly.n_target, d);
  s.params.adapter_tgt = src.adapter_src;  // transferred, then adapted
  s.params.frozen = {"h_local_src",       "h_global_src",
                     "adapter_src.w_down", "adapter_src.w_up",
                     "adapter_global.w_down", "adapter_global.w_up"};
  if (cfg.freeze_target_global) s.params.frozen.insert("h_global_tgt");
  return s;
}

Checkpoint make_finetune_checkpoint(const std::string& stage,
                                    const Checkpoint& source_checkpoint,
                                    const GraphUniverse& universe,
                                    DomainId target_domain,
                                    const FinetuneAssembly& assembly,
                                    const TrainConfig& cfg) {
  Checkpoint c;
  c.stage = stage;
  c.config = cfg.to_json();
  c.config_hash = canonical_config_hash(c.config);
  nlohmann::json meta = source_checkpoint.meta;
  meta["target_domain"] = universe.domain_name(target_domain);
  meta["target_nodes"] = assembly.n_target;
  meta["fingerprints"]["cross"] = hex64(graph_fingerprint(assembly.cross_graph));
  meta["fingerprints"]["global_fine"] =
      hex64(graph_fingerprint(assembly.global_fine_graph));
  meta["semantic_edges_src_tgt"] = assembly.src_tgt_edges.edges.size();
  meta["semantic_edges_tgt"] = assembly.tgt_edges.edges.size();
  c.meta = meta;
  return c;
}

}  // namespace

TrainResult finetune(const Checkpoint& source_checkpoint,
                     const GraphUniverse& universe,
                     const SplitDataset& source_split,
                     const SplitDataset& target_split, DomainId target_domain,
                     const TextEmbeddingMatrix& text, const TrainConfig& cfg) {
  FinetuneSetup s =
      prepare_finetune(source_checkpoint, universe, source_split, target_split,
                       target_domain, text, cfg);
  ModelParams& params = s.params;
  const FinetuneAssembly& assembly = s.assembly;

  // Target-domain training data in stack coordinates.
  DomainTrainIndex index = build_train_index(universe, target_split, target_domain);
  const NodeIndex shift = assembly.target_universe_begin;
  for (auto& [u, v] : index.edges) {
    u -= shift;
    v -= shift;
  }
  for (auto& it : index.items) it -= shift;
  {
    std::map<NodeIndex, std::vector<NodeIndex>> pos;
    for (auto& [u, items] : index.positives) {
      std::vector<NodeIndex> shifted;
      for (auto v : items) shifted.push_back(v - shift);
      pos.emplace(u - shift, std::move(shifted));
    }
    index.positives = std::move(pos);
  }

  Rng root(cfg.seed);
  Rng eval_rng = root.fork("eval/valid-tgt");
  std::vector<EvalInstance> valid_instances =
      sample_eval_negatives(target_split, universe, SplitPart::Valid,
                            cfg.n_neg_eval, eval_rng, &target_domain);
  for (auto& inst : valid_instances) {
    inst.user = assembly.stack_of_universe(inst.user);
    inst.pos_item = assembly.stack_of_universe(inst.pos_item);
    for (auto& n : inst.negatives) n = assembly.stack_of_universe(n);
  }

  std::map<std::string, AdamState> opt;
  Rng sample_rng = root.fork("bpr-finetune");

  TrainResult result;
  ModelParams best_params = params;
  std::map<std::string, AdamState> best_opt;
  int best_epoch = 0;
  double best_auc = -1.0;
  std::vector<double> history;
  // Training-free assembly is the epoch-0 candidate: fine-tuning must not
  // ship a model that validates worse than no fine-tuning at all.
  if (cfg.finetune_epochs > 0 && !valid_instances.empty()) {
    const Matrix final = finetune_final_embeddings(assembly, cfg, params);
    best_auc = instance_auc(valid_instances, final);
    history.push_back(best_auc);
  }

  for (int epoch = 1; epoch <= cfg.finetune_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0, bpr_sum = 0.0, reg_sum = 0.0;
    std::uint64_t example_count = 0;
    std::uint64_t remaining =
        index.edges.size() *
        static_cast<std::uint64_t>(cfg.negatives_per_positive);
    while (remaining > 0) {
      const int b = static_cast<int>(std::min<std::uint64_t>(
          remaining, static_cast<std::uint64_t>(cfg.batch_size)));
      const auto batch = sample_bpr_triples(index, b, sample_rng,
                                            &result.forced_negative_accepts);
      ModelParams grads = zero_like(params);
      const BatchLossResult r =
          finetune_batch_loss(assembly, cfg, params, batch, &grads);
      if (!std::isfinite(r.total))
        throw Error("NON_FINITE_LOSS",
                    "finetune: non-finite loss at epoch " + std::to_string(epoch));
      params.for_each_block([&](const std::string& name, Matrix& m) {
        if (params.is_frozen(name)) return;
        Matrix* g = nullptr;
        grads.for_each_block([&](const std::string& gname, Matrix& gm) {
          if (gname == name) g = &gm;
        });
        adam_step(m, *g, opt[name], cfg.lr);
      });
      loss_sum += r.total * b;
      bpr_sum += r.bpr * b;
      reg_sum += r.reg * b;
      example_count += b;
      remaining -= b;
    }

    double val_auc = 0.5;
    if (!valid_instances.empty()) {
      const Matrix final = finetune_final_embeddings(assembly, cfg, params);
      val_auc = instance_auc(valid_instances, final);
    }
    history.push_back(val_auc);
    const double denom = example_count > 0 ? double(example_count) : 1.0;
    result.log.push_back({epoch, loss_sum / denom, bpr_sum / denom,
                          reg_sum / denom, val_auc, wall_ms_since(t0)});
    if (val_auc > best_auc) {
      best_auc = val_auc;
      best_epoch = static_cast<int>(history.size()) - 1;
      best_params = params;
      best_opt = opt;
    }
    if (early_stop(history, cfg.patience).stop) break;
  }

  Checkpoint c = make_finetune_checkpoint("finetune", source_checkpoint,
                                          universe, target_domain, assembly, cfg);
  c.params = cfg.finetune_epochs > 0 ? std::move(best_params) : std::move(params);
  c.opt = cfg.finetune_epochs > 0 ? std::move(best_opt) : std::move(opt);
  c.epoch = static_cast<int>(result.log.size());
  c.best_epoch = best_epoch;
  c.val_history = history;
  result.checkpoint = std::move(c);
  return result;
}

InferenceResult training_free_infer(const Checkpoint& source_checkpoint,
                                    const GraphUniverse& universe,
                                    const SplitDataset& source_split,
                                    const SplitDataset& target_split,
                                    DomainId target_domain,
                                    const TextEmbeddingMatrix& text,
                                    const TrainConfig& cfg) {
  FinetuneSetup s =
      prepare_finetune(source_checkpoint, universe, source_split, target_split,
                       target_domain, text, cfg);
  InferenceResult out;
  out.final_embeddings = finetune_final_embeddings(s.assembly, cfg, s.params);
  Checkpoint c = make_finetune_checkpoint("zeroshot", source_checkpoint,
                                          universe, target_domain, s.assembly, cfg);
  c.params = std::move(s.params);
  out.checkpoint = std::move(c);
  out.assembly = std::move(s.assembly);
  return out;
}

}  // namespace tbg
