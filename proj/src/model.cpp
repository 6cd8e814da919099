#include "tbg/model.hpp"

#include <cmath>

namespace tbg {

std::vector<double> l2_normalize(std::span<const double> x) {
  double norm_sq = 0.0;
  for (double v : x) norm_sq += v * v;
  const double norm = std::sqrt(norm_sq);
  std::vector<double> out(x.size(), 0.0);
  if (norm > kNormEps)
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / norm;
  return out;
}

std::vector<double> l2_normalize_backward(std::span<const double> x,
                                          std::span<const double> grad_y) {
  double norm_sq = 0.0;
  for (double v : x) norm_sq += v * v;
  const double norm = std::sqrt(norm_sq);
  std::vector<double> out(x.size(), 0.0);
  if (norm <= kNormEps) return out;  // guarded branch contributes nothing
  double y_dot_g = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    y_dot_g += (x[i] / norm) * grad_y[i];
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = (grad_y[i] - (x[i] / norm) * y_dot_g) / norm;
  return out;
}

Adapter make_adapter(std::size_t d_text, std::size_t hidden, std::size_t d_out,
                     Rng& rng) {
  Adapter a;
  a.w_down = Matrix(hidden, d_text);
  a.w_up = Matrix(d_out, hidden);
  const double bound_down = std::sqrt(6.0 / double(d_text + hidden));
  const double bound_up = std::sqrt(6.0 / double(hidden + d_out));
  for (auto& v : a.w_down.a) v = (rng.uniform() * 2.0 - 1.0) * bound_down;
  for (auto& v : a.w_up.a) v = (rng.uniform() * 2.0 - 1.0) * bound_up;
  return a;
}

namespace {

template <typename In>
std::vector<double> adapter_forward_impl(const Adapter& a, std::span<const In> x,
                                         AdapterCache* cache) {
  if (x.size() != a.d_text())
    throw Error("SHAPE", "adapter input length " + std::to_string(x.size()) +
                             " != d_text " + std::to_string(a.d_text()));
  std::vector<double> pre(a.hidden(), 0.0);
  for (std::size_t i = 0; i < a.hidden(); ++i) {
    const double* w = a.w_down.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.d_text(); ++j) s += w[j] * double(x[j]);
    pre[i] = s;
  }
  std::vector<double> out(a.d_out(), 0.0);
  for (std::size_t i = 0; i < a.d_out(); ++i) {
    const double* w = a.w_up.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.hidden(); ++j)
      if (pre[j] > 0.0) s += w[j] * pre[j];
    out[i] = s;
  }
  if (cache) {
    cache->x.assign(x.begin(), x.end());
    cache->preact = pre;
  }
  return out;
}

}  // namespace

std::vector<double> adapter_forward(const Adapter& a, std::span<const float> x,
                                    AdapterCache* cache) {
  return adapter_forward_impl<float>(a, x, cache);
}

std::vector<double> adapter_forward(const Adapter& a, std::span<const double> x,
                                    AdapterCache* cache) {
  return adapter_forward_impl<double>(a, x, cache);
}

void adapter_backward(const Adapter& a, const AdapterCache& cache,
                      std::span<const double> grad_out, Adapter& grad) {
  if (grad.w_down.a.empty()) grad.w_down = Matrix(a.hidden(), a.d_text());
  if (grad.w_up.a.empty()) grad.w_up = Matrix(a.d_out(), a.hidden());
  // ReLU subgradient at the kink is 0.
  std::vector<double> grad_hidden(a.hidden(), 0.0);
  for (std::size_t i = 0; i < a.d_out(); ++i) {
    const double g = grad_out[i];
    if (g == 0.0) continue;
    double* gw = grad.w_up.row(i);
    const double* w = a.w_up.row(i);
    for (std::size_t j = 0; j < a.hidden(); ++j) {
      const double act = cache.preact[j] > 0.0 ? cache.preact[j] : 0.0;
      gw[j] += g * act;
      if (cache.preact[j] > 0.0) grad_hidden[j] += g * w[j];
    }
  }
  for (std::size_t j = 0; j < a.hidden(); ++j) {
    const double gh = grad_hidden[j];
    if (gh == 0.0) continue;
    double* gw = grad.w_down.row(j);
    for (std::size_t t = 0; t < a.d_text(); ++t) gw[t] += gh * cache.x[t];
  }
}

std::vector<double> fuse(std::span<const double> h_id,
                         std::span<const float> x_text, const Adapter& adapter) {
  std::vector<double> id_n = l2_normalize(h_id);
  std::vector<double> text_out = adapter_forward(adapter, x_text);
  std::vector<double> text_n = l2_normalize(text_out);
  for (std::size_t i = 0; i < id_n.size(); ++i) id_n[i] += text_n[i];
  return id_n;
}

std::vector<double> final_embed(std::span<const double> fused_local,
                                std::span<const double> fused_global) {
  std::vector<double> out;
  out.reserve(fused_local.size() + fused_global.size());
  out.insert(out.end(), fused_local.begin(), fused_local.end());
  out.insert(out.end(), fused_global.begin(), fused_global.end());
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double score(std::span<const double> h_u, std::span<const double> h_v) {
  if (h_u.size() != h_v.size())
    throw Error("SHAPE", "score: embedding lengths differ");
  double dot = 0.0;
  for (std::size_t i = 0; i < h_u.size(); ++i) dot += h_u[i] * h_v[i];
  return sigmoid(dot);
}

}  // namespace tbg
