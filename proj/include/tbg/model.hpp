#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "tbg/common.hpp"
#include "tbg/rng.hpp"

namespace tbg {

constexpr double kNormEps = 1e-12;

// x / ||x||, or the zero vector when ||x|| <= kNormEps (never NaN).
std::vector<double> l2_normalize(std::span<const double> x);

// Jacobian-vector product of l2_normalize at x: (I - y y^T)/||x|| * g,
// zero on the guarded branch.
std::vector<double> l2_normalize_backward(std::span<const double> x,
                                          std::span<const double> grad_y);

// Two-matrix bottleneck: W_up * ReLU(W_down * x).
struct Adapter {
  Matrix w_down;  // h x d_text
  Matrix w_up;    // d x h

  std::size_t d_text() const { return w_down.cols; }
  std::size_t hidden() const { return w_down.rows; }
  std::size_t d_out() const { return w_up.rows; }
};

Adapter make_adapter(std::size_t d_text, std::size_t hidden, std::size_t d_out,
                     Rng& rng);  // uniform(+-sqrt(6/(fan_in+fan_out)))

struct AdapterCache {
  std::vector<double> x;       // input (d_text)
  std::vector<double> preact;  // W_down * x (h), pre ReLU
};

std::vector<double> adapter_forward(const Adapter& a, std::span<const float> x_text,
                                    AdapterCache* cache = nullptr);
std::vector<double> adapter_forward(const Adapter& a, std::span<const double> x_text,
                                    AdapterCache* cache = nullptr);

// Accumulates parameter gradients for one input into an Adapter-shaped
// holder; x_text receives no gradient (text embeddings are frozen).
void adapter_backward(const Adapter& a, const AdapterCache& cache,
                      std::span<const double> grad_out, Adapter& grad);

// h = L2-Norm(h_id) + L2-Norm(Adapter(x_text))
std::vector<double> fuse(std::span<const double> h_id,
                         std::span<const float> x_text, const Adapter& adapter);

// Concat(local, global), local block first.
std::vector<double> final_embed(std::span<const double> fused_local,
                                std::span<const double> fused_global);

double sigmoid(double x);
// sigmoid(h_u . h_v)
double score(std::span<const double> h_u, std::span<const double> h_v);

// All trainable state. Source blocks exist from pre-training; target blocks
// appear at fine-tune time. A frozen block receives zero gradient and is
// excluded from optimizer updates.
struct ModelParams {
  Matrix h_local_src;   // source nodes x d
  Matrix h_global_src;  // source nodes x d
  Adapter adapter_src;
  Adapter adapter_global;

  bool has_target = false;
  Matrix h_local_tgt;  // target nodes x d
  Matrix h_global_tgt;
  Adapter adapter_tgt;

  std::set<std::string> frozen;

  bool is_frozen(const std::string& name) const { return frozen.count(name) > 0; }

  // Visits every existing block in a fixed order.
  template <typename F>
  void for_each_block(F&& f) {
    f("adapter_global.w_down", adapter_global.w_down);
    f("adapter_global.w_up", adapter_global.w_up);
    f("adapter_src.w_down", adapter_src.w_down);
    f("adapter_src.w_up", adapter_src.w_up);
    f("h_global_src", h_global_src);
    f("h_local_src", h_local_src);
    if (has_target) {
      f("adapter_tgt.w_down", adapter_tgt.w_down);
      f("adapter_tgt.w_up", adapter_tgt.w_up);
      f("h_global_tgt", h_global_tgt);
      f("h_local_tgt", h_local_tgt);
    }
  }
  template <typename F>
  void for_each_block(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_block(
        [&](const std::string& n, Matrix& m) { f(n, static_cast<const Matrix&>(m)); });
  }
};

}  // namespace tbg
