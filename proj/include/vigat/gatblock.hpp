#ifndef VIGAT_GATBLOCK_HPP
#define VIGAT_GATBLOCK_HPP

// One graph-attention block: attention adjacency over the input nodes,
// an M-layer propagation head (A Z W -> layer norm -> ReLU) and mean pooling.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "vigat/error.hpp"
#include "vigat/ops.hpp"
#include "vigat/random.hpp"
#include "vigat/tensor.hpp"

namespace vigat {

inline constexpr double kAdjacencyEps = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct GatBlockParams {
  Tensor2<T> w_check;  // F x F, query-side attention projection
  Tensor2<T> w_tilde;  // F x F, key-side attention projection
  Tensor2<T> b_check;  // 1 x F
  Tensor2<T> b_tilde;  // 1 x F
  std::vector<Tensor2<T>> gat_weights;  // M x (F x F)
  std::vector<Tensor2<T>> ln_gain;      // M x (1 x F)
  std::vector<Tensor2<T>> ln_bias;      // M x (1 x F)

  GatBlockParams() = default;

  /// Zero-valued parameters of the given dimensions, with unit layer-norm gain.
  GatBlockParams(std::size_t features, std::size_t layers)
      : w_check(features, features),
        w_tilde(features, features),
        b_check(1, features),
        b_tilde(1, features) {
    if (features == 0 || layers == 0) {
      throw ParameterError("GatBlockParams: features and layers must be positive");
    }
    for (std::size_t m = 0; m < layers; ++m) {
      gat_weights.emplace_back(features, features);
      ln_gain.emplace_back(1, features, T{1});
      ln_bias.emplace_back(1, features);
    }
  }

  static GatBlockParams zeros_like(const GatBlockParams& p) {
    GatBlockParams g = p;
    g.for_each_tensor([](Tensor2<T>& t) { t.fill(T{0}); });
    return g;
  }

  /// Uniform(-1/sqrt(F), 1/sqrt(F)) weights, zero biases, unit gains.
  static GatBlockParams initialized(std::size_t features, std::size_t layers, Rng& rng) {
    GatBlockParams p(features, layers);
    const double bound = 1.0 / std::sqrt(static_cast<double>(features));
    auto fill = [&](Tensor2<T>& t) {
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    fill(p.w_check);
    fill(p.w_tilde);
    for (auto& w : p.gat_weights) fill(w);
    return p;
  }

  std::size_t features() const noexcept { return w_check.rows(); }
  std::size_t layers() const noexcept { return gat_weights.size(); }

  /// Visits every tensor in storage order.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(w_check);
    fn(w_tilde);
    fn(b_check);
    fn(b_tilde);
    for (auto& w : gat_weights) fn(w);
    for (std::size_t m = 0; m < layers(); ++m) {
      fn(ln_gain[m]);
      fn(ln_bias[m]);
    }
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<GatBlockParams*>(this)->for_each_tensor(
        [&](Tensor2<T>& t) { fn(static_cast<const Tensor2<T>&>(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const Tensor2<T>& t) { n += t.size(); });
    return n;
  }

  template <typename U>
  GatBlockParams<U> cast() const {
    GatBlockParams<U> out;
    out.w_check = w_check.template cast<U>();
    out.w_tilde = w_tilde.template cast<U>();
    out.b_check = b_check.template cast<U>();
    out.b_tilde = b_tilde.template cast<U>();
    for (std::size_t m = 0; m < layers(); ++m) {
      out.gat_weights.push_back(gat_weights[m].template cast<U>());
      out.ln_gain.push_back(ln_gain[m].template cast<U>());
      out.ln_bias.push_back(ln_bias[m].template cast<U>());
    }
    return out;
  }

  GatBlockParams& operator+=(const GatBlockParams& o) {
    std::vector<const Tensor2<T>*> rhs;
    o.for_each_tensor([&](const Tensor2<T>& t) { rhs.push_back(&t); });
    std::size_t i = 0;
    for_each_tensor([&](Tensor2<T>& t) { t += *rhs.at(i++); });
    return *this;
  }
};

/// Closed-form parameter count of one block: 2F^2 + 2F + M F^2 + 2 M F.
constexpr std::size_t block_parameter_count(std::size_t features, std::size_t layers) {
  return 2 * features * features + 2 * features + layers * features * features +
         2 * layers * features;
}

template <typename T>
struct BlockTrace {
  std::size_t features = 0;
  std::size_t layers = 0;
  Tensor2<T> nodes;      // K x F input (Z^[0])
  Tensor2<T> v_check;    // K x F
  Tensor2<T> v_tilde;    // K x F
  Tensor2<T> scores;     // K x K attention coefficients before normalization
  Tensor2<T> adjacency;  // K x K
  std::vector<Tensor2<T>> layer_inputs;  // Z^[0..M], M+1 entries
  std::vector<Tensor2<T>> pre_norm;      // A Z^[m-1] W^[m], M entries
  std::vector<Tensor2<T>> normed;        // layer-norm output before ReLU, M entries
  Tensor2<T> pooled;                     // 1 x F

  std::size_t node_count() const noexcept { return nodes.rows(); }
  const Tensor2<T>& output_nodes() const { return layer_inputs.back(); }
};

/// Upstream gradient into a block: through its pooled output and, optionally,
/// directly into its adjacency matrix.
template <typename T>
struct BlockUpstream {
  Tensor2<T> pooled;                      // 1 x F
  std::optional<Tensor2<T>> adjacency;    // K x K
};

template <typename T>
BlockTrace<T> block_forward(const GatBlockParams<T>& params, const Tensor2<T>& nodes) {
  const std::size_t f = params.features();
  if (nodes.cols() != f) {
    throw DimensionError("block_forward: nodes " + nodes.shape_string() + " but block has F=" +
                         std::to_string(f));
  }
  if (nodes.rows() == 0) throw DimensionError("block_forward: no nodes");

  BlockTrace<T> tr;
  tr.features = f;
  tr.layers = params.layers();
  tr.nodes = nodes;
  tr.v_check = ops::affine_rows(nodes, params.w_check, params.b_check);
  tr.v_tilde = ops::affine_rows(nodes, params.w_tilde, params.b_tilde);
  tr.scores = ops::matmul_nt(tr.v_check, tr.v_tilde);
  tr.adjacency = ops::row_sq_normalize(tr.scores, static_cast<T>(kAdjacencyEps));

  tr.layer_inputs.reserve(params.layers() + 1);
  tr.layer_inputs.push_back(nodes);
  for (std::size_t m = 0; m < params.layers(); ++m) {
    const Tensor2<T> msg = ops::matmul(tr.layer_inputs.back(), params.gat_weights[m]);
    tr.pre_norm.push_back(ops::matmul(tr.adjacency, msg));
    tr.normed.push_back(ops::layernorm_rows(tr.pre_norm.back(), params.ln_gain[m],
                                            params.ln_bias[m], static_cast<T>(kLayerNormEps)));
    tr.layer_inputs.push_back(ops::relu(tr.normed.back()));
  }
  tr.pooled = ops::mean_rows(tr.layer_inputs.back());
  return tr;
}

/// Accumulates parameter gradients into `grads` and, when given, the
/// gradient w.r.t. the block's input nodes into `node_grad`.
template <typename T>
void block_backward(const GatBlockParams<T>& params, const BlockTrace<T>& trace,
                    const BlockUpstream<T>& upstream, GatBlockParams<T>& grads,
                    std::type_identity_t<Tensor2<T>>* node_grad) {
  const std::size_t f = params.features();
  const std::size_t k = trace.node_count();
  if (trace.features != f || trace.layers != params.layers() ||
      trace.layer_inputs.size() != params.layers() + 1) {
    throw ConsistencyError("block_backward: trace was produced by a block of different shape");
  }
  if (grads.features() != f || grads.layers() != params.layers()) {
    throw ConsistencyError("block_backward: gradient target shape differs from params");
  }
  if (upstream.pooled.rows() != 1 || upstream.pooled.cols() != f) {
    throw DimensionError("block_backward: pooled upstream " + upstream.pooled.shape_string());
  }
  if (node_grad != nullptr && !node_grad->same_shape(trace.nodes)) {
    throw DimensionError("block_backward: node gradient target " + node_grad->shape_string());
  }

  Tensor2<T> g_adj(k, k);
  if (upstream.adjacency) g_adj += *upstream.adjacency;

  Tensor2<T> g_z(k, f);
  ops::mean_rows_backward(upstream.pooled, g_z);

  Tensor2<T> g_nodes(k, f);
  for (std::size_t m = params.layers(); m-- > 0;) {
    Tensor2<T> g_normed(k, f);
    ops::relu_backward(trace.normed[m], g_z, g_normed);
    Tensor2<T> g_pre(k, f);
    ops::layernorm_rows_backward(trace.pre_norm[m], params.ln_gain[m],
                                 static_cast<T>(kLayerNormEps), g_normed, &g_pre,
                                 &grads.ln_gain[m], &grads.ln_bias[m]);
    // pre = A (Z W)
    const Tensor2<T>& z_in = trace.layer_inputs[m];
    const Tensor2<T> msg = ops::matmul(z_in, params.gat_weights[m]);
    Tensor2<T> g_msg(k, f);
    ops::matmul_backward(trace.adjacency, msg, g_pre, &g_adj, &g_msg);
    Tensor2<T> g_zin(k, f);
    ops::matmul_backward(z_in, params.gat_weights[m], g_msg, &g_zin, &grads.gat_weights[m]);
    if (m == 0) {
      g_nodes += g_zin;
    } else {
      g_z = std::move(g_zin);
    }
  }

  Tensor2<T> g_scores(k, k);
  ops::row_sq_normalize_backward(trace.scores, trace.adjacency, g_adj,
                                 static_cast<T>(kAdjacencyEps), g_scores);
  // scores = v_check v_tilde^T
  const Tensor2<T> g_vcheck = ops::matmul(g_scores, trace.v_tilde);
  const Tensor2<T> g_vtilde = ops::matmul_tn(g_scores, trace.v_check);
  ops::affine_rows_backward(trace.nodes, params.w_check, g_vcheck, &g_nodes, &grads.w_check,
                            &grads.b_check);
  ops::affine_rows_backward(trace.nodes, params.w_tilde, g_vtilde, &g_nodes, &grads.w_tilde,
                            &grads.b_tilde);
  if (node_grad != nullptr) *node_grad += g_nodes;
}

/// Weighted in-degree of every node: column sums of the adjacency.
template <typename T>
std::vector<T> wid_column_sums(const Tensor2<T>& adjacency) {
  if (adjacency.rows() != adjacency.cols()) {
    throw DimensionError("wid_column_sums: non-square " + adjacency.shape_string());
  }
  std::vector<T> wid(adjacency.cols(), T{0});
  for (std::size_t k = 0; k < adjacency.rows(); ++k)
    for (std::size_t l = 0; l < adjacency.cols(); ++l) wid[l] += adjacency(k, l);
  return wid;
}

}  // namespace vigat

#endif  // VIGAT_GATBLOCK_HPP
