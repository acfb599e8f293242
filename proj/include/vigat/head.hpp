#ifndef VIGAT_HEAD_HPP
#define VIGAT_HEAD_HPP

// Factorized video head: a frame-level block over the frame features, an
// object-level block applied to every frame's object graph, a temporal block
// over the per-frame object summaries, and a two-layer classifier over the
// concatenated video representation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vigat/error.hpp"
#include "vigat/featio.hpp"
#include "vigat/gatblock.hpp"
#include "vigat/ops.hpp"
#include "vigat/random.hpp"
#include "vigat/tensor.hpp"

namespace vigat {

enum class Tying { kTied, kUntied };

/// The three places a block is used inside the head.
enum class BlockRole : std::size_t {
  kFrame = 0,     // over the frame features (video-level output)
  kObject = 1,    // over one frame's objects
  kTemporal = 2,  // over the stacked per-frame object summaries
};

struct HeadConfig {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::size_t layers = 2;
  Tying tying = Tying::kTied;
  OutputMode mode = OutputMode::kMultilabel;
  double dropout_rate = 0.5;
};

template <typename T>
struct VideoInput {
  Tensor2<T> frames;                // N x F
  std::vector<Tensor2<T>> objects;  // N entries of K x F

  std::size_t frame_count() const noexcept { return frames.rows(); }
};

template <typename T>
VideoInput<T> to_input(const FeaturePack& pack) {
  VideoInput<T> in;
  in.frames = pack.frame_feats.cast<T>();
  in.objects.reserve(pack.object_feats.size());
  for (const auto& x : pack.object_feats) in.objects.push_back(x.cast<T>());
  return in;
}

/// Restricts a video to the given frames, keeping their temporal order.
template <typename T>
VideoInput<T> select_frames(const VideoInput<T>& in, std::span<const std::size_t> frame_indices) {
  if (frame_indices.empty()) throw ParameterError("select_frames: empty frame selection");
  for (std::size_t i = 0; i < frame_indices.size(); ++i) {
    if (frame_indices[i] >= in.frame_count()) {
      throw ParameterError("select_frames: frame index " + std::to_string(frame_indices[i]) +
                           " out of range [0, " + std::to_string(in.frame_count()) + ")");
    }
    if (i > 0 && frame_indices[i] <= frame_indices[i - 1]) {
      throw ParameterError("select_frames: frame indices must be strictly increasing");
    }
  }
  VideoInput<T> out;
  out.frames = Tensor2<T>(frame_indices.size(), in.frames.cols());
  for (std::size_t i = 0; i < frame_indices.size(); ++i) {
    const auto src = in.frames.row(frame_indices[i]);
    std::copy(src.begin(), src.end(), out.frames.row(i).begin());
    out.objects.push_back(in.objects[frame_indices[i]]);
  }
  return out;
}

template <typename T>
struct HeadParams {
  Tying tying = Tying::kTied;
  OutputMode mode = OutputMode::kMultilabel;
  double dropout_rate = 0.5;
  std::vector<GatBlockParams<T>> blocks;  // 1 (tied) or 3 (untied: frame, object, temporal)
  Tensor2<T> u1_weight;                   // F x 2F
  Tensor2<T> u1_bias;                     // 1 x F
  Tensor2<T> u2_weight;                   // C x F
  Tensor2<T> u2_bias;                     // 1 x C
  /// Bumped on every parameter update; traces record the value they saw.
  std::uint64_t revision = 0;

  static HeadParams initialized(const HeadConfig& cfg, std::uint64_t seed) {
    if (cfg.features == 0 || cfg.classes == 0 || cfg.layers == 0) {
      throw ParameterError("HeadConfig: features, classes and layers must be positive");
    }
    if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
      throw ParameterError("HeadConfig: dropout rate must lie in [0, 1)");
    }
    Rng rng(mix_key({seed, 0x4845ULL}));
    HeadParams p;
    p.tying = cfg.tying;
    p.mode = cfg.mode;
    p.dropout_rate = cfg.dropout_rate;
    const std::size_t nblocks = cfg.tying == Tying::kTied ? 1 : 3;
    for (std::size_t b = 0; b < nblocks; ++b) {
      p.blocks.push_back(GatBlockParams<T>::initialized(cfg.features, cfg.layers, rng));
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.features));
    auto fill = [&](Tensor2<T>& t) {
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    p.u1_weight = Tensor2<T>(cfg.features, 2 * cfg.features);
    p.u1_bias = Tensor2<T>(1, cfg.features);
    p.u2_weight = Tensor2<T>(cfg.classes, cfg.features);
    p.u2_bias = Tensor2<T>(1, cfg.classes);
    fill(p.u1_weight);
    fill(p.u2_weight);
    return p;
  }

  static HeadParams zeros_like(const HeadParams& p) {
    HeadParams g = p;
    g.for_each_tensor([](Tensor2<T>& t) { t.fill(T{0}); });
    return g;
  }

  HeadConfig config() const {
    return {features(), classes(), layers(), tying, mode, dropout_rate};
  }

  std::size_t features() const noexcept { return blocks.empty() ? 0 : blocks.front().features(); }
  std::size_t layers() const noexcept { return blocks.empty() ? 0 : blocks.front().layers(); }
  std::size_t classes() const noexcept { return u2_weight.rows(); }

  GatBlockParams<T>& block(BlockRole role) {
    return blocks.at(tying == Tying::kTied ? 0 : static_cast<std::size_t>(role));
  }
  const GatBlockParams<T>& block(BlockRole role) const {
    return blocks.at(tying == Tying::kTied ? 0 : static_cast<std::size_t>(role));
  }

  /// Visits every trainable tensor in checkpoint order.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (auto& b : blocks) b.for_each_tensor(fn);
    fn(u1_weight);
    fn(u1_bias);
    fn(u2_weight);
    fn(u2_bias);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<HeadParams*>(this)->for_each_tensor(
        [&](Tensor2<T>& t) { fn(static_cast<const Tensor2<T>&>(t)); });
  }

  template <typename U>
  HeadParams<U> cast() const {
    HeadParams<U> out;
    out.tying = tying;
    out.mode = mode;
    out.dropout_rate = dropout_rate;
    for (const auto& b : blocks) out.blocks.push_back(b.template cast<U>());
    out.u1_weight = u1_weight.template cast<U>();
    out.u1_bias = u1_bias.template cast<U>();
    out.u2_weight = u2_weight.template cast<U>();
    out.u2_bias = u2_bias.template cast<U>();
    out.revision = revision;
    return out;
  }

  void validate() const {
    const std::size_t expected = tying == Tying::kTied ? 1 : 3;
    if (blocks.size() != expected) {
      throw ConsistencyError("HeadParams: " + std::to_string(blocks.size()) +
                             " blocks stored, expected " + std::to_string(expected));
    }
    const std::size_t f = features();
    for (const auto& b : blocks) {
      if (b.features() != f || b.layers() != layers()) {
        throw ConsistencyError("HeadParams: blocks disagree on F or M");
      }
    }
    if (u1_weight.rows() != f || u1_weight.cols() != 2 * f || u1_bias.cols() != f ||
        u2_weight.cols() != f || u2_bias.cols() != u2_weight.rows()) {
      throw ConsistencyError("HeadParams: classifier shapes do not match F=" + std::to_string(f));
    }
  }
};

/// Untied copy where all three roles start from the tied block.
template <typename T>
HeadParams<T> untie(const HeadParams<T>& tied) {
  if (tied.tying != Tying::kTied) throw ParameterError("untie: parameters are already untied");
  HeadParams<T> out = tied;
  out.tying = Tying::kUntied;
  out.blocks.assign(3, tied.blocks.front());
  return out;
}

/// Exact count of stored trainable reals.
template <typename T>
std::size_t param_count(const HeadParams<T>& params) {
  std::size_t n = 0;
  params.for_each_tensor([&](const Tensor2<T>& t) { n += t.size(); });
  return n;
}

/// Closed-form count for a configuration that need not be materialized.
inline std::size_t param_count(const HeadConfig& cfg) {
  const std::size_t f = cfg.features, c = cfg.classes;
  const std::size_t nblocks = cfg.tying == Tying::kTied ? 1 : 3;
  return nblocks * block_parameter_count(f, cfg.layers) + (2 * f * f + f) + (c * f + c);
}

struct ForwardOptions {
  bool train = false;
  /// Key of the dropout stream; derive it from (seed, epoch, batch, item).
  std::uint64_t dropout_key = 0;
};

template <typename T>
struct HeadTrace {
  BlockTrace<T> omega1;               // frame block, adjacency over frames
  std::vector<BlockTrace<T>> omega2;  // object block, one per frame
  BlockTrace<T> omega3;               // temporal block, adjacency over frames
  Tensor2<T> h_matrix;                // N x F stacked object-block outputs
  Tensor2<T> zeta;                    // 1 x 2F
  Tensor2<T> hidden;                  // 1 x F, first classifier layer output
  Tensor2<T> dropout_mask;            // 1 x F
  Tensor2<T> logits;                  // 1 x C
  Tensor2<T> scores;                  // 1 x C after sigmoid/softmax
  OutputMode mode = OutputMode::kMultilabel;
  bool train = false;
  std::uint64_t revision = 0;

  std::size_t frame_count() const noexcept { return h_matrix.rows(); }

  std::size_t predicted_class() const {
    const auto s = scores.values();
    return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  }
};

template <typename T>
HeadTrace<T> head_forward(const HeadParams<T>& params, const VideoInput<T>& input,
                          const ForwardOptions& opts = {}) {
  const std::size_t f = params.features();
  const std::size_t n = input.frame_count();
  if (n == 0) throw DimensionError("head_forward: video has no frames");
  if (input.frames.cols() != f) {
    throw DimensionError("head_forward: frame features " + input.frames.shape_string() +
                         " but head has F=" + std::to_string(f));
  }
  if (input.objects.size() != n) {
    throw DimensionError("head_forward: " + std::to_string(input.objects.size()) +
                         " object matrices for " + std::to_string(n) + " frames");
  }

  HeadTrace<T> tr;
  tr.mode = params.mode;
  tr.train = opts.train;
  tr.revision = params.revision;
  tr.omega1 = block_forward(params.block(BlockRole::kFrame), input.frames);

  tr.h_matrix = Tensor2<T>(n, f);
  tr.omega2.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (input.objects[i].cols() != f) {
      throw DimensionError("head_forward: object features of frame " + std::to_string(i) + " " +
                           input.objects[i].shape_string());
    }
    tr.omega2.push_back(block_forward(params.block(BlockRole::kObject), input.objects[i]));
    const auto pooled = tr.omega2.back().pooled.row(0);
    std::copy(pooled.begin(), pooled.end(), tr.h_matrix.row(i).begin());
  }
  tr.omega3 = block_forward(params.block(BlockRole::kTemporal), tr.h_matrix);

  tr.zeta = ops::concat(tr.omega1.pooled, tr.omega3.pooled);
  // Two fully connected layers with dropout in between; no hidden activation.
  tr.hidden = ops::affine_rows(tr.zeta, params.u1_weight, params.u1_bias);
  CounterStream stream(opts.dropout_key);
  auto dropped = ops::dropout(tr.hidden, params.dropout_rate, opts.train, stream);
  tr.dropout_mask = std::move(dropped.mask);
  tr.logits = ops::affine_rows(dropped.output, params.u2_weight, params.u2_bias);
  tr.scores = params.mode == OutputMode::kMultilabel ? ops::sigmoid(tr.logits)
                                                     : ops::softmax_row(tr.logits);
  return tr;
}

template <typename T>
HeadTrace<T> head_forward(const HeadParams<T>& params, const FeaturePack& pack,
                          const ForwardOptions& opts = {}) {
  if (pack.classes() != params.classes()) {
    throw DimensionError("head_forward: pack labels have C=" + std::to_string(pack.classes()) +
                         " but head has C=" + std::to_string(params.classes()));
  }
  return head_forward(params, to_input<T>(pack), opts);
}

/// Inference on the selected frames only (strictly increasing indices).
template <typename T>
HeadTrace<T> head_forward_subset(const HeadParams<T>& params, const VideoInput<T>& input,
                                 std::span<const std::size_t> frame_indices,
                                 const ForwardOptions& opts = {}) {
  return head_forward(params, select_frames(input, frame_indices), opts);
}

namespace detail {

/// Backpropagates d(loss)/d(scores) through the classifier. Accumulates the
/// classifier gradients into `grads` when given and returns d(loss)/d(zeta).
template <typename T>
Tensor2<T> classifier_backward(const HeadParams<T>& params, const HeadTrace<T>& tr,
                               const Tensor2<T>& score_grad, HeadParams<T>* grads) {
  if (score_grad.rows() != 1 || score_grad.cols() != params.classes()) {
    throw DimensionError("head_backward: score gradient " + score_grad.shape_string() +
                         " for C=" + std::to_string(params.classes()));
  }
  if (tr.revision != params.revision) {
    throw ConsistencyError("head_backward: trace was recorded at parameter revision " +
                           std::to_string(tr.revision) + ", parameters are at " +
                           std::to_string(params.revision));
  }
  Tensor2<T> g_logits(1, params.classes());
  if (tr.mode == OutputMode::kMultilabel) {
    ops::sigmoid_backward(tr.scores, score_grad, g_logits);
  } else {
    ops::softmax_row_backward(tr.scores, score_grad, g_logits);
  }
  Tensor2<T> dropped(1, params.features());
  for (std::size_t j = 0; j < dropped.size(); ++j) dropped[j] = tr.hidden[j] * tr.dropout_mask[j];
  Tensor2<T> g_dropped(1, params.features());
  ops::affine_rows_backward(dropped, params.u2_weight, g_logits, &g_dropped,
                            grads ? &grads->u2_weight : nullptr, grads ? &grads->u2_bias : nullptr);
  Tensor2<T> g_hidden(1, params.features());
  ops::dropout_backward(tr.dropout_mask, g_dropped, g_hidden);
  Tensor2<T> g_zeta(1, 2 * params.features());
  ops::affine_rows_backward(tr.zeta, params.u1_weight, g_hidden, &g_zeta,
                            grads ? &grads->u1_weight : nullptr, grads ? &grads->u1_bias : nullptr);
  return g_zeta;
}

}  // namespace detail

/// Gradient target for one block invocation: (role, frame index). The frame
/// index is meaningful for the object role only.
template <typename T>
using BlockGradSink = std::function<GatBlockParams<T>&(BlockRole, std::size_t)>;

/// Full backward pass. Classifier gradients go to `grads`; each of the N+2
/// block invocations accumulates into the target returned by `sink`.
template <typename T>
void head_backward_into(const HeadParams<T>& params, const HeadTrace<T>& trace,
                        const Tensor2<T>& score_grad, HeadParams<T>& grads,
                        const BlockGradSink<T>& sink) {
  const std::size_t f = params.features();
  const Tensor2<T> g_zeta = detail::classifier_backward(params, trace, score_grad, &grads);
  Tensor2<T> g_delta(1, f), g_rho(1, f);
  ops::concat_backward(g_zeta, g_delta, g_rho);

  const std::size_t n = trace.frame_count();
  Tensor2<T> g_h(n, f);
  block_backward(params.block(BlockRole::kTemporal), trace.omega3, BlockUpstream<T>{g_rho, {}},
                 sink(BlockRole::kTemporal, 0), &g_h);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor2<T> g_eta(1, f);
    std::copy(g_h.row(i).begin(), g_h.row(i).end(), g_eta.row(0).begin());
    block_backward(params.block(BlockRole::kObject), trace.omega2[i],
                   BlockUpstream<T>{std::move(g_eta), {}}, sink(BlockRole::kObject, i), nullptr);
  }
  block_backward(params.block(BlockRole::kFrame), trace.omega1, BlockUpstream<T>{g_delta, {}},
                 sink(BlockRole::kFrame, 0), nullptr);
}

/// Accumulating variant: adds this trace's gradients to `grads`. Under tying
/// the single block receives the sum of all N+2 role contributions.
template <typename T>
void head_backward_accumulate(const HeadParams<T>& params, const HeadTrace<T>& trace,
                              const Tensor2<T>& score_grad, HeadParams<T>& grads) {
  head_backward_into<T>(params, trace, score_grad, grads,
                        [&](BlockRole role, std::size_t) -> GatBlockParams<T>& {
                          return grads.block(role);
                        });
}

template <typename T>
HeadParams<T> head_backward(const HeadParams<T>& params, const HeadTrace<T>& trace,
                            const Tensor2<T>& score_grad) {
  HeadParams<T> grads = HeadParams<T>::zeros_like(params);
  head_backward_accumulate(params, trace, score_grad, grads);
  return grads;
}

/// Gradient of the temporal block's pooled output for a given score
/// gradient, without touching any parameter gradient.
template <typename T>
Tensor2<T> temporal_pooled_grad(const HeadParams<T>& params, const HeadTrace<T>& trace,
                                const Tensor2<T>& score_grad) {
  const std::size_t f = params.features();
  const Tensor2<T> g_zeta = detail::classifier_backward<T>(params, trace, score_grad, nullptr);
  Tensor2<T> g_delta(1, f), g_rho(1, f);
  ops::concat_backward(g_zeta, g_delta, g_rho);
  return g_rho;
}

}  // namespace vigat

#endif  // VIGAT_HEAD_HPP
