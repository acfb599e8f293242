#ifndef VIGAT_EXPLAIN_HPP
#define VIGAT_EXPLAIN_HPP

// Node saliency from learned adjacencies. The weighted in-degree (WiD) of a
// node is the column sum of its block's adjacency: object WiDs come from the
// per-frame object graphs, frame WiDs from the frame-level and temporal
// blocks. Grad-CAM over the temporal block and random rankings serve as
// baselines for frame selection.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vigat/error.hpp"
#include "vigat/featio.hpp"
#include "vigat/gatblock.hpp"
#include "vigat/head.hpp"
#include "vigat/random.hpp"

namespace vigat {

enum class Criterion { kMean, kMax, kLocalOnly, kGlobalOnly, kGradCam, kRandom };

inline std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::kMean: return "mean";
    case Criterion::kMax: return "max";
    case Criterion::kLocalOnly: return "local";
    case Criterion::kGlobalOnly: return "global";
    case Criterion::kGradCam: return "gradcam";
    case Criterion::kRandom: return "random";
  }
  return "unknown";
}

inline Criterion parse_criterion(const std::string& s) {
  if (s == "mean" || s == "beta") return Criterion::kMean;
  if (s == "max") return Criterion::kMax;
  if (s == "local" || s == "local_only") return Criterion::kLocalOnly;
  if (s == "global" || s == "global_only") return Criterion::kGlobalOnly;
  if (s == "gradcam") return Criterion::kGradCam;
  if (s == "random") return Criterion::kRandom;
  throw ParameterError("unknown criterion '" + s + "'");
}

inline bool is_wid_criterion(Criterion c) {
  return c == Criterion::kMean || c == Criterion::kMax || c == Criterion::kLocalOnly ||
         c == Criterion::kGlobalOnly;
}

/// Indices sorted by descending score; ties keep the lower index first.
inline std::vector<std::size_t> rank_descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

struct FrameWids {
  std::vector<double> global;  // frame-level block (column sums of its adjacency)
  std::vector<double> local;   // temporal block over object summaries
};

template <typename T>
FrameWids frame_wids(const HeadTrace<T>& trace) {
  FrameWids w;
  for (T v : wid_column_sums(trace.omega1.adjacency)) w.global.push_back(static_cast<double>(v));
  for (T v : wid_column_sums(trace.omega3.adjacency)) w.local.push_back(static_cast<double>(v));
  return w;
}

/// Combines the two frame WiDs: mean, max, local (temporal) only or global
/// (frame-level) only.
inline std::vector<double> frame_criterion(std::span<const double> global,
                                           std::span<const double> local, Criterion kind) {
  if (global.size() != local.size()) {
    throw DimensionError("frame_criterion: WiD vectors differ in length");
  }
  std::vector<double> out(global.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (kind) {
      case Criterion::kMean: out[i] = 0.5 * (global[i] + local[i]); break;
      case Criterion::kMax: out[i] = std::max(global[i], local[i]); break;
      case Criterion::kLocalOnly: out[i] = local[i]; break;
      case Criterion::kGlobalOnly: out[i] = global[i]; break;
      default:
        throw ParameterError("frame_criterion: '" + to_string(kind) + "' is not a WiD criterion");
    }
  }
  return out;
}

/// Grad-CAM over the temporal block's frame nodes: each frame scores
/// ReLU(<alpha, xi_n>), where xi_n is the node's final-layer feature and alpha
/// the node-averaged gradient of the target class score w.r.t. those features.
template <typename T>
std::vector<double> gradcam_frame_scores(const HeadParams<T>& params, const HeadTrace<T>& trace,
                                         std::size_t target_class) {
  if (target_class >= params.classes()) {
    throw ParameterError("gradcam: target class " + std::to_string(target_class) + " out of range");
  }
  Tensor2<T> onehot(1, params.classes());
  onehot[target_class] = T{1};
  const Tensor2<T> g_pooled = temporal_pooled_grad(params, trace, onehot);

  const Tensor2<T>& xi = trace.omega3.output_nodes();
  const std::size_t n = xi.rows(), f = xi.cols();
  // Mean pooling hands every node the same gradient g_pooled / N.
  Tensor2<T> g_nodes(n, f);
  ops::mean_rows_backward(g_pooled, g_nodes);
  const Tensor2<T> alpha = ops::mean_rows(g_nodes);

  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += static_cast<double>(alpha[j]) * static_cast<double>(xi(i, j));
    scores[i] = std::max(0.0, s);
  }
  return scores;
}

struct FrameSaliency {
  std::vector<double> global;  // omega_1
  std::vector<double> local;   // omega_3
  std::vector<double> beta;    // mean of the two
  std::optional<std::vector<double>> gradcam;
  Criterion criterion = Criterion::kMean;
  std::vector<double> scores;  // scores of the chosen criterion
  std::vector<std::size_t> ranking;
};

/// Frame scores and ranking under a WiD criterion or Grad-CAM (target =
/// predicted class). Random rankings come from random_frame_ranking().
template <typename T>
FrameSaliency frame_saliency(const HeadParams<T>& params, const HeadTrace<T>& trace,
                             Criterion criterion) {
  if (criterion == Criterion::kRandom) {
    throw ParameterError("frame_saliency: use random_frame_ranking for the random baseline");
  }
  FrameSaliency s;
  FrameWids w = frame_wids(trace);
  s.beta = frame_criterion(w.global, w.local, Criterion::kMean);
  s.global = std::move(w.global);
  s.local = std::move(w.local);
  s.criterion = criterion;
  if (criterion == Criterion::kGradCam) {
    s.gradcam = gradcam_frame_scores(params, trace, trace.predicted_class());
    s.scores = *s.gradcam;
  } else {
    s.scores = frame_criterion(s.global, s.local, criterion);
  }
  s.ranking = rank_descending(s.scores);
  return s;
}

struct RankedObject {
  std::size_t object_index = 0;
  std::string class_name;
  double confidence = 0.0;
  double wid = 0.0;
};

struct ObjectSaliency {
  std::vector<std::vector<double>> wid;          // [frame][object], omega_2
  std::vector<std::vector<RankedObject>> ranked;  // [frame], descending WiD
};

/// Object WiDs of every frame. Metadata is attached when `pack` is given.
template <typename T>
ObjectSaliency object_wids(const HeadTrace<T>& trace, const FeaturePack* pack = nullptr) {
  ObjectSaliency s;
  for (std::size_t n = 0; n < trace.omega2.size(); ++n) {
    std::vector<double> w;
    for (T v : wid_column_sums(trace.omega2[n].adjacency)) w.push_back(static_cast<double>(v));
    std::vector<RankedObject> ranked;
    for (std::size_t l : rank_descending(w)) {
      RankedObject r{l, {}, 0.0, w[l]};
      if (pack != nullptr) {
        const ObjectMeta& m = pack->meta(n, l);
        r.class_name = m.class_name;
        r.confidence = m.confidence;
      }
      ranked.push_back(std::move(r));
    }
    s.wid.push_back(std::move(w));
    s.ranked.push_back(std::move(ranked));
  }
  return s;
}

/// `trials` seeded uniform permutations of [0, n_frames).
inline std::vector<std::vector<std::size_t>> random_frame_ranking(std::size_t n_frames,
                                                                  std::size_t trials,
                                                                  std::uint64_t seed) {
  if (trials == 0) throw ParameterError("random_frame_ranking: trials must be >= 1");
  Rng rng(mix_key({seed, 0x524eULL}));
  std::vector<std::vector<std::size_t>> out;
  out.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) out.push_back(rng.permutation(n_frames));
  return out;
}

/// Explanation record of one video, the data behind frame and object barplots.
template <typename T>
nlohmann::ordered_json explanation_json(const FeaturePack& pack, const HeadParams<T>& params,
                                        const HeadTrace<T>& trace, Criterion criterion,
                                        std::uint64_t seed = 0) {
  nlohmann::ordered_json j;
  j["video_id"] = pack.video_id;
  j["predicted_class"] = trace.predicted_class();
  j["criterion"] = to_string(criterion);
  std::vector<double> scores;
  std::vector<std::size_t> ranking;
  if (criterion == Criterion::kRandom) {
    ranking = random_frame_ranking(trace.frame_count(), 1, seed).front();
    scores.assign(trace.frame_count(), 0.0);
  } else {
    FrameSaliency s = frame_saliency(params, trace, criterion);
    scores = std::move(s.scores);
    ranking = std::move(s.ranking);
  }
  j["frame_scores"] = scores;
  j["ranked_frames"] = ranking;
  const ObjectSaliency objects = object_wids(trace, &pack);
  j["per_frame_objects"] = nlohmann::ordered_json::array();
  for (std::size_t n = 0; n < objects.ranked.size(); ++n) {
    nlohmann::ordered_json frame;
    frame["frame"] = n;
    frame["ranked"] = nlohmann::ordered_json::array();
    for (const auto& r : objects.ranked[n]) {
      frame["ranked"].push_back({{"object_index", r.object_index},
                                 {"class_name", r.class_name},
                                 {"confidence", r.confidence},
                                 {"wid", r.wid}});
    }
    j["per_frame_objects"].push_back(std::move(frame));
  }
  return j;
}

/// Fraction of the first k ranked frames that are in `truth`.
inline double precision_at_k(std::span<const std::size_t> ranking,
                             std::span<const std::size_t> truth, std::size_t k) {
  if (k == 0 || k > ranking.size()) throw ParameterError("precision_at_k: k out of range");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    hits += std::find(truth.begin(), truth.end(), ranking[i]) != truth.end();
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace vigat

#endif  // VIGAT_EXPLAIN_HPP
