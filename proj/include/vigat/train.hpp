#ifndef VIGAT_TRAIN_HPP
#define VIGAT_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vigat/error.hpp"
#include "vigat/featio.hpp"
#include "vigat/head.hpp"
#include "vigat/random.hpp"
#include "vigat/tensor.hpp"

namespace vigat {

inline constexpr double kScoreClip = 1e-7;

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  Tensor2<T> grad;  // d(loss)/d(scores), 1 x C
};

/// Cross-entropy on post-activation scores: mean per-class binary
/// cross-entropy (multilabel) or categorical cross-entropy (singlelabel).
template <typename T>
LossAndGrad<T> loss_and_grad(const Tensor2<T>& scores, std::span<const std::uint8_t> labels,
                             OutputMode mode) {
  const std::size_t c = scores.cols();
  if (scores.rows() != 1 || labels.size() != c) {
    throw DimensionError("loss_and_grad: scores " + scores.shape_string() + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  LossAndGrad<T> out{0.0, Tensor2<T>(1, c)};
  auto clip = [](double s) { return std::clamp(s, kScoreClip, 1.0 - kScoreClip); };
  if (mode == OutputMode::kMultilabel) {
    for (std::size_t j = 0; j < c; ++j) {
      const double s = clip(static_cast<double>(scores[j]));
      const double y = labels[j] ? 1.0 : 0.0;
      out.loss -= (y * std::log(s) + (1.0 - y) * std::log(1.0 - s)) / static_cast<double>(c);
      out.grad[j] = static_cast<T>(-(y / s - (1.0 - y) / (1.0 - s)) / static_cast<double>(c));
    }
  } else {
    const auto positives = std::count(labels.begin(), labels.end(), std::uint8_t{1});
    if (positives != 1) {
      throw LabelError("singlelabel loss needs exactly one positive label, got " +
                       std::to_string(positives));
    }
    const std::size_t u = static_cast<std::size_t>(
        std::find(labels.begin(), labels.end(), std::uint8_t{1}) - labels.begin());
    const double s = std::max(static_cast<double>(scores[u]), kScoreClip);
    out.loss = -std::log(s);
    out.grad[u] = static_cast<T>(-1.0 / s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
  std::vector<Tensor2<T>> first_moment;
  std::vector<Tensor2<T>> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over parallel lists of parameters and
/// gradients. Moments are created lazily on the first call.
template <typename T>
void adam_update(AdamState<T>& state, const std::vector<Tensor2<T>*>& params,
                 const std::vector<const Tensor2<T>*>& grads, double lr) {
  if (!(lr > 0.0)) throw ParameterError("adam: learning rate must be > 0");
  if (params.size() != grads.size()) throw DimensionError("adam: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam: state tracks a different parameter list");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor2<T>& p = *params[i];
    const Tensor2<T>& g = *grads[i];
    Tensor2<T>& m = state.first_moment[i];
    Tensor2<T>& v = state.second_moment[i];
    p.require_same_shape(g, "adam");
    p.require_same_shape(m, "adam");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = state.beta1 * static_cast<double>(m[j]) + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * static_cast<double>(v[j]) + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

template <typename T>
void adam_step(AdamState<T>& state, HeadParams<T>& params, const HeadParams<T>& grads, double lr) {
  std::vector<Tensor2<T>*> ps;
  std::vector<const Tensor2<T>*> gs;
  params.for_each_tensor([&](Tensor2<T>& t) { ps.push_back(&t); });
  grads.for_each_tensor([&](const Tensor2<T>& t) { gs.push_back(&t); });
  adam_update(state, ps, gs, lr);
  ++params.revision;
}

// ---------------------------------------------------------------------------
// Schedule

struct TrainConfig {
  double lr0 = 1e-4;
  std::vector<std::size_t> milestones;
  double gamma = 0.1;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  OutputMode mode = OutputMode::kMultilabel;
  std::size_t workers = 1;

  void validate() const {
    if (epochs == 0) throw ParameterError("TrainConfig: epochs must be >= 1");
    if (batch_size == 0) throw ParameterError("TrainConfig: batch_size must be >= 1");
    if (workers == 0) throw ParameterError("TrainConfig: workers must be >= 1");
    if (!(lr0 > 0.0)) throw ParameterError("TrainConfig: lr0 must be > 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i] >= epochs || (i > 0 && milestones[i] <= milestones[i - 1])) {
        throw ParameterError("TrainConfig: milestones must be strictly increasing and < epochs");
      }
    }
  }
};

/// lr0 * gamma^(number of milestones <= epoch).
inline double lr_at(const TrainConfig& cfg, std::size_t epoch) {
  const auto passed = std::count_if(cfg.milestones.begin(), cfg.milestones.end(),
                                    [&](std::size_t m) { return m <= epoch; });
  return cfg.lr0 * std::pow(cfg.gamma, static_cast<double>(passed));
}

// ---------------------------------------------------------------------------
// Metrics

using ScoreRows = std::vector<std::vector<double>>;
using LabelRows = std::vector<std::vector<std::uint8_t>>;

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Fraction of rows whose highest score lands on a positive label.
inline double top1_accuracy(const ScoreRows& scores, const LabelRows& labels) {
  if (scores.size() != labels.size()) throw DimensionError("top1_accuracy: row count mismatch");
  if (scores.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != labels[i].size()) throw DimensionError("top1_accuracy: width mismatch");
    hits += labels[i][argmax(scores[i])] != 0;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

/// Average precision of one ranked list: mean of precision@rank over the
/// ranks holding positives. Ties keep input order.
inline double average_precision(std::span<const double> scores, std::span<const std::uint8_t> relevant) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (relevant[order[r]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

struct MapResult {
  double value = 0.0;
  /// Classes without any positive example; they do not enter the mean.
  std::vector<std::size_t> skipped_classes;
};

inline MapResult mean_average_precision(const ScoreRows& scores, const LabelRows& labels) {
  if (scores.size() != labels.size()) throw DimensionError("mean_average_precision: row count mismatch");
  MapResult out;
  if (scores.empty()) return out;
  const std::size_t c = scores.front().size();
  std::vector<double> col(scores.size());
  std::vector<std::uint8_t> rel(scores.size());
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < c; ++j) {
    bool any = false;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != c || labels[i].size() != c) {
        throw DimensionError("mean_average_precision: ragged rows");
      }
      col[i] = scores[i][j];
      rel[i] = labels[i][j];
      any = any || rel[i];
    }
    if (!any) {
      out.skipped_classes.push_back(j);
      continue;
    }
    sum += average_precision(col, rel);
    ++used;
  }
  out.value = used == 0 ? 0.0 : sum / static_cast<double>(used);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_metric = 0.0;
};

struct TrainResult {
  HeadParams<float> final_params;
  HeadParams<float> best_params;
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_metric = -1.0;
  double final_metric = 0.0;
};

inline std::string epoch_log_csv(const std::vector<EpochRecord>& log) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,test_metric\n";
  os << std::setprecision(9);
  for (const auto& r : log) {
    os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.test_metric << '\n';
  }
  return os.str();
}

template <typename T>
ScoreRows predict_scores(const HeadParams<T>& params, const std::vector<VideoInput<T>>& videos) {
  ScoreRows rows;
  rows.reserve(videos.size());
  for (const auto& v : videos) {
    const auto tr = head_forward(params, v);
    rows.emplace_back(tr.scores.values().begin(), tr.scores.values().end());
  }
  return rows;
}

/// top-1 for singlelabel data, mAP for multilabel data.
inline double recognition_metric(OutputMode mode, const ScoreRows& scores, const LabelRows& labels) {
  return mode == OutputMode::kSinglelabel ? top1_accuracy(scores, labels)
                                          : mean_average_precision(scores, labels).value;
}

inline LabelRows label_rows(const std::vector<FeaturePack>& packs) {
  LabelRows rows;
  rows.reserve(packs.size());
  for (const auto& p : packs) rows.push_back(p.labels);
  return rows;
}

template <typename T>
std::vector<VideoInput<T>> to_inputs(const std::vector<FeaturePack>& packs) {
  std::vector<VideoInput<T>> out;
  out.reserve(packs.size());
  for (const auto& p : packs) out.push_back(to_input<T>(p));
  return out;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with Adam and a milestone schedule. Deterministic for a
/// given seed and worker count.
inline TrainResult train_model(const Dataset& data, const HeadConfig& head_cfg,
                               const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty()) throw DatasetError("train_model: training split is empty");
  if (data.test.empty()) throw DatasetError("train_model: test split is empty");
  if (head_cfg.mode != cfg.mode) throw ParameterError("train_model: head and train modes differ");

  const auto train_in = to_inputs<float>(data.train);
  const auto test_in = to_inputs<float>(data.test);
  const LabelRows test_labels = label_rows(data.test);

  TrainResult result;
  HeadParams<float> params = HeadParams<float>::initialized(head_cfg, cfg.seed);
  AdamState<float> adam;
  const std::size_t n_train = train_in.size();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    Rng shuffle_rng(mix_key({cfg.seed, 0x5348ULL, epoch}));
    const std::vector<std::size_t> order = shuffle_rng.permutation(n_train);
    double loss_sum = 0.0;

    std::size_t batch = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(n_train, start + cfg.batch_size);
      const std::size_t count = end - start;
      const std::size_t workers = std::min(cfg.workers, count);

      // Each worker accumulates a contiguous chunk; chunks are reduced in order.
      std::vector<HeadParams<float>> partial(workers, HeadParams<float>::zeros_like(params));
      std::vector<double> partial_loss(workers, 0.0);
      auto run_chunk = [&](std::size_t w) {
        const std::size_t lo = start + count * w / workers;
        const std::size_t hi = start + count * (w + 1) / workers;
        for (std::size_t pos = lo; pos < hi; ++pos) {
          const std::size_t idx = order[pos];
          ForwardOptions opts{true, mix_key({cfg.seed, epoch, batch, pos - start})};
          const auto tr = head_forward(params, train_in[idx], opts);
          const auto lg = loss_and_grad(tr.scores, std::span<const std::uint8_t>(data.train[idx].labels),
                                        cfg.mode);
          partial_loss[w] += lg.loss;
          head_backward_accumulate(params, tr, lg.grad, partial[w]);
        }
      };
      if (workers == 1) {
        run_chunk(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_chunk, w);
        for (auto& t : pool) t.join();
      }
      HeadParams<float>& grads = partial[0];
      for (std::size_t w = 1; w < workers; ++w) {
        std::vector<const Tensor2<float>*> rhs;
        partial[w].for_each_tensor([&](const Tensor2<float>& t) { rhs.push_back(&t); });
        std::size_t i = 0;
        grads.for_each_tensor([&](Tensor2<float>& t) { t += *rhs[i++]; });
      }
      for (double l : partial_loss) loss_sum += l;
      const float scale = 1.0f / static_cast<float>(count);
      grads.for_each_tensor([&](Tensor2<float>& t) { t *= scale; });
      adam_step(adam, params, grads, lr);
    }

    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(n_train),
                    recognition_metric(cfg.mode, predict_scores(params, test_in), test_labels)};
    result.log.push_back(rec);
    if (rec.test_metric > result.best_metric) {
      result.best_metric = rec.test_metric;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    if (on_epoch) on_epoch(rec);
  }
  result.final_params = params;
  result.final_metric = result.log.back().test_metric;
  return result;
}

}  // namespace vigat

#endif  // VIGAT_TRAIN_HPP
