#ifndef VIGAT_XAIEVAL_HPP
#define VIGAT_XAIEVAL_HPP

// Frame-explanation quality measures over an evaluation split. For every
// video the predicted class u is fixed from the all-frame run; the model is
// then re-run on the top-U ranked frames and on the remaining frames:
//   IC  = mean [score_top(u) > score_all(u)]
//   AD  = mean max(0, score_all(u) - score_top(u)) / score_all(u)
//   F-  = mean ([u correct] - [argmax of top-U run correct])
//   F+  = mean ([u correct] - [argmax of complement run correct])

#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vigat/error.hpp"
#include "vigat/explain.hpp"
#include "vigat/featio.hpp"
#include "vigat/head.hpp"
#include "vigat/random.hpp"

namespace vigat {

struct XaiRow {
  std::string criterion;
  std::size_t upsilon = 0;
  double ad = 0.0;
  double ic = 0.0;
  double f_minus = 0.0;
  double f_plus = 0.0;
  std::size_t q = 0;        // videos evaluated
  std::size_t skipped = 0;  // videos with fewer than upsilon frames
  std::size_t ad_skipped = 0;  // videos with a zero full-frame score (AD undefined)
};

struct XaiReport {
  std::vector<XaiRow> rows;
};

struct XaiOptions {
  std::uint64_t seed = 0;
  std::size_t random_trials = 5;
};

namespace detail {

struct XaiSums {
  double ad = 0.0, ic = 0.0, f_minus = 0.0, f_plus = 0.0;
  std::size_t q = 0, skipped = 0, ad_skipped = 0;
};

inline bool correct(const FeaturePack& pack, std::size_t cls) { return pack.labels.at(cls) != 0; }

/// Adds one video's contribution for one ranking and budget.
template <typename T>
void accumulate_video(const HeadParams<T>& params, const VideoInput<T>& input,
                      const FeaturePack& pack, const HeadTrace<T>& full,
                      const std::vector<std::size_t>& ranking, std::size_t upsilon, XaiSums& s) {
  const std::size_t n = input.frame_count();
  if (upsilon == 0) throw ParameterError("evaluate_criterion: upsilon must be >= 1");
  if (upsilon > n) {
    ++s.skipped;
    return;
  }
  const std::size_t u_hat = full.predicted_class();
  const double y_hat = static_cast<double>(full.scores[u_hat]);

  std::vector<std::size_t> top(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(upsilon));
  std::sort(top.begin(), top.end());
  std::vector<std::size_t> rest(ranking.begin() + static_cast<std::ptrdiff_t>(upsilon), ranking.end());
  std::sort(rest.begin(), rest.end());

  const auto top_trace = head_forward_subset(params, input, top);
  const double y_bar = static_cast<double>(top_trace.scores[u_hat]);
  const bool full_ok = correct(pack, u_hat);
  const bool top_ok = correct(pack, top_trace.predicted_class());
  // With no remaining frames the model has nothing to predict from.
  bool rest_ok = false;
  if (!rest.empty()) rest_ok = correct(pack, head_forward_subset(params, input, rest).predicted_class());

  ++s.q;
  s.ic += y_bar > y_hat ? 1.0 : 0.0;
  if (y_hat > 0.0) {
    s.ad += std::max(0.0, y_hat - y_bar) / y_hat;
  } else {
    ++s.ad_skipped;
  }
  s.f_minus += static_cast<double>(full_ok) - static_cast<double>(top_ok);
  s.f_plus += static_cast<double>(full_ok) - static_cast<double>(rest_ok);
}

inline XaiRow finish(const std::string& name, std::size_t upsilon, const XaiSums& s) {
  XaiRow r;
  r.criterion = name;
  r.upsilon = upsilon;
  r.q = s.q;
  r.skipped = s.skipped;
  r.ad_skipped = s.ad_skipped;
  if (s.q > 0) {
    const double q = static_cast<double>(s.q);
    r.ic = s.ic / q;
    r.f_minus = s.f_minus / q;
    r.f_plus = s.f_plus / q;
    if (s.q > s.ad_skipped) r.ad = s.ad / static_cast<double>(s.q - s.ad_skipped);
  }
  return r;
}

}  // namespace detail

/// Frame rankings a criterion produces for one video: one ranking, or
/// `random_trials` rankings for the random baseline.
template <typename T>
std::vector<std::vector<std::size_t>> criterion_rankings(const HeadParams<T>& params,
                                                         const HeadTrace<T>& full,
                                                         Criterion criterion,
                                                         std::size_t video_index,
                                                         const XaiOptions& opts) {
  if (criterion == Criterion::kRandom) {
    return random_frame_ranking(full.frame_count(), opts.random_trials,
                                mix_key({opts.seed, video_index}));
  }
  return {frame_saliency(params, full, criterion).ranking};
}

/// AD, IC, F- and F+ for one criterion and every budget in `upsilons`. The
/// random criterion reports the mean over its seeded trials.
template <typename T>
XaiReport evaluate_criterion(const HeadParams<T>& params, const std::vector<FeaturePack>& packs,
                             Criterion criterion, const std::vector<std::size_t>& upsilons,
                             const XaiOptions& opts = {}) {
  if (packs.empty()) throw DatasetError("evaluate_criterion: no videos");
  if (upsilons.empty()) throw ParameterError("evaluate_criterion: empty upsilon list");
  const std::size_t trials = criterion == Criterion::kRandom ? opts.random_trials : 1;
  if (trials == 0) throw ParameterError("evaluate_criterion: random_trials must be >= 1");

  // sums[trial][upsilon]
  std::vector<std::vector<detail::XaiSums>> sums(trials,
                                                 std::vector<detail::XaiSums>(upsilons.size()));
  for (std::size_t v = 0; v < packs.size(); ++v) {
    const VideoInput<T> input = to_input<T>(packs[v]);
    const HeadTrace<T> full = head_forward(params, input);
    const auto rankings = criterion_rankings(params, full, criterion, v, opts);
    for (std::size_t t = 0; t < trials; ++t) {
      for (std::size_t u = 0; u < upsilons.size(); ++u) {
        detail::accumulate_video(params, input, packs[v], full, rankings[t], upsilons[u], sums[t][u]);
      }
    }
  }

  XaiReport report;
  for (std::size_t u = 0; u < upsilons.size(); ++u) {
    XaiRow mean;
    for (std::size_t t = 0; t < trials; ++t) {
      const XaiRow r = detail::finish(to_string(criterion), upsilons[u], sums[t][u]);
      if (t == 0) {
        mean = r;
        mean.ad = mean.ic = mean.f_minus = mean.f_plus = 0.0;
      }
      mean.ad += r.ad / static_cast<double>(trials);
      mean.ic += r.ic / static_cast<double>(trials);
      mean.f_minus += r.f_minus / static_cast<double>(trials);
      mean.f_plus += r.f_plus / static_cast<double>(trials);
    }
    report.rows.push_back(mean);
  }
  return report;
}

struct Winner {
  std::string measure;  // AD, IC, Fminus, Fplus
  std::size_t upsilon = 0;
  std::string criterion;  // "tie" when the best value is shared
};

struct Comparison {
  std::vector<XaiReport> reports;
  std::vector<Winner> winners;
};

/// Evaluates every criterion and names the best one per (measure, budget):
/// lower AD and F-, higher IC and F+.
template <typename T>
Comparison compare_criteria(const HeadParams<T>& params, const std::vector<FeaturePack>& packs,
                            const std::vector<Criterion>& criteria,
                            const std::vector<std::size_t>& upsilons, const XaiOptions& opts = {}) {
  if (criteria.size() < 2) throw ParameterError("compare_criteria: need at least two criteria");
  Comparison cmp;
  for (Criterion c : criteria) cmp.reports.push_back(evaluate_criterion(params, packs, c, upsilons, opts));

  struct Measure {
    const char* name;
    double XaiRow::*field;
    bool lower_is_better;
  };
  const Measure measures[] = {{"AD", &XaiRow::ad, true},
                              {"IC", &XaiRow::ic, false},
                              {"Fminus", &XaiRow::f_minus, true},
                              {"Fplus", &XaiRow::f_plus, false}};
  for (const auto& m : measures) {
    for (std::size_t u = 0; u < upsilons.size(); ++u) {
      double best = m.lower_is_better ? std::numeric_limits<double>::infinity()
                                      : -std::numeric_limits<double>::infinity();
      std::string who;
      bool tie = false;
      for (const auto& rep : cmp.reports) {
        const double v = rep.rows[u].*m.field;
        const bool better = m.lower_is_better ? v < best : v > best;
        if (better) {
          best = v;
          who = rep.rows[u].criterion;
          tie = false;
        } else if (v == best) {
          tie = true;
        }
      }
      cmp.winners.push_back({m.name, upsilons[u], tie ? "tie" : who});
    }
  }
  return cmp;
}

inline std::string xai_csv(const std::vector<XaiReport>& reports) {
  std::ostringstream os;
  os << "criterion,upsilon,AD,IC,Fminus,Fplus,Q,skipped\n" << std::setprecision(9);
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      os << r.criterion << ',' << r.upsilon << ',' << r.ad << ',' << r.ic << ',' << r.f_minus << ','
         << r.f_plus << ',' << r.q << ',' << r.skipped << '\n';
    }
  }
  return os.str();
}

inline nlohmann::ordered_json xai_json(const std::vector<XaiReport>& reports,
                                       const std::vector<Winner>& winners = {}) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      j["rows"].push_back({{"criterion", r.criterion},
                           {"upsilon", r.upsilon},
                           {"AD", r.ad},
                           {"IC", r.ic},
                           {"Fminus", r.f_minus},
                           {"Fplus", r.f_plus},
                           {"Q", r.q},
                           {"skipped", r.skipped},
                           {"ad_skipped", r.ad_skipped}});
    }
  }
  if (!winners.empty()) {
    j["winners"] = nlohmann::ordered_json::array();
    for (const auto& w : winners) {
      j["winners"].push_back({{"measure", w.measure}, {"upsilon", w.upsilon}, {"criterion", w.criterion}});
    }
  }
  return j;
}

}  // namespace vigat

#endif  // VIGAT_XAIEVAL_HPP
