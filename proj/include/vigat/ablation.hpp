#ifndef VIGAT_ABLATION_HPP
#define VIGAT_ABLATION_HPP

// Architecture sweeps: GAT depth and tied vs. untied block weights.

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "vigat/featio.hpp"
#include "vigat/head.hpp"
#include "vigat/train.hpp"

namespace vigat {

struct AblationRow {
  std::string variant;
  HeadConfig head;
  std::size_t parameters = 0;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  double final_metric = 0.0;
};

/// Trains one model per head configuration with the same data and schedule.
inline std::vector<AblationRow> run_ablation(const Dataset& data,
                                             const std::vector<std::pair<std::string, HeadConfig>>& variants,
                                             const TrainConfig& train_cfg,
                                             const EpochCallback& on_epoch = {}) {
  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : variants) {
    const TrainResult r = train_model(data, cfg, train_cfg, on_epoch);
    rows.push_back({name, cfg, param_count(cfg), r.best_metric, r.best_epoch, r.final_metric});
  }
  return rows;
}

/// One variant per GAT depth, everything else taken from `base`.
inline std::vector<AblationRow> depth_sweep(const Dataset& data, const HeadConfig& base,
                                            const std::vector<std::size_t>& layer_counts,
                                            const TrainConfig& train_cfg,
                                            const EpochCallback& on_epoch = {}) {
  std::vector<std::pair<std::string, HeadConfig>> variants;
  for (std::size_t m : layer_counts) {
    HeadConfig cfg = base;
    cfg.layers = m;
    variants.emplace_back("M=" + std::to_string(m), cfg);
  }
  return run_ablation(data, variants, train_cfg, on_epoch);
}

/// Tied and untied heads, everything else taken from `base`.
inline std::vector<AblationRow> tying_ablation(const Dataset& data, const HeadConfig& base,
                                               const TrainConfig& train_cfg) {
  HeadConfig tied = base, untied = base;
  tied.tying = Tying::kTied;
  untied.tying = Tying::kUntied;
  return run_ablation(data, {{"tied", tied}, {"untied", untied}}, train_cfg);
}

/// Plain-text table: variant, parameter count, best and final metric (%).
inline std::string ablation_table(const std::vector<AblationRow>& rows, const std::string& metric_name) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "variant" << std::right << std::setw(12) << "params"
     << std::setw(14) << ("best " + metric_name) << std::setw(8) << "epoch" << std::setw(14)
     << ("final " + metric_name) << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.variant << std::right << std::setw(12) << r.parameters
       << std::setw(14) << 100.0 * r.best_metric << std::setw(8) << r.best_epoch << std::setw(14)
       << 100.0 * r.final_metric << '\n';
  }
  return os.str();
}

}  // namespace vigat

#endif  // VIGAT_ABLATION_HPP
