// vigat: command-line front end for dataset synthesis, training, evaluation,
// explanation export and explanation benchmarking.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vigat/vigat.hpp"

namespace fs = std::filesystem;
using namespace vigat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Preset {
  OutputMode mode;
  std::size_t frames;
  std::size_t classes;
  std::vector<std::size_t> milestones;
  std::size_t epochs;
};

const std::map<std::string, Preset>& presets() {
  static const std::map<std::string, Preset> table{
      {"fcvid", {OutputMode::kMultilabel, 9, 239, {50, 90}, 200}},
      {"minikinetics", {OutputMode::kSinglelabel, 30, 200, {20, 50}, 100}},
      {"activitynet", {OutputMode::kMultilabel, 120, 200, {110, 160}, 200}},
  };
  return table;
}

/// Refuses to replace an existing artifact unless --overwrite was given.
void guard_output(const fs::path& path, bool overwrite) {
  if (!overwrite && fs::exists(path)) {
    throw IoError(path.string() + " already exists (pass --overwrite to replace it)");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

Dataset open_dataset(const fs::path& dir) {
  const DatasetManifest m = load_manifest(dir / kManifestFile);
  spdlog::info("dataset {}: C={} N={} K={} F={} mode={} entries={}", dir.string(), m.classes(),
               m.frames, m.objects, m.features, to_string(m.mode), m.entries.size());
  return load_dataset(m);
}

const std::vector<FeaturePack>& pick_subset(const Dataset& d, const std::string& subset) {
  return subset == "train" ? d.train : d.test;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  SynthSpec spec;
  bool overwrite = false;
};

int run_synth(const SynthArgs& a) {
  const DatasetManifest m = synth_generate(a.spec, a.out, a.overwrite);
  spdlog::info("wrote {} packs to {}", m.entries.size(), a.out.string());
  return kExitOk;
}

struct TrainArgs {
  fs::path dataset_dir;
  fs::path out;
  TrainConfig train;
  std::size_t layers = 2;
  bool untied = false;
  std::optional<std::string> mode;
  std::optional<std::string> preset;
  double dropout = 0.5;
  bool overwrite = false;
};

int run_train(TrainArgs a, const CLI::App& cmd) {
  const Dataset data = open_dataset(a.dataset_dir);
  const DatasetManifest& m = data.manifest;

  if (a.preset) {
    const Preset& p = presets().at(*a.preset);
    if (m.frames != p.frames || m.classes() != p.classes) {
      throw DatasetError("preset " + *a.preset + " expects N=" + std::to_string(p.frames) +
                         ", C=" + std::to_string(p.classes) + " but the dataset has N=" +
                         std::to_string(m.frames) + ", C=" + std::to_string(m.classes()));
    }
    if (!a.mode) a.mode = to_string(p.mode);
    if (cmd.count("--milestones") == 0) a.train.milestones = p.milestones;
    if (cmd.count("--epochs") == 0) a.train.epochs = p.epochs;
  }
  const OutputMode mode = a.mode ? parse_output_mode(*a.mode) : m.mode;
  if (mode != m.mode) {
    throw ParameterError("--mode " + to_string(mode) + " disagrees with the dataset's " + to_string(m.mode));
  }
  a.train.mode = mode;
  a.train.validate();

  const fs::path best_path = a.out / "model.vgc";
  const fs::path final_path = a.out / "model_final.vgc";
  const fs::path log_path = a.out / "train_log.csv";
  ensure_dir(a.out);
  for (const auto& p : {best_path, final_path, log_path}) guard_output(p, a.overwrite);

  const HeadConfig head{m.features, m.classes(), a.layers, a.untied ? Tying::kUntied : Tying::kTied,
                        mode, a.dropout};
  spdlog::info("head: F={} C={} M={} {} params={}", head.features, head.classes, head.layers,
               a.untied ? "untied" : "tied", param_count(head));
  const char* metric = mode == OutputMode::kSinglelabel ? "top1" : "mAP";
  const TrainResult r = train_model(data, head, a.train, [&](const EpochRecord& e) {
    spdlog::info("epoch {:>4} lr {:.3g} loss {:.5f} {} {:.4f}", e.epoch, e.lr, e.train_loss, metric,
                 e.test_metric);
  });
  save_checkpoint(r.best_params, best_path);
  save_checkpoint(r.final_params, final_path);
  io::write_text(log_path, epoch_log_csv(r.log));
  std::cout << "best " << metric << ' ' << r.best_metric << " at epoch " << r.best_epoch << "; final "
            << metric << ' ' << r.final_metric << '\n';
  return kExitOk;
}

struct EvalArgs {
  fs::path dataset_dir;
  fs::path checkpoint;
  std::string subset = "test";
};

HeadParams<float> open_checkpoint(const fs::path& path, const DatasetManifest& m) {
  HeadParams<float> p = load_checkpoint<float>(path);
  if (p.features() != m.features || p.classes() != m.classes() || p.mode != m.mode) {
    throw DatasetError("checkpoint " + path.string() + " (F=" + std::to_string(p.features()) +
                       ", C=" + std::to_string(p.classes()) + ", " + to_string(p.mode) +
                       ") does not match the dataset");
  }
  return p;
}

int run_eval(const EvalArgs& a) {
  const Dataset data = open_dataset(a.dataset_dir);
  const HeadParams<float> p = open_checkpoint(a.checkpoint, data.manifest);
  const auto& packs = pick_subset(data, a.subset);
  if (packs.empty()) throw DatasetError("the " + a.subset + " split is empty");
  const ScoreRows scores = predict_scores(p, to_inputs<float>(packs));
  const LabelRows labels = label_rows(packs);
  if (p.mode == OutputMode::kSinglelabel) {
    std::cout << "top1 " << top1_accuracy(scores, labels) << '\n';
  } else {
    const MapResult r = mean_average_precision(scores, labels);
    std::cout << "mAP " << r.value << '\n';
    if (!r.skipped_classes.empty()) {
      spdlog::warn("{} classes without positives were left out of the mAP", r.skipped_classes.size());
    }
  }
  return kExitOk;
}

struct ExplainArgs {
  fs::path dataset_dir;
  fs::path checkpoint;
  fs::path out;
  std::string criterion = "mean";
  std::string subset = "test";
  std::vector<std::string> videos;
  std::uint64_t seed = 0;
  bool overwrite = false;
};

int run_explain(const ExplainArgs& a) {
  const Criterion criterion = parse_criterion(a.criterion);
  const Dataset data = open_dataset(a.dataset_dir);
  const HeadParams<float> p = open_checkpoint(a.checkpoint, data.manifest);
  ensure_dir(a.out);
  std::size_t written = 0;
  const auto& packs = pick_subset(data, a.subset);
  for (std::size_t i = 0; i < packs.size(); ++i) {
    const FeaturePack& pack = packs[i];
    if (!a.videos.empty() &&
        std::find(a.videos.begin(), a.videos.end(), pack.video_id) == a.videos.end()) {
      continue;
    }
    const fs::path path = a.out / (pack.video_id + ".json");
    guard_output(path, a.overwrite);
    const HeadTrace<float> tr = head_forward(p, pack);
    io::write_text(path, explanation_json(pack, p, tr, criterion, mix_key({a.seed, i})).dump(2) + "\n");
    ++written;
  }
  if (written == 0) throw DatasetError("no videos matched the selection");
  spdlog::info("wrote {} explanation files to {}", written, a.out.string());
  return kExitOk;
}

struct XaiArgs {
  fs::path dataset_dir;
  fs::path checkpoint;
  fs::path out;
  std::vector<std::string> criteria{"mean", "max", "local", "global", "gradcam", "random"};
  std::vector<std::size_t> upsilon{1, 2, 3, 5, 10, 20};
  std::string subset = "test";
  std::uint64_t seed = 0;
  std::size_t trials = 5;
  std::size_t workers = 1;
  bool overwrite = false;
};

int run_xai(const XaiArgs& a) {
  std::vector<Criterion> criteria;
  for (const auto& c : a.criteria) criteria.push_back(parse_criterion(c));
  if (a.workers == 0) throw ParameterError("--workers must be >= 1");
  const Dataset data = open_dataset(a.dataset_dir);
  const HeadParams<float> p = open_checkpoint(a.checkpoint, data.manifest);
  const auto& packs = pick_subset(data, a.subset);

  const fs::path csv_path = a.out / "xai_report.csv";
  const fs::path json_path = a.out / "xai_report.json";
  ensure_dir(a.out);
  guard_output(csv_path, a.overwrite);
  guard_output(json_path, a.overwrite);

  XaiOptions opts;
  opts.seed = a.seed;
  opts.random_trials = a.trials;
  // Criteria are independent, so they can be evaluated concurrently without
  // changing any result.
  std::vector<XaiReport> reports(criteria.size());
  std::vector<std::exception_ptr> errors(criteria.size());
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < criteria.size(); i += a.workers) {
      try {
        reports[i] = evaluate_criterion(p, packs, criteria[i], a.upsilon, opts);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(a.workers, criteria.size()); ++w) pool.emplace_back(work, w);
  work(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  io::write_text(csv_path, xai_csv(reports));
  io::write_text(json_path, xai_json(reports).dump(2) + "\n");
  std::cout << xai_csv(reports);
  return kExitOk;
}

int run_inspect(const fs::path& path) {
  const auto bytes = io::read_file(path);
  const std::string magic(bytes.begin(), bytes.begin() + std::min<std::size_t>(4, bytes.size()));
  if (magic == kPackMagic) {
    const FeaturePack p = decode_pack(bytes);
    std::cout << "feature pack " << path.string() << "\n"
              << "  video_id  " << p.video_id << "\n"
              << "  N K F C   " << p.frames() << ' ' << p.objects() << ' ' << p.features() << ' '
              << p.classes() << "\n  positives";
    for (std::size_t c = 0; c < p.classes(); ++c)
      if (p.labels[c]) std::cout << ' ' << c;
    std::cout << '\n';
    for (std::size_t n = 0; n < p.frames(); ++n) {
      std::cout << "  frame " << n << ':';
      for (std::size_t k = 0; k < p.objects(); ++k) {
        const ObjectMeta& o = p.meta(n, k);
        std::cout << ' ' << (o.class_name.empty() ? "-" : o.class_name) << '(' << o.confidence << ')';
      }
      std::cout << '\n';
    }
    return kExitOk;
  }
  if (magic == kCheckpointMagic) {
    io::ByteReader r(bytes);
    const CheckpointHeader h = decode_checkpoint_header(r, bytes.size());
    const HeadConfig cfg{h.features, h.classes, h.layers, h.tying, h.mode, 0.5};
    std::cout << "checkpoint " << path.string() << "\n"
              << "  version   " << h.version << "\n"
              << "  tying     " << (h.tying == Tying::kTied ? "tied" : "untied") << "\n"
              << "  mode      " << to_string(h.mode) << "\n"
              << "  F M C     " << h.features << ' ' << h.layers << ' ' << h.classes << "\n"
              << "  params    " << param_count(cfg) << "\n";
    decode_checkpoint<float>(bytes);  // full integrity check
    std::cout << "  integrity ok\n";
    return kExitOk;
  }
  throw FormatError(FormatError::Kind::kBadMagic, path.string() + " is neither a pack nor a checkpoint");
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("vigat");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("VIGAT_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only accept an explicit "off".
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();

  CLI::App app{"Graph-attention video event recognition with frame and object explanations"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file of option defaults (flags take precedence)");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted evidence frames");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.spec.seed, "Generator seed")->capture_default_str();
  c_synth->add_option("--classes", synth.spec.classes, "Number of classes C")->capture_default_str();
  c_synth->add_option("--frames", synth.spec.frames, "Frames per video N")->capture_default_str();
  c_synth->add_option("--objects", synth.spec.objects, "Objects per frame K")->capture_default_str();
  c_synth->add_option("--features", synth.spec.features, "Feature width F")->capture_default_str();
  c_synth->add_option("--train-count", synth.spec.n_train, "Training videos")->capture_default_str();
  c_synth->add_option("--test-count", synth.spec.n_test, "Test videos")->capture_default_str();
  c_synth->add_option("--evidence", synth.spec.evidence_frames, "Evidence frames per video")->capture_default_str();
  c_synth->add_option("--noise", synth.spec.noise_sigma, "Noise standard deviation")->capture_default_str();
  c_synth->add_flag("--overwrite", synth.overwrite, "Replace an existing dataset");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a head on a dataset");
  c_train->add_option("--dataset-dir", train.dataset_dir, "Directory holding manifest.json")->required();
  c_train->add_option("--out", train.out, "Output directory for checkpoints and the epoch log")->required();
  c_train->add_option("--epochs", train.train.epochs)->capture_default_str();
  c_train->add_option("--lr", train.train.lr0, "Initial learning rate")->capture_default_str();
  c_train->add_option("--milestones", train.train.milestones, "Epochs where lr is multiplied by gamma")
      ->delimiter(',');
  c_train->add_option("--gamma", train.train.gamma)->capture_default_str();
  c_train->add_option("--batch-size", train.train.batch_size)->capture_default_str();
  c_train->add_option("--layers", train.layers, "GAT layers per block (M)")->capture_default_str();
  auto* tied = c_train->add_flag("--tied", "Share one block across all roles (default)");
  c_train->add_flag("--untied", train.untied, "Separate blocks per role")->excludes(tied);
  c_train->add_option("--mode", train.mode, "multilabel|singlelabel (defaults to the dataset's)")
      ->check(CLI::IsMember({"multilabel", "singlelabel"}));
  c_train->add_option("--dropout", train.dropout)->capture_default_str();
  c_train->add_option("--seed", train.train.seed)->capture_default_str();
  c_train->add_option("--workers", train.train.workers)->capture_default_str();
  c_train->add_option("--preset", train.preset, "Published dataset schedule: fcvid|minikinetics|activitynet")
      ->check(CLI::IsMember({"fcvid", "minikinetics", "activitynet"}));
  c_train->add_flag("--overwrite", train.overwrite);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Print the recognition metric of a checkpoint");
  c_eval->add_option("--dataset-dir", eval.dataset_dir)->required();
  c_eval->add_option("--checkpoint", eval.checkpoint)->required();
  c_eval->add_option("--subset", eval.subset)->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  ExplainArgs explain;
  auto* c_explain = app.add_subcommand("explain", "Write frame and object explanations per video");
  c_explain->add_option("--dataset-dir", explain.dataset_dir)->required();
  c_explain->add_option("--checkpoint", explain.checkpoint)->required();
  c_explain->add_option("--out", explain.out)->required();
  c_explain->add_option("--criterion", explain.criterion)
      ->check(CLI::IsMember({"mean", "beta", "max", "local", "global", "gradcam", "random"}))
      ->capture_default_str();
  c_explain->add_option("--subset", explain.subset)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  c_explain->add_option("--video", explain.videos, "Restrict to these video ids")->delimiter(',');
  c_explain->add_option("--seed", explain.seed)->capture_default_str();
  c_explain->add_flag("--overwrite", explain.overwrite);

  XaiArgs xai;
  auto* c_xai = app.add_subcommand("xai-bench", "Compare explanation criteria with AD, IC, F- and F+");
  c_xai->add_option("--dataset-dir", xai.dataset_dir)->required();
  c_xai->add_option("--checkpoint", xai.checkpoint)->required();
  c_xai->add_option("--out", xai.out)->required();
  c_xai->add_option("--criterion,--criteria", xai.criteria, "Comma-separated criteria")
      ->delimiter(',')
      ->check(CLI::IsMember({"mean", "beta", "max", "local", "global", "gradcam", "random"}))
      ->default_str(join(xai.criteria));
  c_xai->add_option("--upsilon", xai.upsilon, "Comma-separated frame budgets")
      ->delimiter(',')
      ->check(CLI::PositiveNumber)
      ->default_str(join(xai.upsilon));
  c_xai->add_option("--subset", xai.subset)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  c_xai->add_option("--seed", xai.seed)->capture_default_str();
  c_xai->add_option("--trials", xai.trials, "Random-baseline permutations")->capture_default_str();
  c_xai->add_option("--workers", xai.workers)->capture_default_str();
  c_xai->add_flag("--overwrite", xai.overwrite);

  fs::path inspect_path;
  auto* c_inspect = app.add_subcommand("inspect", "Dump a feature pack or checkpoint header");
  c_inspect->add_option("path", inspect_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_train->parsed()) return run_train(train, *c_train);
    if (c_eval->parsed()) return run_eval(eval);
    if (c_explain->parsed()) return run_explain(explain);
    if (c_xai->parsed()) return run_xai(xai);
    if (c_inspect->parsed()) return run_inspect(inspect_path);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
