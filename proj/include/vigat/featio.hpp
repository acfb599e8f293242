#ifndef VIGAT_FEATIO_HPP
#define VIGAT_FEATIO_HPP

// Feature-pack container, dataset manifest and the synthetic dataset generator.
//
// Pack layout (little endian):
//   "VGF1" | version u16 | N K F C u32 | labels C x u8 | frame feats N*F f32
//   | object feats N*K*F f32 | per (n,k): confidence f32, bbox 4 x f32,
//   class index u16 | string table: u16 count, {u16 len, utf-8} | video id.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "vigat/binary_io.hpp"
#include "vigat/error.hpp"
#include "vigat/random.hpp"
#include "vigat/tensor.hpp"

namespace vigat {

inline constexpr std::string_view kPackMagic = "VGF1";
inline constexpr std::uint16_t kPackVersion = 1;

enum class OutputMode { kMultilabel, kSinglelabel };

inline std::string to_string(OutputMode m) {
  return m == OutputMode::kMultilabel ? "multilabel" : "singlelabel";
}

inline OutputMode parse_output_mode(const std::string& s) {
  if (s == "multilabel") return OutputMode::kMultilabel;
  if (s == "singlelabel") return OutputMode::kSinglelabel;
  throw ParameterError("unknown output mode '" + s + "'");
}

struct ObjectMeta {
  /// Empty for zero-confidence padding rows.
  std::string class_name;
  float confidence = 0.0f;
  std::array<float, 4> bbox{};  // x0, y0, x1, y1 in [0, 1]

  friend bool operator==(const ObjectMeta&, const ObjectMeta&) = default;
};

struct FeaturePack {
  std::string video_id;
  std::vector<std::uint8_t> labels;         // C entries, 0/1
  Tensor2<float> frame_feats;               // N x F
  std::vector<Tensor2<float>> object_feats;  // N entries of K x F, confidence-sorted
  std::vector<ObjectMeta> object_meta;      // N*K entries, index n*K + k

  std::size_t frames() const noexcept { return frame_feats.rows(); }
  std::size_t objects() const noexcept {
    return object_feats.empty() ? 0 : object_feats.front().rows();
  }
  std::size_t features() const noexcept { return frame_feats.cols(); }
  std::size_t classes() const noexcept { return labels.size(); }

  const ObjectMeta& meta(std::size_t frame, std::size_t object) const {
    return object_meta.at(frame * objects() + object);
  }

  std::size_t positive_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  }

  friend bool operator==(const FeaturePack&, const FeaturePack&) = default;
};

/// Throws FormatError naming the first violated pack invariant.
inline void validate_pack(const FeaturePack& p) {
  using K = FormatError::Kind;
  const std::size_t n = p.frames(), k = p.objects(), f = p.features();
  if (n == 0 || k == 0 || f == 0 || p.classes() == 0) {
    throw FormatError(K::kDimension, "pack '" + p.video_id + "': N, K, F and C must be >= 1");
  }
  if (p.object_feats.size() != n) {
    throw FormatError(K::kRecordCount, "pack '" + p.video_id + "': " +
                                           std::to_string(p.object_feats.size()) +
                                           " object matrices for " + std::to_string(n) + " frames");
  }
  for (const auto& x : p.object_feats) {
    if (x.rows() != k || x.cols() != f) {
      throw FormatError(K::kDimension, "pack '" + p.video_id + "': object matrix " +
                                           x.shape_string() + " expected (" + std::to_string(k) +
                                           "x" + std::to_string(f) + ")");
    }
  }
  if (p.object_meta.size() != n * k) {
    throw FormatError(K::kRecordCount, "pack '" + p.video_id + "': " +
                                           std::to_string(p.object_meta.size()) +
                                           " object records, expected " + std::to_string(n * k));
  }
  for (auto l : p.labels) {
    if (l > 1) throw FormatError(K::kRange, "pack '" + p.video_id + "': label byte not 0/1");
  }
  if (!p.frame_feats.all_finite()) {
    throw FormatError(K::kNonFinite, "pack '" + p.video_id + "': non-finite frame feature");
  }
  for (const auto& x : p.object_feats) {
    if (!x.all_finite()) {
      throw FormatError(K::kNonFinite, "pack '" + p.video_id + "': non-finite object feature");
    }
  }
  for (std::size_t fr = 0; fr < n; ++fr) {
    for (std::size_t o = 0; o < k; ++o) {
      const ObjectMeta& m = p.object_meta[fr * k + o];
      if (!std::isfinite(m.confidence) ||
          !std::all_of(m.bbox.begin(), m.bbox.end(), [](float v) { return std::isfinite(v); })) {
        throw FormatError(K::kNonFinite, "pack '" + p.video_id + "': non-finite object metadata");
      }
      if (m.confidence < 0.0f || m.confidence > 1.0f ||
          !std::all_of(m.bbox.begin(), m.bbox.end(),
                       [](float v) { return v >= 0.0f && v <= 1.0f; })) {
        throw FormatError(K::kRange, "pack '" + p.video_id + "': confidence or bbox outside [0,1]");
      }
      if (o > 0 && m.confidence > p.object_meta[fr * k + o - 1].confidence) {
        throw FormatError(K::kSortOrder, "pack '" + p.video_id + "': frame " +
                                             std::to_string(fr) +
                                             " objects not sorted by confidence");
      }
    }
  }
}

inline std::vector<std::uint8_t> encode_pack(const FeaturePack& p) {
  validate_pack(p);
  io::ByteWriter w;
  w.bytes(kPackMagic);
  w.u16(kPackVersion);
  w.u32(static_cast<std::uint32_t>(p.frames()));
  w.u32(static_cast<std::uint32_t>(p.objects()));
  w.u32(static_cast<std::uint32_t>(p.features()));
  w.u32(static_cast<std::uint32_t>(p.classes()));
  for (auto l : p.labels) w.u8(l);
  for (float v : p.frame_feats.values()) w.f32(v);
  for (const auto& x : p.object_feats)
    for (float v : x.values()) w.f32(v);

  std::vector<std::string> table;
  std::unordered_map<std::string, std::uint16_t> index;
  for (const auto& m : p.object_meta) {
    if (!index.contains(m.class_name)) {
      if (table.size() == UINT16_MAX) throw ParameterError("too many distinct class names");
      index.emplace(m.class_name, static_cast<std::uint16_t>(table.size()));
      table.push_back(m.class_name);
    }
  }
  for (const auto& m : p.object_meta) {
    w.f32(m.confidence);
    for (float b : m.bbox) w.f32(b);
    w.u16(index.at(m.class_name));
  }
  w.u16(static_cast<std::uint16_t>(table.size()));
  for (const auto& s : table) w.short_string(s);
  w.short_string(p.video_id);
  return std::move(w.buffer());
}

inline FeaturePack decode_pack(const std::vector<std::uint8_t>& bytes) {
  using K = FormatError::Kind;
  io::ByteReader r(bytes);
  if (bytes.size() < kPackMagic.size() || r.bytes(kPackMagic.size()) != kPackMagic) {
    throw FormatError(K::kBadMagic, "not a feature pack (bad magic)");
  }
  const std::uint16_t version = r.u16();
  if (version != kPackVersion) {
    throw FormatError(K::kBadVersion, "unsupported pack version " + std::to_string(version));
  }
  const std::uint32_t n = r.u32(), k = r.u32(), f = r.u32(), c = r.u32();
  if (n == 0 || k == 0 || f == 0 || c == 0) {
    throw FormatError(K::kDimension, "pack header has a zero dimension");
  }
  FeaturePack p;
  r.need_items(c, 1);
  p.labels.resize(c);
  for (auto& l : p.labels) l = r.u8();

  r.need_items(std::uint64_t{n} * f, 4);
  p.frame_feats = Tensor2<float>(n, f);
  for (auto& v : p.frame_feats.values()) v = r.f32();
  r.need_items(std::uint64_t{n} * k * f, 4);
  p.object_feats.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor2<float> x(k, f);
    for (auto& v : x.values()) v = r.f32();
    p.object_feats.push_back(std::move(x));
  }

  r.need_items(std::uint64_t{n} * k, 22);
  std::vector<std::uint16_t> name_index(std::size_t{n} * k);
  p.object_meta.resize(std::size_t{n} * k);
  for (std::size_t i = 0; i < p.object_meta.size(); ++i) {
    p.object_meta[i].confidence = r.f32();
    for (auto& b : p.object_meta[i].bbox) b = r.f32();
    name_index[i] = r.u16();
  }
  const std::uint16_t table_size = r.u16();
  std::vector<std::string> table;
  table.reserve(table_size);
  for (std::uint16_t i = 0; i < table_size; ++i) table.push_back(r.short_string());
  for (std::size_t i = 0; i < name_index.size(); ++i) {
    if (name_index[i] >= table.size()) {
      throw FormatError(K::kStringIndex, "object class index " + std::to_string(name_index[i]) +
                                             " outside string table of size " +
                                             std::to_string(table.size()));
    }
    p.object_meta[i].class_name = table[name_index[i]];
  }
  p.video_id = r.short_string();
  if (r.remaining() != 0) {
    throw FormatError(K::kTrailingBytes,
                      std::to_string(r.remaining()) + " trailing bytes after pack payload");
  }
  validate_pack(p);
  return p;
}

inline void write_pack(const FeaturePack& pack, const std::filesystem::path& path) {
  io::write_file(path, encode_pack(pack));
}

inline FeaturePack read_pack(const std::filesystem::path& path) {
  return decode_pack(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Manifest

enum class Subset { kTrain, kTest };

struct ManifestEntry {
  std::string pack_path;  // relative to the manifest directory unless absolute
  Subset subset = Subset::kTrain;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  OutputMode mode = OutputMode::kSinglelabel;
  std::size_t frames = 0;    // N
  std::size_t objects = 0;   // K
  std::size_t features = 0;  // F
  std::vector<ManifestEntry> entries;
  /// Directory relative pack paths resolve against.
  std::filesystem::path base_dir;

  std::size_t classes() const noexcept { return class_names.size(); }

  std::filesystem::path resolve(const ManifestEntry& e) const {
    const std::filesystem::path p(e.pack_path);
    return p.is_absolute() ? p : base_dir / p;
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["class_names"] = m.class_names;
  j["mode"] = to_string(m.mode);
  j["N"] = m.frames;
  j["K"] = m.objects;
  j["F"] = m.features;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back(
        {{"pack_path", e.pack_path}, {"subset", e.subset == Subset::kTrain ? "train" : "test"}});
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j,
                                          const std::filesystem::path& base_dir) {
  DatasetManifest m;
  try {
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.mode = parse_output_mode(j.at("mode").get<std::string>());
    m.frames = j.at("N").get<std::size_t>();
    m.objects = j.at("K").get<std::size_t>();
    m.features = j.at("F").get<std::size_t>();
    for (const auto& e : j.at("entries")) {
      const std::string subset = e.at("subset").get<std::string>();
      if (subset != "train" && subset != "test") {
        throw DatasetError("manifest entry subset must be train or test, got '" + subset + "'");
      }
      m.entries.push_back({e.at("pack_path").get<std::string>(),
                           subset == "train" ? Subset::kTrain : Subset::kTest});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DatasetError(std::string("malformed manifest: ") + ex.what());
  }
  m.base_dir = base_dir;
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw DatasetError("manifest " + path.string() + " is not valid JSON: " + ex.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  io::write_text(path, manifest_to_json(m).dump(2) + "\n");
}

struct ManifestIssue {
  enum class Kind { kIo, kFormat, kDimension, kMode, kLabels };
  std::string pack_path;
  Kind kind;
  std::string message;
};

inline std::string to_string(ManifestIssue::Kind k) {
  switch (k) {
    case ManifestIssue::Kind::kIo: return "io";
    case ManifestIssue::Kind::kFormat: return "format";
    case ManifestIssue::Kind::kDimension: return "dimension";
    case ManifestIssue::Kind::kMode: return "mode";
    case ManifestIssue::Kind::kLabels: return "labels";
  }
  return "unknown";
}

/// Checks one already-loaded pack against the manifest's shared constants.
inline std::vector<ManifestIssue> check_pack_against(const DatasetManifest& m,
                                                     const ManifestEntry& e,
                                                     const FeaturePack& p) {
  std::vector<ManifestIssue> issues;
  if (p.frames() != m.frames || p.objects() != m.objects || p.features() != m.features ||
      p.classes() != m.classes()) {
    std::ostringstream msg;
    msg << "pack has N,K,F,C = " << p.frames() << "," << p.objects() << "," << p.features()
        << "," << p.classes() << "; manifest expects " << m.frames << "," << m.objects << ","
        << m.features << "," << m.classes();
    issues.push_back({e.pack_path, ManifestIssue::Kind::kDimension, msg.str()});
  }
  const std::size_t positives = p.positive_count();
  if (m.mode == OutputMode::kSinglelabel && positives != 1) {
    issues.push_back({e.pack_path, ManifestIssue::Kind::kMode,
                      "singlelabel dataset but pack has " + std::to_string(positives) +
                          " positive labels"});
  } else if (e.subset == Subset::kTrain && positives == 0) {
    issues.push_back({e.pack_path, ManifestIssue::Kind::kLabels, "training pack has no positive label"});
  }
  return issues;
}

/// Lists every entry that violates the manifest's shared shape or label mode.
/// An empty result means the manifest is valid.
inline std::vector<ManifestIssue> validate_manifest(const DatasetManifest& m) {
  std::vector<ManifestIssue> issues;
  for (const auto& e : m.entries) {
    FeaturePack p;
    try {
      p = read_pack(m.resolve(e));
    } catch (const IoError& ex) {
      issues.push_back({e.pack_path, ManifestIssue::Kind::kIo, ex.what()});
      continue;
    } catch (const FormatError& ex) {
      issues.push_back({e.pack_path, ManifestIssue::Kind::kFormat, ex.what()});
      continue;
    }
    auto found = check_pack_against(m, e, p);
    issues.insert(issues.end(), found.begin(), found.end());
  }
  return issues;
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<FeaturePack> train;
  std::vector<FeaturePack> test;
};

/// Loads every pack of a manifest; throws DatasetError listing the issues if
/// any entry is invalid.
inline Dataset load_dataset(const DatasetManifest& m) {
  Dataset d;
  d.manifest = m;
  std::vector<ManifestIssue> issues;
  for (const auto& e : m.entries) {
    try {
      FeaturePack p = read_pack(m.resolve(e));
      auto found = check_pack_against(m, e, p);
      if (found.empty()) {
        (e.subset == Subset::kTrain ? d.train : d.test).push_back(std::move(p));
      }
      issues.insert(issues.end(), found.begin(), found.end());
    } catch (const IoError& ex) {
      issues.push_back({e.pack_path, ManifestIssue::Kind::kIo, ex.what()});
    } catch (const FormatError& ex) {
      issues.push_back({e.pack_path, ManifestIssue::Kind::kFormat, ex.what()});
    }
  }
  if (!issues.empty()) {
    std::string msg = "dataset has " + std::to_string(issues.size()) + " invalid entries";
    for (const auto& i : issues) msg += "\n  " + i.pack_path + " [" + to_string(i.kind) + "] " + i.message;
    throw DatasetError(msg);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  std::size_t classes = 8;
  std::size_t frames = 8;
  std::size_t objects = 5;
  std::size_t features = 16;
  std::size_t n_train = 512;
  std::size_t n_test = 128;
  std::size_t evidence_frames = 2;
  double noise_sigma = 0.3;
  std::uint64_t seed = 7;

  void validate() const {
    if (classes == 0 || frames == 0 || objects == 0 || features == 0) {
      throw ParameterError("SynthSpec: C, N, K, F must be positive");
    }
    if (evidence_frames > frames) {
      throw ParameterError("SynthSpec: evidence_frames exceeds N");
    }
    if (!(noise_sigma >= 0.0)) throw ParameterError("SynthSpec: noise_sigma must be >= 0");
  }
};

/// Unit signature vector of every class, a pure function of (seed, C, F).
inline std::vector<std::vector<double>> synth_signatures(const SynthSpec& spec) {
  Rng rng(mix_key({spec.seed, 0x5167ULL}));
  std::vector<std::vector<double>> sig(spec.classes, std::vector<double>(spec.features));
  for (auto& s : sig) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : s) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : s) v /= norm;
  }
  return sig;
}

struct SynthVideo {
  FeaturePack pack;
  std::vector<std::size_t> evidence_frames;  // sorted
};

/// Generates video `index` of the synthetic set; class = index mod C.
inline SynthVideo synth_video(const SynthSpec& spec,
                              const std::vector<std::vector<double>>& signatures,
                              std::size_t index) {
  const std::size_t n = spec.frames, k = spec.objects, f = spec.features;
  const std::size_t label = index % spec.classes;
  Rng rng(mix_key({spec.seed, 0x7669ULL, index}));

  SynthVideo v;
  auto perm = rng.permutation(n);
  v.evidence_frames.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(spec.evidence_frames));
  std::sort(v.evidence_frames.begin(), v.evidence_frames.end());
  std::vector<bool> is_evidence(n, false);
  for (auto e : v.evidence_frames) is_evidence[e] = true;

  FeaturePack& p = v.pack;
  char id[32];
  std::snprintf(id, sizeof id, "synth_%05zu", index);
  p.video_id = id;
  p.labels.assign(spec.classes, 0);
  p.labels[label] = 1;

  const auto& s = signatures[label];
  auto fill_row = [&](std::span<float> row, bool evidence) {
    for (std::size_t j = 0; j < f; ++j) {
      const double noise = spec.noise_sigma * rng.normal();
      row[j] = static_cast<float>(evidence ? s[j] + noise : noise);
    }
  };

  p.frame_feats = Tensor2<float>(n, f);
  p.object_feats.reserve(n);
  for (std::size_t fr = 0; fr < n; ++fr) {
    fill_row(p.frame_feats.row(fr), is_evidence[fr]);
    Tensor2<float> x(k, f);
    for (std::size_t o = 0; o < k; ++o) fill_row(x.row(o), is_evidence[fr]);
    p.object_feats.push_back(std::move(x));

    std::vector<float> conf(k);
    for (auto& c : conf) c = static_cast<float>(rng.uniform(0.3, 1.0));
    std::sort(conf.begin(), conf.end(), std::greater<>());
    for (std::size_t o = 0; o < k; ++o) {
      ObjectMeta m;
      m.class_name = is_evidence[fr] ? "cue_" + std::to_string(label) : "clutter";
      m.confidence = conf[o];
      const float x0 = static_cast<float>(rng.uniform(0.0, 0.5));
      const float y0 = static_cast<float>(rng.uniform(0.0, 0.5));
      m.bbox = {x0, y0, x0 + static_cast<float>(rng.uniform(0.1, 0.5)),
                y0 + static_cast<float>(rng.uniform(0.1, 0.5))};
      p.object_meta.push_back(std::move(m));
    }
  }
  return v;
}

inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kGroundTruthFile = "ground_truth.json";

/// Writes manifest.json, packs/<video_id>.vgf and ground_truth.json under
/// out_dir. Output bytes are a pure function of `spec`.
inline DatasetManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir,
                                      bool overwrite = false) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "packs", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "packs").string() + ": " + ec.message());
  if (!overwrite && fs::exists(out_dir / kManifestFile)) {
    throw IoError((out_dir / kManifestFile).string() + " exists (pass overwrite to replace)");
  }

  DatasetManifest m;
  for (std::size_t c = 0; c < spec.classes; ++c) m.class_names.push_back("class_" + std::to_string(c));
  m.mode = OutputMode::kSinglelabel;
  m.frames = spec.frames;
  m.objects = spec.objects;
  m.features = spec.features;
  m.base_dir = out_dir;

  const auto signatures = synth_signatures(spec);
  nlohmann::ordered_json truth = nlohmann::ordered_json::object();
  const std::size_t total = spec.n_train + spec.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    SynthVideo v = synth_video(spec, signatures, i);
    const std::string rel = "packs/" + v.pack.video_id + ".vgf";
    write_pack(v.pack, out_dir / rel);
    m.entries.push_back({rel, i < spec.n_train ? Subset::kTrain : Subset::kTest});
    truth[v.pack.video_id] = v.evidence_frames;
  }
  io::write_text(out_dir / kGroundTruthFile, truth.dump(2) + "\n");
  save_manifest(m, out_dir / kManifestFile);
  return m;
}

/// video_id -> sorted planted frame indices.
inline std::map<std::string, std::vector<std::size_t>> load_ground_truth(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    return j.get<std::map<std::string, std::vector<std::size_t>>>();
  } catch (const nlohmann::json::exception& ex) {
    throw DatasetError("malformed ground-truth file " + path.string() + ": " + ex.what());
  }
}

}  // namespace vigat

#endif  // VIGAT_FEATIO_HPP
