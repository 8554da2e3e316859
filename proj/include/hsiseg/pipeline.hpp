#pragma once

// Pipeline stages over a run directory:
//
//   <output_dir>/<timestamp>-<tag>/
//     manifest.toml   stage summaries; wall-clock data only under [provenance]
//     data/           normalized splits, scene foreground, truth raster
//     models/         .lbae.json and .rbm.json files
//     checkpoints/    <run>/<epoch>.rbm.json
//     metrics/        CSV tables
//     maps/           SEGM rasters and PNG renders
//
// Every stage draws its randomness from stage_seed(master seed, <stage name>).

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <toml.hpp>

#include "hsiseg/clustering.hpp"
#include "hsiseg/core.hpp"
#include "hsiseg/hsi_data.hpp"
#include "hsiseg/lbae.hpp"
#include "hsiseg/metrics.hpp"
#include "hsiseg/rbm.hpp"
#include "hsiseg/remote_sampler.hpp"
#include "hsiseg/samplers.hpp"
#include "hsiseg/segmentation.hpp"

#ifndef HSISEG_DATA_DIR
#define HSISEG_DATA_DIR "data"
#endif

namespace hsiseg::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "hsiseg 1.0.0";

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  fs::path source;  // the TOML file, if any
  std::string tag = "run";
  fs::path output_dir = "runs";
  std::uint64_t seed = 0;

  // [dataset]
  std::string scene;
  fs::path cube;
  fs::path ground_truth;
  std::vector<std::size_t> noisy_bands;
  fs::path noisy_bands_file;

  // [lbae]
  std::size_t lbae_epochs = 50;
  std::size_t lbae_batch_size = 4;
  double lbae_learning_rate = 1e-3;
  std::vector<std::size_t> grid_batch_sizes{4, 8, 16};
  std::vector<double> grid_learning_rates{1e-2, 1e-3, 1e-4};
  bool lbae_grid = false;  // run_all: grid search instead of a single fit

  // [rbm]
  std::string sampler = "cd";
  std::size_t hidden = 23;
  std::size_t hidden_min = 3;
  std::size_t hidden_max = 28;
  std::size_t repeats = 10;
  bool scan = false;
  std::size_t rbm_epochs = 1000;
  std::size_t rbm_batch_size = 64;
  double rbm_learning_rate = 0.01;
  double init_sigma = 0.01;
  std::size_t checkpoint_every = 100;
  std::size_t num_reads = 100;
  std::size_t gibbs_sweeps = 10;
  samplers::AnnealSchedule anneal{0.1, 1.0, 100, 1};

  // [segment]
  bool merge = true;
  std::string linkage = "complete";
  std::string distance = "sad";
  std::size_t target_k = 7;

  // [remote]
  std::string endpoint;
  std::size_t timeout_ms = 30000;

  // [kmeans]
  std::size_t kmeans_k = 7;
  std::size_t kmeans_seeds = 10;

  /// Enumerations and numeric ranges always; dataset paths when
  /// `check_paths` is set. Messages name the failing field.
  void validate(bool check_paths = true) const {
    auto fail = [](const std::string& field, const std::string& why) { throw Error("config: " + field + ": " + why); };
    if (tag.empty() || tag.find('/') != std::string::npos) fail("run.tag", "must be a non-empty name without '/'");
    if (check_paths) {
      if (cube.empty()) fail("dataset.cube", "missing");
      if (!fs::exists(cube)) fail("dataset.cube", "file '" + cube.string() + "' does not exist");
      if (ground_truth.empty()) fail("dataset.ground_truth", "missing");
      if (!fs::exists(ground_truth)) fail("dataset.ground_truth", "file '" + ground_truth.string() + "' does not exist");
      if (!noisy_bands_file.empty() && !fs::exists(noisy_bands_file))
        fail("dataset.noisy_bands_file", "file '" + noisy_bands_file.string() + "' does not exist");
    }
    if (lbae_batch_size == 0) fail("lbae.batch_size", "must be positive");
    if (!(lbae_learning_rate > 0.0)) fail("lbae.learning_rate", "must be positive");
    if (grid_batch_sizes.empty()) fail("lbae.grid_batch_sizes", "must not be empty");
    for (auto b : grid_batch_sizes)
      if (b == 0) fail("lbae.grid_batch_sizes", "entries must be positive");
    if (grid_learning_rates.empty()) fail("lbae.grid_learning_rates", "must not be empty");
    for (auto lr : grid_learning_rates)
      if (!(lr > 0.0)) fail("lbae.grid_learning_rates", "entries must be positive");
    static const std::set<std::string> kSamplers{"cd", "sa", "exact", "gibbs", "remote"};
    if (!kSamplers.count(sampler)) fail("rbm.sampler", "'" + sampler + "' is not one of cd, sa, exact, gibbs, remote");
    if (hidden < 1 || hidden > 64) fail("rbm.hidden", "must lie in 1..64");
    if (hidden_min < 1 || hidden_max < hidden_min || hidden_max > 64)
      fail("rbm.hidden_min", "need 1 <= hidden_min <= hidden_max <= 64");
    if (repeats < 1) fail("rbm.repeats", "must be positive");
    if (rbm_batch_size == 0) fail("rbm.batch_size", "must be positive");
    if (!(rbm_learning_rate > 0.0)) fail("rbm.learning_rate", "must be positive");
    if (!(init_sigma >= 0.0)) fail("rbm.init_sigma", "must be non-negative");
    if (num_reads == 0) fail("rbm.num_reads", "must be positive");
    if (gibbs_sweeps == 0) fail("rbm.gibbs_sweeps", "must be positive");
    try {
      anneal.validate();
    } catch (const Error& e) {
      fail("rbm.anneal", e.what());
    }
    if (linkage != "complete" && linkage != "average") fail("segment.linkage", "'" + linkage + "' is not complete or average");
    try {
      clustering::parse_rbm_distance(distance);
    } catch (const Error&) {
      fail("segment.distance", "'" + distance + "' is not hamming, euclidean or sad");
    }
    if (target_k < 1) fail("segment.target_k", "must be positive");
    if (timeout_ms == 0) fail("remote.timeout_ms", "must be positive");
    if (kmeans_k < 1) fail("kmeans.k", "must be positive");
    if (kmeans_seeds < 1) fail("kmeans.seeds", "must be positive");
  }
};

namespace detail {

class Reader {
 public:
  explicit Reader(const toml::table& t) : t_(t) {}

  template <typename T>
  void get(std::string_view path, T& out) const {
    auto node = t_.at_path(path);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!node.is_boolean()) bad(path, "a boolean");
      out = *node.value<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!node.is_string()) bad(path, "a string");
      out = *node.value<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!node.is_number()) bad(path, "a number");
      out = *node.value<double>();
    } else {
      if (!node.is_integer() || *node.value<std::int64_t>() < 0) bad(path, "a non-negative integer");
      out = static_cast<T>(*node.value<std::int64_t>());
    }
  }

  template <typename T>
  void get_list(std::string_view path, std::vector<T>& out) const {
    auto node = t_.at_path(path);
    if (!node) return;
    const auto* arr = node.as_array();
    if (!arr) bad(path, "an array");
    out.clear();
    for (const auto& item : *arr) {
      if constexpr (std::is_floating_point_v<T>) {
        if (!item.is_number()) bad(path, "an array of numbers");
        out.push_back(*item.template value<double>());
      } else {
        if (!item.is_integer() || *item.template value<std::int64_t>() < 0) bad(path, "an array of non-negative integers");
        out.push_back(static_cast<T>(*item.template value<std::int64_t>()));
      }
    }
  }

  bool has(std::string_view path) const { return static_cast<bool>(t_.at_path(path)); }

 private:
  [[noreturn]] static void bad(std::string_view path, const char* what) {
    throw Error("config: " + std::string(path) + ": expected " + what);
  }
  const toml::table& t_;
};

inline toml::table parse_toml(const fs::path& path) {
  if (!fs::exists(path)) throw Error("cannot open " + path.string());
  try {
    return toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ":" << e.source().begin.line << ": " << e.description();
    throw Error(os.str());
  }
}

inline fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

}  // namespace detail

/// Band indices from a TOML file with `bands = [...]`.
inline std::vector<std::size_t> load_band_list(const fs::path& path) {
  const auto t = detail::parse_toml(path);
  std::vector<std::size_t> bands;
  if (!t.at_path("bands")) throw Error(path.string() + ": missing 'bands'");
  detail::Reader(t).get_list("bands", bands);
  return bands;
}

/// Parses a config table; relative paths are taken relative to `base_dir`.
inline PipelineConfig config_from_toml(const toml::table& t, const fs::path& base_dir) {
  PipelineConfig c;
  detail::Reader r(t);
  r.get("run.tag", c.tag);
  std::string out_dir = c.output_dir.string();
  r.get("run.output_dir", out_dir);
  c.output_dir = detail::resolve(base_dir, out_dir);
  r.get("run.seed", c.seed);

  std::string cube, gt, bands_file;
  r.get("dataset.scene", c.scene);
  r.get("dataset.cube", cube);
  r.get("dataset.ground_truth", gt);
  r.get("dataset.noisy_bands_file", bands_file);
  c.cube = detail::resolve(base_dir, cube);
  c.ground_truth = detail::resolve(base_dir, gt);
  c.noisy_bands_file = detail::resolve(base_dir, bands_file);
  if (r.has("dataset.noisy_bands") && !bands_file.empty())
    throw Error("config: dataset.noisy_bands: cannot be combined with dataset.noisy_bands_file");
  r.get_list("dataset.noisy_bands", c.noisy_bands);

  r.get("lbae.epochs", c.lbae_epochs);
  r.get("lbae.batch_size", c.lbae_batch_size);
  r.get("lbae.learning_rate", c.lbae_learning_rate);
  r.get_list("lbae.grid_batch_sizes", c.grid_batch_sizes);
  r.get_list("lbae.grid_learning_rates", c.grid_learning_rates);
  r.get("lbae.grid", c.lbae_grid);

  r.get("rbm.sampler", c.sampler);
  r.get("rbm.hidden", c.hidden);
  r.get("rbm.hidden_min", c.hidden_min);
  r.get("rbm.hidden_max", c.hidden_max);
  r.get("rbm.repeats", c.repeats);
  r.get("rbm.scan", c.scan);
  r.get("rbm.epochs", c.rbm_epochs);
  r.get("rbm.batch_size", c.rbm_batch_size);
  r.get("rbm.learning_rate", c.rbm_learning_rate);
  r.get("rbm.init_sigma", c.init_sigma);
  r.get("rbm.checkpoint_every", c.checkpoint_every);
  r.get("rbm.num_reads", c.num_reads);
  r.get("rbm.gibbs_sweeps", c.gibbs_sweeps);
  r.get("rbm.anneal.beta_start", c.anneal.beta_start);
  r.get("rbm.anneal.beta_end", c.anneal.beta_end);
  r.get("rbm.anneal.sweeps", c.anneal.sweeps);
  r.get("rbm.anneal.restarts", c.anneal.num_restarts);

  r.get("segment.merge", c.merge);
  r.get("segment.linkage", c.linkage);
  r.get("segment.distance", c.distance);
  r.get("segment.target_k", c.target_k);

  r.get("remote.endpoint", c.endpoint);
  r.get("remote.timeout_ms", c.timeout_ms);

  r.get("kmeans.k", c.kmeans_k);
  r.get("kmeans.seeds", c.kmeans_seeds);
  return c;
}

inline PipelineConfig load_config(const fs::path& path, bool check_paths = true) {
  auto c = config_from_toml(detail::parse_toml(path), path.parent_path());
  c.source = path;
  c.validate(check_paths);
  return c;
}

// ---------------------------------------------------------------------------
// Run directory and manifest

inline std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now(),
                                 const char* format = "%Y%m%dT%H%M%SZ") {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, format, &tm);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Creates <output_dir>/<timestamp>-<tag> with its subdirectories.
inline fs::path create_run_dir(const PipelineConfig& cfg) {
  const std::string base = utc_timestamp() + "-" + cfg.tag;
  fs::path dir = cfg.output_dir / base;
  for (int n = 2; fs::exists(dir); ++n) dir = cfg.output_dir / (base + "." + std::to_string(n));
  return dir;
}

inline void prepare_run_dir(const fs::path& dir) {
  for (const char* sub : {"models", "checkpoints", "metrics", "maps", "data"}) fs::create_directories(dir / sub);
}

/// Most recent run directory for the tag, by name.
inline fs::path latest_run_dir(const PipelineConfig& cfg) {
  fs::path best;
  if (fs::is_directory(cfg.output_dir)) {
    const std::string suffix = "-" + cfg.tag;
    for (const auto& e : fs::directory_iterator(cfg.output_dir)) {
      if (!e.is_directory() || !fs::exists(e.path() / "manifest.toml")) continue;
      const std::string name = e.path().filename().string();
      const bool ends = name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
      if (!ends && name.rfind(suffix + ".") == std::string::npos) continue;
      if (best.empty() || name > best.filename().string()) best = e.path();
    }
  }
  if (best.empty()) throw Error("no run directory for tag '" + cfg.tag + "' under " + cfg.output_dir.string());
  return best;
}

inline toml::table load_manifest(const fs::path& run_dir) {
  const auto path = run_dir / "manifest.toml";
  if (!fs::exists(path)) return {};
  return detail::parse_toml(path);
}

inline void save_manifest(const fs::path& run_dir, const toml::table& manifest) {
  std::ostringstream os;
  os << manifest << "\n";
  write_text(run_dir / "manifest.toml", os.str());
}

/// Replaces one manifest section and stamps [provenance].
inline void update_manifest(const fs::path& run_dir, const std::string& section, toml::table content) {
  auto manifest = load_manifest(run_dir);
  manifest.insert_or_assign(section, std::move(content));
  toml::table* prov = manifest["provenance"].as_table();
  if (!prov) {
    manifest.insert_or_assign("provenance", toml::table{});
    prov = manifest["provenance"].as_table();
  }
  const auto now = utc_timestamp(std::chrono::system_clock::now(), "%Y-%m-%dT%H:%M:%SZ");
  if (!prov->contains("created")) prov->insert_or_assign("created", now);
  prov->insert_or_assign("tool", kToolVersion);
  prov->insert_or_assign(section + "_finished", now);
  save_manifest(run_dir, manifest);
}

template <typename T>
toml::array to_toml_array(const std::vector<T>& v) {
  toml::array a;
  for (const auto& x : v) {
    if constexpr (std::is_integral_v<T>)
      a.push_back(static_cast<std::int64_t>(x));
    else
      a.push_back(x);
  }
  return a;
}

inline std::int64_t as_int(std::uint64_t v) { return static_cast<std::int64_t>(v); }

// ---------------------------------------------------------------------------
// preprocess

struct Preprocessed {
  data::SplitDataset split;
  data::PixelDataset scene;  // all foreground pixels, normalized with train statistics
  data::MinMaxStats stats;
  data::GroundTruth truth;
  std::vector<std::size_t> dropped;
  std::size_t source_bands = 0;
};

inline Preprocessed preprocess_data(const PipelineConfig& cfg) {
  cfg.validate(true);
  auto cube = data::load_envi(cfg.cube);
  const auto truth = segmentation::load_label_raster(cfg.ground_truth);
  if (truth.width != cube.width || truth.height != cube.height)
    throw Error("dataset.ground_truth: dimensions differ from dataset.cube");
  Preprocessed p;
  p.source_bands = cube.bands;
  p.dropped = cfg.noisy_bands_file.empty() ? cfg.noisy_bands : load_band_list(cfg.noisy_bands_file);
  const std::set<std::size_t> drop(p.dropped.begin(), p.dropped.end());
  p.dropped.assign(drop.begin(), drop.end());
  cube = data::remove_bands(cube, drop);
  const auto masked = data::mask_background(cube, truth);
  auto split = data::shuffle_split(masked, stage_seed(cfg.seed, "split"));
  auto [train, stats] = data::normalize_minmax(std::move(split.train));
  p.split.train = std::move(train);
  p.split.validation = data::normalize_minmax(std::move(split.validation), stats).first;
  p.split.test = data::normalize_minmax(std::move(split.test), stats).first;
  p.split.seed = split.seed;
  p.scene = data::normalize_minmax(masked, stats).first;
  p.stats = std::move(stats);
  p.truth = truth;
  return p;
}

inline std::string minmax_csv(const data::MinMaxStats& s) {
  std::string out = "band,min,max\n";
  for (std::size_t b = 0; b < s.min.size(); ++b)
    out += std::to_string(b) + "," + metrics::format_double(s.min[b]) + "," + metrics::format_double(s.max[b]) + "\n";
  return out;
}

inline void preprocess(const PipelineConfig& cfg, const fs::path& run_dir) {
  const auto p = preprocess_data(cfg);
  prepare_run_dir(run_dir);
  data::save_dataset(p.split.train, run_dir / "data/train.pxds");
  data::save_dataset(p.split.validation, run_dir / "data/validation.pxds");
  data::save_dataset(p.split.test, run_dir / "data/test.pxds");
  data::save_dataset(p.scene, run_dir / "data/scene.pxds");
  write_text(run_dir / "data/minmax.csv", minmax_csv(p.stats));
  for (auto l : p.truth.labels)
    if (l > 255) throw Error("ground truth class id " + std::to_string(l) + " does not fit the label raster");
  std::vector<std::uint8_t> truth_bytes(p.truth.labels.begin(), p.truth.labels.end());
  segmentation::write_raster_bytes(run_dir / "data/truth.segm", p.truth.width, p.truth.height, truth_bytes);

  std::vector<std::size_t> kept;
  for (std::size_t b = 0, d = 0; b < p.source_bands; ++b) {
    if (d < p.dropped.size() && p.dropped[d] == b) {
      ++d;
      continue;
    }
    kept.push_back(b);
  }
  auto manifest = load_manifest(run_dir);
  manifest.insert_or_assign("run", toml::table{{"tag", cfg.tag}, {"seed", as_int(cfg.seed)}});
  save_manifest(run_dir, manifest);
  update_manifest(run_dir, "dataset",
                  toml::table{{"scene", cfg.scene},
                              {"width", as_int(p.truth.width)},
                              {"height", as_int(p.truth.height)},
                              {"source_bands", as_int(p.source_bands)},
                              {"bands", as_int(p.scene.band_count())},
                              {"dropped_bands", to_toml_array(p.dropped)},
                              {"kept_bands", to_toml_array(kept)},
                              {"classes", as_int(p.scene.class_count())},
                              {"foreground_pixels", as_int(p.scene.size())}});
  update_manifest(run_dir, "split",
                  toml::table{{"seed", as_int(p.split.seed)},
                              {"train", as_int(p.split.train.size())},
                              {"validation", as_int(p.split.validation.size())},
                              {"test", as_int(p.split.test.size())}});
}

inline data::SplitDataset load_split(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "data/train.pxds")) throw Error("run " + run_dir.string() + " has not been preprocessed");
  data::SplitDataset s;
  s.train = data::load_dataset(run_dir / "data/train.pxds");
  s.validation = data::load_dataset(run_dir / "data/validation.pxds");
  s.test = data::load_dataset(run_dir / "data/test.pxds");
  return s;
}

// ---------------------------------------------------------------------------
// LBAE stages

inline std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline lbae::Architecture architecture_for(std::size_t bands) {
  auto arch = lbae::Architecture::standard();
  arch.input_length = bands;
  return arch;
}

struct LbaeOptions {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> learning_rate;
};

inline void train_lbae_stage(const PipelineConfig& cfg, const fs::path& run_dir, const LbaeOptions& opt = {}) {
  const auto split = load_split(run_dir);
  lbae::TrainConfig tc{opt.batch_size.value_or(cfg.lbae_batch_size), opt.learning_rate.value_or(cfg.lbae_learning_rate),
                       opt.epochs.value_or(cfg.lbae_epochs), stage_seed(cfg.seed, "train-lbae"),
                       architecture_for(split.train.band_count())};
  const auto trained = lbae::train_lbae(split, tc);
  const nlohmann::json prov{{"stage", "train-lbae"}, {"epochs", tc.epochs},  {"batch_size", tc.batch_size},
                            {"learning_rate", tc.learning_rate}, {"seed", tc.seed}};
  lbae::save(trained.model, run_dir / "models/lbae.lbae.json", prov);
  write_text(run_dir / "metrics/lbae_history.csv", lbae::history_csv(trained.history));
  const auto& eval = split.test.size() ? split.test : split.validation;
  const auto rm = lbae::reconstruction_metrics(trained.model, eval);
  write_text(run_dir / "metrics/lbae_reconstruction.csv",
             "euclidean,sad\n" + metrics::format_double(rm.euclidean) + "," + metrics::format_double(rm.sad) + "\n");
  update_manifest(run_dir, "lbae",
                  toml::table{{"mode", "single"},
                              {"epochs", as_int(tc.epochs)},
                              {"batch_size", as_int(tc.batch_size)},
                              {"learning_rate", tc.learning_rate},
                              {"seed", as_int(tc.seed)},
                              {"latent_dim", as_int(trained.model.latent_dim())},
                              {"euclidean", rm.euclidean},
                              {"sad", rm.sad}});
}

inline std::string grid_csv(const lbae::GridResult& g) {
  std::string out = "batch_size,learning_rate,euclidean,sad,winner\n";
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto& r = g.rows[i];
    out += std::to_string(r.batch_size) + "," + format_number(r.learning_rate) + "," +
           metrics::format_double(r.euclidean) + "," + metrics::format_double(r.sad) + "," +
           (i == g.best ? "1" : "0") + "\n";
  }
  return out;
}

inline lbae::GridResult grid_search_lbae_stage(const PipelineConfig& cfg, const fs::path& run_dir,
                                               std::optional<std::size_t> epochs = {}) {
  const auto split = load_split(run_dir);
  const std::size_t n_epochs = epochs.value_or(cfg.lbae_epochs);
  const std::uint64_t seed = stage_seed(cfg.seed, "grid-search-lbae");
  auto grid = lbae::grid_search_lbae(split, n_epochs, seed, cfg.grid_batch_sizes, cfg.grid_learning_rates,
                                     architecture_for(split.train.band_count()));
  fs::create_directories(run_dir / "models/lbae_grid");
  for (std::size_t i = 0; i < grid.rows.size(); ++i) {
    const auto& r = grid.rows[i];
    const nlohmann::json prov{{"stage", "grid-search-lbae"}, {"epochs", n_epochs},
                              {"batch_size", r.batch_size},  {"learning_rate", r.learning_rate},
                              {"seed", seed}};
    const std::string name = "b" + std::to_string(r.batch_size) + "_lr" + format_number(r.learning_rate);
    lbae::save(grid.models[i].model, run_dir / "models/lbae_grid" / (name + ".lbae.json"), prov);
    write_text(run_dir / "metrics/lbae_grid" / (name + "_history.csv"), lbae::history_csv(grid.models[i].history));
    if (i == grid.best) lbae::save(grid.models[i].model, run_dir / "models/lbae.lbae.json", prov);
  }
  write_text(run_dir / "metrics/lbae_grid.csv", grid_csv(grid));
  const auto& w = grid.rows[grid.best];
  update_manifest(run_dir, "lbae",
                  toml::table{{"mode", "grid"},
                              {"epochs", as_int(n_epochs)},
                              {"batch_size", as_int(w.batch_size)},
                              {"learning_rate", w.learning_rate},
                              {"seed", as_int(seed)},
                              {"models", as_int(grid.rows.size())},
                              {"euclidean", w.euclidean},
                              {"sad", w.sad}});
  return grid;
}

inline lbae::Autoencoder load_lbae(const fs::path& run_dir) {
  const auto path = run_dir / "models/lbae.lbae.json";
  if (!fs::exists(path)) throw Error("run " + run_dir.string() + " has no LBAE model; run train-lbae first");
  return lbae::load(path);
}

// ---------------------------------------------------------------------------
// train-rbm

struct RbmOptions {
  std::optional<std::string> sampler;
  std::optional<std::size_t> hidden;
  std::optional<std::pair<std::size_t, std::size_t>> scan;
  std::optional<std::size_t> repeats;
  std::optional<std::size_t> epochs;
  std::optional<std::string> endpoint;
};

/// "3..28" -> (3, 28).
inline std::pair<std::size_t, std::size_t> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  try {
    if (dots == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto lo = std::stoull(s.substr(0, dots), &used);
    if (used != dots) throw std::invalid_argument(s);
    const auto rest = s.substr(dots + 2);
    const auto hi = std::stoull(rest, &used);
    if (used != rest.size() || hi < lo) throw std::invalid_argument(s);
    return {lo, hi};
  } catch (const std::exception&) {
    throw Error("invalid range '" + s + "'; expected <low>..<high>");
  }
}

inline std::string resolve_endpoint(const PipelineConfig& cfg, const std::optional<std::string>& cli) {
  if (cli && !cli->empty()) return *cli;
  if (!cfg.endpoint.empty()) return cfg.endpoint;
  if (const char* env = std::getenv("ANNEAL_ENDPOINT"); env && *env) return env;
  throw Error("remote sampler needs an endpoint: pass --endpoint, set remote.endpoint or ANNEAL_ENDPOINT");
}

inline rbm::NegativePhaseFactory negative_phase_factory(const PipelineConfig& cfg, const std::string& sampler,
                                                        const std::optional<std::string>& endpoint) {
  if (sampler == "cd") return [] { return std::make_unique<rbm::Cd1NegativePhase>(); };
  if (sampler == "exact") return [] { return std::make_unique<samplers::ExactNegativePhase>(); };
  if (sampler == "gibbs") {
    const samplers::GibbsOptions opt{cfg.gibbs_sweeps, 0, 1};
    const auto reads = cfg.num_reads;
    return [opt, reads] { return std::make_unique<samplers::GibbsNegativePhase>(opt, reads); };
  }
  if (sampler == "sa") {
    const auto schedule = cfg.anneal;
    const auto reads = cfg.num_reads;
    return [schedule, reads] { return std::make_unique<samplers::AnnealingNegativePhase>(schedule, reads); };
  }
  if (sampler == "remote") {
    const auto url = resolve_endpoint(cfg, endpoint);
    const std::chrono::milliseconds timeout(cfg.timeout_ms);
    const auto reads = cfg.num_reads;
    return [url, timeout, reads] { return std::make_unique<remote::RemoteNegativePhase>(url, timeout, reads); };
  }
  throw Error("unknown sampler '" + sampler + "'");
}

struct RbmRunSummary {
  std::string name;
  std::size_t hidden = 0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  rbm::ModelScore score;
  rbm::RbmModel model;
};

inline std::string score_row(const rbm::ModelScore& s) {
  using metrics::format_double;
  return format_double(s.threshold) + "," + format_double(s.report.homogeneity) + "," +
         format_double(s.report.completeness) + "," + format_double(s.report.ars) + "," +
         format_double(s.report.rand_score) + "," + format_double(s.beta.beta) + "," + format_double(s.beta.v);
}

inline constexpr const char* kScoreHeader = "threshold,homogeneity,completeness,ars,rand_score,beta,v";

struct RbmStageResult {
  rbm::ArchitectureReport architecture;
  RbmRunSummary best;
};

inline RbmStageResult train_rbm_stage(const PipelineConfig& cfg, const fs::path& run_dir, const RbmOptions& opt = {}) {
  const auto split = load_split(run_dir);
  const auto ae = load_lbae(run_dir);
  const auto train_bits = lbae::encode_dataset(ae, split.train);
  const auto val_bits = lbae::encode_dataset(ae, split.validation);
  const auto& truth = split.validation.labels;

  const std::string sampler = opt.sampler.value_or(cfg.sampler);
  const bool scan = opt.scan.has_value() || (!opt.hidden && cfg.scan);
  std::size_t hmin = opt.hidden.value_or(cfg.hidden), hmax = hmin, repeats = opt.repeats.value_or(1);
  if (scan) {
    std::tie(hmin, hmax) = opt.scan.value_or(std::make_pair(cfg.hidden_min, cfg.hidden_max));
    repeats = opt.repeats.value_or(cfg.repeats);
  }
  if (hmin < 1 || hmax > 64) throw Error("train-rbm: hidden sizes must lie in 1..64");

  rbm::TrainConfig base;
  base.learning_rate = cfg.rbm_learning_rate;
  base.epochs = opt.epochs.value_or(cfg.rbm_epochs);
  base.batch_size = cfg.rbm_batch_size;
  base.checkpoint_every = cfg.checkpoint_every;
  base.init_sigma = cfg.init_sigma;
  base.seed = stage_seed(cfg.seed, "train-rbm");

  std::string runs_csv = "run,hidden,repeat,seed,best_epoch," + std::string(kScoreHeader) + "\n";
  std::vector<RbmRunSummary> best_per_hidden(hmax - hmin + 1);
  auto on_run = [&](const rbm::ArchitectureRun& run, const rbm::TrainResult& trained) {
    const std::string name = "h" + std::to_string(run.n_hidden) + "_r" + std::to_string(run.repeat);
    std::vector<rbm::Checkpoint> cps = trained.checkpoints;
    if (cps.empty() || cps.back().epoch != base.epochs) cps.push_back({base.epochs, trained.model});
    const nlohmann::json prov{{"stage", "train-rbm"}, {"sampler", sampler}, {"run", name}, {"seed", run.seed}};
    std::string cp_csv = "epoch," + std::string(kScoreHeader) + "\n";
    std::size_t best = 0;
    rbm::ModelScore best_score;
    best_score.beta.v = -1.0;
    fs::create_directories(run_dir / "checkpoints" / name);
    for (std::size_t i = 0; i < cps.size(); ++i) {
      rbm::save(cps[i].model, run_dir / "checkpoints" / name / (std::to_string(cps[i].epoch) + ".rbm.json"), prov);
      const auto s = rbm::score_model(cps[i].model, val_bits, truth);
      cp_csv += std::to_string(cps[i].epoch) + "," + score_row(s) + "\n";
      if (s.beta.v > best_score.beta.v) {
        best_score = s;
        best = i;
      }
    }
    write_text(run_dir / "metrics/rbm_loss" / (name + ".csv"), rbm::history_csv(trained.history));
    write_text(run_dir / "metrics/rbm_checkpoints" / (name + ".csv"), cp_csv);
    runs_csv += name + "," + std::to_string(run.n_hidden) + "," + std::to_string(run.repeat) + "," +
                std::to_string(run.seed) + "," + std::to_string(cps[best].epoch) + "," + score_row(best_score) + "\n";
    auto& slot = best_per_hidden[run.n_hidden - hmin];
    if (slot.name.empty() || best_score.beta.v > slot.score.beta.v)
      slot = {name, run.n_hidden, run.repeat, run.seed, cps[best].epoch, best_score, cps[best].model};
  };
  fs::create_directories(run_dir / "checkpoints");
  const auto report = rbm::select_architecture(train_bits, val_bits, truth, hmin, hmax, repeats, base,
                                               negative_phase_factory(cfg, sampler, opt.endpoint), on_run);
  write_text(run_dir / "metrics/rbm_runs.csv", runs_csv);
  std::string wins = "hidden,wins\n";
  for (const auto& [h, count] : report.wins) wins += std::to_string(h) + "," + std::to_string(count) + "\n";
  write_text(run_dir / "metrics/rbm_architecture.csv", wins);

  RbmStageResult result{report, best_per_hidden[report.best_hidden - hmin]};
  const auto& b = result.best;
  rbm::save(b.model, run_dir / "models/rbm.rbm.json",
            {{"stage", "train-rbm"}, {"sampler", sampler}, {"run", b.name}, {"epoch", b.best_epoch}, {"seed", b.seed}});
  update_manifest(run_dir, "rbm",
                  toml::table{{"sampler", sampler},
                              {"hidden_min", as_int(hmin)},
                              {"hidden_max", as_int(hmax)},
                              {"repeats", as_int(repeats)},
                              {"epochs", as_int(base.epochs)},
                              {"batch_size", as_int(base.batch_size)},
                              {"learning_rate", base.learning_rate},
                              {"checkpoint_every", as_int(base.checkpoint_every)},
                              {"best_hidden", as_int(b.hidden)},
                              {"best_run", b.name},
                              {"best_epoch", as_int(b.best_epoch)},
                              {"threshold", b.score.threshold},
                              {"validation_v", b.score.beta.v},
                              {"validation_beta", b.score.beta.beta}});
  return result;
}

// ---------------------------------------------------------------------------
// segment / evaluate

struct SegmentOptions {
  std::optional<fs::path> model;
  std::optional<bool> merge;
  std::optional<std::string> linkage;
  std::optional<std::string> distance;
  std::optional<std::size_t> target_k;
  std::optional<double> threshold;
};

struct SegmentResult {
  segmentation::SegmentationMap map;
  metrics::ClusteringReport report;
};

inline SegmentResult segment_stage(const PipelineConfig& cfg, const fs::path& run_dir, const SegmentOptions& opt = {}) {
  const auto scene = data::load_dataset(run_dir / "data/scene.pxds");
  const auto truth = segmentation::read_raster(run_dir / "data/truth.segm");
  const auto ae = load_lbae(run_dir);
  const fs::path model_path = opt.model.value_or(run_dir / "models/rbm.rbm.json");
  if (!fs::exists(model_path)) throw Error("no RBM model at " + model_path.string() + "; run train-rbm first");
  const auto model = rbm::load(model_path);
  const auto manifest = load_manifest(run_dir);
  const double threshold = opt.threshold.value_or(manifest.at_path("rbm.threshold").value_or(0.5));
  const bool merge = opt.merge.value_or(cfg.merge);
  const std::string linkage_name = opt.linkage.value_or(cfg.linkage);
  const std::string distance_name = opt.distance.value_or(cfg.distance);
  const std::size_t k = opt.target_k.value_or(cfg.target_k);
  const auto linkage = clustering::parse_linkage(linkage_name);
  const auto distance = clustering::parse_rbm_distance(distance_name);
  if (k < 1) throw Error("segment: --k must be positive");
  if (model.n_hidden > 64) throw Error("segment: RBM labels wider than 64 bits are not supported");

  const auto bits = lbae::encode_dataset(ae, scene);
  std::vector<Bits> labels(scene.size());
  std::vector<std::int64_t> clusters(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    labels[i] = rbm::label_pixel(model, bits.row(i), threshold);
    clusters[i] = static_cast<std::int64_t>(bits_to_code(labels[i]));
  }
  std::size_t distinct_labels = std::set<Bits>(labels.begin(), labels.end()).size();
  std::string dendrogram;
  if (merge && distinct_labels >= 2) {
    const auto rc = clustering::rbm_cluster_distance(labels, scene.pixels, distance);
    const auto merged = clustering::merge_rbm_clusters(rc, linkage, k);
    for (std::size_t i = 0; i < scene.size(); ++i) clusters[i] = static_cast<std::int64_t>(merged.pixel_labels[i]);
    dendrogram = clustering::dendrogram_csv(merged.ahc.dendrogram);
  }
  SegmentResult out;
  out.map = segmentation::build_map(truth.width, truth.height, scene.coords, clusters);
  segmentation::check_partition(out.map, truth);

  const auto enc = segmentation::write_raster(run_dir / "maps/segmentation.segm", out.map);
  write_text(run_dir / "maps/segment_codes.csv", segmentation::codes_csv(out.map, enc));
  fs::path palette_path = fs::path(HSISEG_DATA_DIR) / "palette.csv";
  segmentation::render_png(run_dir / "maps/segmentation.png", out.map, segmentation::load_palette(palette_path));
  if (!dendrogram.empty()) write_text(run_dir / "metrics/segment_dendrogram.csv", dendrogram);

  std::vector<std::int64_t> t(scene.labels.begin(), scene.labels.end());
  out.report = metrics::evaluate(t, clusters);
  write_text(run_dir / "metrics/segmentation.csv", metrics::report_csv(out.report));
  update_manifest(run_dir, "segment",
                  toml::table{{"threshold", threshold},
                              {"merge", merge && distinct_labels >= 2},
                              {"linkage", linkage_name},
                              {"distance", distance_name},
                              {"target_k", as_int(k)},
                              {"rbm_labels", as_int(distinct_labels)},
                              {"segments", as_int(out.map.segment_count())},
                              {"homogeneity", out.report.homogeneity},
                              {"completeness", out.report.completeness},
                              {"ars", out.report.ars},
                              {"rand_score", out.report.rand_score}});
  return out;
}

/// Scores a predicted label raster against the truth over truth-foreground
/// pixels.
inline metrics::ClusteringReport evaluate_rasters(const fs::path& pred, const fs::path& truth) {
  const auto t = segmentation::load_label_raster(truth);
  const auto p = segmentation::load_label_raster(pred);
  const auto [tl, pl] = segmentation::foreground_pairs(t, p);
  return metrics::evaluate(tl, pl);
}

// ---------------------------------------------------------------------------
// baseline-kmeans

enum class KMeansSubset { test, scene };

inline KMeansSubset parse_subset(const std::string& s) {
  if (s == "test") return KMeansSubset::test;
  if (s == "scene") return KMeansSubset::scene;
  throw Error("unknown k-means subset '" + s + "'; expected test or scene");
}

/// k-means over the test split (default) or every foreground pixel.
inline clustering::RepeatedKMeans baseline_kmeans_stage(const PipelineConfig& cfg, const fs::path& run_dir,
                                                        bool latent, std::optional<std::size_t> n_seeds = {},
                                                        KMeansSubset subset = KMeansSubset::test) {
  const auto scene = data::load_dataset(run_dir / (subset == KMeansSubset::test ? "data/test.pxds" : "data/scene.pxds"));
  Matrix<float> features;
  if (latent) {
    const auto bits = lbae::encode_dataset(load_lbae(run_dir), scene);
    features = Matrix<float>(bits.rows(), bits.cols());
    for (std::size_t i = 0; i < bits.data().size(); ++i) features.data()[i] = bits.data()[i];
  } else {
    features = scene.pixels;
  }
  std::vector<std::uint64_t> seeds;
  const std::uint64_t base = stage_seed(cfg.seed, latent ? "baseline-kmeans-latent" : "baseline-kmeans");
  for (std::size_t s = 0; s < n_seeds.value_or(cfg.kmeans_seeds); ++s) seeds.push_back(base + s);
  const auto r = clustering::kmeans_repeated(features, scene.labels, cfg.kmeans_k, seeds);
  const std::string name =
      std::string(latent ? "kmeans_latent" : "kmeans_raw") + (subset == KMeansSubset::scene ? "_scene" : "");
  write_text(run_dir / "metrics" / (name + ".csv"), clustering::repeated_csv(r));
  std::string per_seed = "seed,homogeneity,completeness,ars,rand_score\n";
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    const auto& p = r.per_seed[i];
    using metrics::format_double;
    per_seed += std::to_string(r.seeds[i]) + "," + format_double(p.homogeneity) + "," + format_double(p.completeness) +
                "," + format_double(p.ars) + "," + format_double(p.rand_score) + "\n";
  }
  write_text(run_dir / "metrics" / (name + "_per_seed.csv"), per_seed);
  update_manifest(run_dir, name,
                  toml::table{{"k", as_int(cfg.kmeans_k)},
                              {"pixels", as_int(scene.size())},
                              {"seeds", as_int(r.seeds.size())},
                              {"homogeneity_mean", r.mean.homogeneity},
                              {"completeness_mean", r.mean.completeness},
                              {"ars_mean", r.mean.ars},
                              {"rand_score_mean", r.mean.rand_score}});
  return r;
}

// ---------------------------------------------------------------------------
// Whole chain

struct RunAllResult {
  fs::path run_dir;
  SegmentResult segment;
  clustering::RepeatedKMeans kmeans_raw;        // test split
  clustering::RepeatedKMeans kmeans_raw_scene;  // same pixels as the segmentation
};

/// preprocess -> LBAE (single fit or grid) -> RBM -> segment -> raw k-means
/// on the test split and on the whole foreground.
inline RunAllResult run_all(const PipelineConfig& cfg, const fs::path& run_dir,
                            const std::function<void(const std::string&)>& log = {}) {
  auto note = [&](const std::string& s) {
    if (log) log(s);
  };
  RunAllResult r{run_dir, {}, {}, {}};
  note("preprocess");
  preprocess(cfg, run_dir);
  note(cfg.lbae_grid ? "grid-search-lbae" : "train-lbae");
  if (cfg.lbae_grid)
    grid_search_lbae_stage(cfg, run_dir);
  else
    train_lbae_stage(cfg, run_dir);
  note("train-rbm");
  train_rbm_stage(cfg, run_dir);
  note("segment");
  r.segment = segment_stage(cfg, run_dir);
  note("baseline-kmeans");
  r.kmeans_raw = baseline_kmeans_stage(cfg, run_dir, false);
  r.kmeans_raw_scene = baseline_kmeans_stage(cfg, run_dir, false, {}, KMeansSubset::scene);
  return r;
}

}  // namespace hsiseg::pipeline
