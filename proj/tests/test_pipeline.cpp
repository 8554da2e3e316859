#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "hsiseg/pipeline.hpp"
#include "hsiseg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace hsiseg;
using namespace hsiseg::pipeline;

namespace {

struct CommandResult {
  int status = -1;
  std::string output;
};

CommandResult run(const std::string& args) {
  const std::string cmd = std::string(HSISEG_CLI) + " " + args + " 2>&1";
  CommandResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int st = ::pclose(pipe);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

// A small scene with its own config, written once per test binary.
class Workspace : public ::testing::Environment {
 public:
  static fs::path root;

  void SetUp() override {
    root = fs::temp_directory_path() / ("hsiseg_pipeline_" + std::to_string(::getpid()));
    fs::create_directories(root / "data");
    synthetic::SceneOptions o;
    o.width = 14;
    o.height = 14;
    o.bands = 42;
    o.classes = 3;
    o.border = 1;
    o.peak_width = 4.0;
    const auto scene = synthetic::make_scene(o);
    data::write_envi(scene.cube, root / "data" / "scene.hdr");
    data::write_envi_labels(scene.truth, root / "data" / "truth.hdr");
    write_config("small.toml", "");
  }
  void TearDown() override { fs::remove_all(root); }

  static fs::path write_config(const std::string& name, const std::string& extra,
                               const std::string& noisy = "noisy_bands = [0, 41]") {
    std::ofstream out(root / name);
    out << "[run]\ntag = \"small\"\noutput_dir = \"runs\"\nseed = 11\n"
        << "[dataset]\ncube = \"data/scene.hdr\"\nground_truth = \"data/truth.hdr\"\n" << noisy << "\n"
        << "[lbae]\nepochs = 3\nbatch_size = 8\nlearning_rate = 1e-2\n"
        << "[rbm]\nhidden = 6\nepochs = 20\nbatch_size = 16\nlearning_rate = 0.05\ncheckpoint_every = 10\n"
        << "[segment]\ntarget_k = 3\nlinkage = \"average\"\n"
        << "[kmeans]\nk = 3\nseeds = 2\n"
        << extra;
    return root / name;
  }
};
fs::path Workspace::root;

const auto* const kWorkspace = ::testing::AddGlobalTestEnvironment(new Workspace);

std::string without_provenance(const fs::path& run_dir) {
  auto m = load_manifest(run_dir);
  m.erase("provenance");
  std::ostringstream os;
  os << m;
  return os.str();
}

}  // namespace

TEST(Config, DefaultsAndRelativePaths) {
  const auto cfg = load_config(Workspace::root / "small.toml");
  EXPECT_EQ(cfg.tag, "small");
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.cube, (Workspace::root / "data" / "scene.hdr").lexically_normal());
  EXPECT_EQ(cfg.noisy_bands, (std::vector<std::size_t>{0, 41}));
  EXPECT_EQ(cfg.hidden, 6u);
  EXPECT_EQ(cfg.sampler, "cd");
  EXPECT_EQ(cfg.linkage, "average");
  EXPECT_EQ(cfg.distance, "sad");
  const PipelineConfig defaults;
  EXPECT_EQ(defaults.hidden, 23u);
  EXPECT_EQ(defaults.rbm_epochs, 1000u);
  EXPECT_EQ(defaults.checkpoint_every, 100u);
  EXPECT_EQ(defaults.lbae_batch_size, 4u);
  EXPECT_EQ(defaults.lbae_learning_rate, 1e-3);
}

TEST(Config, ErrorsNameTheField) {
  auto expect_field = [](const std::string& extra, const std::string& field) {
    const auto path = Workspace::write_config("bad.toml", extra);
    try {
      load_config(path);
      ADD_FAILURE() << "accepted " << extra;
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_field("[remote]\ntimeout_ms = 0\n", "remote.timeout_ms");
  expect_field("[remote]\nendpoint = 5\n", "remote.endpoint");
  const auto extra_table = Workspace::write_config("extra.toml", "[notes]\ntext = \"ignored\"\n");
  EXPECT_NO_THROW(load_config(extra_table));

  std::ofstream(Workspace::root / "bad2.toml") << "[rbm]\nsampler = \"quantum\"\n";
  try {
    load_config(Workspace::root / "bad2.toml", false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rbm.sampler"), std::string::npos);
  }
  std::ofstream(Workspace::root / "bad3.toml") << "[rbm]\nhidden = \"many\"\n";
  EXPECT_THROW(load_config(Workspace::root / "bad3.toml", false), Error);
  std::ofstream(Workspace::root / "bad4.toml") << "[dataset]\ncube = \"missing.hdr\"\nground_truth = \"x\"\n";
  try {
    load_config(Workspace::root / "bad4.toml", true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("dataset.cube"), std::string::npos);
  }
  std::ofstream(Workspace::root / "bad5.toml") << "[rbm\nhidden = 3\n";
  try {
    load_config(Workspace::root / "bad5.toml", false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos) << e.what();
  }
}

TEST(Config, NoisyBandSourcesAreExclusive) {
  std::ofstream(Workspace::root / "bands.toml") << "bands = [1, 2]\n";
  const auto path = Workspace::write_config("both.toml", "", "noisy_bands = [0]\nnoisy_bands_file = \"bands.toml\"");
  EXPECT_THROW(load_config(path), Error);
  EXPECT_EQ(load_band_list(Workspace::root / "bands.toml"), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(parse_range("3..28"), (std::pair<std::size_t, std::size_t>{3, 28}));
  EXPECT_THROW(parse_range("28..3"), Error);
  EXPECT_THROW(parse_range("3-28"), Error);
}

TEST(Pipeline, RunsAreReproducible) {
  auto cfg = load_config(Workspace::root / "small.toml");
  const auto a = Workspace::root / "runs" / "a";
  const auto b = Workspace::root / "runs" / "b";
  const auto ra = run_all(cfg, a);
  run_all(cfg, b);
  EXPECT_EQ(without_provenance(a), without_provenance(b));
  for (const char* f : {"maps/segmentation.segm", "maps/segmentation.png", "metrics/segmentation.csv",
                        "metrics/kmeans_raw.csv", "metrics/rbm_runs.csv", "metrics/lbae_history.csv",
                        "data/train.pxds", "models/rbm.rbm.json"})
    EXPECT_EQ(read_text(a / f), read_text(b / f)) << f;

  const auto manifest = load_manifest(a);
  EXPECT_EQ(manifest["dataset"]["bands"].value<std::int64_t>(), 40);
  EXPECT_EQ(manifest["dataset"]["classes"].value<std::int64_t>(), 3);
  EXPECT_TRUE(manifest["provenance"]["segment_finished"]);

  // evaluate on the written rasters equals the in-memory report
  const auto rep = evaluate_rasters(a / "maps" / "segmentation.segm", a / "data" / "truth.segm");
  EXPECT_EQ(rep.ars, ra.segment.report.ars);
  EXPECT_EQ(rep.homogeneity, ra.segment.report.homogeneity);
  const auto truth = data::load_envi_labels(cfg.ground_truth);
  const auto pred = segmentation::read_raster(a / "maps" / "segmentation.segm");
  const auto [t, p] = segmentation::foreground_pairs(truth, pred);
  const auto direct = metrics::evaluate(t, p);
  EXPECT_EQ(rep.ars, direct.ars);
  EXPECT_EQ(rep.completeness, direct.completeness);
  EXPECT_EQ(rep.rand_score, direct.rand_score);
}

TEST(Pipeline, DifferentSeedChangesSplit) {
  auto cfg = load_config(Workspace::root / "small.toml");
  const auto a = Workspace::root / "runs" / "s1";
  const auto b = Workspace::root / "runs" / "s2";
  preprocess(cfg, a);
  cfg.seed = 12;
  preprocess(cfg, b);
  EXPECT_NE(read_text(a / "data" / "train.pxds"), read_text(b / "data" / "train.pxds"));
  EXPECT_EQ(load_split(a).train.size(), load_split(b).train.size());
}

TEST(Pipeline, RunDirectoriesAreUnique) {
  auto cfg = load_config(Workspace::root / "small.toml");
  cfg.output_dir = Workspace::root / "unique";
  const auto a = create_run_dir(cfg);
  prepare_run_dir(a);
  save_manifest(a, toml::table{{"run", toml::table{{"tag", "small"}}}});
  const auto b = create_run_dir(cfg);
  EXPECT_NE(a, b);
  EXPECT_TRUE(fs::is_directory(a / "checkpoints"));
  EXPECT_EQ(latest_run_dir(cfg), a);
}

TEST(Cli, EvaluateMatchesLibrary) {
  const auto dir = Workspace::root / "cli_eval";
  fs::create_directories(dir);
  const data::GroundTruth truth{3, 2, {0, 1, 1, 2, 2, 0}};
  const data::GroundTruth pred{3, 2, {0, 4, 4, 4, 5, 0}};
  segmentation::write_raster_bytes(dir / "t.segm", 3, 2, {0, 1, 1, 2, 2, 0});
  segmentation::write_raster_bytes(dir / "p.segm", 3, 2, {0, 4, 4, 4, 5, 0});
  const auto r = run("evaluate --pred " + (dir / "p.segm").string() + " --truth " + (dir / "t.segm").string() +
                     " --format json --out " + (dir / "r.json").string());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto [t, p] = segmentation::foreground_pairs(truth, pred);
  EXPECT_EQ(r.output, metrics::report_json(metrics::evaluate(t, p)));
  EXPECT_EQ(read_text(dir / "r.json"), r.output);
}

TEST(Cli, ReportsErrorsWithExitCodeOne) {
  std::ofstream(Workspace::root / "cli_bad.toml") << "[segment]\nlinkage = \"single\"\n";
  auto r = run("train-rbm --config " + (Workspace::root / "cli_bad.toml").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("error: config: segment.linkage"), std::string::npos) << r.output;
  r = run("train-rbm --config " + (Workspace::root / "small.toml").string() + " --hidden 4 --scan 3..5");
  EXPECT_NE(r.status, 0);
  r = run("segment --config " + (Workspace::root / "small.toml").string() + " --run-dir " +
          (Workspace::root / "nope").string());
  EXPECT_EQ(r.status, 1);
  r = run("--version");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.output.find(kToolVersion), std::string::npos);
}

TEST(Cli, StagesChainThroughRunDirectory) {
  const auto cfg_path = Workspace::write_config("cli.toml", "");
  auto r = run("preprocess --config " + cfg_path.string());
  ASSERT_EQ(r.status, 0) << r.output;
  const fs::path dir = r.output.substr(0, r.output.find('\n'));
  EXPECT_TRUE(fs::exists(dir / "data" / "train.pxds"));
  r = run("train-lbae --config " + cfg_path.string() + " --epochs 1");
  ASSERT_EQ(r.status, 0) << r.output;
  r = run("train-rbm --config " + cfg_path.string() + " --epochs 10 --sampler exact --hidden 3");
  ASSERT_EQ(r.status, 0) << r.output;
  r = run("segment --config " + cfg_path.string() + " --no-ahc");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(r.output.rfind("homogeneity,completeness,ars,rand_score\n", 0), 0u);
  r = run("baseline-kmeans --config " + cfg_path.string() + " --latent --seeds 2");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "metrics" / "kmeans_latent.csv"));
  EXPECT_TRUE(load_manifest(dir)["rbm"]);
}
