// hsiseg command-line front end.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hsiseg/pipeline.hpp"
#include "hsiseg/remote_sampler.hpp"
#include "hsiseg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace hsiseg;

namespace {

struct RunSelection {
  std::string config;
  std::string run_dir;
};

void add_run_options(CLI::App* cmd, RunSelection& sel) {
  cmd->add_option("--config", sel.config, "pipeline TOML file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--run-dir", sel.run_dir, "run directory (default: latest run for the config's tag)");
}

pipeline::PipelineConfig config_of(const RunSelection& sel, bool check_paths = false) {
  return pipeline::load_config(sel.config, check_paths);
}

fs::path existing_run(const pipeline::PipelineConfig& cfg, const RunSelection& sel) {
  if (!sel.run_dir.empty()) {
    if (!fs::is_directory(sel.run_dir)) throw Error("run directory " + sel.run_dir + " does not exist");
    return sel.run_dir;
  }
  return pipeline::latest_run_dir(cfg);
}

template <typename T>
std::optional<T> opt_of(const CLI::Option* o, const T& v) {
  return o->count() ? std::optional<T>(v) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral segmentation with a binary autoencoder, RBM labelling and hierarchical merging"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pipeline::kToolVersion);

  // preprocess
  RunSelection pre_sel;
  auto* pre = app.add_subcommand("preprocess", "band removal, masking, scaling and splitting");
  add_run_options(pre, pre_sel);

  // train-lbae
  RunSelection lbae_sel;
  std::size_t lbae_epochs = 0, lbae_batch = 0;
  double lbae_lr = 0.0;
  auto* tl = app.add_subcommand("train-lbae", "train one autoencoder");
  add_run_options(tl, lbae_sel);
  auto* tl_epochs = tl->add_option("--epochs", lbae_epochs);
  auto* tl_batch = tl->add_option("--batch-size", lbae_batch)->check(CLI::PositiveNumber);
  auto* tl_lr = tl->add_option("--lr", lbae_lr)->check(CLI::PositiveNumber);

  // grid-search-lbae
  RunSelection grid_sel;
  std::size_t grid_epochs = 0;
  auto* gs = app.add_subcommand("grid-search-lbae", "train the batch size x learning rate grid");
  add_run_options(gs, grid_sel);
  auto* gs_epochs = gs->add_option("--epochs", grid_epochs);

  // train-rbm
  RunSelection rbm_sel;
  std::string sampler, scan, endpoint;
  std::size_t hidden = 0, repeats = 0, rbm_epochs = 0;
  auto* tr = app.add_subcommand("train-rbm", "train RBMs on encoded pixels");
  add_run_options(tr, rbm_sel);
  auto* tr_sampler =
      tr->add_option("--sampler", sampler, "negative phase")->check(CLI::IsMember({"cd", "sa", "exact", "gibbs", "remote"}));
  auto* tr_hidden = tr->add_option("--hidden", hidden, "hidden units")->check(CLI::Range(1, 64));
  auto* tr_scan = tr->add_option("--scan", scan, "hidden range, e.g. 3..28")->excludes(tr_hidden);
  auto* tr_repeats = tr->add_option("--repeats", repeats)->check(CLI::PositiveNumber);
  auto* tr_epochs = tr->add_option("--epochs", rbm_epochs);
  auto* tr_endpoint = tr->add_option("--endpoint", endpoint, "remote sampler URL (else remote.endpoint, ANNEAL_ENDPOINT)");

  // segment
  RunSelection seg_sel;
  std::string seg_model, seg_linkage, seg_distance;
  std::size_t seg_k = 0;
  double seg_threshold = 0.5;
  bool seg_no_ahc = false;
  auto* sg = app.add_subcommand("segment", "label every foreground pixel and render the map");
  add_run_options(sg, seg_sel);
  auto* sg_model = sg->add_option("--model", seg_model, "RBM model (default: models/rbm.rbm.json)")->check(CLI::ExistingFile);
  auto* sg_ahc = sg->add_option("--ahc", seg_linkage, "merge RBM labels with this linkage")
                     ->check(CLI::IsMember({"complete", "average"}));
  auto* sg_noahc = sg->add_flag("--no-ahc", seg_no_ahc, "keep raw RBM labels")->excludes(sg_ahc);
  auto* sg_distance =
      sg->add_option("--distance", seg_distance)->check(CLI::IsMember({"hamming", "euclidean", "sad"}));
  auto* sg_k = sg->add_option("--k", seg_k, "target segment count")->check(CLI::PositiveNumber);
  auto* sg_threshold = sg->add_option("--threshold", seg_threshold)->check(CLI::Range(0.0, 1.0));

  // evaluate
  std::string ev_pred, ev_truth, ev_format = "csv", ev_out;
  auto* ev = app.add_subcommand("evaluate", "score a label raster against ground truth");
  ev->add_option("--pred", ev_pred, "predicted raster (.segm, .png or ENVI .hdr)")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", ev_truth, "ground-truth raster")->required()->check(CLI::ExistingFile);
  ev->add_option("--format", ev_format)->check(CLI::IsMember({"csv", "json"}));
  ev->add_option("--out", ev_out, "also write the report here");

  // baseline-kmeans
  RunSelection km_sel;
  bool km_latent = false;
  std::size_t km_seeds = 0;
  auto* km = app.add_subcommand("baseline-kmeans", "k-means over raw or encoded pixels");
  add_run_options(km, km_sel);
  std::string km_subset = "test";
  km->add_flag("--latent", km_latent, "cluster LBAE codes instead of spectra");
  km->add_option("--subset", km_subset, "test split or every foreground pixel")->check(CLI::IsMember({"test", "scene"}));
  auto* km_nseeds = km->add_option("--seeds", km_seeds)->check(CLI::PositiveNumber);

  // run
  RunSelection all_sel;
  auto* all = app.add_subcommand("run", "preprocess, LBAE, RBM, segment and k-means baseline in one go");
  add_run_options(all, all_sel);

  // serve-stub
  std::string stub_host = "127.0.0.1";
  int stub_port = 8088;
  samplers::AnnealSchedule stub_schedule;
  std::size_t stub_in_flight = 4;
  auto* stub = app.add_subcommand("serve-stub", "local annealer service speaking the sampler protocol");
  stub->add_option("--host", stub_host);
  stub->add_option("--port", stub_port)->check(CLI::Range(0, 65535));
  stub->add_option("--beta-start", stub_schedule.beta_start);
  stub->add_option("--beta-end", stub_schedule.beta_end);
  stub->add_option("--sweeps", stub_schedule.sweeps);
  stub->add_option("--max-in-flight", stub_in_flight)->check(CLI::PositiveNumber);

  // synth
  std::string synth_out;
  std::uint64_t synth_seed = 7;
  auto* syn = app.add_subcommand("synth", "write the synthetic 32x32x112 test scene as ENVI rasters");
  syn->add_option("--out", synth_out, "output directory")->required();
  syn->add_option("--seed", synth_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      const auto cfg = config_of(pre_sel, true);
      const fs::path dir = pre_sel.run_dir.empty() ? pipeline::create_run_dir(cfg) : fs::path(pre_sel.run_dir);
      pipeline::preprocess(cfg, dir);
      std::cout << dir.string() << "\n";
    } else if (tl->parsed()) {
      const auto cfg = config_of(lbae_sel);
      pipeline::train_lbae_stage(cfg, existing_run(cfg, lbae_sel),
                                 {opt_of(tl_epochs, lbae_epochs), opt_of(tl_batch, lbae_batch), opt_of(tl_lr, lbae_lr)});
    } else if (gs->parsed()) {
      const auto cfg = config_of(grid_sel);
      const auto dir = existing_run(cfg, grid_sel);
      const auto grid = pipeline::grid_search_lbae_stage(cfg, dir, opt_of(gs_epochs, grid_epochs));
      std::cout << pipeline::grid_csv(grid);
    } else if (tr->parsed()) {
      const auto cfg = config_of(rbm_sel);
      pipeline::RbmOptions opt;
      opt.sampler = opt_of(tr_sampler, sampler);
      opt.hidden = opt_of(tr_hidden, hidden);
      if (tr_scan->count()) opt.scan = pipeline::parse_range(scan);
      opt.repeats = opt_of(tr_repeats, repeats);
      opt.epochs = opt_of(tr_epochs, rbm_epochs);
      opt.endpoint = opt_of(tr_endpoint, endpoint);
      const auto r = pipeline::train_rbm_stage(cfg, existing_run(cfg, rbm_sel), opt);
      std::cout << "best: " << r.best.name << " epoch " << r.best.best_epoch << " V " << r.best.score.beta.v << "\n";
    } else if (sg->parsed()) {
      const auto cfg = config_of(seg_sel);
      pipeline::SegmentOptions opt;
      if (sg_model->count()) opt.model = fs::path(seg_model);
      if (sg_ahc->count()) {
        opt.merge = true;
        opt.linkage = seg_linkage;
      }
      if (sg_noahc->count()) opt.merge = false;
      opt.distance = opt_of(sg_distance, seg_distance);
      opt.target_k = opt_of(sg_k, seg_k);
      opt.threshold = opt_of(sg_threshold, seg_threshold);
      const auto r = pipeline::segment_stage(cfg, existing_run(cfg, seg_sel), opt);
      std::cout << metrics::report_csv(r.report);
    } else if (ev->parsed()) {
      const auto report = pipeline::evaluate_rasters(ev_pred, ev_truth);
      const std::string text = ev_format == "json" ? metrics::report_json(report) : metrics::report_csv(report);
      if (!ev_out.empty()) pipeline::write_text(ev_out, text);
      std::cout << text;
    } else if (km->parsed()) {
      const auto cfg = config_of(km_sel);
      const auto r = pipeline::baseline_kmeans_stage(cfg, existing_run(cfg, km_sel), km_latent, opt_of(km_nseeds, km_seeds),
                                                   pipeline::parse_subset(km_subset));
      std::cout << clustering::repeated_csv(r);
    } else if (all->parsed()) {
      const auto cfg = config_of(all_sel, true);
      const fs::path dir = all_sel.run_dir.empty() ? pipeline::create_run_dir(cfg) : fs::path(all_sel.run_dir);
      const auto r = pipeline::run_all(cfg, dir, [](const std::string& s) { std::cerr << "[" << s << "]\n"; });
      std::cout << dir.string() << "\n" << metrics::report_csv(r.segment.report);
    } else if (stub->parsed()) {
      remote::StubAnnealService service({stub_schedule, stub_in_flight});
      std::cerr << "serving on http://" << stub_host << ":" << stub_port << "/sample\n";
      service.run(stub_host, stub_port);
    } else if (syn->parsed()) {
      synthetic::SceneOptions o;
      o.seed = synth_seed;
      const auto scene = synthetic::make_scene(o);
      fs::create_directories(synth_out);
      data::write_envi(scene.cube, fs::path(synth_out) / "scene.hdr");
      data::write_envi_labels(scene.truth, fs::path(synth_out) / "truth.hdr");
      std::cout << (fs::path(synth_out) / "scene.hdr").string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
