// cdtk command line: synthetic data generation, training, inference,
// confidence routing, evaluation, and the diversity experiment.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 degenerate
// result escalated by --strict.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdtk/cdtk.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  bool strict = false;
};

int finish(const CommonArgs& common, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (common.strict && !warnings.empty()) return 3;
  return 0;
}

cdtk::FcnConfig model_config_for(const cdtk::Dataset& ds,
                                 std::uint32_t base_channels,
                                 std::uint32_t depth, std::uint64_t seed) {
  cdtk::FcnConfig cfg;
  cfg.in_bands = ds.manifest.band_count;
  cfg.num_classes = ds.manifest.class_scheme.total_classes();
  cfg.base_channels = base_channels;
  cfg.depth = depth;
  cfg.seed = seed;
  return cfg;
}

int cmd_synth(const CommonArgs& common, const std::string& out_dir,
              const std::string& pool, std::size_t n_train, std::size_t n_test,
              std::uint64_t seed, std::uint32_t size, float density) {
  cdtk::SynthSpec spec;
  if (pool == "localized") {
    spec.pool = cdtk::StylePool::localized;
  } else if (pool == "diverse") {
    spec.pool = cdtk::StylePool::diverse;
  } else if (pool == "graded") {
    spec.pool = cdtk::StylePool::localized;
    spec.graded_test = true;
  } else {
    throw cdtk::ValidationError("unknown pool '" + pool + "'");
  }
  spec.n_train = n_train;
  spec.n_test = n_test;
  spec.seed = seed;
  spec.height = spec.width = size;
  spec.change_density = density;

  const cdtk::Dataset ds = cdtk::generate_synthetic(spec);
  const fs::path manifest = cdtk::write_synthetic(ds, out_dir);
  std::cout << "wrote " << ds.scenes.size() << " scenes to " << manifest
            << "\n";
  return finish(common, {});
}

int cmd_train(const CommonArgs& common, const std::string& manifest,
              const std::string& out, std::uint32_t base_channels,
              std::uint32_t depth, std::uint64_t model_seed,
              const cdtk::TrainConfig& tc) {
  const cdtk::Dataset ds = cdtk::load_manifest(manifest);
  const cdtk::FcnConfig mc =
      model_config_for(ds, base_channels, depth, model_seed);

  const cdtk::TrainResult result = cdtk::train(ds, mc, tc);
  cdtk::save_model(result.model, out);
  cdtk::write_text(cdtk::train_report_json(result.report, mc, tc).dump(2) + "\n",
                   out + ".train.json");

  std::cout << "trained " << tc.epochs << " epochs; final loss "
            << result.report.epoch_loss.back() << "; weights: " << out << "\n";
  std::vector<std::string> warnings;
  if (result.stats.any_zero_variance())
    warnings.push_back("zero-variance band in normalization stats");
  return finish(common, warnings);
}

int cmd_infer(const CommonArgs& common, const std::string& manifest,
              const std::string& weights, const std::string& out_dir,
              const std::string& scene_id, bool dump_logits) {
  const cdtk::Dataset ds = cdtk::load_manifest(manifest);
  const cdtk::FcnModel model = cdtk::load_model(weights);
  const cdtk::NormStats stats = cdtk::dataset_train_stats(ds);
  fs::create_directories(out_dir);

  std::vector<const cdtk::ScenePair*> scenes;
  if (scene_id.empty()) {
    scenes = ds.split(cdtk::Split::test);
  } else {
    for (const auto& sc : ds.scenes)
      if (sc.scene_id == scene_id) scenes.push_back(&sc);
    if (scenes.empty())
      throw cdtk::ValidationError("unknown scene id '" + scene_id + "'");
  }

  for (const cdtk::ScenePair* sc : scenes) {
    const cdtk::ScenePair norm = cdtk::normalize_scene(*sc, stats);
    const cdtk::LogitMap lm =
        cdtk::forward_logits(model, norm.pre, norm.post);
    cdtk::write_mask(cdtk::predict_from_logits(lm),
                     fs::path(out_dir) / (sc->scene_id + "_pred.cdr"));
    if (dump_logits)
      cdtk::write_raster(lm, fs::path(out_dir) / (sc->scene_id + "_logits.cdr"));
  }
  std::cout << "inferred " << scenes.size() << " scene(s) into " << out_dir
            << "\n";
  return finish(common, {});
}

int cmd_confidence(const CommonArgs& common, const std::string& manifest,
                   const std::string& weights, const std::string& out,
                   double tau) {
  const cdtk::Dataset ds = cdtk::load_manifest(manifest);
  const cdtk::FcnModel model = cdtk::load_model(weights);
  const cdtk::NormStats stats = cdtk::dataset_train_stats(ds);

  const cdtk::ConfidenceReport report =
      cdtk::compute_confidence(model, ds, stats, tau);
  cdtk::write_confidence_json(report, out);

  for (const auto& e : report.entries)
    std::cout << e.scene_id << " beta=" << e.beta
              << " beta_norm=" << e.beta_norm << " -> "
              << cdtk::to_string(e.route) << "\n";
  std::vector<std::string> warnings;
  if (report.degenerate)
    warnings.push_back("confidence normalization degenerate: all betas equal");
  return finish(common, warnings);
}

int cmd_pipeline(const CommonArgs& common, const std::string& manifest,
                 const std::string& weights, const std::string& out_dir,
                 double tau, bool assume_diverse, bool emit_falsecolor,
                 bool emit_magnitude) {
  const cdtk::Dataset ds = cdtk::load_manifest(manifest);
  const cdtk::FcnModel model = cdtk::load_model(weights);
  fs::create_directories(out_dir);

  const cdtk::PipelineResult pr =
      cdtk::run_pipeline(model, ds, tau, assume_diverse);

  std::vector<cdtk::MetricsRow> rows;
  std::size_t idx = 0;
  for (const cdtk::ScenePair* sc : ds.split(cdtk::Split::test)) {
    const cdtk::PipelineSceneResult& r = pr.scenes[idx++];
    cdtk::write_mask(r.final_map,
                     fs::path(out_dir) / (r.scene_id + "_pred.cdr"));
    if (emit_magnitude) {
      const cdtk::NormStats stats = cdtk::dataset_train_stats(ds);
      cdtk::write_raster(cdtk::cva_magnitude(sc->pre, sc->post, stats),
                         fs::path(out_dir) / (r.scene_id + "_magnitude.cdr"));
    }
    if (sc->mask) {
      rows.push_back({r.scene_id, *r.cm, r.route});
      if (emit_falsecolor)
        cdtk::write_raster(
            cdtk::falsecolor(r.final_map, *sc->mask),
            fs::path(out_dir) / (r.scene_id + "_falsecolor.cdr"),
            cdtk::RasterDtype::u8);
    }
  }
  cdtk::write_text(cdtk::routing_json(pr, tau).dump(2) + "\n",
                   fs::path(out_dir) / "routing.json");
  if (!rows.empty()) {
    cdtk::write_text(cdtk::metrics_csv(rows, true),
                     fs::path(out_dir) / "metrics.csv");
    std::cout << "pooled kappa: " << cdtk::kappa(pr.pooled).value << "\n";
  }
  return finish(common, pr.warnings);
}

int cmd_eval(const CommonArgs& common, const std::string& manifest,
             const std::string& pred_dir, const std::string& out_dir) {
  const cdtk::Dataset ds = cdtk::load_manifest(manifest);
  fs::create_directories(out_dir);

  const std::vector<cdtk::MetricsRow> rows =
      cdtk::evaluate_predictions(ds, pred_dir);
  if (rows.empty())
    throw cdtk::ValidationError("no labeled test scenes to evaluate");
  cdtk::write_text(cdtk::metrics_csv(rows, false),
                   fs::path(out_dir) / "metrics.csv");

  std::vector<std::string> warnings;
  cdtk::ConfusionMatrix pooled;
  for (const auto& row : rows) {
    pooled += row.cm;
    if (cdtk::kappa(row.cm).degenerate)
      warnings.push_back("scene '" + row.scene_id + "': degenerate kappa");
  }
  for (const cdtk::ScenePair* sc : ds.split(cdtk::Split::test)) {
    if (!sc->mask) continue;
    const cdtk::ChangeMask pred =
        cdtk::read_mask(fs::path(pred_dir) / (sc->scene_id + "_pred.cdr"));
    cdtk::write_raster(cdtk::falsecolor(pred, *sc->mask),
                       fs::path(out_dir) / (sc->scene_id + "_falsecolor.cdr"),
                       cdtk::RasterDtype::u8);
  }
  std::cout << "pooled kappa: " << cdtk::kappa(pooled).value << "\n";
  return finish(common, warnings);
}

int cmd_diversity(const CommonArgs& common, const std::string& out_dir,
                  std::uint64_t seed, int reps, std::uint32_t epochs,
                  std::size_t n_train, std::size_t n_test, std::uint32_t size,
                  float density) {
  fs::create_directories(out_dir);
  const cdtk::DiversityResult result = cdtk::run_diversity_experiment(
      seed, reps, n_train, n_test, size, density, epochs);

  cdtk::write_text(cdtk::diversity_csv(result),
                   fs::path(out_dir) / "diversity.csv");
  cdtk::write_text(cdtk::diversity_json(result).dump(2) + "\n",
                   fs::path(out_dir) / "diversity.json");

  std::cout << cdtk::diversity_csv(result);
  std::cout << "diverse wins " << result.diverse_wins << "/"
            << result.reps.size() << "\n";
  return finish(common, {});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"change detection toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_flag("--strict", common.strict,
               "escalate degenerate-result warnings to exit code 3");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out, synth_pool = "diverse";
  std::size_t synth_train = 3, synth_test = 2;
  std::uint64_t synth_seed = 0;
  std::uint32_t synth_size = 96;
  float synth_density = 0.08f;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--pool", synth_pool, "localized | diverse | graded");
  synth->add_option("--n-train", synth_train, "training scenes");
  synth->add_option("--n-test", synth_test, "test scenes");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--size", synth_size, "scene height and width");
  synth->add_option("--density", synth_density, "change density in (0,0.5]");

  // train
  auto* train = app.add_subcommand("train", "train the FCN on a manifest");
  std::string train_manifest, train_out;
  std::uint32_t train_base = 16, train_depth = 3;
  std::uint64_t train_model_seed = 0;
  cdtk::TrainConfig tc;
  std::string train_weighting = "inverse_frequency", train_augment = "d4";
  train->add_option("--manifest", train_manifest, "dataset manifest")
      ->required();
  train->add_option("--out", train_out, "weights output path")->required();
  train->add_option("--base-channels", train_base, "first-level width");
  train->add_option("--depth", train_depth, "encoder levels");
  train->add_option("--model-seed", train_model_seed, "init seed");
  train->add_option("--lr", tc.learning_rate, "Adam learning rate");
  train->add_option("--epochs", tc.epochs, "training epochs");
  train->add_option("--patch-size", tc.patch_size, "square patch size");
  train->add_option("--batch-size", tc.batch_size, "patches per batch");
  train->add_option("--patches-per-scene", tc.patches_per_scene_per_epoch,
                    "patches drawn per scene per epoch");
  train->add_option("--class-weighting", train_weighting,
                    "none | inverse_frequency");
  train->add_option("--augment", train_augment, "none | d4");
  train->add_option("--train-seed", tc.seed, "sampling seed");

  // infer
  auto* infer = app.add_subcommand("infer", "predict change maps");
  std::string infer_manifest, infer_weights, infer_out, infer_scene;
  bool infer_dump_logits = false;
  infer->add_option("--manifest", infer_manifest, "dataset manifest")
      ->required();
  infer->add_option("--weights", infer_weights, "weights file")->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_option("--scene", infer_scene, "single scene id");
  infer->add_flag("--dump-logits", infer_dump_logits,
                  "also write logit maps as CDRAST1");

  // confidence
  auto* conf = app.add_subcommand("confidence",
                                  "score test scenes and route them");
  std::string conf_manifest, conf_weights, conf_out = "confidence.json";
  double conf_tau = 0.5;
  conf->add_option("--manifest", conf_manifest, "dataset manifest")->required();
  conf->add_option("--weights", conf_weights, "weights file")->required();
  conf->add_option("--out", conf_out, "report path");
  conf->add_option("--tau", conf_tau, "routing threshold in [0,1]");

  // pipeline
  auto* pipe = app.add_subcommand(
      "pipeline", "route each test scene and emit final maps");
  std::string pipe_manifest, pipe_weights, pipe_out;
  double pipe_tau = 0.5;
  bool pipe_assume_diverse = false, pipe_falsecolor = false,
       pipe_magnitude = false;
  pipe->add_option("--manifest", pipe_manifest, "dataset manifest")->required();
  pipe->add_option("--weights", pipe_weights, "weights file")->required();
  pipe->add_option("--out", pipe_out, "output directory")->required();
  pipe->add_option("--tau", pipe_tau, "routing threshold in [0,1]");
  pipe->add_flag("--assume-diverse", pipe_assume_diverse,
                 "skip confidence routing, trust the supervised model");
  pipe->add_flag("--emit-falsecolor", pipe_falsecolor,
                 "write false-color composites for labeled scenes");
  pipe->add_flag("--emit-magnitude", pipe_magnitude,
                 "write CVA magnitude maps");

  // eval
  auto* eval = app.add_subcommand("eval", "score prediction files");
  std::string eval_manifest, eval_pred, eval_out;
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--pred-dir", eval_pred, "directory of <id>_pred.cdr files")
      ->required();
  eval->add_option("--out", eval_out, "output directory")->required();

  // diversity
  auto* divx = app.add_subcommand("diversity",
                                  "localized vs diverse training experiment");
  std::string div_out;
  std::uint64_t div_seed = 0;
  int div_reps = 5;
  std::uint32_t div_epochs = 0, div_size = 96;
  std::size_t div_train = 3, div_test = 4;
  float div_density = 0.08f;
  divx->add_option("--out", div_out, "output directory")->required();
  divx->add_option("--seed", div_seed, "experiment seed");
  divx->add_option("--reps", div_reps, "repetitions (>= 3)");
  divx->add_option("--epochs", div_epochs, "override training epochs");
  divx->add_option("--n-train", div_train, "training scenes per arm");
  divx->add_option("--n-test", div_test, "held-out test scenes");
  divx->add_option("--size", div_size, "scene height and width");
  divx->add_option("--density", div_density, "change density");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth)
      return cmd_synth(common, synth_out, synth_pool, synth_train, synth_test,
                       synth_seed, synth_size, synth_density);
    if (*train) {
      if (train_weighting == "none")
        tc.class_weighting = cdtk::ClassWeighting::none;
      else if (train_weighting == "inverse_frequency")
        tc.class_weighting = cdtk::ClassWeighting::inverse_frequency;
      else
        throw cdtk::ValidationError("unknown class weighting '" +
                                    train_weighting + "'");
      if (train_augment == "none")
        tc.augment = cdtk::AugmentMode::none;
      else if (train_augment == "d4")
        tc.augment = cdtk::AugmentMode::d4;
      else
        throw cdtk::ValidationError("unknown augment mode '" + train_augment +
                                    "'");
      return cmd_train(common, train_manifest, train_out, train_base,
                       train_depth, train_model_seed, tc);
    }
    if (*infer)
      return cmd_infer(common, infer_manifest, infer_weights, infer_out,
                       infer_scene, infer_dump_logits);
    if (*conf)
      return cmd_confidence(common, conf_manifest, conf_weights, conf_out,
                            conf_tau);
    if (*pipe)
      return cmd_pipeline(common, pipe_manifest, pipe_weights, pipe_out,
                          pipe_tau, pipe_assume_diverse, pipe_falsecolor,
                          pipe_magnitude);
    if (*eval) return cmd_eval(common, eval_manifest, eval_pred, eval_out);
    if (*divx)
      return cmd_diversity(common, div_out, div_seed, div_reps, div_epochs,
                           div_train, div_test, div_size, div_density);
  } catch (const cdtk::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const cdtk::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
