// Pipeline orchestration: inference over manifests, the Figure-1 routing
// flow (confidence -> supervised model or unsupervised fallback), report
// writers, and the localized-vs-diverse training experiment.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdtk/confidence.hpp"
#include "cdtk/dataset.hpp"
#include "cdtk/errors.hpp"
#include "cdtk/fcn.hpp"
#include "cdtk/metrics.hpp"
#include "cdtk/synth.hpp"
#include "cdtk/trainer.hpp"
#include "cdtk/unsupervised.hpp"

namespace cdtk {

// Normalization stats always come from the dataset's own train split; test
// scenes never contribute.
inline NormStats dataset_train_stats(const Dataset& ds) {
  const auto train_scenes = ds.split(Split::train);
  if (train_scenes.empty())
    throw ValidationError(
        "no train split in manifest: normalization stats are derived from "
        "training scenes only");
  return compute_norm_stats(train_scenes);
}

struct ConfidenceEntry {
  std::string scene_id;
  double beta = 0.0;
  double beta_norm = 0.0;
  Route route = Route::supervised;
  double tau = 0.5;
  bool degenerate = false;
};

struct ConfidenceReport {
  std::vector<ConfidenceEntry> entries;  // manifest order
  bool degenerate = false;               // min == max over the scene set
};

// beta per test scene, beta' over the test set, route per tau.
inline ConfidenceReport compute_confidence(const FcnModel& model,
                                           const Dataset& ds,
                                           const NormStats& stats, double tau) {
  const auto test_scenes = ds.split(Split::test);
  if (test_scenes.empty())
    throw ValidationError("compute_confidence: the test split is empty");

  std::vector<SceneConfidence> raw;
  raw.reserve(test_scenes.size());
  for (const ScenePair* sc : test_scenes) {
    const ScenePair norm = normalize_scene(*sc, stats);
    const LogitMap lm = forward_logits(model, norm.pre, norm.post);
    raw.push_back(scene_confidence(lm, sc->mask ? &*sc->mask : nullptr,
                                   sc->scene_id));
  }
  NormalizedConfidences normed = normalize_confidences(std::move(raw));

  ConfidenceReport report;
  report.degenerate = normed.degenerate;
  for (const SceneConfidence& sc : normed.scenes) {
    const RoutingDecision d = decide_route(sc, tau);
    report.entries.push_back(ConfidenceEntry{sc.scene_id, sc.beta,
                                             *sc.beta_norm, d.route, tau,
                                             normed.degenerate});
  }
  return report;
}

inline nlohmann::json confidence_json(const ConfidenceReport& report) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : report.entries) {
    arr.push_back({{"scene_id", e.scene_id},
                   {"beta", e.beta},
                   {"beta_norm", e.beta_norm},
                   {"route", to_string(e.route)},
                   {"tau", e.tau},
                   {"degenerate", e.degenerate}});
  }
  return arr;
}

inline void write_confidence_json(const ConfidenceReport& report,
                                  const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << confidence_json(report).dump(2) << "\n";
  if (!os) throw IoError("write failed: " + path.string());
}

struct MetricsRow {
  std::string scene_id;
  ConfusionMatrix cm;
  std::optional<Route> route;  // present only for pipeline output
};

namespace detail {

inline std::string fmt2(std::optional<double> v) {
  if (!v) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

}  // namespace detail

// Two-decimal sensitivity/specificity/kappa plus raw counts; the final ALL
// row pools pixel counts across scenes before computing metrics.
inline std::string metrics_csv(const std::vector<MetricsRow>& rows,
                               bool with_route) {
  std::string out = "scene_id,sensitivity,specificity,kappa,tp,tn,fp,fn,ignored";
  if (with_route) out += ",route";
  out += "\n";
  ConfusionMatrix pooled;
  const auto emit = [&out, with_route](const std::string& id,
                                       const ConfusionMatrix& cm,
                                       const std::string& route) {
    out += id + "," + detail::fmt2(sensitivity(cm)) + "," +
           detail::fmt2(specificity(cm)) + "," +
           detail::fmt2(kappa(cm).value) + "," + std::to_string(cm.tp) + "," +
           std::to_string(cm.tn) + "," + std::to_string(cm.fp) + "," +
           std::to_string(cm.fn) + "," + std::to_string(cm.ignored);
    if (with_route) out += "," + route;
    out += "\n";
  };
  for (const auto& r : rows) {
    pooled += r.cm;
    emit(r.scene_id, r.cm, r.route ? to_string(*r.route) : "");
  }
  emit("ALL", pooled, "");
  return out;
}

inline void write_text(const std::string& text,
                       const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

struct PipelineSceneResult {
  std::string scene_id;
  Route route = Route::supervised;
  double beta = 0.0;
  double beta_norm = 0.0;
  ChangeMask final_map;       // the map actually shipped for this scene
  ChangeMask supervised_map;  // kept for comparisons
  ChangeMask unsupervised_map;
  std::optional<ConfusionMatrix> cm;  // vs reference, when a mask exists
};

struct PipelineResult {
  std::vector<PipelineSceneResult> scenes;
  ConfusionMatrix pooled;  // over scenes with reference masks
  bool confidence_degenerate = false;
  std::vector<std::string> warnings;
};

// Figure-1 flow over the test split: each scene ships the supervised map
// when beta' >= tau, else the CVA+Otsu map. `assume_diverse` short-circuits
// the routing and trusts the supervised model everywhere.
inline PipelineResult run_pipeline(const FcnModel& model, const Dataset& ds,
                                   double tau, bool assume_diverse = false) {
  const NormStats stats = dataset_train_stats(ds);
  const ConfidenceReport conf = compute_confidence(model, ds, stats, tau);

  PipelineResult result;
  result.confidence_degenerate = conf.degenerate;
  if (stats.any_zero_variance())
    result.warnings.push_back("zero-variance band in normalization stats");
  if (conf.degenerate && !assume_diverse)
    result.warnings.push_back(
        "confidence normalization degenerate: all betas equal");

  std::size_t idx = 0;
  for (const ScenePair* sc : ds.split(Split::test)) {
    const ConfidenceEntry& e = conf.entries[idx++];
    const ScenePair norm = normalize_scene(*sc, stats);

    PipelineSceneResult r;
    r.scene_id = sc->scene_id;
    r.beta = e.beta;
    r.beta_norm = e.beta_norm;
    r.supervised_map = predict_map(model, norm.pre, norm.post);
    const CvaOtsuResult unsup = cva_otsu_change(sc->pre, sc->post, stats);
    r.unsupervised_map = unsup.mask;
    if (unsup.degenerate)
      result.warnings.push_back("scene '" + sc->scene_id +
                                "': degenerate Otsu threshold");

    r.route = assume_diverse ? Route::supervised : e.route;
    r.final_map =
        r.route == Route::supervised ? r.supervised_map : r.unsupervised_map;

    if (sc->mask) {
      r.cm = confusion(r.final_map, *sc->mask);
      if (kappa(*r.cm).degenerate)
        result.warnings.push_back("scene '" + sc->scene_id +
                                  "': degenerate kappa");
      result.pooled += *r.cm;
    }
    result.scenes.push_back(std::move(r));
  }
  return result;
}

inline nlohmann::json routing_json(const PipelineResult& pr, double tau) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : pr.scenes) {
    nlohmann::json row = {{"scene_id", s.scene_id},
                          {"beta", s.beta},
                          {"beta_norm", s.beta_norm},
                          {"route", to_string(s.route)},
                          {"tau", tau},
                          {"degenerate", pr.confidence_degenerate}};
    if (s.cm) row["kappa"] = kappa(*s.cm).value;
    arr.push_back(std::move(row));
  }
  return arr;
}

// Reads <id>_pred.cdr for every labeled test scene and scores it.
inline std::vector<MetricsRow> evaluate_predictions(
    const Dataset& ds, const std::filesystem::path& pred_dir) {
  std::vector<MetricsRow> rows;
  for (const ScenePair* sc : ds.split(Split::test)) {
    if (!sc->mask) continue;
    const auto pred_path = pred_dir / (sc->scene_id + "_pred.cdr");
    if (!std::filesystem::exists(pred_path))
      throw ValidationError("missing prediction for scene '" + sc->scene_id +
                            "': " + pred_path.string());
    const ChangeMask pred = read_mask(pred_path);
    rows.push_back({sc->scene_id, confusion(pred, *sc->mask), std::nullopt});
  }
  return rows;
}

inline nlohmann::json train_report_json(const TrainReport& report,
                                        const FcnConfig& mc,
                                        const TrainConfig& tc) {
  return nlohmann::json{
      {"epoch_loss", report.epoch_loss},
      {"wall_seconds", report.wall_seconds},
      {"protocol_hash", report.protocol_hash},
      {"class_weights", report.class_weights},
      {"model_config",
       {{"in_bands", mc.in_bands},
        {"num_classes", mc.num_classes},
        {"base_channels", mc.base_channels},
        {"depth", mc.depth},
        {"seed", mc.seed}}},
      {"train_config",
       {{"learning_rate", tc.learning_rate},
        {"epochs", tc.epochs},
        {"patch_size", tc.patch_size},
        {"batch_size", tc.batch_size},
        {"patches_per_scene_per_epoch", tc.patches_per_scene_per_epoch},
        {"class_weighting", tc.class_weighting == ClassWeighting::none
                                ? "none"
                                : "inverse_frequency"},
        {"augment", tc.augment == AugmentMode::none ? "none" : "d4"},
        {"seed", tc.seed}}}};
}

// Desk-scale experiment configuration: small enough to train in seconds,
// big enough for the style-shift effects to show.
inline FcnConfig experiment_model_config(std::uint64_t seed) {
  FcnConfig cfg;
  cfg.in_bands = kSynthBands;
  cfg.num_classes = 2;
  cfg.base_channels = 8;
  cfg.depth = 2;
  cfg.seed = seed;
  return cfg;
}

inline TrainConfig experiment_train_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 12;
  cfg.patch_size = 32;
  cfg.batch_size = 8;
  cfg.patches_per_scene_per_epoch = 32;
  cfg.seed = seed;
  return cfg;
}

struct DiversityRep {
  double kappa_localized = 0.0;
  double kappa_diverse = 0.0;
};

struct DiversityResult {
  std::vector<DiversityRep> reps;
  double mean_localized = 0.0;
  double mean_diverse = 0.0;
  int diverse_wins = 0;  // sign test over reps
  std::uint64_t protocol_hash = 0;  // identical for both arms by construction
};

// Per repetition: fresh localized and diverse training pools, one shared
// held-out diverse test set, two models trained under the identical
// protocol, pooled held-out kappa for each arm.
inline DiversityResult run_diversity_experiment(
    std::uint64_t seed, int reps, std::size_t n_train = 3,
    std::size_t n_test = 4, std::uint32_t scene_size = 96,
    float change_density = 0.08f, std::uint32_t epochs = 0) {
  if (reps < 3)
    throw ValidationError("diversity experiment needs at least 3 repetitions");
  DiversityResult result;
  Rng seeder(seed);
  for (int r = 0; r < reps; ++r) {
    const std::uint64_t data_seed = seeder.next_u64();
    const std::uint64_t model_seed = seeder.next_u64();
    const std::uint64_t train_seed = seeder.next_u64();

    const DiversityRepData data = make_diversity_rep(
        data_seed, n_train, n_test, scene_size, scene_size, change_density);

    const FcnConfig mc = experiment_model_config(model_seed);
    TrainConfig tc = experiment_train_config(train_seed);
    if (epochs > 0) tc.epochs = epochs;

    const TrainResult loc = train(data.localized, mc, tc);
    const TrainResult div = train(data.diverse, mc, tc);
    if (loc.report.protocol_hash != div.report.protocol_hash)
      throw ValidationError("diversity experiment arms diverged in protocol");
    result.protocol_hash = loc.report.protocol_hash;

    const SplitEval le = evaluate_split(loc.model, data.localized, Split::test);
    const SplitEval de = evaluate_split(div.model, data.diverse, Split::test);
    DiversityRep rep{kappa(le.pooled).value, kappa(de.pooled).value};
    if (rep.kappa_diverse > rep.kappa_localized) ++result.diverse_wins;
    result.mean_localized += rep.kappa_localized;
    result.mean_diverse += rep.kappa_diverse;
    result.reps.push_back(rep);
  }
  result.mean_localized /= static_cast<double>(reps);
  result.mean_diverse /= static_cast<double>(reps);
  return result;
}

inline std::string diversity_csv(const DiversityResult& r) {
  std::string out = "rep,kappa_localized,kappa_diverse\n";
  char buf[64];
  for (std::size_t i = 0; i < r.reps.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.4f,%.4f\n", i,
                  r.reps[i].kappa_localized, r.reps[i].kappa_diverse);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.4f,%.4f\n", r.mean_localized,
                r.mean_diverse);
  out += buf;
  return out;
}

inline nlohmann::json diversity_json(const DiversityResult& r) {
  nlohmann::json reps = nlohmann::json::array();
  for (std::size_t i = 0; i < r.reps.size(); ++i)
    reps.push_back({{"rep", i},
                    {"kappa_localized", r.reps[i].kappa_localized},
                    {"kappa_diverse", r.reps[i].kappa_diverse}});
  return {{"reps", std::move(reps)},
          {"mean_localized", r.mean_localized},
          {"mean_diverse", r.mean_diverse},
          {"diverse_wins", r.diverse_wins},
          {"rep_count", r.reps.size()},
          {"protocol_hash", r.protocol_hash}};
}

}  // namespace cdtk
