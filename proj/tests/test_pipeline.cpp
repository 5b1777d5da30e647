#include <cmath>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "cdtk/pipeline.hpp"
#include "test_util.hpp"

using namespace cdtk;
using cdtk_test::TempDir;

namespace {

struct Fixture {
  Dataset ds;
  TrainResult tr;
};

// One small trained model on a graded benchmark, shared by the tests below.
const Fixture& fixture() {
  static const Fixture f = [] {
    SynthSpec spec;
    spec.pool = StylePool::localized;
    spec.graded_test = true;
    spec.n_train = 3;
    spec.n_test = 4;
    spec.seed = 71;
    spec.height = spec.width = 48;
    Dataset ds = generate_synthetic(spec);

    FcnConfig mc = experiment_model_config(11);
    mc.base_channels = 4;
    TrainConfig tc = experiment_train_config(13);
    tc.epochs = 4;
    tc.patches_per_scene_per_epoch = 16;
    TrainResult tr = train(ds, mc, tc);
    return Fixture{std::move(ds), std::move(tr)};
  }();
  return f;
}

}  // namespace

TEST_CASE("confidence report covers the test split with endpoints 0 and 1",
          "[pipeline]") {
  const auto& f = fixture();
  const NormStats stats = dataset_train_stats(f.ds);
  const ConfidenceReport rep =
      compute_confidence(f.tr.model, f.ds, stats, 0.5);
  REQUIRE(rep.entries.size() == 4);
  CHECK_FALSE(rep.degenerate);
  double lo = 2.0, hi = -1.0;
  for (const auto& e : rep.entries) {
    CHECK(e.beta_norm >= 0.0);
    CHECK(e.beta_norm <= 1.0);
    lo = std::min(lo, e.beta_norm);
    hi = std::max(hi, e.beta_norm);
  }
  CHECK(lo == 0.0);
  CHECK(hi == 1.0);
}

TEST_CASE("a single test scene is degenerate with beta_norm 1", "[pipeline]") {
  SynthSpec spec;
  spec.n_train = 2;
  spec.n_test = 1;
  spec.seed = 9;
  spec.height = spec.width = 32;
  const Dataset ds = generate_synthetic(spec);
  FcnConfig mc = experiment_model_config(3);
  mc.base_channels = 2;
  TrainConfig tc = experiment_train_config(4);
  tc.epochs = 1;
  tc.patches_per_scene_per_epoch = 4;
  const TrainResult tr = train(ds, mc, tc);

  const ConfidenceReport rep =
      compute_confidence(tr.model, ds, tr.stats, 0.5);
  REQUIRE(rep.entries.size() == 1);
  CHECK(rep.degenerate);
  CHECK(rep.entries[0].beta_norm == 1.0);
  CHECK(rep.entries[0].route == Route::supervised);
}

TEST_CASE("tau 0 routes everything supervised and matches plain inference",
          "[pipeline]") {
  const auto& f = fixture();
  const PipelineResult pr = run_pipeline(f.tr.model, f.ds, 0.0);
  const NormStats stats = dataset_train_stats(f.ds);
  for (const auto& s : pr.scenes) {
    CHECK(s.route == Route::supervised);
    CHECK(s.final_map.labels == s.supervised_map.labels);
  }
  // identical to direct predict_map on the normalized scene
  const auto test_scenes = f.ds.split(Split::test);
  for (std::size_t i = 0; i < test_scenes.size(); ++i) {
    const ScenePair norm = normalize_scene(*test_scenes[i], stats);
    const ChangeMask direct = predict_map(f.tr.model, norm.pre, norm.post);
    CHECK(pr.scenes[i].final_map.labels == direct.labels);
  }
}

TEST_CASE("tau 1 keeps only the arg-max beta scene supervised", "[pipeline]") {
  const auto& f = fixture();
  const PipelineResult pr = run_pipeline(f.tr.model, f.ds, 1.0);
  std::size_t supervised = 0;
  for (const auto& s : pr.scenes) {
    if (s.route == Route::supervised) {
      ++supervised;
      CHECK(s.beta_norm == 1.0);
    }
  }
  CHECK(supervised == 1);  // betas are distinct on this benchmark
}

TEST_CASE("routing report and shipped maps agree", "[pipeline]") {
  const auto& f = fixture();
  const PipelineResult pr = run_pipeline(f.tr.model, f.ds, 0.5);
  for (const auto& s : pr.scenes) {
    if (s.route == Route::supervised)
      CHECK(s.final_map.labels == s.supervised_map.labels);
    else
      CHECK(s.final_map.labels == s.unsupervised_map.labels);
  }
  // assume-diverse skips routing entirely
  const PipelineResult forced = run_pipeline(f.tr.model, f.ds, 0.5, true);
  for (const auto& s : forced.scenes) CHECK(s.route == Route::supervised);
}

TEST_CASE("metrics CSV carries two decimals and a pooled ALL row",
          "[pipeline]") {
  std::vector<MetricsRow> rows;
  ConfusionMatrix a;
  a.tp = 47;
  a.fn = 53;
  a.tn = 99;
  a.fp = 1;
  rows.push_back({"montp", a, Route::supervised});
  ConfusionMatrix b;
  b.tp = 10;
  b.fn = 0;
  b.tn = 0;
  b.fp = 0;  // specificity undefined
  rows.push_back({"edge", b, Route::unsupervised});

  const std::string csv = metrics_csv(rows, true);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < csv.size()) {
    const auto nl = csv.find('\n', start);
    lines.push_back(csv.substr(start, nl - start));
    start = nl + 1;
  }
  REQUIRE(lines.size() == 4);  // header + 2 scenes + ALL
  CHECK(lines[0] ==
        "scene_id,sensitivity,specificity,kappa,tp,tn,fp,fn,ignored,route");
  CHECK(lines[1] == "montp,47.00,99.00,0.46,47,99,1,53,0,supervised");
  CHECK(lines[2] == "edge,100.00,nan,0.00,10,0,0,0,0,unsupervised");

  // ALL row pools the counts: tp=57 tn=99 fp=1 fn=53
  ConfusionMatrix pooled = a;
  pooled += b;
  char expect[128];
  std::snprintf(expect, sizeof(expect), "ALL,%.2f,%.2f,%.2f,57,99,1,53,0,",
                *sensitivity(pooled), *specificity(pooled),
                kappa(pooled).value);
  CHECK(lines[3] == expect);
}

TEST_CASE("evaluate_predictions scores prediction files", "[pipeline]") {
  TempDir tmp;
  const auto& f = fixture();
  SECTION("perfect predictions have kappa 1") {
    for (const ScenePair* sc : f.ds.split(Split::test))
      write_mask(*sc->mask, tmp.path / (sc->scene_id + "_pred.cdr"));
    const auto rows = evaluate_predictions(f.ds, tmp.path);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
      CHECK(kappa(r.cm).value == 1.0);
      CHECK(r.cm.fp == 0);
      CHECK(r.cm.fn == 0);
    }
    // CSV: one row per labeled scene plus ALL
    const std::string csv = metrics_csv(rows, false);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);  // header+4+ALL
  }
  SECTION("all-unchanged predictions: sensitivity 0, specificity 100") {
    for (const ScenePair* sc : f.ds.split(Split::test))
      write_mask(ChangeMask(sc->pre.height, sc->pre.width),
                 tmp.path / (sc->scene_id + "_pred.cdr"));
    const auto rows = evaluate_predictions(f.ds, tmp.path);
    for (const auto& r : rows) {
      CHECK(*sensitivity(r.cm) == 0.0);
      CHECK(*specificity(r.cm) == 100.0);
    }
  }
  SECTION("a missing prediction names the scene") {
    write_mask(*f.ds.split(Split::test)[0]->mask,
               tmp.path / "test00_pred.cdr");
    CHECK_THROWS_WITH(evaluate_predictions(f.ds, tmp.path),
                      Catch::Matchers::ContainsSubstring("test01"));
  }
}

TEST_CASE("stats require a train split", "[pipeline]") {
  SynthSpec spec;
  spec.n_train = 0;
  spec.n_test = 2;
  spec.seed = 3;
  spec.height = spec.width = 32;
  const Dataset ds = generate_synthetic(spec);
  CHECK_THROWS_AS(dataset_train_stats(ds), ValidationError);
}

TEST_CASE("report JSON structures carry the documented fields", "[pipeline]") {
  const auto& f = fixture();
  const NormStats stats = dataset_train_stats(f.ds);
  const ConfidenceReport rep =
      compute_confidence(f.tr.model, f.ds, stats, 0.5);
  const nlohmann::json arr = confidence_json(rep);
  REQUIRE(arr.is_array());
  for (const auto& row : arr) {
    CHECK(row.contains("scene_id"));
    CHECK(row.contains("beta"));
    CHECK(row.contains("beta_norm"));
    CHECK(row.contains("route"));
    CHECK(row.contains("tau"));
    CHECK(row.contains("degenerate"));
  }

  const FcnConfig mc = experiment_model_config(1);
  const TrainConfig tc = experiment_train_config(2);
  const nlohmann::json tj = train_report_json(f.tr.report, mc, tc);
  CHECK(tj.contains("epoch_loss"));
  CHECK(tj.contains("protocol_hash"));
  CHECK(tj["model_config"].contains("base_channels"));
  CHECK(tj["train_config"].contains("learning_rate"));
}

TEST_CASE("diversity experiment emits the full table under a fixed protocol",
          "[pipeline]") {
  const DiversityResult r =
      run_diversity_experiment(5, 3, 3, 2, 32, 0.08f, 2);
  REQUIRE(r.reps.size() == 3);
  CHECK(r.protocol_hash != 0);
  const std::string csv = diversity_csv(r);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header+3+mean
  CHECK(csv.starts_with("rep,kappa_localized,kappa_diverse\n"));
  CHECK(csv.find("mean,") != std::string::npos);

  double mean_loc = 0.0, mean_div = 0.0;
  for (const auto& rep : r.reps) {
    mean_loc += rep.kappa_localized;
    mean_div += rep.kappa_diverse;
  }
  CHECK_THAT(r.mean_localized,
             Catch::Matchers::WithinAbs(mean_loc / 3.0, 1e-12));
  CHECK_THAT(r.mean_diverse,
             Catch::Matchers::WithinAbs(mean_div / 3.0, 1e-12));
  CHECK_THROWS_AS(run_diversity_experiment(5, 2), ValidationError);
}
