#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "cdtk/dataset.hpp"
#include "cdtk/rng.hpp"
#include "test_util.hpp"

using namespace cdtk;
using cdtk_test::TempDir;

namespace {

ScenePair make_pair(std::string id, std::uint32_t h, std::uint32_t w,
                    std::uint32_t bands, Split split, Rng& rng,
                    bool with_mask = true) {
  ScenePair sc;
  sc.scene_id = std::move(id);
  sc.group = "g";
  sc.split = split;
  sc.pre = Raster(h, w, bands);
  sc.post = Raster(h, w, bands);
  for (auto& v : sc.pre.data) v = static_cast<float>(rng.uniform(0.0, 200.0));
  for (auto& v : sc.post.data) v = static_cast<float>(rng.uniform(0.0, 200.0));
  if (with_mask) {
    sc.mask = ChangeMask(h, w);
    for (auto& l : sc.mask->labels)
      l = rng.uniform01() < 0.2 ? ChangeMask::kChanged : ChangeMask::kUnchanged;
  }
  return sc;
}

// Writes scenes + manifest to disk the way synth does.
std::filesystem::path write_dataset(const TempDir& tmp,
                                    const std::vector<ScenePair>& scenes,
                                    std::uint32_t bands) {
  Manifest m;
  m.band_count = bands;
  m.class_scheme.num_change_classes = 1;
  for (const auto& sc : scenes) {
    write_raster(sc.pre, tmp.path / (sc.scene_id + "_pre.cdr"));
    write_raster(sc.post, tmp.path / (sc.scene_id + "_post.cdr"));
    std::optional<std::string> mask_path;
    if (sc.mask) {
      write_mask(*sc.mask, tmp.path / (sc.scene_id + "_mask.cdr"));
      mask_path = sc.scene_id + "_mask.cdr";
    }
    m.scenes.push_back({sc.scene_id, sc.scene_id + "_pre.cdr",
                        sc.scene_id + "_post.cdr", mask_path, sc.group,
                        sc.split});
  }
  const auto path = tmp.path / "manifest.json";
  write_manifest(m, path);
  return path;
}

}  // namespace

TEST_CASE("manifest with 3 train + 2 test scenes loads with I=3 J=2",
          "[dataset]") {
  TempDir tmp;
  Rng rng(1);
  std::vector<ScenePair> scenes;
  for (int i = 0; i < 3; ++i)
    scenes.push_back(make_pair("tr" + std::to_string(i), 6, 5, 2, Split::train,
                               rng));
  for (int i = 0; i < 2; ++i)
    scenes.push_back(make_pair("te" + std::to_string(i), 6, 5, 2, Split::test,
                               rng));
  const auto path = write_dataset(tmp, scenes, 2);

  const Dataset ds = load_manifest(path);
  CHECK(ds.manifest.count(Split::train) == 3);
  CHECK(ds.manifest.count(Split::test) == 2);
  REQUIRE(ds.scenes.size() == 5);
  CHECK(ds.scenes[0].scene_id == "tr0");  // manifest order preserved
  CHECK(ds.scenes[4].scene_id == "te1");
  CHECK(ds.scenes[0].pre.data == scenes[0].pre.data);
}

TEST_CASE("empty scene list is a valid manifest", "[dataset]") {
  TempDir tmp;
  const auto path = write_dataset(tmp, {}, 4);
  const Dataset ds = load_manifest(path);
  CHECK(ds.manifest.count(Split::train) == 0);
  CHECK(ds.manifest.count(Split::test) == 0);
  CHECK(ds.scenes.empty());
}

TEST_CASE("manifest parses hand-written JSON with null mask", "[dataset]") {
  TempDir tmp;
  Rng rng(2);
  const ScenePair sc = make_pair("solo", 4, 4, 1, Split::test, rng, false);
  write_raster(sc.pre, tmp.path / "solo_pre.cdr");
  write_raster(sc.post, tmp.path / "solo_post.cdr");
  {
    std::ofstream os(tmp.path / "manifest.json");
    os << R"({"band_count": 1, "num_change_classes": 1, "scenes": [
      {"id": "solo", "pre": "solo_pre.cdr", "post": "solo_post.cdr",
       "mask": null, "group": "city", "split": "test"}]})";
  }
  const Dataset ds = load_manifest(tmp.path / "manifest.json");
  REQUIRE(ds.scenes.size() == 1);
  CHECK_FALSE(ds.scenes[0].mask.has_value());
  CHECK(ds.scenes[0].group == "city");
}

TEST_CASE("manifest validation errors name the scene", "[dataset]") {
  TempDir tmp;
  Rng rng(3);

  SECTION("wrong-size mask") {
    ScenePair sc = make_pair("badmask", 6, 6, 2, Split::train, rng);
    sc.mask = ChangeMask(3, 3);
    const auto path = write_dataset(tmp, {sc}, 2);
    CHECK_THROWS_WITH(load_manifest(path),
                      Catch::Matchers::ContainsSubstring("badmask"));
  }
  SECTION("pre/post dimension mismatch") {
    ScenePair sc = make_pair("dims", 6, 6, 2, Split::train, rng);
    sc.post = Raster(5, 6, 2);
    const auto path = write_dataset(tmp, {sc}, 2);
    CHECK_THROWS_WITH(load_manifest(path),
                      Catch::Matchers::ContainsSubstring("dims"));
  }
  SECTION("band count mismatch") {
    const ScenePair sc = make_pair("bands", 6, 6, 3, Split::train, rng);
    const auto path = write_dataset(tmp, {sc}, 2);
    CHECK_THROWS_WITH(load_manifest(path),
                      Catch::Matchers::ContainsSubstring("bands"));
  }
  SECTION("duplicate scene id") {
    const ScenePair a = make_pair("dup", 4, 4, 1, Split::train, rng);
    Manifest m;
    m.band_count = 1;
    write_raster(a.pre, tmp.path / "p.cdr");
    write_raster(a.post, tmp.path / "q.cdr");
    m.scenes.push_back({"dup", "p.cdr", "q.cdr", std::nullopt, "g",
                        Split::train});
    m.scenes.push_back({"dup", "p.cdr", "q.cdr", std::nullopt, "g",
                        Split::train});
    write_manifest(m, tmp.path / "manifest.json");
    CHECK_THROWS_WITH(load_manifest(tmp.path / "manifest.json"),
                      Catch::Matchers::ContainsSubstring("dup"));
  }
  SECTION("missing raster file") {
    Manifest m;
    m.band_count = 1;
    m.scenes.push_back({"ghost", "ghost_pre.cdr", "ghost_post.cdr",
                        std::nullopt, "g", Split::train});
    write_manifest(m, tmp.path / "manifest.json");
    CHECK_THROWS(load_manifest(tmp.path / "manifest.json"));
  }
}

TEST_CASE("norm stats: zero-variance band gets std 1 and a flag", "[dataset]") {
  ScenePair sc;
  sc.scene_id = "const";
  sc.split = Split::train;
  sc.pre = Raster(4, 4, 1, 5.0f);
  sc.post = Raster(4, 4, 1, 5.0f);
  const ScenePair* scenes[] = {&sc};
  const NormStats st =
      compute_norm_stats(std::span<const ScenePair* const>(scenes, 1));
  CHECK(st.mean[0] == 5.0f);
  CHECK(st.stddev[0] == 1.0f);
  CHECK(st.zero_variance[0]);
  CHECK(st.any_zero_variance());
}

TEST_CASE("norm stats: {0,0,4,4} pooled over pre+post gives mean 2 std 2",
          "[dataset]") {
  ScenePair sc;
  sc.scene_id = "s";
  sc.pre = Raster(1, 2, 1, 0.0f);
  sc.post = Raster(1, 2, 1, 4.0f);
  const ScenePair* scenes[] = {&sc};
  const NormStats st =
      compute_norm_stats(std::span<const ScenePair* const>(scenes, 1));
  CHECK(st.mean[0] == 2.0f);
  CHECK(st.stddev[0] == 2.0f);  // population convention
  CHECK_FALSE(st.zero_variance[0]);
}

TEST_CASE("norm stats over two scenes match brute-force pooled recomputation",
          "[dataset]") {
  Rng rng(11);
  const ScenePair a = make_pair("a", 7, 9, 3, Split::train, rng);
  const ScenePair b = make_pair("b", 5, 4, 3, Split::train, rng);
  const ScenePair* scenes[] = {&a, &b};
  const NormStats st =
      compute_norm_stats(std::span<const ScenePair* const>(scenes, 2));

  // oracle: concatenate every pixel of both images of both scenes per band
  for (std::uint32_t band = 0; band < 3; ++band) {
    std::vector<double> pool;
    for (const ScenePair* sc : scenes)
      for (const Raster* r : {&sc->pre, &sc->post}) {
        const std::size_t plane =
            static_cast<std::size_t>(r->height) * r->width;
        for (std::size_t i = 0; i < plane; ++i)
          pool.push_back(r->data[band * plane + i]);
      }
    double mean = 0.0;
    for (const double v : pool) mean += v;
    mean /= static_cast<double>(pool.size());
    double var = 0.0;
    for (const double v : pool) var += (v - mean) * (v - mean);
    var /= static_cast<double>(pool.size());
    CHECK(std::abs(st.mean[band] - mean) <=
          1e-5 * std::max(1.0, std::abs(mean)));
    CHECK(std::abs(st.stddev[band] - std::sqrt(var)) <=
          1e-5 * std::max(1.0, std::sqrt(var)));
  }
}

TEST_CASE("empty scene list for norm stats is an error", "[dataset]") {
  CHECK_THROWS_AS(compute_norm_stats(std::span<const ScenePair* const>()),
                  ValidationError);
}

TEST_CASE("normalize_scene maps value 4 to 1.0 under mean 2 std 2",
          "[dataset]") {
  ScenePair sc;
  sc.pre = Raster(1, 1, 1, 4.0f);
  sc.post = Raster(1, 1, 1, 0.0f);
  NormStats st;
  st.mean = {2.0f};
  st.stddev = {2.0f};
  st.zero_variance = {false};
  const ScenePair out = normalize_scene(sc, st);
  CHECK(out.pre.data[0] == 1.0f);
  CHECK(out.post.data[0] == -1.0f);
}

TEST_CASE("normalizing with a scene's own stats yields mean 0 std 1",
          "[dataset]") {
  Rng rng(13);
  const ScenePair sc = make_pair("n", 8, 8, 2, Split::train, rng);
  const ScenePair* scenes[] = {&sc};
  const NormStats st =
      compute_norm_stats(std::span<const ScenePair* const>(scenes, 1));
  const ScenePair out = normalize_scene(sc, st);
  const ScenePair* out_scenes[] = {&out};
  const NormStats st2 =
      compute_norm_stats(std::span<const ScenePair* const>(out_scenes, 1));
  for (int band = 0; band < 2; ++band) {
    CHECK(std::abs(st2.mean[band]) < 1e-5);
    CHECK(std::abs(st2.stddev[band] - 1.0f) < 1e-5);
  }
  // mask untouched
  CHECK(out.mask->labels == sc.mask->labels);
}

TEST_CASE("normalization is not idempotent", "[dataset]") {
  Rng rng(17);
  const ScenePair sc = make_pair("i", 6, 6, 1, Split::train, rng);
  NormStats st;
  st.mean = {50.0f};
  st.stddev = {10.0f};
  st.zero_variance = {false};
  const ScenePair once = normalize_scene(sc, st);
  const ScenePair twice = normalize_scene(once, st);
  CHECK(once.pre.data != twice.pre.data);
}

TEST_CASE("normalize_scene rejects band mismatch", "[dataset]") {
  ScenePair sc;
  sc.pre = Raster(1, 1, 2);
  sc.post = Raster(1, 1, 2);
  NormStats st;
  st.mean = {0.0f};
  st.stddev = {1.0f};
  st.zero_variance = {false};
  CHECK_THROWS_AS(normalize_scene(sc, st), ValidationError);
}

TEST_CASE("manifest round trip preserves entries", "[dataset]") {
  TempDir tmp;
  Rng rng(19);
  std::vector<ScenePair> scenes;
  scenes.push_back(make_pair("x", 4, 4, 2, Split::train, rng));
  scenes.push_back(make_pair("y", 4, 4, 2, Split::test, rng, false));
  const auto path = write_dataset(tmp, scenes, 2);
  const Manifest m = parse_manifest(path);
  REQUIRE(m.scenes.size() == 2);
  CHECK(m.scenes[0].id == "x");
  CHECK(m.scenes[0].mask_path.has_value());
  CHECK_FALSE(m.scenes[1].mask_path.has_value());
  CHECK(m.scenes[1].split == Split::test);
}
