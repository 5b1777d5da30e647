// Scene pairs, manifests, and radiometric normalization.
//
// Manifest files are UTF-8 JSON:
//   { "band_count": int, "num_change_classes": int,
//     "scenes": [ { "id": str, "pre": path, "post": path,
//                   "mask": path|null, "group": str,
//                   "split": "train"|"test" } ] }
// Paths are relative to the manifest's directory.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdtk/errors.hpp"
#include "cdtk/raster.hpp"

namespace cdtk {

struct ClassScheme {
  std::uint32_t num_change_classes = 1;  // K
  std::uint32_t total_classes() const { return num_change_classes + 1; }
};

enum class Split { train, test };

inline std::string to_string(Split s) {
  return s == Split::train ? "train" : "test";
}

struct ScenePair {
  std::string scene_id;
  Raster pre;
  Raster post;
  std::optional<ChangeMask> mask;
  std::string group;
  Split split = Split::train;
};

struct SceneEntry {
  std::string id;
  std::string pre_path;   // relative to the manifest directory
  std::string post_path;
  std::optional<std::string> mask_path;
  std::string group;
  Split split = Split::train;
};

struct Manifest {
  std::uint32_t band_count = 0;
  ClassScheme class_scheme;
  std::vector<SceneEntry> scenes;
  std::filesystem::path base_dir;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(scenes.begin(), scenes.end(),
                      [s](const SceneEntry& e) { return e.split == s; }));
  }
};

// A manifest together with its fully loaded scenes, in manifest order.
struct Dataset {
  Manifest manifest;
  std::vector<ScenePair> scenes;

  std::vector<const ScenePair*> split(Split s) const {
    std::vector<const ScenePair*> out;
    for (const auto& sc : scenes)
      if (sc.split == s) out.push_back(&sc);
    return out;
  }
};

struct NormStats {
  std::vector<float> mean;    // per band
  std::vector<float> stddev;  // per band, population convention
  std::vector<bool> zero_variance;

  bool any_zero_variance() const {
    return std::any_of(zero_variance.begin(), zero_variance.end(),
                       [](bool b) { return b; });
  }
};

inline Manifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest is not valid JSON: " + path.string() + ": " +
                      e.what());
  }

  Manifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path()
                                      : std::filesystem::path(".");
  try {
    m.band_count = j.at("band_count").get<std::uint32_t>();
    m.class_scheme.num_change_classes =
        j.at("num_change_classes").get<std::uint32_t>();
    for (const auto& js : j.at("scenes")) {
      SceneEntry e;
      e.id = js.at("id").get<std::string>();
      e.pre_path = js.at("pre").get<std::string>();
      e.post_path = js.at("post").get<std::string>();
      if (js.contains("mask") && !js.at("mask").is_null())
        e.mask_path = js.at("mask").get<std::string>();
      e.group = js.at("group").get<std::string>();
      const std::string split = js.at("split").get<std::string>();
      if (split == "train")
        e.split = Split::train;
      else if (split == "test")
        e.split = Split::test;
      else
        throw ValidationError("scene '" + e.id + "': bad split '" + split +
                              "'");
      m.scenes.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest field error in " + path.string() + ": " +
                      e.what());
  }
  if (m.band_count == 0) throw ValidationError("band_count must be >= 1");
  if (m.class_scheme.num_change_classes == 0)
    throw ValidationError("num_change_classes must be >= 1");

  std::set<std::string> ids;
  for (const auto& e : m.scenes)
    if (!ids.insert(e.id).second)
      throw ValidationError("duplicate scene id '" + e.id + "'");
  return m;
}

inline void write_manifest(const Manifest& m,
                           const std::filesystem::path& path) {
  nlohmann::json j;
  j["band_count"] = m.band_count;
  j["num_change_classes"] = m.class_scheme.num_change_classes;
  j["scenes"] = nlohmann::json::array();
  for (const auto& e : m.scenes) {
    nlohmann::json js;
    js["id"] = e.id;
    js["pre"] = e.pre_path;
    js["post"] = e.post_path;
    js["mask"] = e.mask_path ? nlohmann::json(*e.mask_path)
                             : nlohmann::json(nullptr);
    js["group"] = e.group;
    js["split"] = to_string(e.split);
    j["scenes"].push_back(std::move(js));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << j.dump(2) << "\n";
  if (!os) throw IoError("write failed: " + path.string());
}

inline ScenePair load_scene(const Manifest& m, const SceneEntry& e) {
  ScenePair sc;
  sc.scene_id = e.id;
  sc.group = e.group;
  sc.split = e.split;
  try {
    sc.pre = read_raster(m.base_dir / e.pre_path);
    sc.post = read_raster(m.base_dir / e.post_path);
    if (e.mask_path) sc.mask = read_mask(m.base_dir / *e.mask_path);
  } catch (const ValidationError& ex) {
    throw ValidationError("scene '" + e.id + "': " + ex.what());
  }
  if (!sc.pre.same_shape(sc.post))
    throw ValidationError("scene '" + e.id +
                          "': pre and post dimensions differ");
  if (sc.pre.channels != m.band_count)
    throw ValidationError("scene '" + e.id + "': expected " +
                          std::to_string(m.band_count) + " bands, got " +
                          std::to_string(sc.pre.channels));
  if (sc.mask &&
      (sc.mask->height != sc.pre.height || sc.mask->width != sc.pre.width))
    throw ValidationError("scene '" + e.id + "': mask dimensions differ");
  return sc;
}

inline Dataset load_manifest(const std::filesystem::path& path) {
  Dataset ds;
  ds.manifest = parse_manifest(path);
  ds.scenes.reserve(ds.manifest.scenes.size());
  for (const auto& e : ds.manifest.scenes)
    ds.scenes.push_back(load_scene(ds.manifest, e));
  return ds;
}

// Per-band mean and population standard deviation pooled over the pre and
// post images of every given scene. Computed on the training split only;
// applied unchanged at test time.
inline NormStats compute_norm_stats(std::span<const ScenePair* const> scenes) {
  if (scenes.empty())
    throw ValidationError("compute_norm_stats: no training scenes");
  const std::uint32_t bands = scenes.front()->pre.channels;
  for (const ScenePair* sc : scenes)
    if (sc->pre.channels != bands)
      throw ValidationError("compute_norm_stats: band count mismatch in '" +
                            sc->scene_id + "'");

  NormStats st;
  st.mean.assign(bands, 0.0f);
  st.stddev.assign(bands, 0.0f);
  st.zero_variance.assign(bands, false);

  for (std::uint32_t b = 0; b < bands; ++b) {
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = 0;
    for (const ScenePair* sc : scenes) {
      for (const Raster* r : {&sc->pre, &sc->post}) {
        const std::size_t plane = static_cast<std::size_t>(r->height) * r->width;
        const float* p = r->data.data() + static_cast<std::size_t>(b) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sumsq += static_cast<double>(p[i]) * p[i];
        }
        n += plane;
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double var =
        std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
    st.mean[b] = static_cast<float>(mean);
    if (var == 0.0) {
      st.stddev[b] = 1.0f;
      st.zero_variance[b] = true;
    } else {
      st.stddev[b] = static_cast<float>(std::sqrt(var));
    }
  }
  return st;
}

inline NormStats compute_norm_stats(const std::vector<const ScenePair*>& v) {
  return compute_norm_stats(std::span<const ScenePair* const>(v));
}

inline Raster normalize_raster(const Raster& r, const NormStats& st) {
  if (r.channels != st.mean.size())
    throw ValidationError("normalize: band count mismatch");
  Raster out = r;
  const std::size_t plane = static_cast<std::size_t>(r.height) * r.width;
  for (std::uint32_t b = 0; b < r.channels; ++b) {
    const float m = st.mean[b];
    const float inv = 1.0f / st.stddev[b];
    float* p = out.data.data() + static_cast<std::size_t>(b) * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
  }
  return out;
}

// Not idempotent: applying the same stats twice keeps shifting the data.
inline ScenePair normalize_scene(const ScenePair& sc, const NormStats& st) {
  ScenePair out = sc;
  out.pre = normalize_raster(sc.pre, st);
  out.post = normalize_raster(sc.post, st);
  return out;
}

}  // namespace cdtk
