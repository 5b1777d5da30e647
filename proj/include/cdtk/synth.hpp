// Synthetic styled scene pairs: the desk-scale stand-in for geographic
// variation. A style is a point u in [0,1] of a one-dimensional style space;
// it fixes the per-band base intensities, the texture frequency, the
// cross-band mixing of two latent texture fields, and the radiometric
// signature of injected change blobs. Nearby styles look alike, distant
// styles do not, which is what the localized/diverse training pools and the
// graded-shift test benchmark exploit.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdtk/dataset.hpp"
#include "cdtk/errors.hpp"
#include "cdtk/raster.hpp"
#include "cdtk/rng.hpp"

namespace cdtk {

struct ValueRange {
  float lo = 0.0f;
  float hi = 0.0f;
};

struct StyleSpec {
  std::uint64_t style_seed = 0;   // seeds every random draw of the scene
  double style_coord = 0.5;       // u: position in style space
  std::vector<ValueRange> band_base;  // per-band base intensity range
  ValueRange texture_freq;        // value-noise cells across the scene
  float change_density = 0.08f;   // fraction of pixels changed, (0, 0.5]
  ValueRange blob_radius{3.0f, 8.0f};

  void validate() const {
    if (change_density <= 0.0f || change_density > 0.5f)
      throw ValidationError("StyleSpec: change_density must lie in (0, 0.5]");
    if (band_base.empty())
      throw ValidationError("StyleSpec: band_base must not be empty");
    for (const auto& r : band_base)
      if (r.hi < r.lo) throw ValidationError("StyleSpec: empty base range");
    if (texture_freq.hi < texture_freq.lo || texture_freq.lo <= 0.0f)
      throw ValidationError("StyleSpec: bad texture frequency range");
    if (blob_radius.hi < blob_radius.lo || blob_radius.lo < 1.0f)
      throw ValidationError("StyleSpec: bad blob radius range");
  }
};

inline constexpr std::uint32_t kSynthBands = 4;  // R, G, B, NIR analogue

namespace synth_detail {

// The style coordinate moves texture frequency, the cross-band mixing of the
// latent fields, the band signature of change blobs, and the amount of
// between-date drift (unlabeled smooth radiometric difference, the synthetic
// stand-in for seasonal/illumination variability). It deliberately does NOT
// move overall intensity: after per-band standardization every style has the
// same input scale, so differences are structural, the way geographic
// variation is, rather than radiometric gain.
constexpr double kTwoPi = 6.28318530717958647692;
constexpr float kBaseCenter = 120.0f;
constexpr float kBandSwing = 12.0f;    // static per-band base offsets
constexpr float kTextureAmp = 22.0f;
constexpr float kPixelNoise = 8.0f;
constexpr float kBlobShift = 26.0f;    // radiometric magnitude of change
constexpr double kMixRate = 0.3;       // style -> mixing angle rate
// Labeled change blobs and unlabeled pseudo-change blobs (weak seasonal-type
// differences that do not count as change) share one fixed band signature.
// Pseudo-change amplitude grows with the style coordinate: high-coordinate
// styles carry between-date variability that approaches the strength of real
// change, which is what makes them hard for a model trained elsewhere.
constexpr double kChangePhase = 0.39;
constexpr float kPseudoFloor = 0.15f;  // pseudo amp = blob amp * (floor + slope*u)
constexpr float kPseudoSlope = 0.75f;

// Smooth random field: iid normal nodes on a coarse grid, bilinearly
// interpolated, plus one half-amplitude octave at double frequency.
inline std::vector<float> value_noise(Rng& rng, std::uint32_t h,
                                      std::uint32_t w, double cells) {
  const auto lattice = [&rng, h, w](double c) {
    const double cell = static_cast<double>(std::max(h, w)) / std::max(1.0, c);
    const std::uint32_t gh = static_cast<std::uint32_t>(h / cell) + 2;
    const std::uint32_t gw = static_cast<std::uint32_t>(w / cell) + 2;
    std::vector<float> nodes(static_cast<std::size_t>(gh) * gw);
    for (auto& v : nodes) v = static_cast<float>(rng.normal());
    std::vector<float> out(static_cast<std::size_t>(h) * w);
    for (std::uint32_t y = 0; y < h; ++y) {
      const double gy = static_cast<double>(y) / cell;
      const std::uint32_t y0 = static_cast<std::uint32_t>(gy);
      const float fy = static_cast<float>(gy - y0);
      for (std::uint32_t x = 0; x < w; ++x) {
        const double gx = static_cast<double>(x) / cell;
        const std::uint32_t x0 = static_cast<std::uint32_t>(gx);
        const float fx = static_cast<float>(gx - x0);
        const float v00 = nodes[static_cast<std::size_t>(y0) * gw + x0];
        const float v01 = nodes[static_cast<std::size_t>(y0) * gw + x0 + 1];
        const float v10 = nodes[static_cast<std::size_t>(y0 + 1) * gw + x0];
        const float v11 = nodes[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
        out[static_cast<std::size_t>(y) * w + x] =
            (1 - fy) * ((1 - fx) * v00 + fx * v01) +
            fy * ((1 - fx) * v10 + fx * v11);
      }
    }
    return out;
  };
  std::vector<float> base = lattice(cells);
  const std::vector<float> octave = lattice(2.0 * cells);
  for (std::size_t i = 0; i < base.size(); ++i)
    base[i] = (base[i] + 0.55f * octave[i]) / 1.14f;
  return base;
}

}  // namespace synth_detail

// One bi-temporal scene drawn from a style: a smooth two-latent texture
// field shared by both dates, independent per-date pixel noise, smooth
// unlabeled between-date drift whose amplitude grows with the style
// coordinate, and change blobs whose band signature is a style-rotated
// radiometric offset of either polarity.
inline ScenePair make_scene(const StyleSpec& style, std::string id,
                            std::string group, Split split, std::uint32_t h,
                            std::uint32_t w) {
  style.validate();
  using namespace synth_detail;
  const std::uint32_t bands =
      static_cast<std::uint32_t>(style.band_base.size());
  Rng rng(style.style_seed);

  std::vector<float> base(bands);
  for (std::uint32_t b = 0; b < bands; ++b)
    base[b] = static_cast<float>(
        rng.uniform(style.band_base[b].lo, style.band_base[b].hi));
  const double freq = rng.uniform(style.texture_freq.lo, style.texture_freq.hi);

  const std::vector<float> latent1 = value_noise(rng, h, w, freq);
  const std::vector<float> latent2 = value_noise(rng, h, w, freq);

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  ScenePair sc;
  sc.scene_id = std::move(id);
  sc.group = std::move(group);
  sc.split = split;
  sc.pre = Raster(h, w, bands);
  sc.post = Raster(h, w, bands);
  sc.mask = ChangeMask(h, w);

  // Change blobs: random disks until at least 95% of the target pixel count
  // is covered; the per-pixel multiplier carries per-blob amplitude jitter.
  const double target = static_cast<double>(style.change_density) * plane;
  std::vector<float> blob_mult(plane, 0.0f);
  std::size_t changed = 0;
  int guard = 0;
  while (static_cast<double>(changed) < 0.95 * target && guard++ < 100000) {
    const auto cy = static_cast<std::int64_t>(rng.uniform_below(h));
    const auto cx = static_cast<std::int64_t>(rng.uniform_below(w));
    const auto radius = rng.uniform_int(
        static_cast<std::int64_t>(style.blob_radius.lo),
        static_cast<std::int64_t>(style.blob_radius.hi));
    // jittered amplitude, either polarity
    float mult = static_cast<float>(rng.uniform(0.8, 1.25));
    if (rng.uniform01() < 0.5) mult = -mult;
    for (std::int64_t dy = -radius; dy <= radius; ++dy)
      for (std::int64_t dx = -radius; dx <= radius; ++dx) {
        if (dy * dy + dx * dx > radius * radius) continue;
        const std::int64_t y = cy + dy, x = cx + dx;
        if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(h) ||
            x >= static_cast<std::int64_t>(w))
          continue;
        const std::size_t px = static_cast<std::size_t>(y) * w +
                               static_cast<std::size_t>(x);
        if (sc.mask->labels[px] == ChangeMask::kUnchanged) {
          sc.mask->labels[px] = ChangeMask::kChanged;
          ++changed;
        }
        blob_mult[px] = mult;
      }
  }

  // Unlabeled pseudo-change blobs on the remaining background, same count
  // budget and shape family as the real ones but weaker.
  const float pseudo_scale =
      kPseudoFloor + kPseudoSlope * static_cast<float>(style.style_coord);
  std::vector<float> pseudo_mult(plane, 0.0f);
  std::size_t pseudo_count = 0;
  guard = 0;
  while (static_cast<double>(pseudo_count) < 0.95 * target &&
         guard++ < 100000) {
    const auto cy = static_cast<std::int64_t>(rng.uniform_below(h));
    const auto cx = static_cast<std::int64_t>(rng.uniform_below(w));
    const auto radius = rng.uniform_int(
        static_cast<std::int64_t>(style.blob_radius.lo),
        static_cast<std::int64_t>(style.blob_radius.hi));
    float mult = static_cast<float>(rng.uniform(0.8, 1.25));
    if (rng.uniform01() < 0.5) mult = -mult;
    for (std::int64_t dy = -radius; dy <= radius; ++dy)
      for (std::int64_t dx = -radius; dx <= radius; ++dx) {
        if (dy * dy + dx * dx > radius * radius) continue;
        const std::int64_t y = cy + dy, x = cx + dx;
        if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(h) ||
            x >= static_cast<std::int64_t>(w))
          continue;
        const std::size_t px = static_cast<std::size_t>(y) * w +
                               static_cast<std::size_t>(x);
        if (sc.mask->labels[px] != ChangeMask::kUnchanged) continue;
        if (pseudo_mult[px] == 0.0f) ++pseudo_count;
        pseudo_mult[px] = mult * pseudo_scale;
      }
  }

  for (std::uint32_t b = 0; b < bands; ++b) {
    const double theta =
        kTwoPi * (kMixRate * style.style_coord +
                  static_cast<double>(b) / bands);
    const float mix1 = static_cast<float>(std::cos(theta));
    const float mix2 = static_cast<float>(std::sin(theta));
    const double phi =
        kTwoPi * (kChangePhase + static_cast<double>(b) / bands);
    const float shift = kBlobShift * static_cast<float>(std::cos(phi));

    float* pre = sc.pre.data.data() + static_cast<std::size_t>(b) * plane;
    float* post = sc.post.data.data() + static_cast<std::size_t>(b) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const float clean =
          base[b] + kTextureAmp * (mix1 * latent1[i] + mix2 * latent2[i]);
      const float pre_v = clean + kPixelNoise * static_cast<float>(rng.normal());
      float post_v = clean + kPixelNoise * static_cast<float>(rng.normal());
      post_v += shift * (blob_mult[i] + pseudo_mult[i]);
      pre[i] = std::clamp(pre_v, 0.0f, 255.0f);
      post[i] = std::clamp(post_v, 0.0f, 255.0f);
    }
  }
  return sc;
}

enum class StylePool { localized, diverse };

struct StyledScene {
  StyleSpec style;
  std::string group;
};

namespace synth_detail {

inline StyleSpec style_at(double u, std::uint64_t style_seed,
                          float change_density) {
  StyleSpec s;
  s.style_seed = style_seed;
  s.style_coord = u;
  s.change_density = change_density;
  s.band_base.resize(kSynthBands);
  for (std::uint32_t b = 0; b < kSynthBands; ++b) {
    const float mid =
        kBaseCenter +
        kBandSwing * static_cast<float>(
                         std::sin(kTwoPi * static_cast<double>(b) /
                                  kSynthBands));
    s.band_base[b] = {mid - 8.0f, mid + 8.0f};
  }
  const float f = static_cast<float>(6.0 + 6.0 * u);
  s.texture_freq = {0.9f * f, 1.1f * f};
  return s;
}

inline std::string style_tag(const char* prefix, double u) {
  const int bucket = std::clamp(static_cast<int>(std::lround(u * 99.0)), 0, 99);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d", bucket);
  return std::string(prefix) + "_" + buf;
}

}  // namespace synth_detail

// A localized pool draws every style from a narrow band around a random
// center; a diverse pool spreads styles across the whole space.
inline std::vector<StyledScene> draw_pool_styles(StylePool pool, std::size_t n,
                                                 Rng& rng,
                                                 float change_density) {
  std::vector<StyledScene> out;
  out.reserve(n);
  if (pool == StylePool::localized) {
    const double center = rng.uniform(0.1, 0.9);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = std::clamp(center + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      out.push_back({synth_detail::style_at(u, rng.next_u64(), change_density),
                     synth_detail::style_tag("loc", u)});
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double slot =
          (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      const double u = std::clamp(slot + rng.uniform(-0.04, 0.04), 0.0, 1.0);
      out.push_back({synth_detail::style_at(u, rng.next_u64(), change_density),
                     synth_detail::style_tag("div", u)});
    }
  }
  return out;
}

struct SynthSpec {
  StylePool pool = StylePool::diverse;
  std::size_t n_train = 3;
  std::size_t n_test = 2;
  // graded: train stays localized near a low style coordinate and the test
  // scenes walk away from it in even steps (the distribution-shift bench).
  bool graded_test = false;
  std::uint64_t seed = 0;
  std::uint32_t height = 96;
  std::uint32_t width = 96;
  float change_density = 0.08f;
};

inline Dataset generate_synthetic(const SynthSpec& spec) {
  if (spec.n_train + spec.n_test == 0)
    throw ValidationError("generate_synthetic: no scenes requested");
  Rng rng(spec.seed);

  std::vector<StyledScene> train_styles, test_styles;
  if (spec.graded_test) {
    const double center = rng.uniform(0.08, 0.18);
    for (std::size_t i = 0; i < spec.n_train; ++i) {
      const double u = std::clamp(center + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      train_styles.push_back(
          {synth_detail::style_at(u, rng.next_u64(), spec.change_density),
           synth_detail::style_tag("loc", u)});
    }
    for (std::size_t j = 0; j < spec.n_test; ++j) {
      const double step =
          spec.n_test > 1
              ? static_cast<double>(j) / static_cast<double>(spec.n_test - 1)
              : 0.0;
      const double u = std::clamp(center + 0.78 * step, 0.0, 1.0);
      test_styles.push_back(
          {synth_detail::style_at(u, rng.next_u64(), spec.change_density),
           synth_detail::style_tag("shift", u)});
    }
  } else {
    train_styles =
        draw_pool_styles(spec.pool, spec.n_train, rng, spec.change_density);
    test_styles =
        draw_pool_styles(spec.pool, spec.n_test, rng, spec.change_density);
  }

  Dataset ds;
  ds.manifest.band_count = kSynthBands;
  ds.manifest.class_scheme.num_change_classes = 1;

  char idbuf[32];
  for (std::size_t i = 0; i < train_styles.size(); ++i) {
    std::snprintf(idbuf, sizeof(idbuf), "train%02zu", i);
    ds.scenes.push_back(make_scene(train_styles[i].style, idbuf,
                                   train_styles[i].group, Split::train,
                                   spec.height, spec.width));
  }
  for (std::size_t j = 0; j < test_styles.size(); ++j) {
    std::snprintf(idbuf, sizeof(idbuf), "test%02zu", j);
    ds.scenes.push_back(make_scene(test_styles[j].style, idbuf,
                                   test_styles[j].group, Split::test,
                                   spec.height, spec.width));
  }
  for (const auto& sc : ds.scenes)
    ds.manifest.scenes.push_back(
        {sc.scene_id, sc.scene_id + "_pre.cdr", sc.scene_id + "_post.cdr",
         sc.scene_id + "_mask.cdr", sc.group, sc.split});
  return ds;
}

// Writes every raster/mask plus manifest.json under out_dir.
inline std::filesystem::path write_synthetic(
    const Dataset& ds, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& sc : ds.scenes) {
    write_raster(sc.pre, out_dir / (sc.scene_id + "_pre.cdr"));
    write_raster(sc.post, out_dir / (sc.scene_id + "_post.cdr"));
    if (sc.mask) write_mask(*sc.mask, out_dir / (sc.scene_id + "_mask.cdr"));
  }
  Manifest m = ds.manifest;
  m.base_dir = out_dir;
  const auto manifest_path = out_dir / "manifest.json";
  write_manifest(m, manifest_path);
  return manifest_path;
}

// Two training pools (localized vs diverse) sharing one held-out diverse
// test set; everything else about the two datasets is identical.
struct DiversityRepData {
  Dataset localized;
  Dataset diverse;
};

inline DiversityRepData make_diversity_rep(std::uint64_t seed,
                                           std::size_t n_train,
                                           std::size_t n_test, std::uint32_t h,
                                           std::uint32_t w,
                                           float change_density) {
  Rng rng(seed);
  auto loc_styles =
      draw_pool_styles(StylePool::localized, n_train, rng, change_density);
  auto div_styles =
      draw_pool_styles(StylePool::diverse, n_train, rng, change_density);
  auto test_styles =
      draw_pool_styles(StylePool::diverse, n_test, rng, change_density);

  const auto build = [&](const std::vector<StyledScene>& train) {
    Dataset ds;
    ds.manifest.band_count = kSynthBands;
    ds.manifest.class_scheme.num_change_classes = 1;
    char idbuf[32];
    for (std::size_t i = 0; i < train.size(); ++i) {
      std::snprintf(idbuf, sizeof(idbuf), "train%02zu", i);
      ds.scenes.push_back(
          make_scene(train[i].style, idbuf, train[i].group, Split::train, h, w));
    }
    for (std::size_t j = 0; j < test_styles.size(); ++j) {
      std::snprintf(idbuf, sizeof(idbuf), "test%02zu", j);
      ds.scenes.push_back(make_scene(test_styles[j].style, idbuf,
                                     test_styles[j].group, Split::test, h, w));
    }
    for (const auto& sc : ds.scenes)
      ds.manifest.scenes.push_back(
          {sc.scene_id, sc.scene_id + "_pre.cdr", sc.scene_id + "_post.cdr",
           sc.scene_id + "_mask.cdr", sc.group, sc.split});
    return ds;
  };
  return {build(loc_styles), build(div_styles)};
}

}  // namespace cdtk
