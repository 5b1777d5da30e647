// Logit-based confidence indicator. Per pixel the maximum logit (pre-softmax)
// is taken; its mean over the scene is the raw indicator beta. Across a test
// set, min-max normalization gives the relative indicator beta' in [0, 1],
// which routes each scene to the supervised model or the unsupervised
// fallback.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdtk/errors.hpp"
#include "cdtk/raster.hpp"

namespace cdtk {

struct SceneConfidence {
  std::string scene_id;
  double beta = 0.0;                 // mean max logit, unitless logit scale
  std::optional<double> beta_norm;   // in [0,1] once normalized over a set
};

enum class Route { supervised, unsupervised };

inline std::string to_string(Route r) {
  return r == Route::supervised ? "supervised" : "unsupervised";
}

struct RoutingDecision {
  std::string scene_id;
  Route route = Route::supervised;
  double beta_norm = 0.0;
  double tau = 0.5;
};

inline double pixel_zopt(std::span<const float> logits) {
  if (logits.size() < 2)
    throw ValidationError("pixel_zopt: need at least 2 logits");
  float best = logits[0];
  for (const float z : logits) {
    if (!std::isfinite(z)) throw ValidationError("pixel_zopt: non-finite logit");
    best = std::max(best, z);
  }
  return static_cast<double>(best);
}

// beta = mean of the per-pixel max logit over all pixels of the scene;
// pixels labeled 255 in the validity mask, when one is given, are excluded.
inline SceneConfidence scene_confidence(const LogitMap& lm,
                                        const ChangeMask* valid = nullptr,
                                        std::string scene_id = {}) {
  if (lm.channels < 2)
    throw ValidationError("scene_confidence: need at least 2 logit planes");
  if (valid && (valid->height != lm.height || valid->width != lm.width))
    throw ValidationError("scene_confidence: validity mask dimensions differ");
  const std::size_t plane = static_cast<std::size_t>(lm.height) * lm.width;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t px = 0; px < plane; ++px) {
    if (valid && valid->labels[px] == ChangeMask::kIgnore) continue;
    float best = lm.data[px];
    for (std::uint32_t k = 1; k < lm.channels; ++k)
      best = std::max(best, lm.data[k * plane + px]);
    sum += static_cast<double>(best);
    ++count;
  }
  if (count == 0)
    throw ValidationError("scene_confidence: no valid pixels in scene '" +
                          scene_id + "'");
  return {std::move(scene_id), sum / static_cast<double>(count), std::nullopt};
}

struct NormalizedConfidences {
  std::vector<SceneConfidence> scenes;
  bool degenerate = false;  // all betas equal (including single-scene sets)
};

// beta'_j = (beta_j - min) / (max - min). When max == min the pipeline must
// still route, so every beta' becomes 1.0 and the degeneracy flag is set.
inline NormalizedConfidences normalize_confidences(
    std::vector<SceneConfidence> scenes) {
  if (scenes.empty())
    throw ValidationError("normalize_confidences: empty scene list");
  double lo = scenes.front().beta, hi = scenes.front().beta;
  for (const auto& sc : scenes) {
    if (!std::isfinite(sc.beta))
      throw ValidationError("normalize_confidences: non-finite beta");
    lo = std::min(lo, sc.beta);
    hi = std::max(hi, sc.beta);
  }
  NormalizedConfidences out;
  out.degenerate = (hi == lo);
  for (auto& sc : scenes)
    sc.beta_norm = out.degenerate ? 1.0 : (sc.beta - lo) / (hi - lo);
  out.scenes = std::move(scenes);
  return out;
}

// Supervised iff beta' >= tau; the boundary itself routes supervised.
inline RoutingDecision decide_route(const SceneConfidence& sc, double tau) {
  if (!sc.beta_norm)
    throw ValidationError("decide_route: beta_norm missing for scene '" +
                          sc.scene_id + "'");
  if (tau < 0.0 || tau > 1.0)
    throw ValidationError("decide_route: tau must lie in [0,1]");
  RoutingDecision d;
  d.scene_id = sc.scene_id;
  d.beta_norm = *sc.beta_norm;
  d.tau = tau;
  d.route = *sc.beta_norm >= tau ? Route::supervised : Route::unsupervised;
  return d;
}

}  // namespace cdtk
