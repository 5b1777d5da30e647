// Unsupervised change detection fallback: change-vector-analysis magnitude
// over standardized bands, thresholded by Otsu's method on a fixed 256-bin
// histogram spanning the observed [min, max].
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cdtk/dataset.hpp"
#include "cdtk/errors.hpp"
#include "cdtk/raster.hpp"

namespace cdtk {

using MagnitudeMap = Raster;  // (1, h, w), non-negative

// Per-pixel Euclidean norm over bands of (post - pre) after standardization
// with the training NormStats. Standardization cancels per-band gain, so the
// magnitude is invariant to rescaling a band together with its stats.
inline MagnitudeMap cva_magnitude(const Raster& pre, const Raster& post,
                                  const NormStats& stats) {
  if (!pre.same_shape(post))
    throw ValidationError("cva_magnitude: pre/post dimensions differ");
  if (pre.channels != stats.mean.size())
    throw ValidationError("cva_magnitude: band count mismatch with stats");
  MagnitudeMap mag(pre.height, pre.width, 1);
  const std::size_t plane = static_cast<std::size_t>(pre.height) * pre.width;
  for (std::size_t px = 0; px < plane; ++px) {
    double acc = 0.0;
    for (std::uint32_t b = 0; b < pre.channels; ++b) {
      const double d = (static_cast<double>(post.data[b * plane + px]) -
                        static_cast<double>(pre.data[b * plane + px])) /
                       static_cast<double>(stats.stddev[b]);
      acc += d * d;
    }
    mag.data[px] = static_cast<float>(std::sqrt(acc));
  }
  return mag;
}

struct OtsuResult {
  double threshold = 0.0;
  bool degenerate = false;  // fewer than two distinct values
};

inline constexpr int kOtsuBins = 256;

inline std::array<std::int64_t, kOtsuBins> otsu_histogram(const Raster& values,
                                                          double lo,
                                                          double hi) {
  std::array<std::int64_t, kOtsuBins> hist{};
  const double scale = static_cast<double>(kOtsuBins) / (hi - lo);
  for (const float v : values.data) {
    int idx = static_cast<int>((static_cast<double>(v) - lo) * scale);
    idx = std::clamp(idx, 0, kOtsuBins - 1);
    ++hist[static_cast<std::size_t>(idx)];
  }
  return hist;
}

// Between-class variance of the split "bins < edge" vs "bins >= edge",
// evaluated on bin indices. The moment sums are exact 64-bit integers, so
// this expression is bit-reproducible however the sums were accumulated.
inline double otsu_between_class_variance(std::int64_t w0, std::int64_t sum0,
                                          std::int64_t w1, std::int64_t sum1) {
  if (w0 == 0 || w1 == 0) return 0.0;
  const double mu0 = static_cast<double>(sum0) / static_cast<double>(w0);
  const double mu1 = static_cast<double>(sum1) / static_cast<double>(w1);
  return static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) *
         (mu0 - mu1);
}

// Threshold = the bin edge (value min + e*(max-min)/256, e in 1..255)
// maximizing between-class variance; ties resolve to the lowest edge.
inline OtsuResult otsu_threshold(const MagnitudeMap& values) {
  if (values.data.empty()) throw ValidationError("otsu_threshold: empty map");
  double lo = values.data[0], hi = values.data[0];
  for (const float v : values.data) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  if (hi == lo) return {hi, true};

  const auto hist = otsu_histogram(values, lo, hi);
  std::int64_t total = 0, total_sum = 0;
  for (int i = 0; i < kOtsuBins; ++i) {
    total += hist[static_cast<std::size_t>(i)];
    total_sum += static_cast<std::int64_t>(i) * hist[static_cast<std::size_t>(i)];
  }

  int best_edge = 1;
  double best_var = -1.0;
  std::int64_t w0 = 0, sum0 = 0;
  for (int e = 1; e < kOtsuBins; ++e) {
    w0 += hist[static_cast<std::size_t>(e - 1)];
    sum0 += static_cast<std::int64_t>(e - 1) * hist[static_cast<std::size_t>(e - 1)];
    const double var =
        otsu_between_class_variance(w0, sum0, total - w0, total_sum - sum0);
    if (var > best_var) {
      best_var = var;
      best_edge = e;
    }
  }
  const double binw = (hi - lo) / static_cast<double>(kOtsuBins);
  return {lo + static_cast<double>(best_edge) * binw, false};
}

struct CvaOtsuResult {
  ChangeMask mask;
  double threshold = 0.0;
  bool degenerate = false;
};

// Figure-1 "Use unsupervised CD" leaf: changed where magnitude exceeds the
// Otsu threshold (strict inequality).
inline CvaOtsuResult cva_otsu_change(const Raster& pre, const Raster& post,
                                     const NormStats& stats) {
  const MagnitudeMap mag = cva_magnitude(pre, post, stats);
  const OtsuResult otsu = otsu_threshold(mag);
  CvaOtsuResult out;
  out.threshold = otsu.threshold;
  out.degenerate = otsu.degenerate;
  out.mask = ChangeMask(mag.height, mag.width);
  for (std::size_t i = 0; i < mag.data.size(); ++i)
    out.mask.labels[i] = static_cast<double>(mag.data[i]) > otsu.threshold
                             ? ChangeMask::kChanged
                             : ChangeMask::kUnchanged;
  return out;
}

inline ChangeMask unsupervised_change_map(const Raster& pre, const Raster& post,
                                          const NormStats& stats) {
  return cva_otsu_change(pre, post, stats).mask;
}

}  // namespace cdtk
