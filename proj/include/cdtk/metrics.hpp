// Confusion-matrix accounting and the three evaluation metrics: sensitivity
// (accuracy over changed pixels), specificity (accuracy over unchanged
// pixels), and Cohen's kappa. "Changed" is the positive class throughout.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "cdtk/errors.hpp"
#include "cdtk/raster.hpp"

namespace cdtk {

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t ignored = 0;  // reference pixels labeled 255

  std::uint64_t total_scored() const { return tp + tn + fp + fn; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    ignored += o.ignored;
    return *this;
  }
};

// Reference pixels labeled 255 are excluded; a prediction may not contain
// the ignore label at all.
inline ConfusionMatrix confusion(const ChangeMask& pred,
                                 const ChangeMask& ref) {
  if (pred.height != ref.height || pred.width != ref.width)
    throw ValidationError("confusion: mask dimensions differ");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (pred.labels[i] == ChangeMask::kIgnore)
      throw ValidationError("confusion: prediction contains ignore label 255");
    if (ref.labels[i] == ChangeMask::kIgnore) {
      ++cm.ignored;
      continue;
    }
    const bool p = pred.labels[i] != 0;
    const bool r = ref.labels[i] != 0;
    if (p && r)
      ++cm.tp;
    else if (!p && !r)
      ++cm.tn;
    else if (p && !r)
      ++cm.fp;
    else
      ++cm.fn;
  }
  return cm;
}

// Percent; empty when the denominator is zero (no changed reference pixels).
inline std::optional<double> sensitivity(const ConfusionMatrix& cm) {
  const std::uint64_t denom = cm.tp + cm.fn;
  if (denom == 0) return std::nullopt;
  return 100.0 * static_cast<double>(cm.tp) / static_cast<double>(denom);
}

inline std::optional<double> specificity(const ConfusionMatrix& cm) {
  const std::uint64_t denom = cm.tn + cm.fp;
  if (denom == 0) return std::nullopt;
  return 100.0 * static_cast<double>(cm.tn) / static_cast<double>(denom);
}

struct KappaResult {
  double value = 0.0;
  bool degenerate = false;  // chance agreement pe == 1
};

// kappa = (po - pe) / (1 - pe) with
//   po = (tp+tn)/N
//   pe = ((tp+fp)(tp+fn) + (tn+fn)(tn+fp)) / N^2
// The degenerate pe == 1 case (both masks constant and equal) is defined
// as 0 so batch evaluation never aborts.
inline KappaResult kappa(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total_scored();
  if (n == 0) throw ValidationError("kappa: no scored pixels");
  const double nd = static_cast<double>(n);
  const double po = static_cast<double>(cm.tp + cm.tn) / nd;
  const double pe =
      (static_cast<double>(cm.tp + cm.fp) * static_cast<double>(cm.tp + cm.fn) +
       static_cast<double>(cm.tn + cm.fn) * static_cast<double>(cm.tn + cm.fp)) /
      (nd * nd);
  if (pe == 1.0) return {0.0, true};
  return {(po - pe) / (1.0 - pe), false};
}

// Figure-2-style composite: white = correct change, green = false alarm,
// magenta = missed alarm, black = correct no-change, grey = ignored.
inline Raster falsecolor(const ChangeMask& pred, const ChangeMask& ref) {
  if (pred.height != ref.height || pred.width != ref.width)
    throw ValidationError("falsecolor: mask dimensions differ");
  Raster img(pred.height, pred.width, 3);
  const std::size_t plane = static_cast<std::size_t>(pred.height) * pred.width;
  for (std::size_t i = 0; i < plane; ++i) {
    std::uint8_t r, g, b;
    if (ref.labels[i] == ChangeMask::kIgnore) {
      r = g = b = 128;
    } else {
      const bool p = pred.labels[i] != 0;
      const bool t = ref.labels[i] != 0;
      if (p && t) {
        r = g = b = 255;  // true positive
      } else if (p && !t) {
        r = 0;
        g = 255;
        b = 0;  // false alarm
      } else if (!p && t) {
        r = 255;
        g = 0;
        b = 255;  // missed alarm
      } else {
        r = g = b = 0;  // true negative
      }
    }
    img.data[i] = static_cast<float>(r);
    img.data[plane + i] = static_cast<float>(g);
    img.data[2 * plane + i] = static_cast<float>(b);
  }
  return img;
}

}  // namespace cdtk
