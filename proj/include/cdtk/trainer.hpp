// Patch-based training of the FCN: inverse-frequency class weighting,
// dihedral-group augmentation, Adam updates, deterministic under fixed
// (model seed, train seed) on a single thread.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cdtk/dataset.hpp"
#include "cdtk/errors.hpp"
#include "cdtk/fcn.hpp"
#include "cdtk/metrics.hpp"
#include "cdtk/rng.hpp"
#include "cdtk/tensor.hpp"

namespace cdtk {

enum class ClassWeighting { none, inverse_frequency };
enum class AugmentMode { none, d4 };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::uint32_t epochs = 10;
  std::uint32_t patch_size = 64;  // must be divisible by 2^depth
  std::uint32_t batch_size = 8;
  std::uint32_t patches_per_scene_per_epoch = 32;
  ClassWeighting class_weighting = ClassWeighting::inverse_frequency;
  AugmentMode augment = AugmentMode::d4;
  std::uint64_t seed = 0;

  void validate(const FcnConfig& model_cfg) const {
    if (epochs < 1 || batch_size < 1 || patches_per_scene_per_epoch < 1 ||
        patch_size < 1)
      throw ValidationError("TrainConfig: all counts must be >= 1");
    if (patch_size % model_cfg.stride_multiple() != 0)
      throw ValidationError("TrainConfig: patch_size must be divisible by " +
                            std::to_string(model_cfg.stride_multiple()));
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;  // one entry per epoch
  double wall_seconds = 0.0;
  std::uint64_t train_seed = 0;
  std::uint64_t model_seed = 0;
  std::uint64_t protocol_hash = 0;
  std::vector<float> class_weights;
};

struct ClassWeights {
  std::vector<float> weights;       // length K+1
  std::vector<bool> missing_class;  // true where no labeled pixel existed
};

// Inverse-frequency weights w_k = N_valid / ((K+1) * N_k); a perfectly
// balanced dataset yields all ones. Classes with no labeled pixels get
// weight 0 and a flag.
inline ClassWeights compute_class_weights(
    std::span<const ScenePair* const> train_scenes, std::uint32_t num_classes) {
  std::vector<std::uint64_t> counts(num_classes, 0);
  for (const ScenePair* sc : train_scenes) {
    if (!sc->mask) continue;
    for (const std::uint8_t v : sc->mask->labels) {
      if (v == ChangeMask::kIgnore) continue;
      if (v < num_classes) ++counts[v];
    }
  }
  const std::uint64_t valid =
      std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (valid == 0)
    throw ValidationError("compute_class_weights: no labeled pixels");
  ClassWeights cw;
  cw.weights.resize(num_classes);
  cw.missing_class.resize(num_classes, false);
  for (std::uint32_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) {
      cw.weights[k] = 0.0f;
      cw.missing_class[k] = true;
    } else {
      cw.weights[k] = static_cast<float>(
          static_cast<double>(valid) /
          (static_cast<double>(num_classes) * static_cast<double>(counts[k])));
    }
  }
  return cw;
}

struct PatchTriple {
  Raster pre;
  Raster post;
  ChangeMask mask;
};

namespace detail {

inline Raster reflect_pad(const Raster& r, std::uint32_t th, std::uint32_t tw) {
  Raster out(th, tw, r.channels);
  for (std::uint32_t c = 0; c < r.channels; ++c)
    for (std::uint32_t y = 0; y < th; ++y) {
      const auto sy = static_cast<std::uint32_t>(
          reflect_index(static_cast<int>(y), static_cast<int>(r.height)));
      for (std::uint32_t x = 0; x < tw; ++x)
        out.at(c, y, x) = r.at(c, sy,
                               static_cast<std::uint32_t>(reflect_index(
                                   static_cast<int>(x),
                                   static_cast<int>(r.width))));
    }
  return out;
}

inline ChangeMask reflect_pad(const ChangeMask& m, std::uint32_t th,
                              std::uint32_t tw) {
  ChangeMask out(th, tw);
  for (std::uint32_t y = 0; y < th; ++y) {
    const auto sy = static_cast<std::uint32_t>(
        reflect_index(static_cast<int>(y), static_cast<int>(m.height)));
    for (std::uint32_t x = 0; x < tw; ++x)
      out.at(y, x) = m.at(sy, static_cast<std::uint32_t>(reflect_index(
                                  static_cast<int>(x),
                                  static_cast<int>(m.width))));
  }
  return out;
}

inline Raster crop(const Raster& r, std::uint32_t y0, std::uint32_t x0,
                   std::uint32_t s) {
  Raster out(s, s, r.channels);
  for (std::uint32_t c = 0; c < r.channels; ++c)
    for (std::uint32_t y = 0; y < s; ++y)
      for (std::uint32_t x = 0; x < s; ++x)
        out.at(c, y, x) = r.at(c, y0 + y, x0 + x);
  return out;
}

inline ChangeMask crop(const ChangeMask& m, std::uint32_t y0, std::uint32_t x0,
                       std::uint32_t s) {
  ChangeMask out(s, s);
  for (std::uint32_t y = 0; y < s; ++y)
    for (std::uint32_t x = 0; x < s; ++x) out.at(y, x) = m.at(y0 + y, x0 + x);
  return out;
}

}  // namespace detail

// Uniform random top-left corners; a scene smaller than the patch is
// reflect-padded up to patch size and the same padded patch returned once
// per draw. Corner draws consume the rng as (y, x) pairs.
inline std::vector<PatchTriple> sample_patches(const ScenePair& scene,
                                               std::uint32_t n,
                                               std::uint32_t patch_size,
                                               Rng& rng) {
  if (!scene.mask)
    throw ValidationError("sample_patches: scene '" + scene.scene_id +
                          "' has no mask");
  std::vector<PatchTriple> out;
  out.reserve(n);
  const std::uint32_t h = scene.pre.height, w = scene.pre.width;
  if (h < patch_size || w < patch_size) {
    const std::uint32_t th = std::max(h, patch_size);
    const std::uint32_t tw = std::max(w, patch_size);
    PatchTriple padded{detail::reflect_pad(scene.pre, th, tw),
                       detail::reflect_pad(scene.post, th, tw),
                       detail::reflect_pad(*scene.mask, th, tw)};
    PatchTriple base{detail::crop(padded.pre, 0, 0, patch_size),
                     detail::crop(padded.post, 0, 0, patch_size),
                     detail::crop(padded.mask, 0, 0, patch_size)};
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(base);
    return out;
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto y0 = static_cast<std::uint32_t>(
        rng.uniform_below(h - patch_size + 1));
    const auto x0 = static_cast<std::uint32_t>(
        rng.uniform_below(w - patch_size + 1));
    out.push_back({detail::crop(scene.pre, y0, x0, patch_size),
                   detail::crop(scene.post, y0, x0, patch_size),
                   detail::crop(scene.mask.value(), y0, x0, patch_size)});
  }
  return out;
}

// The 8 dihedral-group transforms on square patches. out(y,x) = in(map(y,x)):
//   0 identity, 1 rot90 cw, 2 rot180, 3 rot270 cw,
//   4 mirror x, 5 mirror y, 6 transpose, 7 anti-transpose
inline void d4_source_coord(int t, int s, int y, int x, int& sy, int& sx) {
  switch (t) {
    case 0: sy = y; sx = x; break;
    case 1: sy = s - 1 - x; sx = y; break;
    case 2: sy = s - 1 - y; sx = s - 1 - x; break;
    case 3: sy = x; sx = s - 1 - y; break;
    case 4: sy = y; sx = s - 1 - x; break;
    case 5: sy = s - 1 - y; sx = x; break;
    case 6: sy = x; sx = y; break;
    case 7: sy = s - 1 - x; sx = s - 1 - y; break;
    default: throw ValidationError("d4: transform index out of range");
  }
}

inline PatchTriple apply_d4(const PatchTriple& p, int transform) {
  if (p.pre.height != p.pre.width)
    throw ValidationError("apply_d4: patches must be square");
  const int s = static_cast<int>(p.pre.height);
  PatchTriple out{Raster(p.pre.height, p.pre.width, p.pre.channels),
                  Raster(p.post.height, p.post.width, p.post.channels),
                  ChangeMask(p.mask.height, p.mask.width)};
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      int sy = 0, sx = 0;
      d4_source_coord(transform, s, y, x, sy, sx);
      for (std::uint32_t c = 0; c < p.pre.channels; ++c) {
        out.pre.at(c, static_cast<std::uint32_t>(y),
                   static_cast<std::uint32_t>(x)) =
            p.pre.at(c, static_cast<std::uint32_t>(sy),
                     static_cast<std::uint32_t>(sx));
        out.post.at(c, static_cast<std::uint32_t>(y),
                    static_cast<std::uint32_t>(x)) =
            p.post.at(c, static_cast<std::uint32_t>(sy),
                      static_cast<std::uint32_t>(sx));
      }
      out.mask.at(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x)) =
          p.mask.at(static_cast<std::uint32_t>(sy),
                    static_cast<std::uint32_t>(sx));
    }
  return out;
}

inline PatchTriple augment_d4(const PatchTriple& p, Rng& rng) {
  return apply_d4(p, static_cast<int>(rng.uniform_below(8)));
}

// FNV-1a over the canonical field serialization; both arms of a compared
// experiment must hash equal for the comparison to count.
inline std::uint64_t train_protocol_hash(const FcnConfig& mc,
                                         const TrainConfig& tc) {
  std::string s = std::to_string(mc.in_bands) + "|" +
                  std::to_string(mc.num_classes) + "|" +
                  std::to_string(mc.base_channels) + "|" +
                  std::to_string(mc.depth) + "|" + std::to_string(mc.seed) +
                  "|" + std::to_string(tc.learning_rate) + "|" +
                  std::to_string(tc.epochs) + "|" +
                  std::to_string(tc.patch_size) + "|" +
                  std::to_string(tc.batch_size) + "|" +
                  std::to_string(tc.patches_per_scene_per_epoch) + "|" +
                  std::to_string(static_cast<int>(tc.class_weighting)) + "|" +
                  std::to_string(static_cast<int>(tc.augment)) + "|" +
                  std::to_string(tc.seed);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct TrainResult {
  FcnModel model;
  TrainReport report;
  NormStats stats;
};

// End-to-end training: normalize with train-split stats, then per epoch draw
// and augment patches, batch them, and Adam-step the weighted softmax-CE
// loss. Final-epoch weights are the deliverable.
inline TrainResult train(const Dataset& ds, const FcnConfig& model_cfg,
                         const TrainConfig& train_cfg) {
  model_cfg.validate();
  train_cfg.validate(model_cfg);
  const auto t_start = std::chrono::steady_clock::now();

  const auto train_scenes = ds.split(Split::train);
  if (train_scenes.empty())
    throw ValidationError("train: the manifest has no training scenes");
  for (const ScenePair* sc : train_scenes)
    if (!sc->mask)
      throw ValidationError("train: scene '" + sc->scene_id +
                            "' in the train split has no mask");

  const NormStats stats = compute_norm_stats(train_scenes);
  std::vector<ScenePair> norm_scenes;
  norm_scenes.reserve(train_scenes.size());
  for (const ScenePair* sc : train_scenes)
    norm_scenes.push_back(normalize_scene(*sc, stats));

  const std::uint32_t num_classes = model_cfg.num_classes;
  ClassWeights cw;
  if (train_cfg.class_weighting == ClassWeighting::inverse_frequency) {
    cw = compute_class_weights(train_scenes, num_classes);
  } else {
    cw.weights.assign(num_classes, 1.0f);
    cw.missing_class.assign(num_classes, false);
  }

  FcnModel model = init_model(model_cfg);
  const auto params = model.param_tensors();
  AdamState<float> adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = train_cfg.learning_rate;

  Rng rng(train_cfg.seed);
  const std::uint32_t ps = train_cfg.patch_size;
  const int bands = static_cast<int>(model_cfg.in_bands);

  TrainReport report;
  report.train_seed = train_cfg.seed;
  report.model_seed = model_cfg.seed;
  report.protocol_hash = train_protocol_hash(model_cfg, train_cfg);
  report.class_weights = cw.weights;

  for (std::uint32_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    std::vector<PatchTriple> patches;
    for (const ScenePair& sc : norm_scenes) {
      auto drawn =
          sample_patches(sc, train_cfg.patches_per_scene_per_epoch, ps, rng);
      for (auto& p : drawn) {
        if (train_cfg.augment == AugmentMode::d4)
          patches.push_back(augment_d4(p, rng));
        else
          patches.push_back(std::move(p));
      }
    }
    // Fisher-Yates on the pooled patch list
    for (std::size_t i = patches.size(); i > 1; --i) {
      const std::size_t j = rng.uniform_below(i);
      std::swap(patches[i - 1], patches[j]);
    }

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t off = 0; off < patches.size();
         off += train_cfg.batch_size) {
      const int bs = static_cast<int>(
          std::min<std::size_t>(train_cfg.batch_size, patches.size() - off));
      auto input = make_tensor<float>(bs, 2 * bands, static_cast<int>(ps),
                                      static_cast<int>(ps));
      std::vector<std::uint8_t> labels(static_cast<std::size_t>(bs) * ps * ps);
      const std::size_t plane = static_cast<std::size_t>(ps) * ps;
      for (int b = 0; b < bs; ++b) {
        const PatchTriple& p = patches[off + static_cast<std::size_t>(b)];
        float* dst = input->value.data() +
                     static_cast<std::size_t>(b) * 2 * bands * plane;
        std::copy_n(p.pre.data.data(), static_cast<std::size_t>(bands) * plane,
                    dst);
        std::copy_n(p.post.data.data(), static_cast<std::size_t>(bands) * plane,
                    dst + static_cast<std::size_t>(bands) * plane);
        std::copy_n(p.mask.labels.data(), plane,
                    labels.data() + static_cast<std::size_t>(b) * plane);
      }

      Tape<float> tape;
      auto logits = fcn_forward(tape, model_cfg, model.parameters, input);
      auto loss = softmax_ce_loss(tape, logits,
                                  std::span<const std::uint8_t>(labels),
                                  cw.weights);
      zero_grads(std::span<const Tensor4<float>>(params));
      tape.backward(loss);
      adam.step(std::span<const Tensor4<float>>(params), adam_cfg);

      loss_sum += static_cast<double>(loss->value[0]);
      ++batches;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return {std::move(model), std::move(report), stats};
}

struct SplitEval {
  std::vector<std::pair<std::string, ConfusionMatrix>> per_scene;
  ConfusionMatrix pooled;  // Table-1 "All" semantics: pooled pixel counts
};

// Per-scene confusion against the reference masks plus the pooled aggregate.
// Normalization always uses stats from the dataset's own train split.
inline SplitEval evaluate_split(const FcnModel& model, const Dataset& ds,
                                Split split) {
  const auto train_scenes = ds.split(Split::train);
  if (train_scenes.empty())
    throw ValidationError("evaluate_split: no train split to take stats from");
  const NormStats stats = compute_norm_stats(train_scenes);

  SplitEval ev;
  for (const ScenePair* sc : ds.split(split)) {
    if (!sc->mask)
      throw ValidationError("evaluate_split: scene '" + sc->scene_id +
                            "' has no mask");
    const ScenePair norm = normalize_scene(*sc, stats);
    const ChangeMask pred = predict_map(model, norm.pre, norm.post);
    const ConfusionMatrix cm = confusion(pred, *sc->mask);
    ev.per_scene.emplace_back(sc->scene_id, cm);
    ev.pooled += cm;
  }
  return ev;
}

}  // namespace cdtk
