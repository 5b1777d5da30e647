// Early-fusion fully convolutional change-detection network.
//
// The pre and post images are concatenated along channels (2B input planes)
// and pushed through a small U-Net-shaped encoder/decoder:
//   encoder level l (1..depth): conv-relu x2 at width base*2^(l-1), maxpool2
//   bottleneck:                 conv-relu x2 at width base*2^depth
//   decoder level l (depth..1): upsample2, concat skip_l, conv-relu x2
//   head:                       3x3 conv to K+1 logit planes
// There are no fully connected layers, so any spatial size works: inputs are
// reflect-padded up to a multiple of 2^depth and the logits cropped back.
//
// Weights file "CDFCN1\0\0": u32 tensor count, then per tensor u32 name
// length, name bytes, u32 ndim, u32 dims[ndim], f32 little-endian payload,
// in canonical architecture order. The first pseudo-tensor "__config" holds
// (in_bands, num_classes, base_channels, depth, seed) as f32-cast integers.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cdtk/dataset.hpp"
#include "cdtk/errors.hpp"
#include "cdtk/raster.hpp"
#include "cdtk/rng.hpp"
#include "cdtk/tensor.hpp"

namespace cdtk {

struct FcnConfig {
  std::uint32_t in_bands = 4;       // input channels = 2 * in_bands
  std::uint32_t num_classes = 2;    // K+1
  std::uint32_t base_channels = 16;
  std::uint32_t depth = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (in_bands < 1) throw ValidationError("FcnConfig: in_bands must be >= 1");
    if (num_classes < 2)
      throw ValidationError("FcnConfig: num_classes must be >= 2");
    if (base_channels < 1)
      throw ValidationError("FcnConfig: base_channels must be >= 1");
    if (depth < 1) throw ValidationError("FcnConfig: depth must be >= 1");
  }
  std::uint32_t stride_multiple() const { return 1u << depth; }
};

struct ParamSpec {
  std::string name;
  std::vector<int> dims;
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor4<T>>>;

// The parameter listing is a pure function of the config; serialization,
// initialization, and the forward pass all walk it in this order.
inline std::vector<ParamSpec> fcn_architecture(const FcnConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  const int base = static_cast<int>(cfg.base_channels);
  const int depth = static_cast<int>(cfg.depth);

  const auto conv_block = [&](const std::string& prefix, int cin, int cout) {
    specs.push_back({prefix + ".conv1.weight", {cout, cin, 3, 3}});
    specs.push_back({prefix + ".conv1.bias", {cout}});
    specs.push_back({prefix + ".conv2.weight", {cout, cout, 3, 3}});
    specs.push_back({prefix + ".conv2.bias", {cout}});
  };

  int cin = static_cast<int>(2 * cfg.in_bands);
  for (int l = 1; l <= depth; ++l) {
    const int width = base << (l - 1);
    conv_block("enc" + std::to_string(l), cin, width);
    cin = width;
  }
  conv_block("bottleneck", base << (depth - 1), base << depth);
  for (int l = depth; l >= 1; --l) {
    const int from_below = (l == depth) ? (base << depth) : (base << l);
    const int skip = base << (l - 1);
    conv_block("dec" + std::to_string(l), from_below + skip, skip);
  }
  specs.push_back(
      {"head.weight", {static_cast<int>(cfg.num_classes), base, 3, 3}});
  specs.push_back({"head.bias", {static_cast<int>(cfg.num_classes)}});
  return specs;
}

namespace detail {

template <typename T>
Tensor4<T> tensor_for_spec(const ParamSpec& spec, bool requires_grad) {
  if (spec.dims.size() == 4)
    return make_tensor<T>(spec.dims[0], spec.dims[1], spec.dims[2],
                          spec.dims[3], requires_grad);
  return make_tensor<T>(spec.dims[0], 1, 1, 1, requires_grad);  // bias
}

}  // namespace detail

// He-style initialization: kernels ~ Normal(0, 2/fan_in) with fan_in =
// cin*3*3, biases zero. One PRNG stream seeded by cfg.seed, consumed in
// canonical parameter order.
template <typename T>
NamedParams<T> fcn_init_params(const FcnConfig& cfg, bool requires_grad = true) {
  NamedParams<T> params;
  Rng rng(cfg.seed);
  for (const ParamSpec& spec : fcn_architecture(cfg)) {
    auto t = detail::tensor_for_spec<T>(spec, requires_grad);
    if (spec.dims.size() == 4) {
      const double fan_in = static_cast<double>(spec.dims[1]) * 9.0;
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t->value) v = static_cast<T>(rng.normal() * stddev);
    }
    params.emplace_back(spec.name, std::move(t));
  }
  return params;
}

// Core forward over a padded batch (h, w divisible by 2^depth). Records on
// the tape when any parameter or the input requires gradients. When
// `encoder_out` is given it receives the per-level activations after pooling.
template <typename T>
Tensor4<T> fcn_forward(Tape<T>& tape, const FcnConfig& cfg,
                       const NamedParams<T>& params, const Tensor4<T>& input,
                       std::vector<Tensor4<T>>* encoder_out = nullptr) {
  const int depth = static_cast<int>(cfg.depth);
  if (input->c != static_cast<int>(2 * cfg.in_bands))
    throw ValidationError("fcn_forward: expected " +
                          std::to_string(2 * cfg.in_bands) +
                          " input channels, got " + std::to_string(input->c));
  const int mult = static_cast<int>(cfg.stride_multiple());
  if (input->h % mult != 0 || input->w % mult != 0)
    throw ValidationError("fcn_forward: input dims must be a multiple of " +
                          std::to_string(mult));

  std::size_t cursor = 0;
  const auto next = [&params, &cursor](const char* what) -> const Tensor4<T>& {
    if (cursor >= params.size())
      throw ValidationError(std::string("fcn_forward: missing parameter ") +
                            what);
    return params[cursor++].second;
  };
  const auto conv_block = [&](Tensor4<T> x) {
    const auto& k1 = next("conv1.weight");
    const auto& b1 = next("conv1.bias");
    x = relu(tape, conv2d(tape, x, k1, b1));
    const auto& k2 = next("conv2.weight");
    const auto& b2 = next("conv2.bias");
    return relu(tape, conv2d(tape, x, k2, b2));
  };

  std::vector<Tensor4<T>> skips;
  Tensor4<T> x = input;
  for (int l = 1; l <= depth; ++l) {
    x = conv_block(x);
    skips.push_back(x);
    x = maxpool2(tape, x);
    if (encoder_out) encoder_out->push_back(x);
  }
  x = conv_block(x);
  for (int l = depth; l >= 1; --l) {
    x = upsample2(tape, x);
    x = concat_channels(tape, x, skips[static_cast<std::size_t>(l - 1)]);
    x = conv_block(x);
  }
  const auto& hk = next("head.weight");
  const auto& hb = next("head.bias");
  x = conv2d(tape, x, hk, hb);
  if (cursor != params.size())
    throw ValidationError("fcn_forward: parameter list longer than expected");
  return x;
}

struct FcnModel {
  FcnConfig config;
  NamedParams<float> parameters;

  std::vector<Tensor4<float>> param_tensors() const {
    std::vector<Tensor4<float>> out;
    out.reserve(parameters.size());
    for (const auto& [name, t] : parameters) out.push_back(t);
    return out;
  }
};

inline FcnModel init_model(const FcnConfig& cfg) {
  return FcnModel{cfg, fcn_init_params<float>(cfg)};
}

namespace detail {

// Reflect-101 folding of an out-of-range index back into [0, n).
inline int reflect_index(int idx, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  idx %= period;
  if (idx < 0) idx += period;
  return idx < n ? idx : period - idx;
}

inline int padded_dim(int d, int mult) { return ((d + mult - 1) / mult) * mult; }

// Early fusion with reflect padding: channels 0..B-1 carry pre, B..2B-1 post.
template <typename T>
Tensor4<T> fused_padded_input(const FcnConfig& cfg, const Raster& pre,
                              const Raster& post) {
  if (!pre.same_shape(post))
    throw ValidationError("forward_logits: pre/post dimensions differ");
  if (pre.channels != cfg.in_bands)
    throw ValidationError("forward_logits: expected " +
                          std::to_string(cfg.in_bands) + " bands, got " +
                          std::to_string(pre.channels));
  const int h = static_cast<int>(pre.height), w = static_cast<int>(pre.width);
  const int mult = static_cast<int>(cfg.stride_multiple());
  const int ph = padded_dim(h, mult), pw = padded_dim(w, mult);
  auto in = make_tensor<T>(1, static_cast<int>(2 * cfg.in_bands), ph, pw);
  const int bands = static_cast<int>(cfg.in_bands);
  for (int b = 0; b < 2 * bands; ++b) {
    const Raster& src = b < bands ? pre : post;
    const int c = b % bands;
    for (int y = 0; y < ph; ++y) {
      const int sy = reflect_index(y, h);
      for (int x = 0; x < pw; ++x)
        in->v(0, b, y, x) =
            static_cast<T>(src.at(static_cast<std::uint32_t>(c),
                                  static_cast<std::uint32_t>(sy),
                                  static_cast<std::uint32_t>(
                                      reflect_index(x, w))));
    }
  }
  return in;
}

}  // namespace detail

// Logits for one (normalized) scene at its native size.
inline LogitMap forward_logits(const FcnModel& m, const Raster& pre,
                               const Raster& post) {
  auto input = detail::fused_padded_input<float>(m.config, pre, post);
  Tape<float> tape;
  auto logits = fcn_forward(tape, m.config, m.parameters, input);
  LogitMap out(pre.height, pre.width, m.config.num_classes);
  for (std::uint32_t k = 0; k < m.config.num_classes; ++k)
    for (std::uint32_t y = 0; y < pre.height; ++y)
      for (std::uint32_t x = 0; x < pre.width; ++x)
        out.at(k, y, x) = logits->v(0, static_cast<int>(k),
                                    static_cast<int>(y), static_cast<int>(x));
  return out;
}

// Argmax labels; exact ties break toward the lower class index, i.e. toward
// unchanged. Classes >= 1 all map to "changed".
inline ChangeMask predict_from_logits(const LogitMap& lm) {
  ChangeMask mask(lm.height, lm.width);
  const std::size_t plane = static_cast<std::size_t>(lm.height) * lm.width;
  for (std::size_t px = 0; px < plane; ++px) {
    std::uint32_t best = 0;
    float bv = lm.data[px];
    for (std::uint32_t k = 1; k < lm.channels; ++k) {
      const float v = lm.data[k * plane + px];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    mask.labels[px] = best == 0 ? ChangeMask::kUnchanged : ChangeMask::kChanged;
  }
  return mask;
}

inline ChangeMask predict_map(const FcnModel& m, const Raster& pre,
                              const Raster& post) {
  return predict_from_logits(forward_logits(m, pre, post));
}

// Activation after encoder level `level` (1-based), upsampled nearest back
// to the scene resolution.
inline Raster encoder_features(const FcnModel& m, const Raster& pre,
                               const Raster& post, std::uint32_t level) {
  if (level < 1 || level > m.config.depth)
    throw ValidationError("encoder_features: level out of range");
  auto input = detail::fused_padded_input<float>(m.config, pre, post);
  Tape<float> tape;
  std::vector<Tensor4<float>> enc;
  fcn_forward(tape, m.config, m.parameters, input, &enc);
  Tensor4<float> feat = enc[level - 1];
  for (std::uint32_t l = 0; l < level; ++l) feat = upsample2(tape, feat);
  Raster out(pre.height, pre.width, static_cast<std::uint32_t>(feat->c));
  for (int c = 0; c < feat->c; ++c)
    for (std::uint32_t y = 0; y < pre.height; ++y)
      for (std::uint32_t x = 0; x < pre.width; ++x)
        out.at(static_cast<std::uint32_t>(c), y, x) =
            feat->v(0, c, static_cast<int>(y), static_cast<int>(x));
  return out;
}

namespace detail {

constexpr std::array<char, 8> kModelMagic = {'C', 'D', 'F', 'C',
                                             'N', '1', '\0', '\0'};

inline void write_named_tensor(std::ostream& os, const std::string& name,
                               std::span<const int> dims,
                               std::span<const float> payload) {
  put_u32le(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32le(os, static_cast<std::uint32_t>(dims.size()));
  for (const int d : dims) put_u32le(os, static_cast<std::uint32_t>(d));
  for (const float v : payload) put_f32le(os, v);
}

}  // namespace detail

inline void save_model(const FcnModel& m, const std::filesystem::path& path) {
  const auto specs = fcn_architecture(m.config);
  if (specs.size() != m.parameters.size())
    throw ValidationError("save_model: parameter list does not match config");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(detail::kModelMagic.data(), 8);
  detail::put_u32le(os, static_cast<std::uint32_t>(1 + specs.size()));

  const float config_payload[5] = {
      static_cast<float>(m.config.in_bands),
      static_cast<float>(m.config.num_classes),
      static_cast<float>(m.config.base_channels),
      static_cast<float>(m.config.depth),
      static_cast<float>(m.config.seed)};
  const int config_dims[1] = {5};
  detail::write_named_tensor(os, "__config", config_dims, config_payload);

  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& [name, t] = m.parameters[i];
    if (name != specs[i].name)
      throw ValidationError("save_model: unexpected parameter order at '" +
                            name + "'");
    detail::write_named_tensor(os, name, specs[i].dims, t->value);
  }
  if (!os) throw IoError("write failed: " + path.string());
}

inline FcnModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights file: " + path.string());

  std::array<char, 8> magic{};
  if (!is.read(magic.data(), 8))
    throw CorruptionError("truncated weights file: " + path.string());
  if (magic != detail::kModelMagic)
    throw FormatError("bad magic in weights file: " + path.string());

  std::uint32_t count = 0;
  if (!detail::get_u32le(is, count))
    throw CorruptionError("truncated weights file: " + path.string());
  if (count < 1) throw FormatError("weights file holds no tensors");

  struct RawTensor {
    std::string name;
    std::vector<int> dims;
    std::vector<float> payload;
  };
  std::vector<RawTensor> raw;
  raw.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    std::uint32_t name_len = 0;
    if (!detail::get_u32le(is, name_len))
      throw CorruptionError("truncated weights file: " + path.string());
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len))
      throw CorruptionError("truncated weights file: " + path.string());
    std::uint32_t ndim = 0;
    if (!detail::get_u32le(is, ndim) || ndim == 0 || ndim > 4)
      throw FormatError("bad tensor rank in " + path.string());
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint32_t dim = 0;
      if (!detail::get_u32le(is, dim) || dim == 0)
        throw FormatError("bad tensor dimension in " + path.string());
      t.dims.push_back(static_cast<int>(dim));
      n *= dim;
    }
    t.payload.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      std::uint32_t bits = 0;
      if (!detail::get_u32le(is, bits))
        throw CorruptionError("truncated tensor payload in " + path.string());
      t.payload[j] = std::bit_cast<float>(bits);
    }
    raw.push_back(std::move(t));
  }

  if (raw.front().name != "__config" || raw.front().payload.size() != 5)
    throw FormatError("first tensor must be the __config pseudo-tensor");
  FcnConfig cfg;
  cfg.in_bands = static_cast<std::uint32_t>(raw[0].payload[0]);
  cfg.num_classes = static_cast<std::uint32_t>(raw[0].payload[1]);
  cfg.base_channels = static_cast<std::uint32_t>(raw[0].payload[2]);
  cfg.depth = static_cast<std::uint32_t>(raw[0].payload[3]);
  cfg.seed = static_cast<std::uint64_t>(raw[0].payload[4]);
  cfg.validate();

  const auto specs = fcn_architecture(cfg);
  if (raw.size() != specs.size() + 1)
    throw FormatError("weights file tensor count does not match architecture");

  FcnModel m;
  m.config = cfg;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const RawTensor& t = raw[i + 1];
    if (t.name != specs[i].name)
      throw FormatError("unexpected tensor '" + t.name + "', wanted '" +
                        specs[i].name + "'");
    if (t.dims != specs[i].dims)
      throw FormatError("shape mismatch for tensor '" + t.name + "'");
    auto tensor = detail::tensor_for_spec<float>(specs[i], true);
    tensor->value = t.payload;
    m.parameters.emplace_back(t.name, std::move(tensor));
  }
  return m;
}

}  // namespace cdtk
