// Minimal reverse-mode autodiff over 4-d tensors (n, c, h, w), just enough
// to build and train a small fully convolutional network. Forward ops append
// a closure to the Tape; Tape::backward replays them strictly in reverse.
//
// Training runs in float; the gradient-check harness instantiates the same
// templates with double. All loops are single-threaded and deterministic.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cdtk/errors.hpp"

namespace cdtk {

template <typename T>
struct TensorData {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> value;
  std::vector<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  T& v(int in, int ic, int iy, int ix) {
    return value[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T v(int in, int ic, int iy, int ix) const {
    return value[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using Tensor4 = std::shared_ptr<TensorData<T>>;

template <typename T>
Tensor4<T> make_tensor(int n, int c, int h, int w, bool requires_grad = false) {
  if (n < 1 || c < 1 || h < 1 || w < 1)
    throw ValidationError("tensor dimensions must be positive");
  auto t = std::make_shared<TensorData<T>>();
  t->n = n;
  t->c = c;
  t->h = h;
  t->w = w;
  t->value.assign(t->size(), T(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(t->size(), T(0));
  return t;
}

namespace detail {

template <typename T>
void ensure_grad(const Tensor4<T>& t) {
  if (!t->requires_grad) {
    t->requires_grad = true;
    t->grad.assign(t->size(), T(0));
  }
}

template <typename T>
void check_finite(const Tensor4<T>& t, const char* op) {
#ifdef CDTK_CHECK_FINITE
  for (const T v : t->value)
    if (!std::isfinite(static_cast<double>(v)))
      throw ValidationError(std::string("non-finite value produced by ") + op);
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace detail

template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    records_.push_back(std::move(backward_fn));
  }

  // Seeds d(loss)/d(loss) = 1 and replays all records in reverse execution
  // order. Gradients accumulate; callers zero them between steps.
  void backward(const Tensor4<T>& loss) {
    if (loss->size() != 1)
      throw ValidationError("backward expects a scalar loss tensor");
    if (!loss->requires_grad)
      throw ValidationError("loss does not depend on any differentiable input");
    loss->grad[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

  void reset() { records_.clear(); }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<std::function<void()>> records_;
};

// 3x3 cross-correlation, stride 1, zero padding 1 (same-size output).
// x: (n, cin, h, w), k: (cout, cin, 3, 3), b: (cout, 1, 1, 1).
template <typename T>
Tensor4<T> conv2d(Tape<T>& tape, const Tensor4<T>& x, const Tensor4<T>& k,
                  const Tensor4<T>& b) {
  if (k->h != 3 || k->w != 3)
    throw ValidationError("conv2d: kernel spatial size must be 3x3");
  if (k->c != x->c)
    throw ValidationError("conv2d: kernel input channels (" +
                          std::to_string(k->c) + ") do not match input (" +
                          std::to_string(x->c) + ")");
  if (b->n != k->n || b->c != 1 || b->h != 1 || b->w != 1)
    throw ValidationError("conv2d: bias shape must be (cout,1,1,1)");

  const int n = x->n, cin = x->c, h = x->h, w = x->w, cout = k->n;
  auto out = make_tensor<T>(n, cout, h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  for (int in = 0; in < n; ++in) {
    for (int co = 0; co < cout; ++co) {
      T* op = out->value.data() +
              (static_cast<std::size_t>(in) * cout + co) * plane;
      std::fill(op, op + plane, b->value[co]);
      for (int ci = 0; ci < cin; ++ci) {
        const T* xp = x->value.data() +
                      (static_cast<std::size_t>(in) * cin + ci) * plane;
        const T* kp = k->value.data() +
                      (static_cast<std::size_t>(co) * cin + ci) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
          for (int kx = 0; kx < 3; ++kx) {
            const T wv = kp[ky * 3 + kx];
            if (wv == T(0)) continue;
            const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
            for (int y = y0; y < y1; ++y) {
              T* dst = op + static_cast<std::size_t>(y) * w + x0;
              const T* src = xp + static_cast<std::size_t>(y + ky - 1) * w +
                             (x0 + kx - 1);
              for (int i = 0; i < x1 - x0; ++i) dst[i] += wv * src[i];
            }
          }
        }
      }
    }
  }
  detail::check_finite(out, "conv2d");

  if (x->requires_grad || k->requires_grad || b->requires_grad) {
    detail::ensure_grad(out);
    Tensor4<T> xc = x, kc = k, bc = b, oc = out;
    tape.record([xc, kc, bc, oc, n, cin, cout, h, w, plane]() {
      for (int in = 0; in < n; ++in) {
        for (int co = 0; co < cout; ++co) {
          const T* gp = oc->grad.data() +
                        (static_cast<std::size_t>(in) * cout + co) * plane;
          if (bc->requires_grad) {
            T s = T(0);
            for (std::size_t i = 0; i < plane; ++i) s += gp[i];
            bc->grad[co] += s;
          }
          for (int ci = 0; ci < cin; ++ci) {
            const T* xp = xc->value.data() +
                          (static_cast<std::size_t>(in) * cin + ci) * plane;
            const T* kp = kc->value.data() +
                          (static_cast<std::size_t>(co) * cin + ci) * 9;
            T* kg = kc->requires_grad
                        ? kc->grad.data() +
                              (static_cast<std::size_t>(co) * cin + ci) * 9
                        : nullptr;
            T* xg = xc->requires_grad
                        ? xc->grad.data() +
                              (static_cast<std::size_t>(in) * cin + ci) * plane
                        : nullptr;
            for (int ky = 0; ky < 3; ++ky) {
              const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
              for (int kx = 0; kx < 3; ++kx) {
                const int x0 = std::max(0, 1 - kx),
                          x1 = std::min(w, w + 1 - kx);
                if (kg) {
                  T s = T(0);
                  for (int y = y0; y < y1; ++y) {
                    const T* g = gp + static_cast<std::size_t>(y) * w + x0;
                    const T* src = xp +
                                   static_cast<std::size_t>(y + ky - 1) * w +
                                   (x0 + kx - 1);
                    for (int i = 0; i < x1 - x0; ++i) s += g[i] * src[i];
                  }
                  kg[ky * 3 + kx] += s;
                }
                if (xg) {
                  const T wv = kp[ky * 3 + kx];
                  if (wv == T(0)) continue;
                  for (int y = y0; y < y1; ++y) {
                    const T* g = gp + static_cast<std::size_t>(y) * w + x0;
                    T* dst = xg + static_cast<std::size_t>(y + ky - 1) * w +
                             (x0 + kx - 1);
                    for (int i = 0; i < x1 - x0; ++i) dst[i] += wv * g[i];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor4<T> relu(Tape<T>& tape, const Tensor4<T>& x) {
  auto out = make_tensor<T>(x->n, x->c, x->h, x->w);
  for (std::size_t i = 0; i < x->size(); ++i)
    out->value[i] = x->value[i] > T(0) ? x->value[i] : T(0);
  if (x->requires_grad) {
    detail::ensure_grad(out);
    Tensor4<T> xc = x, oc = out;
    tape.record([xc, oc]() {
      for (std::size_t i = 0; i < xc->size(); ++i)
        if (xc->value[i] > T(0)) xc->grad[i] += oc->grad[i];
    });
  }
  return out;
}

// 2x2 max pooling, stride 2. Backward routes the gradient to the argmax;
// ties go to the first occurrence in row-major scan order of the block.
template <typename T>
Tensor4<T> maxpool2(Tape<T>& tape, const Tensor4<T>& x) {
  if (x->h % 2 != 0 || x->w % 2 != 0)
    throw ValidationError("maxpool2 requires even height and width, got " +
                          std::to_string(x->h) + "x" + std::to_string(x->w));
  const int n = x->n, c = x->c, h = x->h, w = x->w;
  const int oh = h / 2, ow = w / 2;
  auto out = make_tensor<T>(n, c, oh, ow);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out->size());

  std::size_t oi = 0;
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const T* xp = x->value.data() +
                    (static_cast<std::size_t>(in) * c + ic) *
                        static_cast<std::size_t>(h) * w;
      for (int y = 0; y < oh; ++y)
        for (int xw = 0; xw < ow; ++xw, ++oi) {
          const std::size_t base = static_cast<std::size_t>(2 * y) * w + 2 * xw;
          const std::size_t idx[4] = {base, base + 1, base + w, base + w + 1};
          std::size_t best = idx[0];
          T bv = xp[idx[0]];
          for (int t = 1; t < 4; ++t)
            if (xp[idx[t]] > bv) {
              bv = xp[idx[t]];
              best = idx[t];
            }
          out->value[oi] = bv;
          (*argmax)[oi] = static_cast<std::uint32_t>(
              best + (static_cast<std::size_t>(in) * c + ic) *
                         static_cast<std::size_t>(h) * w);
        }
    }

  if (x->requires_grad) {
    detail::ensure_grad(out);
    Tensor4<T> xc = x, oc = out;
    tape.record([xc, oc, argmax]() {
      for (std::size_t i = 0; i < oc->size(); ++i)
        xc->grad[(*argmax)[i]] += oc->grad[i];
    });
  }
  return out;
}

// Nearest-neighbor x2 upsampling. Backward sums each 2x2 block.
template <typename T>
Tensor4<T> upsample2(Tape<T>& tape, const Tensor4<T>& x) {
  const int n = x->n, c = x->c, h = x->h, w = x->w;
  auto out = make_tensor<T>(n, c, 2 * h, 2 * w);
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const std::size_t si = (static_cast<std::size_t>(in) * c + ic) *
                             static_cast<std::size_t>(h) * w;
      const std::size_t di = (static_cast<std::size_t>(in) * c + ic) *
                             static_cast<std::size_t>(4 * h) * w;
      for (int y = 0; y < 2 * h; ++y)
        for (int xw = 0; xw < 2 * w; ++xw)
          out->value[di + static_cast<std::size_t>(y) * 2 * w + xw] =
              x->value[si + static_cast<std::size_t>(y / 2) * w + xw / 2];
    }
  if (x->requires_grad) {
    detail::ensure_grad(out);
    Tensor4<T> xc = x, oc = out;
    tape.record([xc, oc, n, c, h, w]() {
      for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
          const std::size_t si = (static_cast<std::size_t>(in) * c + ic) *
                                 static_cast<std::size_t>(h) * w;
          const std::size_t di = (static_cast<std::size_t>(in) * c + ic) *
                                 static_cast<std::size_t>(4 * h) * w;
          for (int y = 0; y < 2 * h; ++y)
            for (int xw = 0; xw < 2 * w; ++xw)
              xc->grad[si + static_cast<std::size_t>(y / 2) * w + xw / 2] +=
                  oc->grad[di + static_cast<std::size_t>(y) * 2 * w + xw];
        }
    });
  }
  return out;
}

template <typename T>
Tensor4<T> concat_channels(Tape<T>& tape, const Tensor4<T>& a,
                           const Tensor4<T>& b) {
  if (a->n != b->n || a->h != b->h || a->w != b->w)
    throw ValidationError("concat_channels: n/h/w must match");
  const int n = a->n, h = a->h, w = a->w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto out = make_tensor<T>(n, a->c + b->c, h, w);
  for (int in = 0; in < n; ++in) {
    std::copy_n(a->value.data() + static_cast<std::size_t>(in) * a->c * plane,
                static_cast<std::size_t>(a->c) * plane,
                out->value.data() +
                    static_cast<std::size_t>(in) * (a->c + b->c) * plane);
    std::copy_n(b->value.data() + static_cast<std::size_t>(in) * b->c * plane,
                static_cast<std::size_t>(b->c) * plane,
                out->value.data() +
                    static_cast<std::size_t>(in) * (a->c + b->c) * plane +
                    static_cast<std::size_t>(a->c) * plane);
  }
  if (a->requires_grad || b->requires_grad) {
    detail::ensure_grad(out);
    Tensor4<T> ac = a, bc = b, oc = out;
    tape.record([ac, bc, oc, n, plane]() {
      const int ca = ac->c, cb = bc->c;
      for (int in = 0; in < n; ++in) {
        const T* g = oc->grad.data() +
                     static_cast<std::size_t>(in) * (ca + cb) * plane;
        if (ac->requires_grad) {
          T* ga = ac->grad.data() + static_cast<std::size_t>(in) * ca * plane;
          for (std::size_t i = 0; i < static_cast<std::size_t>(ca) * plane; ++i)
            ga[i] += g[i];
        }
        if (bc->requires_grad) {
          T* gb = bc->grad.data() + static_cast<std::size_t>(in) * cb * plane;
          for (std::size_t i = 0; i < static_cast<std::size_t>(cb) * plane; ++i)
            gb[i] += g[static_cast<std::size_t>(ca) * plane + i];
        }
      }
    });
  }
  return out;
}

// Channels [c0, c1) of x as a new tensor; inverse of concat_channels.
template <typename T>
Tensor4<T> slice_channels(Tape<T>& tape, const Tensor4<T>& x, int c0, int c1) {
  if (c0 < 0 || c1 <= c0 || c1 > x->c)
    throw ValidationError("slice_channels: bad channel range");
  const int n = x->n, h = x->h, w = x->w, cs = c1 - c0;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto out = make_tensor<T>(n, cs, h, w);
  for (int in = 0; in < n; ++in)
    std::copy_n(x->value.data() +
                    (static_cast<std::size_t>(in) * x->c + c0) * plane,
                static_cast<std::size_t>(cs) * plane,
                out->value.data() + static_cast<std::size_t>(in) * cs * plane);
  if (x->requires_grad) {
    detail::ensure_grad(out);
    Tensor4<T> xc = x, oc = out;
    tape.record([xc, oc, c0, cs, n, plane]() {
      for (int in = 0; in < n; ++in) {
        const T* g =
            oc->grad.data() + static_cast<std::size_t>(in) * cs * plane;
        T* gx = xc->grad.data() +
                (static_cast<std::size_t>(in) * xc->c + c0) * plane;
        for (std::size_t i = 0; i < static_cast<std::size_t>(cs) * plane; ++i)
          gx[i] += g[i];
      }
    });
  }
  return out;
}

// Per-pixel weighted softmax cross-entropy, mean over non-ignored pixels.
// labels holds one byte per pixel (n*h*w, row-major per sample); value 255
// contributes neither loss nor gradient. Returns a scalar (1,1,1,1) tensor.
template <typename T>
Tensor4<T> softmax_ce_loss(Tape<T>& tape, const Tensor4<T>& logits,
                           std::span<const std::uint8_t> labels,
                           const std::vector<T>& class_weights) {
  const int n = logits->n, k1 = logits->c, h = logits->h, w = logits->w;
  if (k1 < 2) throw ValidationError("softmax_ce_loss: need at least 2 classes");
  if (labels.size() != static_cast<std::size_t>(n) * h * w)
    throw ValidationError("softmax_ce_loss: label count mismatch");
  if (class_weights.size() != static_cast<std::size_t>(k1))
    throw ValidationError("softmax_ce_loss: weight count mismatch");

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto probs = std::make_shared<std::vector<T>>(logits->size());
  double total = 0.0;
  std::size_t valid = 0;

  for (int in = 0; in < n; ++in) {
    const T* zp = logits->value.data() +
                  static_cast<std::size_t>(in) * k1 * plane;
    T* pp = probs->data() + static_cast<std::size_t>(in) * k1 * plane;
    for (std::size_t px = 0; px < plane; ++px) {
      const std::uint8_t t = labels[static_cast<std::size_t>(in) * plane + px];
      T zmax = zp[px];
      for (int k = 1; k < k1; ++k) zmax = std::max(zmax, zp[k * plane + px]);
      T sum = T(0);
      for (int k = 0; k < k1; ++k) {
        const T e = std::exp(zp[k * plane + px] - zmax);
        pp[k * plane + px] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int k = 0; k < k1; ++k) pp[k * plane + px] *= inv;
      if (t == 255) continue;
      if (t >= k1)
        throw ValidationError("softmax_ce_loss: label " + std::to_string(t) +
                              " outside [0," + std::to_string(k1 - 1) + "]");
      const T logp = zp[t * plane + px] - zmax - std::log(sum);
      total -= static_cast<double>(class_weights[t]) * logp;
      ++valid;
    }
  }
  if (valid == 0)
    throw ValidationError("softmax_ce_loss: no valid pixels in batch");

  auto out = make_tensor<T>(1, 1, 1, 1);
  out->value[0] = static_cast<T>(total / static_cast<double>(valid));

  if (logits->requires_grad) {
    detail::ensure_grad(out);
    Tensor4<T> lc = logits, oc = out;
    std::vector<std::uint8_t> labels_copy(labels.begin(), labels.end());
    const std::vector<T> weights = class_weights;
    tape.record([lc, oc, probs, labels_copy = std::move(labels_copy), weights,
                 valid, n, k1, plane]() {
      const T scale = oc->grad[0] / static_cast<T>(valid);
      for (int in = 0; in < n; ++in) {
        const T* pp = probs->data() + static_cast<std::size_t>(in) * k1 * plane;
        T* gp = lc->grad.data() + static_cast<std::size_t>(in) * k1 * plane;
        for (std::size_t px = 0; px < plane; ++px) {
          const std::uint8_t t =
              labels_copy[static_cast<std::size_t>(in) * plane + px];
          if (t == 255) continue;
          const T ws = weights[t] * scale;
          for (int k = 0; k < k1; ++k) {
            const T ind = (k == static_cast<int>(t)) ? T(1) : T(0);
            gp[k * plane + px] += ws * (pp[k * plane + px] - ind);
          }
        }
      }
    });
  }
  return out;
}

// Standard Adam with bias correction. Parameter order must stay fixed
// across steps; slot buffers are sized on first use.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class AdamState {
 public:
  std::int64_t step_count() const { return t_; }

  void step(std::span<const Tensor4<T>> params, const AdamConfig& cfg) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i]->size(), T(0));
        v_[i].assign(params[i]->size(), T(0));
      }
    }
    if (m_.size() != params.size())
      throw ValidationError("adam: parameter count changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      TensorData<T>& p = *params[i];
      if (p.grad.size() != p.value.size())
        throw ValidationError("adam: parameter has no gradient buffer");
      if (m_[i].size() != p.value.size())
        throw ValidationError("adam: parameter shape changed between steps");
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = static_cast<double>(p.grad[j]);
        double m = static_cast<double>(m_[i][j]);
        double v = static_cast<double>(v_[i][j]);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        m_[i][j] = static_cast<T>(m);
        v_[i][j] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) -
                                    cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    }
  }

 private:
  std::int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

template <typename T>
void adam_step(std::span<const Tensor4<T>> params, AdamState<T>& state,
               const AdamConfig& cfg) {
  state.step(params, cfg);
}

template <typename T>
void zero_grads(std::span<const Tensor4<T>> params) {
  for (const auto& p : params) p->zero_grad();
}

}  // namespace cdtk
