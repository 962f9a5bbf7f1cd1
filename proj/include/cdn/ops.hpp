// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_OPS_HPP
#define CDN_OPS_HPP

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "cdn/core.hpp"

namespace cdn {

namespace detail {

template <class T>
bool tape_wants(std::initializer_list<bool> grads) {
  if (!TapeT<T>::active()) return false;
  for (bool g : grads)
    if (g) return true;
  return false;
}

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise algebra
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "add");
  TensorT<T> out(a.shape());
  const std::int64_t n = a.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (detail::tape_wants<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> ac = a, bc = b, oc = out;
    TapeT<T>::active()->record([ac, bc, oc]() mutable {
      const T* g = oc.grad();
      const std::int64_t n = oc.numel();
      if (T* ga = ac.grad())
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
      if (T* gb = bc.grad())
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "sub");
  TensorT<T> out(a.shape());
  const std::int64_t n = a.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (detail::tape_wants<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> ac = a, bc = b, oc = out;
    TapeT<T>::active()->record([ac, bc, oc]() mutable {
      const T* g = oc.grad();
      const std::int64_t n = oc.numel();
      if (T* ga = ac.grad())
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
      if (T* gb = bc.grad())
        for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  TensorT<T> out(a.shape());
  const std::int64_t n = a.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (detail::tape_wants<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> ac = a, bc = b, oc = out;
    TapeT<T>::active()->record([ac, bc, oc]() mutable {
      const T* g = oc.grad();
      const T* pa = ac.data();
      const T* pb = bc.data();
      const std::int64_t n = oc.numel();
      if (T* ga = ac.grad())
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      if (T* gb = bc.grad())
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "div");
  TensorT<T> out(a.shape());
  const std::int64_t n = a.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
  if (detail::tape_wants<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> ac = a, bc = b, oc = out;
    TapeT<T>::active()->record([ac, bc, oc]() mutable {
      const T* g = oc.grad();
      const T* pb = bc.data();
      const T* po = oc.data();
      const std::int64_t n = oc.numel();
      if (T* ga = ac.grad())
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb[i];
      if (T* gb = bc.grad())
        for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i] * po[i] / pb[i];
    });
  }
  return out;
}

// out = alpha * x + beta
template <class T>
TensorT<T> scale_add(const TensorT<T>& x, T alpha, T beta = T(0)) {
  TensorT<T> out(x.shape());
  const std::int64_t n = x.numel();
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = alpha * px[i] + beta;
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc, alpha]() mutable {
      const T* g = oc.grad();
      T* gx = xc.grad();
      const std::int64_t n = oc.numel();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += alpha * g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions (accumulated in double for stable, order-fixed results)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> sum(const TensorT<T>& x) {
  double acc = 0.0;
  const T* px = x.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc]() mutable {
      const T g = oc.grad()[0];
      T* gx = xc.grad();
      const std::int64_t n = xc.numel();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& x) {
  const std::int64_t n = x.numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  const T* px = x.data();
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc]() mutable {
      const std::int64_t n = xc.numel();
      const T g = oc.grad()[0] / static_cast<T>(n);
      T* gx = xc.grad();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution, stride 1. Kernels are square with odd size; padding is the
// caller's choice (3x3 blocks use pad 1, 1x1 heads use pad 0).
// ---------------------------------------------------------------------------

namespace detail {

// Copies (n,c,h,w) planes into zero-padded (h+2p, w+2p) planes.
template <class T>
void pack_padded(const T* src, T* dst, std::int64_t n, std::int64_t c, std::int64_t h,
                 std::int64_t w, std::int64_t p) {
  const std::int64_t ph = h + 2 * p, pw = w + 2 * p;
  parallel_for(n * c, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t pc = begin; pc < end; ++pc) {
      const T* s = src + pc * h * w;
      T* d = dst + pc * ph * pw;
      if (p > 0) {
        std::memset(d, 0, sizeof(T) * static_cast<std::size_t>(p * pw));
        std::memset(d + (ph - p) * pw, 0, sizeof(T) * static_cast<std::size_t>(p * pw));
      }
      for (std::int64_t r = 0; r < h; ++r) {
        T* drow = d + (r + p) * pw;
        for (std::int64_t j = 0; j < p; ++j) drow[j] = T(0);
        std::memcpy(drow + p, s + r * w, sizeof(T) * static_cast<std::size_t>(w));
        for (std::int64_t j = 0; j < p; ++j) drow[pw - 1 - j] = T(0);
      }
    }
  });
}

// out(oc,oh,ow) = bias(oc) + sum_{ic,kh,kw} wt(oc,ic,kh,kw) * padded(ic,oh+kh,ow+kw)
// Row-accumulator form: the output row stays hot while all taps stream over it.
template <class T>
void conv_forward_packed(const T* padded, const T* wt, const T* bias, T* out, std::int64_t n,
                         std::int64_t ci, std::int64_t co, std::int64_t oh_count,
                         std::int64_t ow_count, std::int64_t pw, std::int64_t k) {
  const std::int64_t pplane = (oh_count + k - 1) * pw;
  parallel_for(n * co, [&](std::int64_t begin, std::int64_t end) {
    std::vector<T> acc(static_cast<std::size_t>(ow_count));
    for (std::int64_t idx = begin; idx < end; ++idx) {
      const std::int64_t img = idx / co, oc = idx % co;
      const T* base = padded + img * ci * pplane;
      T* op = out + idx * oh_count * ow_count;
      const T* wbase = wt + oc * ci * k * k;
      for (std::int64_t oh = 0; oh < oh_count; ++oh) {
        const T b = bias ? bias[oc] : T(0);
        for (std::int64_t i = 0; i < ow_count; ++i) acc[i] = b;
        for (std::int64_t ic = 0; ic < ci; ++ic) {
          const T* prow0 = base + ic * pplane + oh * pw;
          const T* wp = wbase + ic * k * k;
          for (std::int64_t kh = 0; kh < k; ++kh) {
            const T* r = prow0 + kh * pw;
            for (std::int64_t kw = 0; kw < k; ++kw) {
              const T wv = wp[kh * k + kw];
              const T* rr = r + kw;
              for (std::int64_t ow = 0; ow < ow_count; ++ow) acc[ow] += wv * rr[ow];
            }
          }
        }
        std::memcpy(op + oh * ow_count, acc.data(), sizeof(T) * static_cast<std::size_t>(ow_count));
      }
    }
  });
}

}  // namespace detail

// weight (co,ci,k,k), bias (1,co,1,1) or undefined for none.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias,
                  std::int64_t pad) {
  const Shape xs = x.shape(), ws = weight.shape();
  if (ws.h != ws.w || ws.h % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
  const std::int64_t k = ws.h;
  if (xs.c != ws.c)
    throw ShapeError("conv2d: input channels " + std::to_string(xs.c) + " != weight channels " +
                     std::to_string(ws.c));
  if (bias.defined() && !(bias.shape() == Shape(1, ws.n, 1, 1)))
    throw ShapeError("conv2d: bias shape must be (1,co,1,1)");
  const std::int64_t oh = xs.h + 2 * pad - k + 1, ow = xs.w + 2 * pad - k + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: output would be empty");

  TensorT<T> out(Shape(xs.n, ws.n, oh, ow));
  {
    const std::int64_t ph = xs.h + 2 * pad, pw = xs.w + 2 * pad;
    std::vector<T> padded(static_cast<std::size_t>(xs.n * xs.c * ph * pw));
    detail::pack_padded(x.data(), padded.data(), xs.n, xs.c, xs.h, xs.w, pad);
    detail::conv_forward_packed(padded.data(), weight.data(), bias.defined() ? bias.data() : nullptr,
                                out.data(), xs.n, xs.c, ws.n, oh, ow, pw, k);
  }

  const bool bias_grad = bias.defined() && bias.requires_grad();
  if (detail::tape_wants<T>({x.requires_grad(), weight.requires_grad(), bias_grad})) {
    out.set_requires_grad();
    TensorT<T> xc = x, wc = weight, bc = bias, oc = out;
    TapeT<T>::active()->record([xc, wc, bc, oc, pad, k]() mutable {
      const Shape xs = xc.shape(), ws = wc.shape(), os = oc.shape();
      const T* g = oc.grad();

      if (wc.requires_grad() || (bc.defined() && bc.requires_grad())) {
        const std::int64_t ph = xs.h + 2 * pad, pw = xs.w + 2 * pad;
        std::vector<T> padded(static_cast<std::size_t>(xs.n * xs.c * ph * pw));
        detail::pack_padded(xc.data(), padded.data(), xs.n, xs.c, xs.h, xs.w, pad);
        T* gw = wc.requires_grad() ? wc.grad() : nullptr;
        T* gb = (bc.defined() && bc.requires_grad()) ? bc.grad() : nullptr;
        parallel_for(ws.n, [&](std::int64_t begin, std::int64_t end) {
          for (std::int64_t ocn = begin; ocn < end; ++ocn) {
            double bacc = 0.0;
            for (std::int64_t img = 0; img < xs.n; ++img) {
              const T* gplane = g + (img * ws.n + ocn) * os.h * os.w;
              if (gb) {
                for (std::int64_t i = 0; i < os.h * os.w; ++i)
                  bacc += static_cast<double>(gplane[i]);
              }
              if (!gw) continue;
              for (std::int64_t ic = 0; ic < xs.c; ++ic) {
                const T* pplane = padded.data() + (img * xs.c + ic) * ph * pw;
                T* gwp = gw + (ocn * xs.c + ic) * k * k;
                for (std::int64_t kh = 0; kh < k; ++kh) {
                  for (std::int64_t kw = 0; kw < k; ++kw) {
                    double acc = 0.0;
                    for (std::int64_t r = 0; r < os.h; ++r) {
                      const T* grow = gplane + r * os.w;
                      const T* prow = pplane + (r + kh) * pw + kw;
                      for (std::int64_t cix = 0; cix < os.w; ++cix)
                        acc += static_cast<double>(grow[cix]) * static_cast<double>(prow[cix]);
                    }
                    gwp[kh * k + kw] += static_cast<T>(acc);
                  }
                }
              }
            }
            if (gb) gb[ocn] += static_cast<T>(bacc);
          }
        });
      }

      if (xc.requires_grad()) {
        // dx = conv(dout padded by k-1-pad, weight flipped and transposed)
        const std::int64_t p2 = k - 1 - pad;
        const std::int64_t ph = os.h + 2 * p2, pw = os.w + 2 * p2;
        std::vector<T> gpad(static_cast<std::size_t>(xs.n * ws.n * ph * pw));
        detail::pack_padded(g, gpad.data(), xs.n, ws.n, os.h, os.w, p2);
        std::vector<T> wflip(static_cast<std::size_t>(ws.numel()));
        const T* w = wc.data();
        for (std::int64_t ocn = 0; ocn < ws.n; ++ocn)
          for (std::int64_t ic = 0; ic < ws.c; ++ic)
            for (std::int64_t kh = 0; kh < k; ++kh)
              for (std::int64_t kw = 0; kw < k; ++kw)
                wflip[((ic * ws.n + ocn) * k + (k - 1 - kh)) * k + (k - 1 - kw)] =
                    w[((ocn * ws.c + ic) * k + kh) * k + kw];
        std::vector<T> gx(static_cast<std::size_t>(xs.numel()));
        detail::conv_forward_packed(gpad.data(), wflip.data(), static_cast<const T*>(nullptr),
                                    gx.data(), xs.n, ws.n, xs.c, xs.h, xs.w, pw, k);
        T* dst = xc.grad();
        for (std::int64_t i = 0; i < xs.numel(); ++i) dst[i] += gx[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Running statistics live in tensors so checkpoints can frame them like any
// other named buffer. Initialized to mean 0, variance 1.
template <class T>
struct BnStatsT {
  TensorT<T> running_mean;
  TensorT<T> running_var;

  explicit BnStatsT(std::int64_t channels = 1)
      : running_mean(Shape(1, channels, 1, 1), T(0)),
        running_var(Shape(1, channels, 1, 1), T(1)) {}

  std::int64_t channels() const { return running_mean.shape().c; }
};

using BnStats = BnStatsT<float>;

template <class T>
TensorT<T> batch_norm2d(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                        BnStatsT<T>& stats, bool training, T eps = T(1e-5),
                        T momentum = T(0.1)) {
  const Shape xs = x.shape();
  const std::int64_t c = xs.c;
  if (!(gamma.shape() == Shape(1, c, 1, 1)) || !(beta.shape() == Shape(1, c, 1, 1)))
    throw ShapeError("batch_norm2d: gamma/beta must be (1,c,1,1)");
  if (stats.channels() != c)
    throw ConfigError("batch_norm2d: running stats sized for wrong channel count");
  if (eps <= T(0)) throw ConfigError("batch_norm2d: eps must be positive");
  const std::int64_t m = xs.n * xs.h * xs.w;  // elements per channel
  if (training && m < 2) throw ShapeError("batch_norm2d: train mode needs >= 2 values per channel");

  std::vector<T> mean_c(c), invstd_c(c);
  if (training) {
    parallel_for(c, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t ch = begin; ch < end; ++ch) {
        double s = 0.0;
        for (std::int64_t img = 0; img < xs.n; ++img) {
          const T* p = x.data() + (img * c + ch) * xs.h * xs.w;
          for (std::int64_t i = 0; i < xs.h * xs.w; ++i) s += static_cast<double>(p[i]);
        }
        const double mu = s / static_cast<double>(m);
        double v = 0.0;
        for (std::int64_t img = 0; img < xs.n; ++img) {
          const T* p = x.data() + (img * c + ch) * xs.h * xs.w;
          for (std::int64_t i = 0; i < xs.h * xs.w; ++i) {
            const double d = static_cast<double>(p[i]) - mu;
            v += d * d;
          }
        }
        const double var = v / static_cast<double>(m);
        mean_c[ch] = static_cast<T>(mu);
        invstd_c[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1)
                                      : var;
        T* rm = stats.running_mean.data();
        T* rv = stats.running_var.data();
        rm[ch] = static_cast<T>((1.0 - static_cast<double>(momentum)) * static_cast<double>(rm[ch]) +
                                static_cast<double>(momentum) * mu);
        rv[ch] = static_cast<T>((1.0 - static_cast<double>(momentum)) * static_cast<double>(rv[ch]) +
                                static_cast<double>(momentum) * unbiased);
      }
    });
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean_c[ch] = stats.running_mean.data()[ch];
      invstd_c[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var.data()[ch]) +
                                                    static_cast<double>(eps)));
    }
  }

  TensorT<T> out(xs);
  parallel_for(xs.n * c, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t pc = begin; pc < end; ++pc) {
      const std::int64_t ch = pc % c;
      const T mu = mean_c[ch], is = invstd_c[ch];
      const T gm = gamma.data()[ch], bt = beta.data()[ch];
      const T* p = x.data() + pc * xs.h * xs.w;
      T* o = out.data() + pc * xs.h * xs.w;
      for (std::int64_t i = 0; i < xs.h * xs.w; ++i) o[i] = gm * ((p[i] - mu) * is) + bt;
    }
  });

  if (detail::tape_wants<T>({x.requires_grad(), gamma.requires_grad(), beta.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, gc = gamma, bc = beta, oc = out;
    TapeT<T>::active()->record([xc, gc, bc, oc, mean_c, invstd_c, training]() mutable {
      const Shape xs = xc.shape();
      const std::int64_t c = xs.c, m = xs.n * xs.h * xs.w, plane = xs.h * xs.w;
      const T* g = oc.grad();
      const T* px = xc.data();
      T* ggamma = gc.requires_grad() ? gc.grad() : nullptr;
      T* gbeta = bc.requires_grad() ? bc.grad() : nullptr;
      T* gx = xc.requires_grad() ? xc.grad() : nullptr;
      parallel_for(c, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t ch = begin; ch < end; ++ch) {
          const T mu = mean_c[ch], is = invstd_c[ch], gm = gc.data()[ch];
          double sum_g = 0.0, sum_gxhat = 0.0;
          for (std::int64_t img = 0; img < xs.n; ++img) {
            const T* gp = g + (img * c + ch) * plane;
            const T* xp = px + (img * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double xhat = (static_cast<double>(xp[i]) - mu) * is;
              sum_g += static_cast<double>(gp[i]);
              sum_gxhat += static_cast<double>(gp[i]) * xhat;
            }
          }
          if (ggamma) ggamma[ch] += static_cast<T>(sum_gxhat);
          if (gbeta) gbeta[ch] += static_cast<T>(sum_g);
          if (!gx) continue;
          if (training) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::int64_t img = 0; img < xs.n; ++img) {
              const T* gp = g + (img * c + ch) * plane;
              const T* xp = px + (img * c + ch) * plane;
              T* gxp = gx + (img * c + ch) * plane;
              for (std::int64_t i = 0; i < plane; ++i) {
                const double xhat = (static_cast<double>(xp[i]) - mu) * is;
                const double dxhat = static_cast<double>(gp[i]) * gm;
                gxp[i] += static_cast<T>(
                    is * (dxhat - inv_m * (sum_g * gm + xhat * sum_gxhat * gm)));
              }
            }
          } else {
            // running stats are constants in eval mode
            for (std::int64_t img = 0; img < xs.n; ++img) {
              const T* gp = g + (img * c + ch) * plane;
              T* gxp = gx + (img * c + ch) * plane;
              for (std::int64_t i = 0; i < plane; ++i)
                gxp[i] += static_cast<T>(static_cast<double>(gp[i]) * gm * is);
            }
          }
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const std::int64_t n = x.numel();
  const T* p = x.data();
  T* o = out.data();
  for (std::int64_t i = 0; i < n; ++i) o[i] = p[i] > T(0) ? p[i] : T(0);
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc]() mutable {
      const T* g = oc.grad();
      const T* p = xc.data();
      T* gx = xc.grad();
      const std::int64_t n = xc.numel();
      for (std::int64_t i = 0; i < n; ++i)
        if (p[i] > T(0)) gx[i] += g[i];
    });
  }
  return out;
}

// slope is per-channel (1,c,1,1). The kink at 0 propagates zero gradient.
template <class T>
TensorT<T> prelu(const TensorT<T>& x, const TensorT<T>& slope) {
  const Shape xs = x.shape();
  if (!(slope.shape() == Shape(1, xs.c, 1, 1)))
    throw ShapeError("prelu: slope must be (1,c,1,1)");
  TensorT<T> out(xs);
  const std::int64_t plane = xs.h * xs.w;
  parallel_for(xs.n * xs.c, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t pc = begin; pc < end; ++pc) {
      const T a = slope.data()[pc % xs.c];
      const T* p = x.data() + pc * plane;
      T* o = out.data() + pc * plane;
      for (std::int64_t i = 0; i < plane; ++i) o[i] = p[i] >= T(0) ? p[i] : a * p[i];
    }
  });
  if (detail::tape_wants<T>({x.requires_grad(), slope.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, sc = slope, oc = out;
    TapeT<T>::active()->record([xc, sc, oc]() mutable {
      const Shape xs = xc.shape();
      const std::int64_t plane = xs.h * xs.w;
      const T* g = oc.grad();
      const T* p = xc.data();
      T* gx = xc.requires_grad() ? xc.grad() : nullptr;
      T* ga = sc.requires_grad() ? sc.grad() : nullptr;
      for (std::int64_t pc = 0; pc < xs.n * xs.c; ++pc) {
        const std::int64_t ch = pc % xs.c;
        const T a = sc.data()[ch];
        const T* gp = g + pc * plane;
        const T* xp = p + pc * plane;
        double aacc = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
          if (xp[i] > T(0)) {
            if (gx) gx[pc * plane + i] += gp[i];
          } else if (xp[i] < T(0)) {
            if (gx) gx[pc * plane + i] += a * gp[i];
            aacc += static_cast<double>(gp[i]) * static_cast<double>(xp[i]);
          }
        }
        if (ga) ga[ch] += static_cast<T>(aacc);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> pixel_shuffle(const TensorT<T>& x, std::int64_t r) {
  const Shape xs = x.shape();
  if (r < 1) throw ShapeError("pixel_shuffle: r must be >= 1");
  if (xs.c % (r * r) != 0)
    throw ShapeError("pixel_shuffle: channels " + std::to_string(xs.c) +
                     " not divisible by r^2 = " + std::to_string(r * r));
  const std::int64_t co = xs.c / (r * r);
  TensorT<T> out(Shape(xs.n, co, xs.h * r, xs.w * r));
  const T* p = x.data();
  T* o = out.data();
  for (std::int64_t img = 0; img < xs.n; ++img)
    for (std::int64_t kc = 0; kc < co; ++kc)
      for (std::int64_t di = 0; di < r; ++di)
        for (std::int64_t dj = 0; dj < r; ++dj) {
          const T* src = p + ((img * xs.c + kc * r * r + di * r + dj) * xs.h) * xs.w;
          for (std::int64_t i = 0; i < xs.h; ++i) {
            T* drow = o + ((img * co + kc) * xs.h * r + i * r + di) * xs.w * r + dj;
            const T* srow = src + i * xs.w;
            for (std::int64_t j = 0; j < xs.w; ++j) drow[j * r] = srow[j];
          }
        }
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc, r]() mutable {
      const Shape xs = xc.shape();
      const std::int64_t co = xs.c / (r * r);
      const T* g = oc.grad();
      T* gx = xc.grad();
      for (std::int64_t img = 0; img < xs.n; ++img)
        for (std::int64_t kc = 0; kc < co; ++kc)
          for (std::int64_t di = 0; di < r; ++di)
            for (std::int64_t dj = 0; dj < r; ++dj) {
              T* dst = gx + ((img * xs.c + kc * r * r + di * r + dj) * xs.h) * xs.w;
              for (std::int64_t i = 0; i < xs.h; ++i) {
                const T* grow = g + ((img * co + kc) * xs.h * r + i * r + di) * xs.w * r + dj;
                T* drow = dst + i * xs.w;
                for (std::int64_t j = 0; j < xs.w; ++j) drow[j] += grow[j * r];
              }
            }
    });
  }
  return out;
}

// Inverse permutation of pixel_shuffle.
template <class T>
TensorT<T> pixel_unshuffle(const TensorT<T>& x, std::int64_t r) {
  const Shape xs = x.shape();
  if (r < 1) throw ShapeError("pixel_unshuffle: r must be >= 1");
  if (xs.h % r != 0 || xs.w % r != 0)
    throw ShapeError("pixel_unshuffle: spatial dims not divisible by r");
  const std::int64_t ho = xs.h / r, wo = xs.w / r;
  TensorT<T> out(Shape(xs.n, xs.c * r * r, ho, wo));
  const T* p = x.data();
  T* o = out.data();
  for (std::int64_t img = 0; img < xs.n; ++img)
    for (std::int64_t kc = 0; kc < xs.c; ++kc)
      for (std::int64_t di = 0; di < r; ++di)
        for (std::int64_t dj = 0; dj < r; ++dj) {
          T* dst = o + ((img * xs.c + kc) * r * r + di * r + dj) * ho * wo;
          for (std::int64_t i = 0; i < ho; ++i) {
            const T* srow = p + ((img * xs.c + kc) * xs.h + i * r + di) * xs.w + dj;
            for (std::int64_t j = 0; j < wo; ++j) dst[i * wo + j] = srow[j * r];
          }
        }
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc, r]() mutable {
      const Shape xs = xc.shape();
      const std::int64_t ho = xs.h / r, wo = xs.w / r;
      const T* g = oc.grad();
      T* gx = xc.grad();
      for (std::int64_t img = 0; img < xs.n; ++img)
        for (std::int64_t kc = 0; kc < xs.c; ++kc)
          for (std::int64_t di = 0; di < r; ++di)
            for (std::int64_t dj = 0; dj < r; ++dj) {
              const T* grow = g + ((img * xs.c + kc) * r * r + di * r + dj) * ho * wo;
              for (std::int64_t i = 0; i < ho; ++i) {
                T* drow = gx + ((img * xs.c + kc) * xs.h + i * r + di) * xs.w + dj;
                for (std::int64_t j = 0; j < wo; ++j) drow[j * r] += grow[i * wo + j];
              }
            }
    });
  }
  return out;
}

template <class T>
TensorT<T> avg_pool2(const TensorT<T>& x) {
  const Shape xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    throw ShapeError("avg_pool2: spatial dims must be even, got " + xs.str());
  const std::int64_t ho = xs.h / 2, wo = xs.w / 2;
  TensorT<T> out(Shape(xs.n, xs.c, ho, wo));
  parallel_for(xs.n * xs.c, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t pc = begin; pc < end; ++pc) {
      const T* p = x.data() + pc * xs.h * xs.w;
      T* o = out.data() + pc * ho * wo;
      for (std::int64_t i = 0; i < ho; ++i) {
        const T* r0 = p + 2 * i * xs.w;
        const T* r1 = r0 + xs.w;
        for (std::int64_t j = 0; j < wo; ++j)
          o[i * wo + j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * T(0.25);
      }
    }
  });
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc]() mutable {
      const Shape xs = xc.shape();
      const std::int64_t ho = xs.h / 2, wo = xs.w / 2;
      const T* g = oc.grad();
      T* gx = xc.grad();
      for (std::int64_t pc = 0; pc < xs.n * xs.c; ++pc) {
        const T* gp = g + pc * ho * wo;
        T* gxp = gx + pc * xs.h * xs.w;
        for (std::int64_t i = 0; i < ho; ++i)
          for (std::int64_t j = 0; j < wo; ++j) {
            const T v = gp[i * wo + j] * T(0.25);
            gxp[(2 * i) * xs.w + 2 * j] += v;
            gxp[(2 * i) * xs.w + 2 * j + 1] += v;
            gxp[(2 * i + 1) * xs.w + 2 * j] += v;
            gxp[(2 * i + 1) * xs.w + 2 * j + 1] += v;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax over all of (c,h,w), independently per batch sample. With n=1 this
// is a single flat distribution over every element.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> softmax_flat(const TensorT<T>& x) {
  const Shape xs = x.shape();
  const std::int64_t k = xs.c * xs.h * xs.w;
  if (k == 0) throw ShapeError("softmax_flat: empty tensor");
  TensorT<T> out(xs);
  for (std::int64_t img = 0; img < xs.n; ++img) {
    const T* p = x.data() + img * k;
    T* o = out.data() + img * k;
    T mx = p[0];
    for (std::int64_t i = 1; i < k; ++i) mx = std::max(mx, p[i]);
    double z = 0.0;
    for (std::int64_t i = 0; i < k; ++i) {
      const double e = std::exp(static_cast<double>(p[i] - mx));
      o[i] = static_cast<T>(e);
      z += e;
    }
    const double inv = 1.0 / z;
    for (std::int64_t i = 0; i < k; ++i) o[i] = static_cast<T>(static_cast<double>(o[i]) * inv);
  }
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc]() mutable {
      const Shape xs = xc.shape();
      const std::int64_t k = xs.c * xs.h * xs.w;
      for (std::int64_t img = 0; img < xs.n; ++img) {
        const T* g = oc.grad() + img * k;
        const T* y = oc.data() + img * k;
        T* gx = xc.grad() + img * k;
        double dot = 0.0;
        for (std::int64_t i = 0; i < k; ++i)
          dot += static_cast<double>(g[i]) * static_cast<double>(y[i]);
        for (std::int64_t i = 0; i < k; ++i)
          gx[i] += static_cast<T>(static_cast<double>(y[i]) *
                                  (static_cast<double>(g[i]) - dot));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structure: channel concat, reflective pad, crop
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw ShapeError("concat_channels: non-channel dims differ: " + as.str() + " vs " + bs.str());
  TensorT<T> out(Shape(as.n, as.c + bs.c, as.h, as.w));
  const std::int64_t plane = as.h * as.w;
  for (std::int64_t img = 0; img < as.n; ++img) {
    std::memcpy(out.data() + (img * (as.c + bs.c)) * plane, a.data() + img * as.c * plane,
                sizeof(T) * static_cast<std::size_t>(as.c * plane));
    std::memcpy(out.data() + (img * (as.c + bs.c) + as.c) * plane, b.data() + img * bs.c * plane,
                sizeof(T) * static_cast<std::size_t>(bs.c * plane));
  }
  if (detail::tape_wants<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> ac = a, bc = b, oc = out;
    TapeT<T>::active()->record([ac, bc, oc]() mutable {
      const Shape as = ac.shape(), bs = bc.shape();
      const std::int64_t plane = as.h * as.w, c = as.c + bs.c;
      const T* g = oc.grad();
      for (std::int64_t img = 0; img < as.n; ++img) {
        if (T* ga = ac.grad()) {
          const T* gp = g + img * c * plane;
          T* dst = ga + img * as.c * plane;
          for (std::int64_t i = 0; i < as.c * plane; ++i) dst[i] += gp[i];
        }
        if (T* gb = bc.grad()) {
          const T* gp = g + (img * c + as.c) * plane;
          T* dst = gb + img * bs.c * plane;
          for (std::int64_t i = 0; i < bs.c * plane; ++i) dst[i] += gp[i];
        }
      }
    });
  }
  return out;
}

namespace detail {
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}
}  // namespace detail

// Reflective padding without edge duplication; each pad must be < dim.
template <class T>
TensorT<T> reflect_pad(const TensorT<T>& x, std::int64_t top, std::int64_t bottom,
                       std::int64_t left, std::int64_t right) {
  const Shape xs = x.shape();
  if (top >= xs.h || bottom >= xs.h || left >= xs.w || right >= xs.w)
    throw ShapeError("reflect_pad: pad must be smaller than the padded dimension");
  TensorT<T> out(Shape(xs.n, xs.c, xs.h + top + bottom, xs.w + left + right));
  const Shape os = out.shape();
  for (std::int64_t pc = 0; pc < xs.n * xs.c; ++pc) {
    const T* p = x.data() + pc * xs.h * xs.w;
    T* o = out.data() + pc * os.h * os.w;
    for (std::int64_t i = 0; i < os.h; ++i) {
      const std::int64_t si = detail::reflect_index(i - top, xs.h);
      for (std::int64_t j = 0; j < os.w; ++j)
        o[i * os.w + j] = p[si * xs.w + detail::reflect_index(j - left, xs.w)];
    }
  }
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc, top, left]() mutable {
      const Shape xs = xc.shape(), os = oc.shape();
      const T* g = oc.grad();
      T* gx = xc.grad();
      for (std::int64_t pc = 0; pc < xs.n * xs.c; ++pc) {
        const T* gp = g + pc * os.h * os.w;
        T* gxp = gx + pc * xs.h * xs.w;
        for (std::int64_t i = 0; i < os.h; ++i) {
          const std::int64_t si = detail::reflect_index(i - top, xs.h);
          for (std::int64_t j = 0; j < os.w; ++j)
            gxp[si * xs.w + detail::reflect_index(j - left, xs.w)] += gp[i * os.w + j];
        }
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> crop(const TensorT<T>& x, std::int64_t top, std::int64_t left, std::int64_t height,
                std::int64_t width) {
  const Shape xs = x.shape();
  if (top < 0 || left < 0 || top + height > xs.h || left + width > xs.w)
    throw ShapeError("crop: window out of range");
  TensorT<T> out(Shape(xs.n, xs.c, height, width));
  for (std::int64_t pc = 0; pc < xs.n * xs.c; ++pc) {
    const T* p = x.data() + pc * xs.h * xs.w;
    T* o = out.data() + pc * height * width;
    for (std::int64_t i = 0; i < height; ++i)
      std::memcpy(o + i * width, p + (top + i) * xs.w + left,
                  sizeof(T) * static_cast<std::size_t>(width));
  }
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc, top, left]() mutable {
      const Shape xs = xc.shape(), os = oc.shape();
      const T* g = oc.grad();
      T* gx = xc.grad();
      for (std::int64_t pc = 0; pc < xs.n * xs.c; ++pc) {
        const T* gp = g + pc * os.h * os.w;
        T* gxp = gx + pc * xs.h * xs.w;
        for (std::int64_t i = 0; i < os.h; ++i)
          for (std::int64_t j = 0; j < os.w; ++j) gxp[(top + i) * xs.w + left + j] += gp[i * os.w + j];
      }
    });
  }
  return out;
}

// Channel mean down to a single channel; fixed (non-learned) reduction.
template <class T>
TensorT<T> channel_mean(const TensorT<T>& x) {
  const Shape xs = x.shape();
  TensorT<T> out(Shape(xs.n, 1, xs.h, xs.w));
  const std::int64_t plane = xs.h * xs.w;
  const T inv = T(1) / static_cast<T>(xs.c);
  for (std::int64_t img = 0; img < xs.n; ++img) {
    T* o = out.data() + img * plane;
    std::memset(o, 0, sizeof(T) * static_cast<std::size_t>(plane));
    for (std::int64_t ch = 0; ch < xs.c; ++ch) {
      const T* p = x.data() + (img * xs.c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) o[i] += p[i];
    }
    for (std::int64_t i = 0; i < plane; ++i) o[i] *= inv;
  }
  if (detail::tape_wants<T>({x.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> xc = x, oc = out;
    TapeT<T>::active()->record([xc, oc]() mutable {
      const Shape xs = xc.shape();
      const std::int64_t plane = xs.h * xs.w;
      const T inv = T(1) / static_cast<T>(xs.c);
      const T* g = oc.grad();
      T* gx = xc.grad();
      for (std::int64_t img = 0; img < xs.n; ++img) {
        const T* gp = g + img * plane;
        for (std::int64_t ch = 0; ch < xs.c; ++ch) {
          T* dst = gx + (img * xs.c + ch) * plane;
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += gp[i] * inv;
        }
      }
    });
  }
  return out;
}

}  // namespace cdn

#endif  // CDN_OPS_HPP
