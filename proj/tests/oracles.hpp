// SPDX-License-Identifier: Apache-2.0
// Test-side reference implementations, kept independent of the library's
// kernel code paths on purpose.
#ifndef CDN_TESTS_ORACLES_HPP
#define CDN_TESTS_ORACLES_HPP

#include <cmath>
#include <vector>

#include "cdn/core.hpp"

namespace oracles {

// Quadruple-loop convolution, double accumulation, zero padding, stride 1.
template <class T>
cdn::TensorT<T> conv2d_naive(const cdn::TensorT<T>& x, const cdn::TensorT<T>& w,
                             const cdn::TensorT<T>& b, std::int64_t pad) {
  const cdn::Shape xs = x.shape(), ws = w.shape();
  const std::int64_t k = ws.h;
  const std::int64_t oh = xs.h + 2 * pad - k + 1, ow = xs.w + 2 * pad - k + 1;
  cdn::TensorT<T> out(cdn::Shape(xs.n, ws.n, oh, ow));
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t oc = 0; oc < ws.n; ++oc)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = b.defined() ? static_cast<double>(b.data()[oc]) : 0.0;
          for (std::int64_t ic = 0; ic < xs.c; ++ic)
            for (std::int64_t kh = 0; kh < k; ++kh)
              for (std::int64_t kw = 0; kw < k; ++kw) {
                const std::int64_t ii = i + kh - pad, jj = j + kw - pad;
                if (ii < 0 || ii >= xs.h || jj < 0 || jj >= xs.w) continue;
                acc += static_cast<double>(x.at(n, ic, ii, jj)) *
                       static_cast<double>(w.at(oc, ic, kh, kw));
              }
          out.at(n, oc, i, j) = static_cast<T>(acc);
        }
  return out;
}

// Plain scalar Adam with classic L2 decay, same storage precision as the
// implementation under test.
struct ScalarAdam {
  float m = 0.f, v = 0.f;
  int t = 0;

  float step(float p, float g, float lr, float wd, float b1 = 0.9f, float b2 = 0.999f,
             float eps = 1e-8f) {
    ++t;
    const float c1 = static_cast<float>(1.0 / (1.0 - std::pow((double)b1, (double)t)));
    const float c2 = static_cast<float>(1.0 / (1.0 - std::pow((double)b2, (double)t)));
    float grad = g + wd * p;
    m = b1 * m + (1.f - b1) * grad;
    v = b2 * v + (1.f - b2) * grad * grad;
    return p - lr * (m * c1) / (std::sqrt(v * c2) + eps);
  }
};

// Closed-form KL of two discrete distributions, in nats.
inline double kl_closed_form(const std::vector<double>& p, const std::vector<double>& q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
  return acc;
}

// Global single-window SSIM recomputed from the formula.
inline double ssim_closed_form(const std::vector<double>& a, const std::vector<double>& b,
                               double c1 = 1e-4, double c2 = 9e-4) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
    sab += a[i] * b[i];
  }
  const double mu_a = sa / n, mu_b = sb / n;
  const double va = saa / n - mu_a * mu_a, vb = sbb / n - mu_b * mu_b;
  const double cov = sab / n - mu_a * mu_b;
  return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
}

// Deterministic test tensors.
template <class T>
cdn::TensorT<T> random_tensor(const cdn::Shape& s, std::uint64_t seed, double lo = -1.0,
                              double hi = 1.0) {
  cdn::GaussianSampler rng(seed);
  cdn::TensorT<T> t(s);
  T* d = t.data();
  for (std::int64_t i = 0; i < s.numel(); ++i)
    d[i] = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

template <class T>
cdn::TensorT<T> gaussian_tensor(const cdn::Shape& s, std::uint64_t seed, double stddev = 1.0) {
  cdn::GaussianSampler rng(seed);
  cdn::TensorT<T> t(s);
  T* d = t.data();
  for (std::int64_t i = 0; i < s.numel(); ++i) d[i] = static_cast<T>(rng.gaussian() * stddev);
  return t;
}

}  // namespace oracles

#endif  // CDN_TESTS_ORACLES_HPP
