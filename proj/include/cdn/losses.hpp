// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_LOSSES_HPP
#define CDN_LOSSES_HPP

#include <cmath>
#include <vector>

#include "cdn/core.hpp"
#include "cdn/ops.hpp"

namespace cdn {

// Stabilizers for the similarity ratio; the standard (0.01 R)^2 / (0.03 R)^2
// with R = 1 for images normalized to [0,1].
struct SsimConstants {
  double c1 = 1e-4;
  double c2 = 9e-4;
};

namespace detail {

struct SsimSampleStats {
  double mu_a, mu_b, var_a, var_b, cov;
  double num_l, den_l, num_c, den_c;  // luminance and contrast-structure terms
  double value;
};

template <class T>
SsimSampleStats ssim_sample(const T* a, const T* b, std::int64_t n, const SsimConstants& k) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  const double inv = 1.0 / static_cast<double>(n);
  SsimSampleStats s{};
  s.mu_a = sa * inv;
  s.mu_b = sb * inv;
  s.var_a = saa * inv - s.mu_a * s.mu_a;
  s.var_b = sbb * inv - s.mu_b * s.mu_b;
  s.cov = sab * inv - s.mu_a * s.mu_b;
  s.num_l = 2.0 * s.mu_a * s.mu_b + k.c1;
  s.den_l = s.mu_a * s.mu_a + s.mu_b * s.mu_b + k.c1;
  s.num_c = 2.0 * s.cov + k.c2;
  s.den_c = s.var_a + s.var_b + k.c2;
  s.value = (s.num_l / s.den_l) * (s.num_c / s.den_c);
  return s;
}

}  // namespace detail

// Global SSIM of Eq.-style single-window statistics: one mean/variance/
// covariance per sample over all of (c,h,w), averaged over the batch.
template <class T>
TensorT<T> ssim_global(const TensorT<T>& a, const TensorT<T>& b, const SsimConstants& k = {}) {
  detail::check_same_shape(a, b, "ssim_global");
  const Shape s = a.shape();
  const std::int64_t per = s.c * s.h * s.w;
  if (per == 0 || s.n == 0) throw ShapeError("ssim_global: empty tensor");
  double total = 0.0;
  for (std::int64_t img = 0; img < s.n; ++img)
    total += detail::ssim_sample(a.data() + img * per, b.data() + img * per, per, k).value;
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(s.n)));

  if (detail::tape_wants<T>({a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> ac = a, bc = b, oc = out;
    TapeT<T>::active()->record([ac, bc, oc, k]() mutable {
      const Shape s = ac.shape();
      const std::int64_t per = s.c * s.h * s.w;
      const double g = static_cast<double>(oc.grad()[0]) / static_cast<double>(s.n);
      const double inv_n = 1.0 / static_cast<double>(per);
      for (std::int64_t img = 0; img < s.n; ++img) {
        const T* pa = ac.data() + img * per;
        const T* pb = bc.data() + img * per;
        const auto st = detail::ssim_sample(pa, pb, per, k);
        const double lum = st.num_l / st.den_l;
        const double con = st.num_c / st.den_c;
        // d(lum)/d(mu_a), d(con)/d(cov), d(con)/d(var_a) and the symmetric
        // counterparts; per-element derivatives enter through the statistics.
        const double dl_dmua = 2.0 * (st.mu_b * st.den_l - st.num_l * st.mu_a) /
                               (st.den_l * st.den_l);
        const double dl_dmub = 2.0 * (st.mu_a * st.den_l - st.num_l * st.mu_b) /
                               (st.den_l * st.den_l);
        const double dc_dcov = 2.0 / st.den_c;
        const double dc_dvar = -st.num_c / (st.den_c * st.den_c);
        if (T* ga = ac.requires_grad() ? ac.grad() + img * per : nullptr) {
          for (std::int64_t i = 0; i < per; ++i) {
            const double da = con * dl_dmua * inv_n +
                              lum * (dc_dcov * (static_cast<double>(pb[i]) - st.mu_b) * inv_n +
                                     dc_dvar * 2.0 * (static_cast<double>(pa[i]) - st.mu_a) * inv_n);
            ga[i] += static_cast<T>(g * da);
          }
        }
        if (T* gb = bc.requires_grad() ? bc.grad() + img * per : nullptr) {
          for (std::int64_t i = 0; i < per; ++i) {
            const double db = con * dl_dmub * inv_n +
                              lum * (dc_dcov * (static_cast<double>(pa[i]) - st.mu_a) * inv_n +
                                     dc_dvar * 2.0 * (static_cast<double>(pb[i]) - st.mu_b) * inv_n);
            gb[i] += static_cast<T>(g * db);
          }
        }
      }
    });
  }
  return out;
}

// Trained form: 1 - SSIM, minimized toward identical images.
template <class T>
TensorT<T> loss_ssim(const TensorT<T>& prediction, const TensorT<T>& target,
                     const SsimConstants& k = {}) {
  return scale_add(ssim_global(prediction, target, k), T(-1), T(1));
}

// KL divergence in nats between per-sample distributions over (c,h,w),
// averaged over the batch. Entries below `clamp` are clamped inside the log;
// 0 * log(0/q) contributes 0.
template <class T>
TensorT<T> kl_divergence(const TensorT<T>& p, const TensorT<T>& q, double clamp = 1e-12,
                         double norm_tol = 1e-5) {
  detail::check_same_shape(p, q, "kl_divergence");
  const Shape s = p.shape();
  const std::int64_t per = s.c * s.h * s.w;
  if (per == 0 || s.n == 0) throw ShapeError("kl_divergence: empty tensor");
  for (std::int64_t img = 0; img < s.n; ++img) {
    double sp = 0, sq = 0;
    const T* pp = p.data() + img * per;
    const T* pq = q.data() + img * per;
    for (std::int64_t i = 0; i < per; ++i) {
      if (pp[i] < T(0) || pq[i] < T(0))
        throw DataError("kl_divergence: negative probability entry");
      sp += static_cast<double>(pp[i]);
      sq += static_cast<double>(pq[i]);
    }
    if (std::abs(sp - 1.0) > norm_tol || std::abs(sq - 1.0) > norm_tol)
      throw DataError("kl_divergence: input not normalized (sum deviates beyond tolerance)");
  }
  double total = 0.0;
  for (std::int64_t img = 0; img < s.n; ++img) {
    const T* pp = p.data() + img * per;
    const T* pq = q.data() + img * per;
    for (std::int64_t i = 0; i < per; ++i) {
      const double pv = static_cast<double>(pp[i]);
      if (pv <= 0.0) continue;
      const double qv = std::max(static_cast<double>(pq[i]), clamp);
      total += pv * (std::log(std::max(pv, clamp)) - std::log(qv));
    }
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(s.n)));

  if (detail::tape_wants<T>({p.requires_grad(), q.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> pc = p, qc = q, oc = out;
    TapeT<T>::active()->record([pc, qc, oc, clamp]() mutable {
      const Shape s = pc.shape();
      const std::int64_t per = s.c * s.h * s.w;
      const double g = static_cast<double>(oc.grad()[0]) / static_cast<double>(s.n);
      for (std::int64_t img = 0; img < s.n; ++img) {
        const T* pp = pc.data() + img * per;
        const T* pq = qc.data() + img * per;
        T* gp = pc.requires_grad() ? pc.grad() + img * per : nullptr;
        T* gq = qc.requires_grad() ? qc.grad() + img * per : nullptr;
        for (std::int64_t i = 0; i < per; ++i) {
          const double pv = static_cast<double>(pp[i]);
          const double qv = static_cast<double>(pq[i]);
          if (pv > 0.0) {
            const double lnr = std::log(std::max(pv, clamp)) - std::log(std::max(qv, clamp));
            if (gp) gp[i] += static_cast<T>(g * (lnr + (pv >= clamp ? 1.0 : 0.0)));
            if (gq && qv >= clamp) gq[i] -= static_cast<T>(g * pv / qv);
          }
        }
      }
    });
  }
  return out;
}

// Eq.-(5)-style self-similarity loss: the sum of KL divergences over all 12
// ordered pairs of the four patch distributions.
template <class T>
TensorT<T> loss_kld(const std::array<TensorT<T>, 4>& p) {
  TensorT<T> total;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (i == j) continue;
      TensorT<T> d = kl_divergence(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
      total = total.defined() ? add(total, d) : d;
    }
  }
  return total;
}

// Mean absolute error; N is the full element count.
template <class T>
TensorT<T> loss_l1(const TensorT<T>& prediction, const TensorT<T>& target) {
  detail::check_same_shape(prediction, target, "loss_l1");
  const std::int64_t n = prediction.numel();
  double acc = 0.0;
  const T* pa = prediction.data();
  const T* pb = target.data();
  for (std::int64_t i = 0; i < n; ++i)
    acc += std::abs(static_cast<double>(pa[i]) - static_cast<double>(pb[i]));
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (detail::tape_wants<T>({prediction.requires_grad(), target.requires_grad()})) {
    out.set_requires_grad();
    TensorT<T> ac = prediction, bc = target, oc = out;
    TapeT<T>::active()->record([ac, bc, oc]() mutable {
      const std::int64_t n = ac.numel();
      const T g = oc.grad()[0] / static_cast<T>(n);
      const T* pa = ac.data();
      const T* pb = bc.data();
      T* ga = ac.requires_grad() ? ac.grad() : nullptr;
      T* gb = bc.requires_grad() ? bc.grad() : nullptr;
      for (std::int64_t i = 0; i < n; ++i) {
        const T d = pa[i] - pb[i];
        const T sg = d > T(0) ? g : (d < T(0) ? -g : T(0));
        if (ga) ga[i] += sg;
        if (gb) gb[i] -= sg;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composite objective
// ---------------------------------------------------------------------------

struct LossToggles {
  bool ssim = true;
  bool kld = true;
};

struct LossWeights {
  double ssim = 1.0;
  double kld = 1.0;
  double l1 = 1.0;
};

template <class T>
struct LossTermsT {
  TensorT<T> ssim;   // scalar(0) when toggled off (not on the tape)
  TensorT<T> kld;
  TensorT<T> l1;
  TensorT<T> total;

  T ssim_value() const { return ssim.item(); }
  T kld_value() const { return kld.item(); }
  T l1_value() const { return l1.item(); }
  T total_value() const { return total.item(); }
};

using LossTerms = LossTermsT<float>;

// total = L_SSIM + L_KLD + L1 (unweighted by default). Disabled terms are
// reported as 0 and contribute nothing to the graph, so their gradients
// vanish identically.
template <class T>
LossTermsT<T> composite_loss(const TensorT<T>& x_c, const TensorT<T>& y1,
                             const std::array<TensorT<T>, 4>& p, const TensorT<T>& x_tilde,
                             const LossToggles& toggles = {}, const LossWeights& weights = {},
                             const SsimConstants& k = {}) {
  LossTermsT<T> terms;
  std::vector<TensorT<T>> active;
  if (toggles.ssim) {
    if (!x_c.defined()) throw ConfigError("composite_loss: ssim enabled but no image head output");
    terms.ssim = loss_ssim(x_c, y1, k);
    active.push_back(weights.ssim == 1.0 ? terms.ssim
                                         : scale_add(terms.ssim, static_cast<T>(weights.ssim)));
  } else {
    terms.ssim = TensorT<T>::scalar(T(0));
  }
  if (toggles.kld) {
    if (!p[0].defined()) throw ConfigError("composite_loss: kld enabled but no patch distributions");
    terms.kld = loss_kld(p);
    active.push_back(weights.kld == 1.0 ? terms.kld
                                        : scale_add(terms.kld, static_cast<T>(weights.kld)));
  } else {
    terms.kld = TensorT<T>::scalar(T(0));
  }
  terms.l1 = loss_l1(x_tilde, y1);
  active.push_back(weights.l1 == 1.0 ? terms.l1 : scale_add(terms.l1, static_cast<T>(weights.l1)));

  terms.total = active.front();
  for (std::size_t i = 1; i < active.size(); ++i) terms.total = add(terms.total, active[i]);
  return terms;
}

}  // namespace cdn

#endif  // CDN_LOSSES_HPP
