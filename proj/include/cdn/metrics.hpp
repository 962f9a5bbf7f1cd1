// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_METRICS_HPP
#define CDN_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cdn/core.hpp"
#include "cdn/data.hpp"
#include "cdn/losses.hpp"
#include "cdn/model.hpp"

namespace cdn {

inline constexpr double kPsnrCapDb = 100.0;

// PSNR in dB over [0,1] images, computed after clamping and 8-bit
// quantization (how benchmark tables are conventionally produced).
// Identical inputs report the 100 dB cap.
template <class T>
double psnr(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "psnr");
  const std::int64_t n = a.numel();
  if (n == 0) throw ShapeError("psnr: empty tensor");
  auto quantize = [](double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return std::floor(v * 255.0 + 0.5);
  };
  double mse = 0.0;
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = (quantize(static_cast<double>(pa[i])) - quantize(static_cast<double>(pb[i]))) / 255.0;
    mse += d * d;
  }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

// Mean SSIM over 11x11 uniform windows, stride 1 (evaluation-time metric;
// the training loss uses the single global window instead). Images smaller
// than the window fall back to one global window.
template <class T>
double ssim_metric(const TensorT<T>& a, const TensorT<T>& b, std::int64_t window = 11) {
  detail::check_same_shape(a, b, "ssim_metric");
  const Shape s = a.shape();
  const SsimConstants k;
  if (s.h < window || s.w < window)
    return static_cast<double>(ssim_global(a, b, k).item());

  const std::int64_t sw = s.w + 1;
  std::vector<double> sa(static_cast<std::size_t>((s.h + 1) * sw)), sb(sa.size()),
      saa(sa.size()), sbb(sa.size()), sab(sa.size());
  double total = 0.0;
  std::int64_t planes = 0;
  for (std::int64_t pc = 0; pc < s.n * s.c; ++pc) {
    const T* pa = a.data() + pc * s.h * s.w;
    const T* pb = b.data() + pc * s.h * s.w;
    // summed-area tables
    std::fill(sa.begin(), sa.begin() + sw, 0.0);
    std::fill(sb.begin(), sb.begin() + sw, 0.0);
    std::fill(saa.begin(), saa.begin() + sw, 0.0);
    std::fill(sbb.begin(), sbb.begin() + sw, 0.0);
    std::fill(sab.begin(), sab.begin() + sw, 0.0);
    for (std::int64_t i = 0; i < s.h; ++i) {
      double ra = 0, rb = 0, raa = 0, rbb = 0, rab = 0;
      const std::int64_t row = (i + 1) * sw;
      sa[static_cast<std::size_t>(row)] = sb[static_cast<std::size_t>(row)] = 0.0;
      saa[static_cast<std::size_t>(row)] = sbb[static_cast<std::size_t>(row)] =
          sab[static_cast<std::size_t>(row)] = 0.0;
      for (std::int64_t j = 0; j < s.w; ++j) {
        const double x = static_cast<double>(pa[i * s.w + j]);
        const double y = static_cast<double>(pb[i * s.w + j]);
        ra += x;
        rb += y;
        raa += x * x;
        rbb += y * y;
        rab += x * y;
        const std::size_t idx = static_cast<std::size_t>(row + j + 1);
        const std::size_t up = static_cast<std::size_t>(row - sw + j + 1);
        sa[idx] = sa[up] + ra;
        sb[idx] = sb[up] + rb;
        saa[idx] = saa[up] + raa;
        sbb[idx] = sbb[up] + rbb;
        sab[idx] = sab[up] + rab;
      }
    }
    auto window_sum = [&](const std::vector<double>& t, std::int64_t i, std::int64_t j) {
      const std::size_t i0 = static_cast<std::size_t>(i * sw + j);
      const std::size_t i1 = static_cast<std::size_t>(i * sw + j + window);
      const std::size_t i2 = static_cast<std::size_t>((i + window) * sw + j);
      const std::size_t i3 = static_cast<std::size_t>((i + window) * sw + j + window);
      return t[i3] - t[i2] - t[i1] + t[i0];
    };
    const double inv = 1.0 / static_cast<double>(window * window);
    double plane_total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i + window <= s.h; ++i) {
      for (std::int64_t j = 0; j + window <= s.w; ++j) {
        const double mu_a = window_sum(sa, i, j) * inv;
        const double mu_b = window_sum(sb, i, j) * inv;
        const double var_a = window_sum(saa, i, j) * inv - mu_a * mu_a;
        const double var_b = window_sum(sbb, i, j) * inv - mu_b * mu_b;
        const double cov = window_sum(sab, i, j) * inv - mu_a * mu_b;
        const double num = (2.0 * mu_a * mu_b + k.c1) * (2.0 * cov + k.c2);
        const double den = (mu_a * mu_a + mu_b * mu_b + k.c1) * (var_a + var_b + k.c2);
        plane_total += num / den;
        ++count;
      }
    }
    total += plane_total / static_cast<double>(count);
    ++planes;
  }
  return total / static_cast<double>(planes);
}

// ---------------------------------------------------------------------------
// Evaluation over a test set
// ---------------------------------------------------------------------------

struct ImageMetrics {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;         // windowed
  double ssim_flat = 0.0;    // single global window (the training-loss form)
  double noisy_psnr_db = 0.0;
};

struct MetricReport {
  double psnr_db = 0.0;      // mean of per-image values
  double ssim = 0.0;
  double ssim_flat = 0.0;
  double noisy_psnr_db = 0.0;
  std::vector<ImageMetrics> per_image;
};

// Adds seeded AWGN to each test image, denoises, and scores against the
// clean original. Per-image noise derives from (seed, image index), so a
// fixed seed reproduces the report bit for bit.
template <class T>
MetricReport evaluate(CdnModelT<T>& model, const Dataset& test_set, double sigma,
                      std::uint64_t seed = 0, PathCut cut = PathCut::none) {
  if (test_set.size() == 0) throw DataError("evaluate: empty test set");
  MetricReport report;
  for (std::int64_t i = 0; i < test_set.size(); ++i) {
    const TensorT<T> clean = image_to_tensor<T>(test_set.images[static_cast<std::size_t>(i)]);
    const TensorT<T> noisy =
        add_awgn(clean, NoiseSpec{sigma, derive_seed(seed, 0xe7a1, static_cast<std::uint64_t>(i))});
    EvalResult<T> res = cdn_forward_eval(model, noisy, cut);
    ImageMetrics m;
    m.name = test_set.names[static_cast<std::size_t>(i)];
    m.psnr_db = psnr(res.denoised, clean);
    m.ssim = ssim_metric(res.denoised, clean);
    m.ssim_flat = static_cast<double>(ssim_global(res.denoised, clean).item());
    m.noisy_psnr_db = psnr(noisy, clean);
    report.per_image.push_back(std::move(m));
  }
  std::sort(report.per_image.begin(), report.per_image.end(),
            [](const ImageMetrics& x, const ImageMetrics& y) { return x.name < y.name; });
  for (const auto& m : report.per_image) {
    report.psnr_db += m.psnr_db;
    report.ssim += m.ssim;
    report.ssim_flat += m.ssim_flat;
    report.noisy_psnr_db += m.noisy_psnr_db;
  }
  const double inv = 1.0 / static_cast<double>(report.per_image.size());
  report.psnr_db *= inv;
  report.ssim *= inv;
  report.ssim_flat *= inv;
  report.noisy_psnr_db *= inv;
  return report;
}

}  // namespace cdn

#endif  // CDN_METRICS_HPP
