// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_SMOKE_HPP
#define CDN_SMOKE_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cdn/core.hpp"
#include "cdn/image.hpp"

namespace cdn {

// Procedurally generated texture benchmark so the repository trains and
// evaluates without downloading datasets. Pixel values are kept inside
// [0.35, 0.65]: mid-tones leave AWGN untouched by the [0,1] clamp at every
// sigma used here, so noisy baselines match their analytic PSNR.
struct SmokeSpec {
  std::int64_t count = 16;
  std::int64_t train_count = 12;
  std::int64_t size = 128;
  std::uint64_t seed = 2024;
  double lo = 0.35;
  double hi = 0.65;
};

// Mixture of an oriented sinusoid, a soft checkerboard, a linear gradient,
// and box-blurred noise, affinely normalized into [lo, hi].
inline ImageBuffer make_texture(std::int64_t size, std::uint64_t seed, double lo = 0.35,
                                double hi = 0.65) {
  GaussianSampler rng(seed);
  const double theta = rng.uniform() * 2.0 * 3.14159265358979323846;
  const double freq = 1.0 + rng.uniform() * 3.0;
  const double phase = rng.uniform() * 6.28318530717958647692;
  const double px = 8.0 + rng.uniform() * 24.0;
  const double py = 8.0 + rng.uniform() * 24.0;
  const double w_sin = 0.25 + rng.uniform();
  const double w_chk = 0.25 + rng.uniform();
  const double w_grad = 0.25 + rng.uniform();
  const double w_noise = 0.25 + rng.uniform();
  const std::int64_t blur = 2 + static_cast<std::int64_t>(rng.next_u64() % 4);  // box radius 2..5

  std::vector<double> noise(static_cast<std::size_t>(size * size));
  for (auto& v : noise) v = rng.gaussian();
  // two separable box-blur passes
  std::vector<double> tmp(noise.size());
  for (int pass = 0; pass < 2; ++pass) {
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        double acc = 0.0;
        for (std::int64_t d = -blur; d <= blur; ++d) {
          std::int64_t sx = x + d;
          sx = sx < 0 ? -sx : (sx >= size ? 2 * size - 2 - sx : sx);
          acc += noise[static_cast<std::size_t>(y * size + sx)];
        }
        tmp[static_cast<std::size_t>(y * size + x)] = acc / static_cast<double>(2 * blur + 1);
      }
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        double acc = 0.0;
        for (std::int64_t d = -blur; d <= blur; ++d) {
          std::int64_t sy = y + d;
          sy = sy < 0 ? -sy : (sy >= size ? 2 * size - 2 - sy : sy);
          acc += tmp[static_cast<std::size_t>(sy * size + x)];
        }
        noise[static_cast<std::size_t>(y * size + x)] = acc / static_cast<double>(2 * blur + 1);
      }
  }

  std::vector<double> img(static_cast<std::size_t>(size * size));
  double mn = 1e300, mx = -1e300;
  const double cs = std::cos(theta), sn = std::sin(theta);
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(size);
      const double v = static_cast<double>(y) / static_cast<double>(size);
      const double g_sin = std::sin(2.0 * 3.14159265358979323846 * freq * (cs * u + sn * v) + phase);
      const double g_chk = std::sin(2.0 * 3.14159265358979323846 * static_cast<double>(x) / px) *
                           std::sin(2.0 * 3.14159265358979323846 * static_cast<double>(y) / py);
      const double g_grad = cs * u + sn * v;
      const double val = w_sin * g_sin + w_chk * g_chk + w_grad * g_grad +
                         w_noise * noise[static_cast<std::size_t>(y * size + x)];
      img[static_cast<std::size_t>(y * size + x)] = val;
      mn = std::min(mn, val);
      mx = std::max(mx, val);
    }
  }
  const double span = mx > mn ? mx - mn : 1.0;
  ImageBuffer out;
  out.width = size;
  out.height = size;
  out.channels = 1;
  out.pixels.resize(static_cast<std::size_t>(size * size));
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = lo + (hi - lo) * (img[i] - mn) / span;
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

// Writes <dir>/train and <dir>/test with manifest.txt files.
inline void make_smoke_dataset(const std::string& dir, const SmokeSpec& spec = {}) {
  namespace fs = std::filesystem;
  if (spec.train_count <= 0 || spec.train_count >= spec.count)
    throw ConfigError("smoke dataset needs 0 < train_count < count");
  fs::create_directories(fs::path(dir) / "train");
  fs::create_directories(fs::path(dir) / "test");
  std::ofstream train_manifest(fs::path(dir) / "train" / "manifest.txt");
  std::ofstream test_manifest(fs::path(dir) / "test" / "manifest.txt");
  if (!train_manifest || !test_manifest) throw DataError("cannot write smoke manifests in " + dir);
  for (std::int64_t i = 0; i < spec.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "tex%02lld.pgm", static_cast<long long>(i));
    const ImageBuffer img =
        make_texture(spec.size, derive_seed(spec.seed, 0x7e87, static_cast<std::uint64_t>(i)),
                     spec.lo, spec.hi);
    const bool is_train = i < spec.train_count;
    const fs::path sub = is_train ? "train" : "test";
    save_image(img, (fs::path(dir) / sub / name).string());
    (is_train ? train_manifest : test_manifest) << name << "\n";
  }
}

}  // namespace cdn

#endif  // CDN_SMOKE_HPP
