// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_DATA_HPP
#define CDN_DATA_HPP

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cdn/core.hpp"
#include "cdn/image.hpp"
#include "cdn/ops.hpp"

namespace cdn {

inline constexpr std::int64_t kPatchSize = 128;

// sigma is quoted on the 0-255 intensity scale (15/25/50 in practice).
struct NoiseSpec {
  double sigma = 25.0;
  std::uint64_t seed = 0;
};

// noisy = clean + n, n ~ N(0, (sigma/255)^2) i.i.d., never clipped.
template <class T>
TensorT<T> add_awgn(const TensorT<T>& clean, const NoiseSpec& spec) {
  if (spec.sigma < 0) throw ConfigError("add_awgn: sigma must be >= 0");
  if (spec.sigma == 0) return clean.detach_copy();
  TensorT<T> noisy(clean.shape());
  GaussianSampler sampler(spec.seed);
  const double s = spec.sigma / 255.0;
  const T* c = clean.data();
  T* o = noisy.data();
  for (std::int64_t i = 0; i < clean.numel(); ++i)
    o[i] = c[i] + static_cast<T>(sampler.gaussian() * s);
  return noisy;
}

// ---------------------------------------------------------------------------
// Augmentation: aligned random 128x128 crop plus independent h/v flips.
// The decision is drawn once and applied to every tensor of the group, so
// clean/noisy pairs stay pixel-aligned.
// ---------------------------------------------------------------------------

struct AugmentDecision {
  std::int64_t top = 0;
  std::int64_t left = 0;
  bool flip_h = false;
  bool flip_v = false;
};

inline AugmentDecision draw_augment(GaussianSampler& rng, std::int64_t h, std::int64_t w,
                                    std::int64_t patch = kPatchSize) {
  AugmentDecision d;
  d.top = h > patch ? static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(h - patch + 1)) : 0;
  d.left = w > patch ? static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(w - patch + 1)) : 0;
  d.flip_h = (rng.next_u64() & 1u) != 0;
  d.flip_v = (rng.next_u64() & 1u) != 0;
  return d;
}

template <class T>
TensorT<T> apply_crop_flip(const TensorT<T>& x, const AugmentDecision& d,
                           std::int64_t patch = kPatchSize) {
  const Shape s = x.shape();
  if (s.h < patch || s.w < patch) throw ShapeError("apply_crop_flip: image smaller than patch");
  TensorT<T> out(Shape(s.n, s.c, patch, patch));
  const T* p = x.data();
  T* o = out.data();
  for (std::int64_t pc = 0; pc < s.n * s.c; ++pc) {
    const T* src = p + pc * s.h * s.w;
    T* dst = o + pc * patch * patch;
    for (std::int64_t i = 0; i < patch; ++i) {
      const std::int64_t si = d.flip_v ? d.top + patch - 1 - i : d.top + i;
      for (std::int64_t j = 0; j < patch; ++j) {
        const std::int64_t sj = d.flip_h ? d.left + patch - 1 - j : d.left + j;
        dst[i * patch + j] = src[si * s.w + sj];
      }
    }
  }
  return out;
}

// Pads images smaller than the patch by reflection first, then crops/flips
// the same window out of both members of the pair.
template <class T>
std::pair<TensorT<T>, TensorT<T>> augment_crop_flip(const TensorT<T>& clean,
                                                    const TensorT<T>& noisy,
                                                    GaussianSampler& rng,
                                                    std::int64_t patch = kPatchSize) {
  detail::check_same_shape(clean, noisy, "augment_crop_flip");
  TensorT<T> c = clean, n = noisy;
  Shape s = c.shape();
  if (s.h < patch || s.w < patch) {
    const std::int64_t pb = std::max<std::int64_t>(0, patch - s.h);
    const std::int64_t pr = std::max<std::int64_t>(0, patch - s.w);
    if (pb >= s.h || pr >= s.w)
      throw DataError("augment_crop_flip: image too small to reflect-pad to patch size");
    c = reflect_pad(c, std::int64_t(0), pb, std::int64_t(0), pr);
    n = reflect_pad(n, std::int64_t(0), pb, std::int64_t(0), pr);
    s = c.shape();
  }
  const AugmentDecision d = draw_augment(rng, s.h, s.w, patch);
  return {apply_crop_flip(c, d, patch), apply_crop_flip(n, d, patch)};
}

// ---------------------------------------------------------------------------
// Quadrant split: 2x2 grid, x1=TL, x2=TR, x3=BL, x4=BR. Lossless tiling.
// ---------------------------------------------------------------------------

template <class T>
std::array<TensorT<T>, 4> quadrant_split(const TensorT<T>& patch) {
  const Shape s = patch.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("quadrant_split: spatial dims must be even, got " + s.str());
  const std::int64_t qh = s.h / 2, qw = s.w / 2;
  std::array<TensorT<T>, 4> q;
  for (int k = 0; k < 4; ++k) q[static_cast<std::size_t>(k)] = TensorT<T>(Shape(s.n, s.c, qh, qw));
  const T* p = patch.data();
  for (std::int64_t pc = 0; pc < s.n * s.c; ++pc) {
    const T* src = p + pc * s.h * s.w;
    for (int k = 0; k < 4; ++k) {
      const std::int64_t oy = (k / 2) * qh, ox = (k % 2) * qw;
      T* dst = q[static_cast<std::size_t>(k)].data() + pc * qh * qw;
      for (std::int64_t i = 0; i < qh; ++i)
        std::memcpy(dst + i * qw, src + (oy + i) * s.w + ox, sizeof(T) * static_cast<std::size_t>(qw));
    }
  }
  return q;
}

template <class T>
TensorT<T> quadrant_reassemble(const std::array<TensorT<T>, 4>& q) {
  const Shape s = q[0].shape();
  for (int k = 1; k < 4; ++k)
    if (!(q[static_cast<std::size_t>(k)].shape() == s))
      throw ShapeError("quadrant_reassemble: quadrant shapes differ");
  TensorT<T> out(Shape(s.n, s.c, s.h * 2, s.w * 2));
  T* p = out.data();
  for (std::int64_t pc = 0; pc < s.n * s.c; ++pc) {
    T* dst = p + pc * s.h * 2 * s.w * 2;
    for (int k = 0; k < 4; ++k) {
      const std::int64_t oy = (k / 2) * s.h, ox = (k % 2) * s.w;
      const T* src = q[static_cast<std::size_t>(k)].data() + pc * s.h * s.w;
      for (std::int64_t i = 0; i < s.h; ++i)
        std::memcpy(dst + (oy + i) * s.w * 2 + ox, src + i * s.w,
                    sizeof(T) * static_cast<std::size_t>(s.w));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset: a directory of .pgm/.ppm files indexed by manifest.txt.
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<std::string> names;
  std::vector<ImageBuffer> images;

  std::int64_t size() const { return static_cast<std::int64_t>(images.size()); }
  std::int64_t channels() const { return images.empty() ? 1 : images.front().channels; }
};

inline Dataset load_dataset(const std::string& dir) {
  const std::filesystem::path root(dir);
  std::ifstream manifest(root / "manifest.txt");
  if (!manifest) throw DataError("dataset has no manifest.txt: " + dir);
  Dataset ds;
  std::string line;
  while (std::getline(manifest, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    ds.names.push_back(line);
    ds.images.push_back(load_image((root / line).string()));
  }
  if (ds.images.empty()) throw DataError("dataset is empty: " + dir);
  for (const auto& img : ds.images)
    if (img.channels != ds.images.front().channels)
      throw DataError("dataset mixes gray and color images: " + dir);
  return ds;
}

// ---------------------------------------------------------------------------
// Deterministic batch stream. Epoch order is a seeded permutation; every
// per-sample decision (crop, flips, noise) derives from (seed, epoch, sample
// counter), so iteration is stateless and resumable at any step.
// ---------------------------------------------------------------------------

struct SampleBatch {
  Tensor noisy;                    // (b, C, 128, 128)
  Tensor clean;                    // (b, C, 128, 128)
  std::array<Tensor, 4> quadrants; // noisy quadrants, (b, C, 64, 64)
};

class BatchIter {
 public:
  BatchIter(const Dataset& dataset, const NoiseSpec& spec, std::int64_t batch, std::uint64_t seed,
            std::int64_t epoch, std::int64_t start_sample = 0)
      : dataset_(&dataset), spec_(spec), batch_(batch), seed_(seed), epoch_(epoch),
        cursor_(start_sample) {
    if (batch_ < 1) throw ConfigError("batch size must be >= 1");
    if (dataset.size() == 0) throw DataError("batch_iter: empty dataset");
    order_.resize(static_cast<std::size_t>(dataset.size()));
    for (std::int64_t i = 0; i < dataset.size(); ++i) order_[static_cast<std::size_t>(i)] = i;
    GaussianSampler shuffle_rng(derive_seed(seed_, 0xe70c, static_cast<std::uint64_t>(epoch_)));
    for (std::int64_t i = dataset.size() - 1; i > 0; --i) {
      const std::int64_t j =
          static_cast<std::int64_t>(shuffle_rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(j)]);
    }
  }

  std::int64_t steps_per_epoch() const { return (dataset_->size() + batch_ - 1) / batch_; }
  std::int64_t cursor() const { return cursor_; }

  std::optional<SampleBatch> next() {
    const std::int64_t total = dataset_->size();
    if (cursor_ >= total) return std::nullopt;
    const std::int64_t b = std::min(batch_, total - cursor_);
    const std::int64_t c = dataset_->channels();
    SampleBatch out;
    out.clean = Tensor(Shape(b, c, kPatchSize, kPatchSize));
    out.noisy = Tensor(Shape(b, c, kPatchSize, kPatchSize));
    for (std::int64_t s = 0; s < b; ++s) {
      const std::int64_t img_idx = order_[static_cast<std::size_t>(cursor_ + s)];
      GaussianSampler rng(derive_seed(seed_, 0x5a317e, static_cast<std::uint64_t>(epoch_),
                                      static_cast<std::uint64_t>(cursor_ + s)));
      Tensor clean_full = image_to_tensor<float>(dataset_->images[static_cast<std::size_t>(img_idx)]);
      Shape fs = clean_full.shape();
      if (fs.h < kPatchSize || fs.w < kPatchSize) {
        const std::int64_t pb = std::max<std::int64_t>(0, kPatchSize - fs.h);
        const std::int64_t pr = std::max<std::int64_t>(0, kPatchSize - fs.w);
        if (pb >= fs.h || pr >= fs.w)
          throw DataError("image too small for 128x128 patches: " +
                          dataset_->names[static_cast<std::size_t>(img_idx)]);
        clean_full = reflect_pad(clean_full, std::int64_t(0), pb, std::int64_t(0), pr);
        fs = clean_full.shape();
      }
      const AugmentDecision d = draw_augment(rng, fs.h, fs.w);
      Tensor clean_patch = apply_crop_flip(clean_full, d);
      // fresh noise per epoch, added after cropping
      Tensor noisy_patch = add_awgn(clean_patch, NoiseSpec{spec_.sigma, rng.next_u64()});
      const std::int64_t plane = c * kPatchSize * kPatchSize;
      std::memcpy(out.clean.data() + s * plane, clean_patch.data(),
                  sizeof(float) * static_cast<std::size_t>(plane));
      std::memcpy(out.noisy.data() + s * plane, noisy_patch.data(),
                  sizeof(float) * static_cast<std::size_t>(plane));
    }
    out.quadrants = quadrant_split(out.noisy);
    cursor_ += b;
    return out;
  }

 private:
  const Dataset* dataset_;
  NoiseSpec spec_;
  std::int64_t batch_;
  std::uint64_t seed_;
  std::int64_t epoch_;
  std::int64_t cursor_;
  std::vector<std::int64_t> order_;
};

}  // namespace cdn

#endif  // CDN_DATA_HPP
