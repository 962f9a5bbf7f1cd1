// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_MODEL_HPP
#define CDN_MODEL_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cdn/core.hpp"
#include "cdn/ops.hpp"

namespace cdn {

// ---------------------------------------------------------------------------
// Layer containers. Plain structs of tensors; forward logic lives in free
// functions so the same code runs at float and double precision.
// ---------------------------------------------------------------------------

template <class T>
struct Conv2dT {
  TensorT<T> weight;  // (co, ci, k, k)
  TensorT<T> bias;    // (1, co, 1, 1)
  std::int64_t pad = 1;

  Conv2dT() = default;
  Conv2dT(std::int64_t ci, std::int64_t co, std::int64_t k)
      : weight(Shape(co, ci, k, k)), bias(Shape(1, co, 1, 1)), pad(k / 2) {}

  TensorT<T> operator()(const TensorT<T>& x) const { return conv2d(x, weight, bias, pad); }
};

template <class T>
struct BatchNormT {
  TensorT<T> gamma;  // (1, c, 1, 1), init 1
  TensorT<T> beta;   // (1, c, 1, 1), init 0
  BnStatsT<T> stats;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNormT() : BatchNormT(1) {}
  explicit BatchNormT(std::int64_t c) : gamma(Shape(1, c, 1, 1), T(1)), beta(Shape(1, c, 1, 1)), stats(c) {}

  TensorT<T> operator()(const TensorT<T>& x, bool training) {
    return batch_norm2d(x, gamma, beta, stats, training, eps, momentum);
  }
};

// conv -> BN -> PReLU -> conv -> BN, residual add, ReLU. Shape preserving.
template <class T>
struct DBlockT {
  Conv2dT<T> conv1;
  BatchNormT<T> bn1;
  TensorT<T> prelu_slope;  // (1, c, 1, 1), init 0.25
  Conv2dT<T> conv2;
  BatchNormT<T> bn2;

  DBlockT() = default;
  explicit DBlockT(std::int64_t c)
      : conv1(c, c, 3), bn1(c), prelu_slope(Shape(1, c, 1, 1), T(0.25)), conv2(c, c, 3), bn2(c) {}
};

template <class T>
TensorT<T> dblock_forward(DBlockT<T>& block, const TensorT<T>& x, bool training) {
  TensorT<T> y = block.conv1(x);
  y = block.bn1(y, training);
  y = prelu(y, block.prelu_slope);
  y = block.conv2(y);
  y = block.bn2(y, training);
  y = add(y, x);
  return relu(y);
}

// One lift convolution followed by seven DBlocks; used for both IIP and NEP.
template <class T>
struct PathNetT {
  static constexpr int kBlocks = 7;
  Conv2dT<T> lift;
  std::array<DBlockT<T>, kBlocks> blocks;

  PathNetT() = default;
  PathNetT(std::int64_t c_img, std::int64_t f) : lift(c_img, f, 3) {
    for (auto& b : blocks) b = DBlockT<T>(f);
  }
};

template <class T>
TensorT<T> path_forward(PathNetT<T>& path, const TensorT<T>& x, bool training) {
  TensorT<T> y = path.lift(x);
  for (auto& b : path.blocks) y = dblock_forward(b, y, training);
  return y;
}

// The two 1x1 heads of the image path; untied parameters.
template <class T>
struct HeadConvsT {
  Conv2dT<T> conv_img;   // F -> C_img, produces the denoised-image estimate
  Conv2dT<T> conv_lift;  // C_img -> F, the lifted-input term of the noise estimate

  HeadConvsT() = default;
  HeadConvsT(std::int64_t c_img, std::int64_t f) : conv_img(f, c_img, 1), conv_lift(c_img, f, 1) {}
};

// U-shaped fusion network: two encoder levels with 2x2 average-pool
// downsampling, a bottleneck, and pixel-shuffle upsampling with channel
// concat skips. Residual DBlocks preserve width, so each level enters
// through a width-changing 3x3 projection.
template <class T>
struct IdmLevelT {
  Conv2dT<T> proj;
  DBlockT<T> block;

  IdmLevelT() = default;
  IdmLevelT(std::int64_t ci, std::int64_t co) : proj(ci, co, 3), block(co) {}
};

template <class T>
struct IdmNetT {
  IdmLevelT<T> enc0, enc1, bottleneck, dec1, dec0;
  Conv2dT<T> out;

  IdmNetT() = default;
  IdmNetT(std::int64_t in_ch, std::int64_t c_img, const std::array<std::int64_t, 3>& w)
      : enc0(in_ch, w[0]),
        enc1(w[0], w[1]),
        bottleneck(w[1], w[2]),
        dec1(w[2] / 4 + w[1], w[1]),
        dec0(w[1] / 4 + w[0], w[0]),
        out(w[0], c_img, 3) {
    if (w[1] % 4 != 0 || w[2] % 4 != 0)
      throw ConfigError("idm widths w1, w2 must be divisible by 4 for pixel-shuffle upsampling");
  }
};

// Spatial dims must be divisible by 2^depth (= 4); eval pads beforehand.
inline constexpr std::int64_t kIdmDepth = 2;
inline constexpr std::int64_t kIdmMultiple = 1 << kIdmDepth;

template <class T>
TensorT<T> idm_net_forward(IdmNetT<T>& idm, const TensorT<T>& x, bool training) {
  if (x.shape().h % kIdmMultiple != 0 || x.shape().w % kIdmMultiple != 0)
    throw ShapeError("idm_forward: spatial dims must be divisible by " +
                     std::to_string(kIdmMultiple) + ", got " + x.shape().str());
  TensorT<T> e0 = dblock_forward(idm.enc0.block, idm.enc0.proj(x), training);
  TensorT<T> e1 = dblock_forward(idm.enc1.block, idm.enc1.proj(avg_pool2(e0)), training);
  TensorT<T> bt = dblock_forward(idm.bottleneck.block, idm.bottleneck.proj(avg_pool2(e1)), training);
  TensorT<T> u1 = concat_channels(pixel_shuffle(bt, 2), e1);
  TensorT<T> d1 = dblock_forward(idm.dec1.block, idm.dec1.proj(u1), training);
  TensorT<T> u0 = concat_channels(pixel_shuffle(d1, 2), e0);
  TensorT<T> d0 = dblock_forward(idm.dec0.block, idm.dec0.proj(u0), training);
  return idm.out(d0);
}

// ---------------------------------------------------------------------------
// The full network
// ---------------------------------------------------------------------------

struct CdnConfig {
  std::int64_t channels = 1;  // 1 = gray, 3 = color
  std::int64_t feature_width = 64;
  std::array<std::int64_t, 3> idm_widths = {64, 128, 256};
  bool use_iip = true;  // false builds the retrained path-removal variants
  bool use_nep = true;

  std::int64_t idm_input_channels() const {
    return feature_width * ((use_iip ? 1 : 0) + (use_nep ? 1 : 0));
  }

  void validate() const {
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    if (feature_width < 1) throw ConfigError("feature width must be positive");
    if (!use_iip && !use_nep) throw ConfigError("at least one path must be present");
  }
};

template <class T>
struct CdnModelT {
  CdnConfig config;
  std::optional<PathNetT<T>> iip;
  std::optional<PathNetT<T>> nep;
  std::optional<HeadConvsT<T>> heads;
  IdmNetT<T> idm;

  explicit CdnModelT(const CdnConfig& cfg = {}) : config(cfg) {
    config.validate();
    if (config.use_iip) {
      iip.emplace(config.channels, config.feature_width);
      heads.emplace(config.channels, config.feature_width);
    }
    if (config.use_nep) nep.emplace(config.channels, config.feature_width);
    idm = IdmNetT<T>(config.idm_input_channels(), config.channels, config.idm_widths);
  }
};

using CdnModel = CdnModelT<float>;

// ---------------------------------------------------------------------------
// Parameter registry: stable order, unique dotted names.
// ---------------------------------------------------------------------------

template <class T>
struct NamedTensor {
  std::string name;
  TensorT<T>* tensor;
};

namespace detail {

template <class T>
void collect_conv(const std::string& prefix, Conv2dT<T>& c, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + ".weight", &c.weight});
  out.push_back({prefix + ".bias", &c.bias});
}

template <class T>
void collect_bn(const std::string& prefix, BatchNormT<T>& b, std::vector<NamedTensor<T>>& params,
                std::vector<NamedTensor<T>>* buffers) {
  params.push_back({prefix + ".gamma", &b.gamma});
  params.push_back({prefix + ".beta", &b.beta});
  if (buffers) {
    buffers->push_back({prefix + ".running_mean", &b.stats.running_mean});
    buffers->push_back({prefix + ".running_var", &b.stats.running_var});
  }
}

template <class T>
void collect_dblock(const std::string& prefix, DBlockT<T>& d, std::vector<NamedTensor<T>>& params,
                    std::vector<NamedTensor<T>>* buffers) {
  collect_conv(prefix + ".conv1", d.conv1, params);
  collect_bn(prefix + ".bn1", d.bn1, params, buffers);
  params.push_back({prefix + ".prelu", &d.prelu_slope});
  collect_conv(prefix + ".conv2", d.conv2, params);
  collect_bn(prefix + ".bn2", d.bn2, params, buffers);
}

template <class T>
void collect_path(const std::string& prefix, PathNetT<T>& p, std::vector<NamedTensor<T>>& params,
                  std::vector<NamedTensor<T>>* buffers) {
  collect_conv(prefix + ".lift", p.lift, params);
  for (int i = 0; i < PathNetT<T>::kBlocks; ++i)
    collect_dblock(prefix + ".db" + std::to_string(i + 1), p.blocks[static_cast<std::size_t>(i)],
                   params, buffers);
}

template <class T>
void collect_idm_level(const std::string& prefix, IdmLevelT<T>& l,
                       std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>* buffers) {
  collect_conv(prefix + ".proj", l.proj, params);
  collect_dblock(prefix + ".block", l.block, params, buffers);
}

template <class T>
void collect_model(CdnModelT<T>& m, std::vector<NamedTensor<T>>& params,
                   std::vector<NamedTensor<T>>* buffers) {
  if (m.iip) collect_path("iip", *m.iip, params, buffers);
  if (m.nep) collect_path("nep", *m.nep, params, buffers);
  if (m.heads) {
    collect_conv("heads.conv_img", m.heads->conv_img, params);
    collect_conv("heads.conv_lift", m.heads->conv_lift, params);
  }
  collect_idm_level("idm.enc0", m.idm.enc0, params, buffers);
  collect_idm_level("idm.enc1", m.idm.enc1, params, buffers);
  collect_idm_level("idm.bottleneck", m.idm.bottleneck, params, buffers);
  collect_idm_level("idm.dec1", m.idm.dec1, params, buffers);
  collect_idm_level("idm.dec0", m.idm.dec0, params, buffers);
  collect_conv("idm.out", m.idm.out, params);
}

}  // namespace detail

template <class T>
std::vector<NamedTensor<T>> parameters(CdnModelT<T>& m) {
  std::vector<NamedTensor<T>> params;
  detail::collect_model(m, params, static_cast<std::vector<NamedTensor<T>>*>(nullptr));
  return params;
}

// Non-trainable state (batch-norm running statistics).
template <class T>
std::vector<NamedTensor<T>> state_buffers(CdnModelT<T>& m) {
  std::vector<NamedTensor<T>> params, buffers;
  detail::collect_model(m, params, &buffers);
  return buffers;
}

template <class T>
std::int64_t parameter_count(CdnModelT<T>& m) {
  std::int64_t total = 0;
  for (const auto& p : parameters(m)) total += p.tensor->numel();
  return total;
}

// He-normal conv weights, zero biases, BN gamma 1 / beta 0, PReLU 0.25.
// The final IDM conv starts at zero so a fresh model estimates zero noise.
template <class T>
void init_parameters(CdnModelT<T>& m, std::uint64_t seed) {
  GaussianSampler sampler(derive_seed(seed, 0x1817));
  for (auto& p : parameters(m)) {
    const Shape s = p.tensor->shape();
    const bool is_weight = p.name.size() > 7 && p.name.rfind(".weight") == p.name.size() - 7;
    if (!is_weight) continue;  // biases/gamma/beta/prelu keep constructor values
    if (p.name == "idm.out.weight") {
      std::fill(p.tensor->data(), p.tensor->data() + s.numel(), T(0));
      continue;
    }
    const double fan_in = static_cast<double>(s.c * s.h * s.w);
    const double stddev = std::sqrt(2.0 / fan_in);
    T* d = p.tensor->data();
    for (std::int64_t i = 0; i < s.numel(); ++i)
      d[i] = static_cast<T>(sampler.gaussian() * stddev);
  }
  for (auto& p : parameters(m)) p.tensor->set_requires_grad();
}

template <class T>
void zero_gradients(CdnModelT<T>& m) {
  for (auto& p : parameters(m)) p.tensor->zero_grad();
}

// ---------------------------------------------------------------------------
// Forward procedures
// ---------------------------------------------------------------------------

template <class T>
struct IipOut {
  TensorT<T> feat;  // (n, F, h, w)
  TensorT<T> x_c;   // denoised-image estimate, trained by the SSIM term
  TensorT<T> x_n;   // feature-space noise estimate forwarded to the IDM
};

// x in [0,1]. x_c = conv_img(PathNet(x)); x_n = conv_lift(x) - PathNet(x).
template <class T>
IipOut<T> iip_forward(CdnModelT<T>& m, const TensorT<T>& x, bool training) {
  if (!m.iip) throw ConfigError("iip_forward: model built without the image-information path");
  IipOut<T> out;
  out.feat = path_forward(*m.iip, x, training);
  out.x_c = m.heads->conv_img(out.feat);
  out.x_n = sub(m.heads->conv_lift(x), out.feat);
  return out;
}

template <class T>
struct NepOut {
  TensorT<T> feat;  // (n, F, h, w)
  TensorT<T> p;     // (n, 1, h, w), one distribution per sample
};

// Noise features plus their spatial distribution: a fixed channel average
// reduced through softmax over all positions of each sample.
template <class T>
NepOut<T> nep_forward(CdnModelT<T>& m, const TensorT<T>& x, bool training) {
  if (!m.nep) throw ConfigError("nep_forward: model built without the noise-estimation path");
  NepOut<T> out;
  out.feat = path_forward(*m.nep, x, training);
  out.p = softmax_flat(channel_mean(out.feat));
  return out;
}

// Fuses the two path outputs into an image-space noise estimate. Either input
// may be undefined when the corresponding path is absent from the model.
template <class T>
TensorT<T> idm_forward(CdnModelT<T>& m, const TensorT<T>& x_n, const TensorT<T>& nep_feat,
                       bool training) {
  TensorT<T> fused;
  if (x_n.defined() && nep_feat.defined()) {
    if (!(x_n.shape() == nep_feat.shape()))
      throw ShapeError("idm_forward: path outputs disagree: " + x_n.shape().str() + " vs " +
                       nep_feat.shape().str());
    fused = concat_channels(x_n, nep_feat);
  } else if (x_n.defined()) {
    fused = x_n;
  } else if (nep_feat.defined()) {
    fused = nep_feat;
  } else {
    throw ShapeError("idm_forward: at least one path output required");
  }
  return idm_net_forward(m.idm, fused, training);
}

template <class T>
struct TrainForward {
  TensorT<T> x_tilde;             // denoised first patch
  TensorT<T> x_c;                 // image-head output (undefined without IIP)
  std::array<TensorT<T>, 4> p;    // patch distributions (undefined without NEP)
};

// Training-stage forward: IIP on the first patch, NEP on all four, IDM fusion,
// then residual subtraction. Set need_all_patches=false when the
// self-similarity term is disabled to skip the three unused NEP passes.
template <class T>
TrainForward<T> cdn_forward_train(CdnModelT<T>& m, const std::array<TensorT<T>, 4>& x,
                                  const TensorT<T>& y1, bool need_all_patches = true) {
  for (int i = 1; i < 4; ++i)
    if (!(x[static_cast<std::size_t>(i)].shape() == x[0].shape()))
      throw ShapeError("cdn_forward_train: patches must share one shape");
  if (y1.defined() && !(y1.shape() == x[0].shape()))
    throw ShapeError("cdn_forward_train: clean patch shape mismatch");

  TrainForward<T> out;
  TensorT<T> x_n, nep_feat;
  if (m.config.use_iip) {
    IipOut<T> iip = iip_forward(m, x[0], /*training=*/true);
    out.x_c = iip.x_c;
    x_n = iip.x_n;
  }
  if (m.config.use_nep) {
    NepOut<T> first = nep_forward(m, x[0], /*training=*/true);
    nep_feat = first.feat;
    out.p[0] = first.p;
    if (need_all_patches) {
      for (std::size_t i = 1; i < 4; ++i)
        out.p[i] = nep_forward(m, x[i], /*training=*/true).p;
    }
  }
  out.x_tilde = sub(x[0], idm_forward(m, x_n, nep_feat, /*training=*/true));
  return out;
}

enum class PathCut { none, iip, nep, both };

template <class T>
struct EvalResult {
  TensorT<T> denoised;
  TensorT<T> noise;  // exact complement: denoised + noise reconstructs the input
};

// Testing-stage forward on a complete image: reflect-pad to the IDM grid,
// estimate noise, crop back, subtract. BN uses running statistics.
template <class T>
EvalResult<T> cdn_forward_eval(CdnModelT<T>& m, const TensorT<T>& x, PathCut cut = PathCut::none) {
  const Shape xs = x.shape();
  const std::int64_t pad_h = (kIdmMultiple - xs.h % kIdmMultiple) % kIdmMultiple;
  const std::int64_t pad_w = (kIdmMultiple - xs.w % kIdmMultiple) % kIdmMultiple;
  TensorT<T> xp = (pad_h || pad_w) ? reflect_pad(x, std::int64_t(0), pad_h, std::int64_t(0), pad_w)
                                   : x;

  const Shape feat_shape(xs.n, m.config.feature_width, xp.shape().h, xp.shape().w);
  const bool cut_iip = cut == PathCut::iip || cut == PathCut::both;
  const bool cut_nep = cut == PathCut::nep || cut == PathCut::both;
  TensorT<T> x_n, nep_feat;
  if (m.config.use_iip) {
    if (cut_iip) {
      x_n = TensorT<T>(feat_shape, T(0));
    } else {
      TensorT<T> feat = path_forward(*m.iip, xp, /*training=*/false);
      x_n = sub(m.heads->conv_lift(xp), feat);
    }
  }
  if (m.config.use_nep) {
    nep_feat = cut_nep ? TensorT<T>(feat_shape, T(0))
                       : path_forward(*m.nep, xp, /*training=*/false);
  }
  TensorT<T> noise = idm_forward(m, x_n, nep_feat, /*training=*/false);
  if (pad_h || pad_w) noise = crop(noise, 0, 0, xs.h, xs.w);

  EvalResult<T> res;
  res.denoised = sub(x, noise);
  res.noise = sub(x, res.denoised);  // re-derived so denoised + noise == x
  return res;
}

// Inference-time path cut-off: the chosen path's output is replaced by zeros
// of the same size; parameters are untouched.
template <class T>
struct AblatedModelT {
  CdnModelT<T>* model;
  PathCut cut;

  EvalResult<T> eval(const TensorT<T>& x) const { return cdn_forward_eval(*model, x, cut); }
};

template <class T>
AblatedModelT<T> zero_path_ablation(CdnModelT<T>& m, PathCut path) {
  if (path == PathCut::iip && !m.config.use_iip)
    throw ConfigError("zero_path_ablation: model has no image-information path");
  if (path == PathCut::nep && !m.config.use_nep)
    throw ConfigError("zero_path_ablation: model has no noise-estimation path");
  return AblatedModelT<T>{&m, path};
}

}  // namespace cdn

#endif  // CDN_MODEL_HPP
