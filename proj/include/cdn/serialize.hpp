// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_SERIALIZE_HPP
#define CDN_SERIALIZE_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cdn/core.hpp"
#include "cdn/model.hpp"
#include "cdn/optim.hpp"

namespace cdn {

namespace detail {

// Explicit little-endian encoding, independent of host byte order.
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string origin;

  void need(std::size_t n) const {
    if (buf.size() - pos < n) throw DataError(origin + ": truncated file");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

template <class T>
void put_tensor_record(std::string& out, const std::string& name, const TensorT<T>& t) {
  if (name.size() > 0xffff) throw ConfigError("tensor name too long: " + name);
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  const Shape s = t.shape();
  put_u32(out, static_cast<std::uint32_t>(s.n));
  put_u32(out, static_cast<std::uint32_t>(s.c));
  put_u32(out, static_cast<std::uint32_t>(s.h));
  put_u32(out, static_cast<std::uint32_t>(s.w));
  const T* d = t.data();
  for (std::int64_t i = 0; i < s.numel(); ++i) put_f32(out, static_cast<float>(d[i]));
}

inline std::pair<std::string, Tensor> get_tensor_record(ByteReader& r) {
  const std::uint16_t len = r.u16();
  std::string name = r.bytes(len);
  const std::int64_t n = r.u32(), c = r.u32(), h = r.u32(), w = r.u32();
  Tensor t(Shape(n, c, h, w));
  float* d = t.data();
  for (std::int64_t i = 0; i < t.numel(); ++i) d[i] = r.f32();
  return {std::move(name), std::move(t)};
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write: " + path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CDNT: single-tensor debug dump. magic, u32 version, 4 x u32 shape, raw f32.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kTensorDumpVersion = 1;

template <class T>
void dump_tensor(const TensorT<T>& t, const std::string& path) {
  std::string out;
  out.append("CDNT");
  detail::put_u32(out, kTensorDumpVersion);
  const Shape s = t.shape();
  detail::put_u32(out, static_cast<std::uint32_t>(s.n));
  detail::put_u32(out, static_cast<std::uint32_t>(s.c));
  detail::put_u32(out, static_cast<std::uint32_t>(s.h));
  detail::put_u32(out, static_cast<std::uint32_t>(s.w));
  for (std::int64_t i = 0; i < s.numel(); ++i) detail::put_f32(out, static_cast<float>(t.data()[i]));
  detail::write_file(path, out);
}

inline Tensor load_tensor(const std::string& path) {
  const std::string buf = detail::read_file(path);
  detail::ByteReader r{buf, 0, path};
  if (r.bytes(4) != "CDNT") throw DataError(path + ": not a CDNT tensor dump");
  const std::uint32_t version = r.u32();
  if (version != kTensorDumpVersion)
    throw DataError(path + ": unsupported CDNT version " + std::to_string(version));
  const std::int64_t n = r.u32(), c = r.u32(), h = r.u32(), w = r.u32();
  Tensor t(Shape(n, c, h, w));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = r.f32();
  return t;
}

// ---------------------------------------------------------------------------
// CDNC checkpoint: model tensors, optimizer state in the same framing, then
// trainer counters and the run configuration as key = value text.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::vector<std::pair<std::string, Tensor>> tensors;       // params + bn buffers
  std::vector<std::pair<std::string, Tensor>> opt_tensors;   // adam.m.* / adam.v.*
  bool has_optimizer = false;
  std::int64_t adam_t = 0;
  std::int64_t epoch = 0;
  std::int64_t global_step = 0;
  std::string config_text;
};

inline void save_checkpoint_raw(const CheckpointData& ckpt, const std::string& path) {
  std::string out;
  out.append("CDNC");
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) detail::put_tensor_record(out, name, t);
  out.push_back(ckpt.has_optimizer ? char(1) : char(0));
  if (ckpt.has_optimizer) {
    detail::put_u64(out, static_cast<std::uint64_t>(ckpt.adam_t));
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.opt_tensors.size()));
    for (const auto& [name, t] : ckpt.opt_tensors) detail::put_tensor_record(out, name, t);
  }
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.epoch));
  detail::put_u64(out, static_cast<std::uint64_t>(ckpt.global_step));
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
  out.append(ckpt.config_text);
  detail::write_file(path, out);
}

inline CheckpointData load_checkpoint_raw(const std::string& path) {
  const std::string buf = detail::read_file(path);
  detail::ByteReader r{buf, 0, path};
  if (r.bytes(4) != "CDNC") throw DataError(path + ": not a CDNC checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(path + ": unsupported CDNC version " + std::to_string(version));
  CheckpointData ckpt;
  const std::uint32_t count = r.u32();
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) ckpt.tensors.push_back(detail::get_tensor_record(r));
  r.need(1);
  ckpt.has_optimizer = r.bytes(1)[0] != 0;
  if (ckpt.has_optimizer) {
    ckpt.adam_t = static_cast<std::int64_t>(r.u64());
    const std::uint32_t opt_count = r.u32();
    for (std::uint32_t i = 0; i < opt_count; ++i)
      ckpt.opt_tensors.push_back(detail::get_tensor_record(r));
  }
  ckpt.epoch = r.u32();
  ckpt.global_step = static_cast<std::int64_t>(r.u64());
  const std::uint32_t cfg_len = r.u32();
  ckpt.config_text = r.bytes(cfg_len);
  return ckpt;
}

// Gathers model parameters, BN buffers, and optional Adam moments.
template <class T>
CheckpointData make_checkpoint(CdnModelT<T>& model, const AdamStateT<T>* adam,
                               const std::string& config_text, std::int64_t epoch,
                               std::int64_t global_step) {
  CheckpointData ckpt;
  auto params = parameters(model);
  for (const auto& p : params) ckpt.tensors.push_back({p.name, cast_tensor<float>(*p.tensor)});
  for (const auto& b : state_buffers(model))
    ckpt.tensors.push_back({b.name, cast_tensor<float>(*b.tensor)});
  if (adam) {
    ckpt.has_optimizer = true;
    ckpt.adam_t = adam->t;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.opt_tensors.push_back({"adam.m." + params[i].name, cast_tensor<float>(adam->m[i])});
      ckpt.opt_tensors.push_back({"adam.v." + params[i].name, cast_tensor<float>(adam->v[i])});
    }
  }
  ckpt.epoch = epoch;
  ckpt.global_step = global_step;
  ckpt.config_text = config_text;
  return ckpt;
}

template <class T>
CheckpointData make_checkpoint(CdnModelT<T>& model, const std::string& config_text,
                               std::int64_t epoch, std::int64_t global_step) {
  return make_checkpoint(model, static_cast<const AdamStateT<T>*>(nullptr), config_text, epoch,
                         global_step);
}

// Fills an already-built model (names must match bijectively in the param +
// buffer section) and, when present and requested, the Adam moments.
template <class T>
void apply_checkpoint(const CheckpointData& ckpt, CdnModelT<T>& model, AdamStateT<T>* adam) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  auto assign = [&](const NamedTensor<T>& dst) {
    auto it = by_name.find(dst.name);
    if (it == by_name.end()) throw DataError("checkpoint is missing tensor '" + dst.name + "'");
    if (!(it->second->shape() == dst.tensor->shape()))
      throw DataError("checkpoint tensor '" + dst.name + "' has shape " +
                      it->second->shape().str() + ", model expects " + dst.tensor->shape().str());
    const float* src = it->second->data();
    T* d = dst.tensor->data();
    for (std::int64_t i = 0; i < dst.tensor->numel(); ++i) d[i] = static_cast<T>(src[i]);
    by_name.erase(it);
  };
  auto params = parameters(model);
  for (const auto& p : params) assign(p);
  for (const auto& b : state_buffers(model)) assign(b);
  if (!by_name.empty())
    throw DataError("checkpoint has " + std::to_string(by_name.size()) +
                    " tensors unknown to the model, first: '" + by_name.begin()->first + "'");
  if (adam != nullptr) {
    if (!ckpt.has_optimizer) throw DataError("checkpoint has no optimizer state to resume from");
    std::map<std::string, const Tensor*> opt;
    for (const auto& [name, t] : ckpt.opt_tensors) opt[name] = &t;
    *adam = AdamStateT<T>(params);
    adam->t = ckpt.adam_t;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (const char* kind : {"m", "v"}) {
        const std::string key = std::string("adam.") + kind + "." + params[i].name;
        auto it = opt.find(key);
        if (it == opt.end()) throw DataError("checkpoint is missing '" + key + "'");
        TensorT<T>& dst = kind[0] == 'm' ? adam->m[i] : adam->v[i];
        if (!(it->second->shape() == dst.shape()))
          throw DataError("optimizer tensor '" + key + "' has the wrong shape");
        const float* src = it->second->data();
        for (std::int64_t j = 0; j < dst.numel(); ++j) dst.data()[j] = static_cast<T>(src[j]);
      }
    }
  }
}

template <class T>
void apply_checkpoint(const CheckpointData& ckpt, CdnModelT<T>& model) {
  apply_checkpoint(ckpt, model, static_cast<AdamStateT<T>*>(nullptr));
}

}  // namespace cdn

#endif  // CDN_SERIALIZE_HPP
