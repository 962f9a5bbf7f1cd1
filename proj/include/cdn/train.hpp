// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_TRAIN_HPP
#define CDN_TRAIN_HPP

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cdn/core.hpp"
#include "cdn/data.hpp"
#include "cdn/losses.hpp"
#include "cdn/metrics.hpp"
#include "cdn/model.hpp"
#include "cdn/optim.hpp"
#include "cdn/serialize.hpp"

namespace cdn {

// ---------------------------------------------------------------------------
// Run configuration. Defaults follow the training recipe: Adam, lr 2e-4,
// weight decay 1e-4, batch 64, step decay x0.5 every 30 epochs.
// ---------------------------------------------------------------------------

struct TrainConfig {
  // model
  std::int64_t channels = 1;
  std::int64_t f_width = 64;
  std::array<std::int64_t, 3> idm_widths = {64, 128, 256};
  std::string drop_path;  // "", "iip" or "nep": structurally removed + retrained variants
  // loss toggles / weights (1,1,1 is the plain unweighted sum)
  bool ssim_loss = true;
  bool kld_loss = true;
  double w_ssim = 1.0, w_kld = 1.0, w_l1 = 1.0;
  // optimization
  double lr0 = 2e-4;
  double lr_decay_factor = 0.5;
  std::int64_t lr_decay_every = 30;
  double weight_decay = 1e-4;
  std::int64_t batch = 64;
  std::int64_t epochs = 50;
  std::int64_t max_steps = 0;  // 0 = run all epochs
  double sigma = 25.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (lr0 < 0) throw ConfigError("lr0 must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1)
      throw ConfigError("lr decay factor must be in (0, 1]");
    if (sigma < 0) throw ConfigError("sigma must be >= 0");
    if (drop_path != "" && drop_path != "iip" && drop_path != "nep")
      throw ConfigError("drop_path must be iip or nep");
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  }

  CdnConfig model_config() const {
    CdnConfig mc;
    mc.channels = channels;
    mc.feature_width = f_width;
    mc.idm_widths = idm_widths;
    mc.use_iip = drop_path != "iip";
    mc.use_nep = drop_path != "nep";
    return mc;
  }

  LossToggles toggles() const {
    // a removed path forces its loss term off
    return LossToggles{ssim_loss && drop_path != "iip", kld_loss && drop_path != "nep"};
  }
};

// ---------------------------------------------------------------------------
// key = value serialization, shared by the config file and the checkpoint.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string config_to_text(const TrainConfig& c) {
  std::ostringstream o;
  o << "channels = " << c.channels << "\n";
  o << "f_width = " << c.f_width << "\n";
  o << "idm_widths = " << c.idm_widths[0] << "," << c.idm_widths[1] << "," << c.idm_widths[2] << "\n";
  o << "drop_path = " << c.drop_path << "\n";
  o << "ssim_loss = " << (c.ssim_loss ? "true" : "false") << "\n";
  o << "kld_loss = " << (c.kld_loss ? "true" : "false") << "\n";
  o << "w_ssim = " << detail::fmt_double(c.w_ssim) << "\n";
  o << "w_kld = " << detail::fmt_double(c.w_kld) << "\n";
  o << "w_l1 = " << detail::fmt_double(c.w_l1) << "\n";
  o << "lr0 = " << detail::fmt_double(c.lr0) << "\n";
  o << "lr_decay_factor = " << detail::fmt_double(c.lr_decay_factor) << "\n";
  o << "lr_decay_every = " << c.lr_decay_every << "\n";
  o << "weight_decay = " << detail::fmt_double(c.weight_decay) << "\n";
  o << "batch = " << c.batch << "\n";
  o << "epochs = " << c.epochs << "\n";
  o << "max_steps = " << c.max_steps << "\n";
  o << "sigma = " << detail::fmt_double(c.sigma) << "\n";
  o << "seed = " << c.seed << "\n";
  return o.str();
}

inline void apply_config_line(TrainConfig& c, const std::string& key, const std::string& value) {
  auto as_i64 = [&] { return static_cast<std::int64_t>(std::stoll(value)); };
  auto as_f64 = [&] { return std::stod(value); };
  auto as_bool = [&] {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("bad boolean '" + value + "' for key " + key);
  };
  if (key == "channels") c.channels = as_i64();
  else if (key == "f_width") c.f_width = as_i64();
  else if (key == "idm_widths") {
    std::stringstream ss(value);
    std::string tok;
    std::vector<std::int64_t> w;
    while (std::getline(ss, tok, ',')) w.push_back(std::stoll(tok));
    if (w.size() != 3) throw ConfigError("idm_widths needs exactly 3 comma-separated values");
    c.idm_widths = {w[0], w[1], w[2]};
  }
  else if (key == "drop_path") c.drop_path = value;
  else if (key == "ssim_loss") c.ssim_loss = as_bool();
  else if (key == "kld_loss") c.kld_loss = as_bool();
  else if (key == "w_ssim") c.w_ssim = as_f64();
  else if (key == "w_kld") c.w_kld = as_f64();
  else if (key == "w_l1") c.w_l1 = as_f64();
  else if (key == "lr0") c.lr0 = as_f64();
  else if (key == "lr_decay_factor") c.lr_decay_factor = as_f64();
  else if (key == "lr_decay_every") c.lr_decay_every = as_i64();
  else if (key == "weight_decay") c.weight_decay = as_f64();
  else if (key == "batch") c.batch = as_i64();
  else if (key == "epochs") c.epochs = as_i64();
  else if (key == "max_steps") c.max_steps = as_i64();
  else if (key == "sigma") c.sigma = as_f64();
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(value));
  else throw ConfigError("unknown config key '" + key + "'");
}

inline TrainConfig config_from_text(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char ch : line)
        if (!std::isspace(static_cast<unsigned char>(ch))) blank = false;
      if (blank) continue;
      throw ConfigError("config line without '=': " + line);
    }
    auto trim = [](std::string s) {
      std::size_t a = 0, b = s.size();
      while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
      while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
      return s.substr(a, b - a);
    };
    apply_config_line(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainLogEntry {
  std::int64_t step = 0;   // global step, 1-based after the update
  std::int64_t epoch = 0;
  double lr = 0.0;
  double l_ssim = 0.0, l_kld = 0.0, l1 = 0.0, total = 0.0;
};

struct TrainState {
  CdnModel model;
  AdamState adam;
  std::int64_t epoch = 0;        // next epoch to run
  std::int64_t global_step = 0;  // completed optimizer steps

  explicit TrainState(const CdnConfig& mc = {}) : model(mc) {}
};

struct TrainOptions {
  std::string checkpoint_path;  // written once per epoch and at the end ("" = never)
  std::string log_path;         // per-step loss log ("" = no file)
  bool verbose = false;
  const CheckpointData* resume = nullptr;
};

inline void save_train_checkpoint(TrainState& state, const TrainConfig& cfg,
                                  const std::string& path) {
  CheckpointData ckpt = make_checkpoint(state.model, &state.adam, config_to_text(cfg), state.epoch,
                                        state.global_step);
  save_checkpoint_raw(ckpt, path);
}

struct TrainResult {
  TrainState state;
  std::vector<TrainLogEntry> log;

  TrainResult() : state(CdnConfig{}) {}
  explicit TrainResult(const CdnConfig& mc) : state(mc) {}
};

// Per step: batch -> quadrants -> forward -> composite loss -> backward ->
// Adam. Checkpoints once per finished epoch. A non-finite loss aborts with a
// diagnostic dump of the offending batch.
inline TrainResult train(const TrainConfig& cfg, const Dataset& dataset,
                         const TrainOptions& opt = {}) {
  cfg.validate();
  TrainResult result(cfg.model_config());
  TrainState& st = result.state;

  if (opt.resume) {
    const TrainConfig saved = config_from_text(opt.resume->config_text);
    (void)saved;  // the caller decides which config wins; tensors must match the model
    apply_checkpoint(*opt.resume, st.model, &st.adam);
    st.epoch = opt.resume->epoch;
    st.global_step = opt.resume->global_step;
  } else {
    init_parameters(st.model, cfg.seed);
    st.adam = AdamState(parameters(st.model));
  }
  for (auto& p : parameters(st.model)) p.tensor->set_requires_grad();

  AdamConfig adam_cfg;
  adam_cfg.weight_decay = cfg.weight_decay;
  const LossToggles toggles = cfg.toggles();
  const LossWeights weights{cfg.w_ssim, cfg.w_kld, cfg.w_l1};

  std::ofstream log_file;
  if (!opt.log_path.empty()) {
    log_file.open(opt.log_path, std::ios::app);
    if (!log_file) throw DataError("cannot open loss log: " + opt.log_path);
  }

  const std::int64_t steps_per_epoch = (dataset.size() + cfg.batch - 1) / cfg.batch;
  auto params = parameters(st.model);

  while (st.epoch < cfg.epochs) {
    if (cfg.max_steps > 0 && st.global_step >= cfg.max_steps) break;
    const double lr = lr_at(st.epoch, cfg.lr0, cfg.lr_decay_factor, cfg.lr_decay_every);
    const std::int64_t done_in_epoch = st.global_step - st.epoch * steps_per_epoch;
    const std::int64_t start_sample = std::min(done_in_epoch * cfg.batch, dataset.size());
    BatchIter iter(dataset, NoiseSpec{cfg.sigma, cfg.seed}, cfg.batch, cfg.seed, st.epoch,
                   start_sample);
    while (auto batch = iter.next()) {
      if (cfg.max_steps > 0 && st.global_step >= cfg.max_steps) break;
      Tensor y1 = quadrant_split(batch->clean)[0];
      zero_gradients(st.model);
      Tape tape;
      LossTerms terms;
      {
        Tape::Scope scope(tape);
        TrainForward<float> fwd = cdn_forward_train(st.model, batch->quadrants, y1, toggles.kld);
        terms = composite_loss(fwd.x_c, y1, fwd.p, fwd.x_tilde, toggles, weights);
        if (!std::isfinite(static_cast<double>(terms.total_value()))) {
          if (!opt.checkpoint_path.empty())
            dump_tensor(batch->noisy, opt.checkpoint_path + ".nan-batch.cdnt");
          throw NumericalError(
              "non-finite loss at step " + std::to_string(st.global_step + 1) + " (ssim=" +
              std::to_string(terms.ssim_value()) + " kld=" + std::to_string(terms.kld_value()) +
              " l1=" + std::to_string(terms.l1_value()) + ")");
        }
        tape.backward(terms.total);
      }
      adam_step(params, st.adam, static_cast<float>(lr), adam_cfg);
      ++st.global_step;

      TrainLogEntry entry;
      entry.step = st.global_step;
      entry.epoch = st.epoch;
      entry.lr = lr;
      entry.l_ssim = terms.ssim_value();
      entry.l_kld = terms.kld_value();
      entry.l1 = terms.l1_value();
      entry.total = terms.total_value();
      result.log.push_back(entry);
      if (log_file)
        log_file << entry.step << "\t" << entry.epoch << "\t" << entry.lr << "\t" << entry.l_ssim
                 << "\t" << entry.l_kld << "\t" << entry.l1 << "\t" << entry.total << "\n";
      if (opt.verbose && entry.step % 50 == 0)
        std::printf("step %6lld  epoch %4lld  lr %.2e  L %.5f (ssim %.5f kld %.5f l1 %.5f)\n",
                    static_cast<long long>(entry.step), static_cast<long long>(entry.epoch), lr,
                    entry.total, entry.l_ssim, entry.l_kld, entry.l1);
    }
    // st.epoch only advances when the epoch actually finished; a mid-epoch
    // max_steps stop keeps (epoch, global_step) consistent for resume
    if (iter.cursor() < dataset.size()) break;
    ++st.epoch;
    if (!opt.checkpoint_path.empty()) save_train_checkpoint(st, cfg, opt.checkpoint_path);
  }
  if (!opt.checkpoint_path.empty()) save_train_checkpoint(st, cfg, opt.checkpoint_path);
  return result;
}

}  // namespace cdn

#endif  // CDN_TRAIN_HPP
