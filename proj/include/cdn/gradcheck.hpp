// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_GRADCHECK_HPP
#define CDN_GRADCHECK_HPP

#include <cstring>
#include <vector>

#include "cdn/core.hpp"

namespace cdn {

struct GradCheckOptions {
  double rel_tol = 1e-3;
  double abs_tol = 1e-5;
  double step = 1e-3;
  std::int64_t max_per_input = 0;  // 0 = check every element
  std::uint64_t sample_seed = 0x5eed;
};

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::int64_t checked = 0;
  // worst element (by relative error among elements above the absolute floor)
  std::size_t worst_input = 0;
  std::int64_t worst_index = 0;
  double worst_autodiff = 0.0;
  double worst_fd = 0.0;
};

// Compares the production-precision autodiff gradient of a scalar-valued
// tensor function against central finite differences recomputed in double.
// `fn` must accept both float and double tensors (generic callable) and be
// deterministic; two forward passes that disagree raise NumericalError.
template <class Fn>
GradCheckReport grad_check(Fn&& fn, const std::vector<TensorT<double>>& inputs,
                           const GradCheckOptions& opt = {}) {
  // Autodiff pass at float precision.
  std::vector<TensorT<float>> finputs;
  finputs.reserve(inputs.size());
  for (const auto& t : inputs) {
    auto f = cast_tensor<float>(t);
    f.set_requires_grad();
    finputs.push_back(f);
  }
  TapeT<float> tape;
  TensorT<float> loss;
  {
    typename TapeT<float>::Scope scope(tape);
    loss = fn(finputs);
  }
  if (loss.numel() != 1) throw ShapeError("grad_check: fn must return a scalar");
  {
    TapeT<float> tape2;
    typename TapeT<float>::Scope scope(tape2);
    TensorT<float> loss2 = fn(finputs);
    if (std::memcmp(loss.data(), loss2.data(), sizeof(float)) != 0)
      throw NumericalError("grad_check: fn is not deterministic (forward passes differ)");
  }
  {
    typename TapeT<float>::Scope scope(tape);
    tape.backward(loss);
  }

  GradCheckReport report;
  double worst_rel = -1.0;
  GaussianSampler sampler(opt.sample_seed);
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const std::int64_t n = inputs[which].numel();
    std::vector<std::int64_t> indices;
    if (opt.max_per_input > 0 && n > opt.max_per_input) {
      for (std::int64_t i = 0; i < opt.max_per_input; ++i)
        indices.push_back(static_cast<std::int64_t>(sampler.next_u64() % static_cast<std::uint64_t>(n)));
    } else {
      indices.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
    }
    for (const std::int64_t idx : indices) {
      std::vector<TensorT<double>> probe;
      probe.reserve(inputs.size());
      for (const auto& t : inputs) probe.push_back(t.detach_copy());
      const double x0 = probe[which].data()[idx];
      auto fd_at = [&](double step) {
        probe[which].data()[idx] = x0 + step;
        const double fplus = static_cast<double>(fn(probe).item());
        probe[which].data()[idx] = x0 - step;
        const double fminus = static_cast<double>(fn(probe).item());
        probe[which].data()[idx] = x0;
        return (fplus - fminus) / (2.0 * step);
      };
      // Two steps detect piecewise-linear kinks inside the probe interval
      // (the estimates disagree); refine the step until they stabilize. A
      // wrong backward rule disagrees at every step, so this cannot mask one.
      double fd = fd_at(opt.step);
      for (double step = opt.step / 16.0; step >= opt.step / 4096.0; step /= 16.0) {
        const double finer = fd_at(step);
        const double scale = std::max(std::abs(fd), std::abs(finer));
        if (std::abs(fd - finer) <= std::max(opt.abs_tol, 0.25 * opt.rel_tol * scale)) {
          fd = finer;
          break;
        }
        fd = finer;
      }
      const double ad = static_cast<double>(finputs[which].grad()[idx]);
      const double abs_err = std::abs(ad - fd);
      const double scale = std::max(std::abs(ad), std::abs(fd));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      ++report.checked;
      if (abs_err > opt.abs_tol) {
        report.max_rel_err = std::max(report.max_rel_err, rel_err);
        if (rel_err > opt.rel_tol) report.pass = false;
        if (rel_err > worst_rel) {
          worst_rel = rel_err;
          report.worst_input = which;
          report.worst_index = idx;
          report.worst_autodiff = ad;
          report.worst_fd = fd;
        }
      }
    }
  }
  return report;
}

}  // namespace cdn

#endif  // CDN_GRADCHECK_HPP
