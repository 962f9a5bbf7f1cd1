// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_ABLATION_HPP
#define CDN_ABLATION_HPP

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "cdn/metrics.hpp"
#include "cdn/train.hpp"

namespace cdn {

// The Table-5 matrix: retrained variants (path removal, loss toggles) plus
// the inference-time cut-off variants of the full model.
inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names = {
      "CDN", "CDN-IIP", "CDN-NEP", "CDN-IIP(R)", "CDN-NEP(R)",
      "CDN-SSIM", "CDN-KLD", "CDN-SSIM-KLD"};
  return names;
}

struct AblationCell {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct AblationResult {
  // per_seed[s][variant] -> metrics; means averaged over seeds
  std::vector<std::map<std::string, AblationCell>> per_seed;
  std::map<std::string, AblationCell> mean;
  std::string table_text;
};

namespace detail {

inline TrainConfig variant_config(const TrainConfig& base, const std::string& name) {
  TrainConfig c = base;
  if (name == "CDN-IIP(R)") c.drop_path = "iip";
  else if (name == "CDN-NEP(R)") c.drop_path = "nep";
  else if (name == "CDN-SSIM") c.ssim_loss = false;
  else if (name == "CDN-KLD") c.kld_loss = false;
  else if (name == "CDN-SSIM-KLD") { c.ssim_loss = false; c.kld_loss = false; }
  return c;
}

}  // namespace detail

// Trains every retrained variant per seed, evaluates all eight rows on the
// test set, and renders an aligned PSNR/SSIM table.
inline AblationResult run_ablation(const TrainConfig& base, const Dataset& train_set,
                                   const Dataset& test_set, std::int64_t seeds = 3,
                                   std::uint64_t eval_seed = 7, bool verbose = false) {
  if (seeds < 1) throw ConfigError("run_ablation: seeds must be >= 1");
  AblationResult result;
  for (std::int64_t s = 0; s < seeds; ++s) {
    std::map<std::string, AblationCell> row;
    TrainConfig seeded = base;
    seeded.seed = derive_seed(base.seed, 0xab1a, static_cast<std::uint64_t>(s));

    if (verbose) std::printf("[ablate] seed %lld: training CDN\n", static_cast<long long>(s));
    TrainResult full = train(seeded, train_set);
    {
      MetricReport r = evaluate(full.state.model, test_set, seeded.sigma, eval_seed);
      row["CDN"] = {r.psnr_db, r.ssim};
    }
    {
      MetricReport r = evaluate(full.state.model, test_set, seeded.sigma, eval_seed, PathCut::iip);
      row["CDN-IIP"] = {r.psnr_db, r.ssim};
    }
    {
      MetricReport r = evaluate(full.state.model, test_set, seeded.sigma, eval_seed, PathCut::nep);
      row["CDN-NEP"] = {r.psnr_db, r.ssim};
    }
    for (const std::string& name :
         {std::string("CDN-IIP(R)"), std::string("CDN-NEP(R)"), std::string("CDN-SSIM"),
          std::string("CDN-KLD"), std::string("CDN-SSIM-KLD")}) {
      if (verbose)
        std::printf("[ablate] seed %lld: training %s\n", static_cast<long long>(s), name.c_str());
      TrainResult var = train(detail::variant_config(seeded, name), train_set);
      MetricReport r = evaluate(var.state.model, test_set, seeded.sigma, eval_seed);
      row[name] = {r.psnr_db, r.ssim};
    }
    result.per_seed.push_back(std::move(row));
  }

  for (const std::string& name : ablation_variants()) {
    AblationCell mean;
    for (const auto& row : result.per_seed) {
      mean.psnr_db += row.at(name).psnr_db;
      mean.ssim += row.at(name).ssim;
    }
    mean.psnr_db /= static_cast<double>(seeds);
    mean.ssim /= static_cast<double>(seeds);
    result.mean[name] = mean;
  }

  std::string& t = result.table_text;
  char line[128];
  std::snprintf(line, sizeof(line), "%-14s %10s %8s   (sigma=%g, seeds=%lld)\n", "Method", "PSNR",
                "SSIM", base.sigma, static_cast<long long>(seeds));
  t += line;
  t += "------------------------------------\n";
  for (const std::string& name : ablation_variants()) {
    const AblationCell& c = result.mean.at(name);
    std::snprintf(line, sizeof(line), "%-14s %10.2f %8.4f\n", name.c_str(), c.psnr_db, c.ssim);
    t += line;
  }
  return result;
}

}  // namespace cdn

#endif  // CDN_ABLATION_HPP
