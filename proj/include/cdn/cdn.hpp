// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_CDN_HPP
#define CDN_CDN_HPP

// Umbrella header for the compositional denoising toolkit.

#include "cdn/ablation.hpp"
#include "cdn/core.hpp"
#include "cdn/data.hpp"
#include "cdn/gradcheck.hpp"
#include "cdn/image.hpp"
#include "cdn/losses.hpp"
#include "cdn/metrics.hpp"
#include "cdn/model.hpp"
#include "cdn/ops.hpp"
#include "cdn/optim.hpp"
#include "cdn/serialize.hpp"
#include "cdn/smoke.hpp"
#include "cdn/train.hpp"

#endif  // CDN_CDN_HPP
