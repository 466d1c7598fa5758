// SPDX-License-Identifier: Apache-2.0
//
// Synthetic bi-temporal fire scenes with known scars, for desk-scale training.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "burnlora/dataplane/scene.hpp"
#include "burnlora/diffcore/rng.hpp"

namespace burnlora::dataplane {

struct ScarParams {
  int blobs_min = 1;
  int blobs_max = 3;
  double radius_min = 16.0;      // pixels
  double radius_max = 34.0;
  double wobble = 0.2;           // relative amplitude of the boundary harmonics
  double fraction_min = 0.04;    // accepted burned fraction of the scene
  double fraction_max = 0.5;
  int max_attempts = 500;

  // Mean pre-fire reflectance per band (B4, B8, B12) and background variability.
  double base[3] = {0.06, 0.28, 0.16};
  double background_std = 0.03;
  double pixel_noise = 0.01;
  int coarse_grid = 5;

  // Post-fire shift inside the scar, scaled per pixel by a severity in [severity_min, 1].
  double delta[3] = {0.02, -0.12, 0.10};
  double severity_min = 0.6;

  std::vector<int> years{2017, 2018, 2019, 2020, 2021, 2022, 2023};
  std::vector<std::string> biomes;  // empty: the default vocabulary
  double area_min_ha = 120.0;
  double area_max_ha = 5000.0;
  double qa_max = 0.15;

  /// Throws ConfigError for impossible settings (a blob that cannot fit, empty pools, ...).
  void validate(std::int64_t height, std::int64_t width) const;
};

/// Scene i is drawn from an Rng derived from (rng.seed(), i), so a scene does
/// not depend on how many were generated before it.
std::vector<RasterScene> synth_generate(const diffcore::Rng& rng, int n_scenes, std::int64_t height,
                                        std::int64_t width, const ScarParams& params = {});

}  // namespace burnlora::dataplane
