#pragma once

// Synthetic labelled scene: Gaussian-shaped class spectra laid out as
// vertical stripes inside a background frame. Each pixel gets a random gain
// and additive noise, so brightness varies within a class.

#include <cmath>
#include <cstdint>

#include "hsiseg/core.hpp"
#include "hsiseg/hsi_data.hpp"

namespace hsiseg::synthetic {

struct SceneOptions {
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t bands = 112;
  std::size_t classes = 7;
  std::size_t border = 2;     // background frame thickness
  double peak_width = 6.0;    // band units
  double baseline = 0.2;
  double gain_min = 0.6;
  double gain_max = 1.4;
  double noise_sigma = 0.03;
  std::uint64_t seed = 7;
};

struct Scene {
  data::HyperCube cube;
  data::GroundTruth truth;
};

/// Class c peaks at band (c + 0.5) * bands / classes.
inline double class_spectrum(const SceneOptions& o, std::size_t c, std::size_t band) {
  const double centre = (static_cast<double>(c) + 0.5) * static_cast<double>(o.bands) / static_cast<double>(o.classes);
  const double z = (static_cast<double>(band) - centre) / o.peak_width;
  return o.baseline + std::exp(-0.5 * z * z);
}

inline Scene make_scene(const SceneOptions& o = {}) {
  if (o.classes < 1 || o.bands < 1 || o.width <= 2 * o.border || o.height <= 2 * o.border)
    throw Error("make_scene: invalid scene options");
  const std::size_t inner = o.width - 2 * o.border;
  if (inner < o.classes) throw Error("make_scene: scene too narrow for the class count");
  Scene s;
  s.cube.width = o.width;
  s.cube.height = o.height;
  s.cube.bands = o.bands;
  s.cube.data.assign(o.width * o.height * o.bands, 0.0f);
  for (std::size_t b = 0; b < o.bands; ++b) s.cube.wavelengths.push_back(400.0 + 2.5 * static_cast<double>(b));
  s.truth = {o.width, o.height, std::vector<std::int32_t>(o.width * o.height, 0)};
  Rng rng(o.seed);
  for (std::size_t y = 0; y < o.height; ++y) {
    for (std::size_t x = 0; x < o.width; ++x) {
      const bool fg = x >= o.border && x < o.width - o.border && y >= o.border && y < o.height - o.border;
      const double gain = rng.uniform(o.gain_min, o.gain_max);
      std::size_t cls = 0;
      if (fg) {
        cls = (x - o.border) * o.classes / inner;
        s.truth.labels[y * o.width + x] = static_cast<std::int32_t>(cls + 1);
      }
      for (std::size_t b = 0; b < o.bands; ++b) {
        const double signal = fg ? gain * class_spectrum(o, cls, b) : 0.05 * gain;
        s.cube.at(x, y, b) = static_cast<float>(signal + rng.normal(0.0, o.noise_sigma));
      }
    }
  }
  return s;
}

}  // namespace hsiseg::synthetic
