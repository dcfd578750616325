#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "llp/data.hpp"
#include "llp/rng.hpp"

namespace llp {

/// Configuration of the synthetic world. The class map is a thresholded
/// multi-octave value-noise field; chip colors are the class palette plus
/// uniform pixel noise; communes are Voronoi cells over seeded grid points.
struct SynthConfig {
  uint64_t seed = 1234;
  int world_chips_x = 40;
  int world_chips_y = 50;
  int n_classes = 3;
  int noise_octaves = 3;
  int commune_count = 40;
  double noise_base_period = 256.0;          // pixels per lattice cell at octave 0
  std::vector<double> class_thresholds;      // strictly increasing, size n_classes-1
  std::vector<std::array<double, 3>> palette;  // size n_classes, values in [0,1]
  double pixel_noise_amp = 0.05;

  /// Fills thresholds/palette with the documented defaults for n_classes
  /// when they are empty, then checks all invariants.
  void finalize();
};

/// Deterministic (seed, config) -> dataset. Chips carry exact labels and a
/// single commune overlap of weight 1; the commune table is aggregated from
/// the generated labels.
Dataset generate_world(SynthConfig config);

/// Value-noise field sample in [0,1] at world pixel (px, py).
double synth_noise(const SynthConfig& config, int64_t px, int64_t py);

}  // namespace llp
