#include "llp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace llp {

namespace {

constexpr uint64_t kLatticeStream = 0x6C617474696365ULL;   // "lattice"
constexpr uint64_t kCommuneStream = 0x636F6D6D756E65ULL;   // "commune"
constexpr uint64_t kPaletteStream = 0x70616C65747465ULL;   // "palette"

double lattice_value(uint64_t seed, int octave, int64_t ix, int64_t iy) {
  uint64_t key = seed ^ kLatticeStream;
  key = mix64(key, static_cast<uint64_t>(octave) + 1);
  key = mix64(key, static_cast<uint64_t>(ix) * 2 + 0x51ED270B0A1FB425ULL);
  key = mix64(key, static_cast<uint64_t>(iy) * 2 + 1);
  return static_cast<double>(key >> 11) * 0x1.0p-53;
}

int classify(double v, const std::vector<double>& thresholds) {
  int c = 0;
  for (double t : thresholds)
    if (v >= t) ++c;
  return c;
}

}  // namespace

void SynthConfig::finalize() {
  if (n_classes < 1) throw ValueError("synth: n_classes must be >= 1");
  if (world_chips_x < 1 || world_chips_y < 1)
    throw ValueError("synth: world extent must be >= 1 chip");
  if (commune_count < 1) throw ValueError("synth: commune_count must be >= 1");
  if (commune_count > world_chips_x * world_chips_y)
    throw ValueError("synth: more communes than chips");
  if (noise_octaves < 1) throw ValueError("synth: noise_octaves must be >= 1");
  if (pixel_noise_amp < 0 || pixel_noise_amp > 0.5)
    throw ValueError("synth: pixel_noise_amp must be in [0, 0.5]");

  if (class_thresholds.empty() && n_classes > 1) {
    // The noise field is bell-shaped around 0.5; these give a usable
    // balance for the default 3-class world and stay reasonable otherwise.
    for (int c = 1; c < n_classes; ++c)
      class_thresholds.push_back(0.5 + 0.2 * (2.0 * c / n_classes - 1.0));
  }
  if (static_cast<int>(class_thresholds.size()) != n_classes - 1)
    throw ValueError("synth: need n_classes-1 thresholds");
  for (size_t i = 0; i < class_thresholds.size(); ++i) {
    if (class_thresholds[i] <= 0 || class_thresholds[i] >= 1)
      throw ValueError("synth: thresholds must lie in (0,1)");
    if (i > 0 && class_thresholds[i] <= class_thresholds[i - 1])
      throw ValueError("synth: thresholds must be strictly increasing");
  }

  if (palette.empty()) {
    if (n_classes == 3) {
      palette = {{0.12, 0.18, 0.42},   // water-like
                 {0.15, 0.48, 0.22},   // vegetation-like
                 {0.58, 0.55, 0.52}};  // built-up-like
    } else {
      for (int c = 0; c < n_classes; ++c) {
        SplitMix64 g(mix64(kPaletteStream, static_cast<uint64_t>(c)));
        // keep entries away from [0,1] edges so pixel noise never clips
        palette.push_back({0.1 + 0.8 * g.u01(), 0.1 + 0.8 * g.u01(), 0.1 + 0.8 * g.u01()});
      }
    }
  }
  if (static_cast<int>(palette.size()) != n_classes)
    throw ValueError("synth: palette must have one entry per class");
  for (const auto& rgb : palette)
    for (double v : rgb)
      if (v < 0 || v > 1) throw ValueError("synth: palette values must lie in [0,1]");
}

double synth_noise(const SynthConfig& config, int64_t px, int64_t py) {
  double total = 0, weight_sum = 0;
  double period = config.noise_base_period;
  double amp = 1.0;
  for (int o = 0; o < config.noise_octaves; ++o) {
    const double u = static_cast<double>(px) / period;
    const double v = static_cast<double>(py) / period;
    const int64_t i0 = static_cast<int64_t>(std::floor(u));
    const int64_t j0 = static_cast<int64_t>(std::floor(v));
    const double fu = u - static_cast<double>(i0);
    const double fv = v - static_cast<double>(j0);
    const double v00 = lattice_value(config.seed, o, i0, j0);
    const double v10 = lattice_value(config.seed, o, i0 + 1, j0);
    const double v01 = lattice_value(config.seed, o, i0, j0 + 1);
    const double v11 = lattice_value(config.seed, o, i0 + 1, j0 + 1);
    const double top = v00 + (v10 - v00) * fu;
    const double bot = v01 + (v11 - v01) * fu;
    total += amp * (top + (bot - top) * fv);
    weight_sum += amp;
    period *= 0.5;
    amp *= 0.5;
  }
  return total / weight_sum;
}

Dataset generate_world(SynthConfig config) {
  config.finalize();
  const int wx = config.world_chips_x, wy = config.world_chips_y;

  // Commune seed points: distinct chip-grid cells drawn from a dedicated
  // stream. Nearest seed under squared Euclidean distance, ties toward the
  // smaller commune id.
  SplitMix64 commune_rng(config.seed ^ kCommuneStream);
  std::vector<std::pair<int, int>> seeds;
  std::set<std::pair<int, int>> used;
  while (static_cast<int>(seeds.size()) < config.commune_count) {
    const int sx = static_cast<int>(commune_rng.below(static_cast<uint64_t>(wx)));
    const int sy = static_cast<int>(commune_rng.below(static_cast<uint64_t>(wy)));
    if (used.insert({sx, sy}).second) seeds.emplace_back(sx, sy);
  }
  auto nearest_commune = [&](int gx, int gy) {
    uint32_t best = 0;
    int64_t best_d = -1;
    for (size_t k = 0; k < seeds.size(); ++k) {
      const int64_t dx = gx - seeds[k].first;
      const int64_t dy = gy - seeds[k].second;
      const int64_t d = dx * dx + dy * dy;
      if (best_d < 0 || d < best_d) {
        best_d = d;
        best = static_cast<uint32_t>(k);
      }
    }
    return best;
  };

  Dataset ds;
  ds.seed = config.seed;
  ds.n_classes = static_cast<uint8_t>(config.n_classes);
  ds.scheme_name = "synthetic-" + std::to_string(config.n_classes);
  if (config.n_classes == 3) {
    ds.class_labels = {"water", "vegetation", "builtup"};
  } else {
    for (int c = 0; c < config.n_classes; ++c)
      ds.class_labels.push_back("class" + std::to_string(c));
  }

  ds.chips.reserve(static_cast<size_t>(wx) * wy);
  for (int gy = 0; gy < wy; ++gy) {
    for (int gx = 0; gx < wx; ++gx) {
      Chip chip;
      chip.id = static_cast<uint64_t>(gy) * static_cast<uint64_t>(wx) + gx;
      chip.grid_x = gx;
      chip.grid_y = gy;
      chip.overlaps = {Overlap{nearest_commune(gx, gy), 1.0f}};
      chip.rgb.resize(100 * 100 * 3);
      std::vector<uint8_t> labels(100 * 100);
      // Per-chip pixel stream; chips can therefore be rendered independently.
      SplitMix64 pixel_rng(config.seed ^ chip.id);
      for (int y = 0; y < 100; ++y) {
        for (int x = 0; x < 100; ++x) {
          const int64_t px = static_cast<int64_t>(gx) * 100 + x;
          const int64_t py = static_cast<int64_t>(gy) * 100 + y;
          const int cls = classify(synth_noise(config, px, py), config.class_thresholds);
          labels[static_cast<size_t>(y) * 100 + x] = static_cast<uint8_t>(cls);
          for (int ch = 0; ch < 3; ++ch) {
            const double v = config.palette[static_cast<size_t>(cls)][static_cast<size_t>(ch)] +
                             pixel_rng.symmetric(config.pixel_noise_amp);
            const double clipped = std::min(1.0, std::max(0.0, v));
            chip.rgb[(static_cast<size_t>(y) * 100 + x) * 3 + static_cast<size_t>(ch)] =
                static_cast<uint8_t>(std::lround(clipped * 255.0));
          }
        }
      }
      chip.labels = std::move(labels);
      ds.chips.push_back(std::move(chip));
    }
  }

  ds.communes = commune_proportions(ds.chips, config.n_classes);
  return ds;
}

}  // namespace llp
