#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "llp/data.hpp"

namespace llp {

/// IEEE 754 binary16 conversions (round to nearest even on encode).
uint16_t float_to_half(float v);
float half_to_float(uint16_t h);

/// Storage footprints: commune-level proportions at 2 bytes (binary16) per
/// class per commune vs segmentation labels at 1 byte per pixel.
struct FootprintReport {
  int64_t proportions_bytes = 0;    // 2 * n_classes * n_communes
  int64_t segmentation_bytes = 0;   // 10,000 * n_chips
  std::string proportions_human;    // e.g. "10.6 Kb"
  std::string segmentation_human;   // e.g. "705 Mb"
};

/// Display convention: Kb = bytes/1024 to one decimal, Mb = bytes/1,024,000
/// to the nearest integer, both rounded half away from zero.
std::string format_kb(int64_t bytes);
std::string format_mb(int64_t bytes);

FootprintReport footprint(int64_t n_classes, int64_t n_communes, int64_t n_chips);

/// Uplink packet "LLPU" (little-endian): magic, u8 version=1, u8 n_classes,
/// u32 n_communes, then per commune u32 id + n_classes binary16 values.
/// Decoding renormalizes each vector to sum 1.
std::vector<uint8_t> uplink_encode(const std::vector<std::pair<uint32_t, ProportionVector>>&
                                       communes,
                                   int n_classes);
std::vector<std::pair<uint32_t, ProportionVector>> uplink_decode(
    const std::vector<uint8_t>& bytes);

/// Proportion payload size excluding header and commune ids:
/// 2 * n_classes * n_communes, the footprint figure.
int64_t uplink_payload_bytes(int64_t n_classes, int64_t n_communes);

struct VolumetryReport {
  double swath_km = 290;
  double circumference_km = 40000;
  double land_fraction = 0.299;
  double orbit_minutes = 100;
  double km2_per_orbit = 0;
  double land_km2_per_orbit = 0;
  double land_km2_per_min = 0;
};

VolumetryReport volumetry(double swath_km = 290, double circumference_km = 40000,
                          double land_fraction = 0.299, double orbit_minutes = 100);

/// Training-vs-acquisition feasibility: ratio >= 1 means one epoch keeps
/// pace with the imaged land area (chips are 1 km2).
struct ThroughputReport {
  double train_chips_per_sec = 0;
  double land_km2_per_min = 0;
  double ratio = 0;                    // train km2/min over acquired land km2/min
  double infer_train_time_ratio = -1;  // inference/train wall time, -1 if unknown
};

ThroughputReport throughput_report(double train_chips_per_sec, const VolumetryReport& vol,
                                   double infer_chips_per_sec = 0);

}  // namespace llp
