#include "llp/orbit.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "llp/bytes.hpp"

namespace llp {

uint16_t float_to_half(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  const uint32_t sign = (bits >> 16) & 0x8000u;
  const uint32_t exp = (bits >> 23) & 0xFFu;
  uint32_t mant = bits & 0x7FFFFFu;

  if (exp == 0xFF) return static_cast<uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0));
  const int32_t e = static_cast<int32_t>(exp) - 127 + 15;
  if (e >= 0x1F) return static_cast<uint16_t>(sign | 0x7C00u);  // overflow -> inf
  if (e <= 0) {
    if (e < -10) return static_cast<uint16_t>(sign);  // underflow -> signed zero
    // subnormal half: shift in the implicit bit, round to nearest even
    mant |= 0x800000u;
    const int shift = 14 - e;
    uint32_t half_mant = mant >> shift;
    const uint32_t rest = mant & ((1u << shift) - 1);
    const uint32_t halfway = 1u << (shift - 1);
    if (rest > halfway || (rest == halfway && (half_mant & 1))) ++half_mant;
    return static_cast<uint16_t>(sign | half_mant);
  }
  uint32_t half = sign | (static_cast<uint32_t>(e) << 10) | (mant >> 13);
  const uint32_t rest = mant & 0x1FFFu;
  if (rest > 0x1000u || (rest == 0x1000u && (half & 1))) ++half;  // may carry into exponent
  return static_cast<uint16_t>(half);
}

float half_to_float(uint16_t h) {
  const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  const uint32_t exp = (h >> 10) & 0x1Fu;
  const uint32_t mant = h & 0x3FFu;
  uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      // subnormal half -> normalized float
      int e = -1;
      uint32_t m = mant;
      do {
        ++e;
        m <<= 1;
      } while ((m & 0x400u) == 0);
      bits = sign | (static_cast<uint32_t>(127 - 15 - e) << 23) | ((m & 0x3FFu) << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string format_kb(int64_t bytes) {
  const double kb = static_cast<double>(bytes) / 1024.0;
  const double rounded = std::round(kb * 10.0) / 10.0;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.1f Kb", rounded);
  return buf;
}

std::string format_mb(int64_t bytes) {
  const double mb = static_cast<double>(bytes) / 1024000.0;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%lld Mb", static_cast<long long>(std::llround(mb)));
  return buf;
}

FootprintReport footprint(int64_t n_classes, int64_t n_communes, int64_t n_chips) {
  if (n_classes < 0 || n_communes < 0 || n_chips < 0)
    throw ValueError("footprint: counts must be nonnegative");
  FootprintReport r;
  r.proportions_bytes = 2 * n_classes * n_communes;
  r.segmentation_bytes = 10000 * n_chips;
  r.proportions_human = format_kb(r.proportions_bytes);
  r.segmentation_human = format_mb(r.segmentation_bytes);
  return r;
}

int64_t uplink_payload_bytes(int64_t n_classes, int64_t n_communes) {
  return 2 * n_classes * n_communes;
}

std::vector<uint8_t> uplink_encode(
    const std::vector<std::pair<uint32_t, ProportionVector>>& communes, int n_classes) {
  if (n_classes < 1 || n_classes > 255)
    throw ValueError("uplink: n_classes must be in [1,255]");
  ByteWriter w;
  w.magic("LLPU");
  w.u8(1);
  w.u8(static_cast<uint8_t>(n_classes));
  w.u32(static_cast<uint32_t>(communes.size()));
  for (const auto& [id, props] : communes) {
    if (static_cast<int>(props.size()) != n_classes)
      throw ValueError("uplink: commune " + std::to_string(id) + " has " +
                       std::to_string(props.size()) + " proportions, expected " +
                       std::to_string(n_classes));
    double sum = 0;
    for (double v : props) sum += v;
    if (std::abs(sum - 1.0) > 1e-6)
      throw ValueError("uplink: commune " + std::to_string(id) + " proportions sum to " +
                       std::to_string(sum));
    w.u32(id);
    for (double v : props) w.u16(float_to_half(static_cast<float>(v)));
  }
  return w.take();
}

std::vector<std::pair<uint32_t, ProportionVector>> uplink_decode(
    const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic("LLPU", "uplink packet");
  const uint8_t version = r.u8();
  if (version != 1)
    throw FormatError(FormatError::Kind::BadVersion,
                      "uplink packet: unsupported version " + std::to_string(version));
  const int n_classes = r.u8();
  if (n_classes < 1)
    throw FormatError(FormatError::Kind::BadValue, "uplink packet: zero classes");
  const uint32_t count = r.u32();
  std::vector<std::pair<uint32_t, ProportionVector>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t id = r.u32();
    ProportionVector props(static_cast<size_t>(n_classes));
    double sum = 0;
    for (int c = 0; c < n_classes; ++c) {
      const uint16_t h = r.u16();
      const float v = half_to_float(h);
      if (std::isnan(v))
        throw FormatError(FormatError::Kind::BadValue,
                          "uplink packet: NaN proportion in commune " + std::to_string(id));
      if (!std::isfinite(v) || v < 0)
        throw FormatError(FormatError::Kind::BadValue,
                          "uplink packet: invalid proportion in commune " + std::to_string(id));
      props[static_cast<size_t>(c)] = static_cast<double>(v);
      sum += v;
    }
    if (sum <= 0)
      throw FormatError(FormatError::Kind::BadValue,
                        "uplink packet: commune " + std::to_string(id) + " sums to zero");
    for (double& v : props) v /= sum;
    out.emplace_back(id, std::move(props));
  }
  if (r.remaining() != 0)
    throw FormatError(FormatError::Kind::BadValue, "uplink packet: trailing bytes");
  return out;
}

VolumetryReport volumetry(double swath_km, double circumference_km, double land_fraction,
                          double orbit_minutes) {
  if (swath_km <= 0 || circumference_km <= 0 || orbit_minutes <= 0)
    throw ValueError("volumetry: inputs must be positive");
  if (land_fraction < 0 || land_fraction > 1)
    throw ValueError("volumetry: land fraction must be in [0,1]");
  VolumetryReport r;
  r.swath_km = swath_km;
  r.circumference_km = circumference_km;
  r.land_fraction = land_fraction;
  r.orbit_minutes = orbit_minutes;
  r.km2_per_orbit = swath_km * circumference_km;
  r.land_km2_per_orbit = r.km2_per_orbit * land_fraction;
  r.land_km2_per_min = r.land_km2_per_orbit / orbit_minutes;
  return r;
}

ThroughputReport throughput_report(double train_chips_per_sec, const VolumetryReport& vol,
                                   double infer_chips_per_sec) {
  if (train_chips_per_sec <= 0)
    throw ValueError("throughput: train chips/sec must be positive");
  ThroughputReport r;
  r.train_chips_per_sec = train_chips_per_sec;
  r.land_km2_per_min = vol.land_km2_per_min;
  r.ratio = (train_chips_per_sec * 60.0) / vol.land_km2_per_min;
  if (infer_chips_per_sec > 0)
    r.infer_train_time_ratio = train_chips_per_sec / infer_chips_per_sec;
  return r;
}

}  // namespace llp
