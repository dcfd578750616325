#include "llp/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "llp/bytes.hpp"

namespace llp {

namespace {

constexpr size_t kRgbBytes = 100 * 100 * 3;
constexpr size_t kLabelBytes = 100 * 100;

using json = nlohmann::ordered_json;

void normalize(ProportionVector& v, const char* what) {
  double sum = 0;
  for (double x : v) {
    if (x < 0) throw ValueError(std::string(what) + ": negative component");
    sum += x;
  }
  if (sum <= 0) throw ValueError(std::string(what) + ": vector sums to zero");
  for (double& x : v) x /= sum;
}

int64_t floordiv(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "validation" || name == "val") return Split::Validation;
  if (name == "test") return Split::Test;
  if (name == "unassigned") return Split::Unassigned;
  throw ValueError("unknown split \"" + name + "\"");
}

int ClassScheme::map_source(int source_id) const {
  auto it = source_map.find(source_id);
  if (it == source_map.end())
    throw ValueError("scheme " + name + ": unknown source class id " +
                     std::to_string(source_id));
  return it->second;
}

const ClassScheme& esaworldcover_scheme() {
  static const ClassScheme scheme{
      "esaworldcover",
      {"Infrequent", "Treecover", "Vegetation", "Cropland", "Built-up"},
      {{70, 0}, {80, 0}, {90, 0}, {95, 0}, {100, 0},  // snow, water, wetland, mangroves, moss
       {10, 1},                                       // treecover
       {20, 2}, {30, 2}, {60, 2},                     // shrub, grass, bare/sparse
       {40, 3},                                       // cropland
       {50, 4}}};                                     // built-up
  return scheme;
}

int map_esaworldcover(int source_id) { return esaworldcover_scheme().map_source(source_id); }

int map_humanpop(double cell_count) {
  if (cell_count < 0) throw ValueError("humanpop: negative inhabitant count");
  const double density_per_km2 = cell_count * 16.0;  // 250m cell -> km2
  if (density_per_km2 <= 15.0) return 0;
  if (density_per_km2 <= 1600.0) return 1;
  return 2;
}

template <class T>
Tensor<T> Chip::image() const {
  Tensor<T> t({100, 100, 3});
  T* q = t.data();
  for (size_t i = 0; i < kRgbBytes; ++i) q[i] = static_cast<T>(rgb[i]) / T(255);
  return t;
}

template Tensor<float> Chip::image<float>() const;
template Tensor<double> Chip::image<double>() const;

uint32_t Chip::dominant_commune() const {
  if (overlaps.empty()) throw ValueError("chip " + std::to_string(id) + " has no overlaps");
  const Overlap* best = &overlaps[0];
  for (const Overlap& o : overlaps) {
    if (o.weight > best->weight ||
        (o.weight == best->weight && o.commune_id < best->commune_id))
      best = &o;
  }
  return best->commune_id;
}

const CommuneEntry* CommuneTable::find(uint32_t id) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), id,
                             [](const CommuneEntry& e, uint32_t v) { return e.id < v; });
  if (it == entries.end() || it->id != id) return nullptr;
  return &*it;
}

const CommuneEntry& CommuneTable::at(uint32_t id) const {
  const CommuneEntry* e = find(id);
  if (!e) throw ValueError("commune " + std::to_string(id) + " not present in table");
  return *e;
}

ProportionVector chip_proportions(const std::vector<uint8_t>& labels, int n_classes) {
  if (labels.empty()) throw ValueError("chip_proportions: empty label map");
  std::vector<int64_t> counts(static_cast<size_t>(n_classes), 0);
  for (uint8_t c : labels) {
    if (c >= n_classes)
      throw ValueError("chip_proportions: class id " + std::to_string(c) + " >= n_classes " +
                       std::to_string(n_classes));
    ++counts[c];
  }
  ProportionVector v(static_cast<size_t>(n_classes));
  const double total = static_cast<double>(labels.size());
  for (int c = 0; c < n_classes; ++c) v[static_cast<size_t>(c)] = counts[c] / total;
  return v;
}

CommuneTable commune_proportions(const std::vector<Chip>& chips, int n_classes) {
  std::map<uint32_t, std::pair<ProportionVector, uint32_t>> acc;  // id -> (weighted sum, count)
  for (const Chip& chip : chips) {
    if (!chip.labels)
      throw ValueError("commune_proportions: chip " + std::to_string(chip.id) +
                       " has no labels");
    const ProportionVector v = chip_proportions(*chip.labels, n_classes);
    for (const Overlap& o : chip.overlaps) {
      auto& slot = acc[o.commune_id];
      if (slot.first.empty()) slot.first.assign(static_cast<size_t>(n_classes), 0.0);
      for (int c = 0; c < n_classes; ++c)
        slot.first[static_cast<size_t>(c)] += static_cast<double>(o.weight) * v[c];
      ++slot.second;
    }
  }
  if (acc.empty()) throw ValueError("commune_proportions: no communes referenced");
  CommuneTable table;
  for (auto& [id, slot] : acc) {
    normalize(slot.first, "commune proportions");
    table.entries.push_back(CommuneEntry{id, std::move(slot.first), slot.second});
  }
  return table;
}

ProportionVector blended_target(const Chip& chip, const CommuneTable& table) {
  if (chip.overlaps.empty())
    throw ValueError("blended_target: chip " + std::to_string(chip.id) + " has no overlaps");
  ProportionVector out;
  for (const Overlap& o : chip.overlaps) {
    const CommuneEntry& e = table.at(o.commune_id);
    if (out.empty()) out.assign(e.proportions.size(), 0.0);
    for (size_t c = 0; c < e.proportions.size(); ++c)
      out[c] += static_cast<double>(o.weight) * e.proportions[c];
  }
  normalize(out, "blended target");
  return out;
}

std::vector<Split> default_split_pattern() {
  return {Split::Train, Split::Test, Split::Train, Split::Validation, Split::Train};
}

void band_split(std::vector<Chip>& chips, int band_width_km, const std::vector<Split>& pattern) {
  if (band_width_km < 1) throw ValueError("band_split: band width must be >= 1 km");
  if (pattern.empty()) throw ValueError("band_split: empty pattern");
  const int64_t len = static_cast<int64_t>(pattern.size());
  for (Chip& chip : chips) {
    const int64_t band = floordiv(static_cast<int64_t>(chip.grid_x) + chip.grid_y,
                                  band_width_km);
    int64_t idx = band % len;
    if (idx < 0) idx += len;
    chip.split = pattern[static_cast<size_t>(idx)];
  }
}

void commune_coherent_split(std::vector<Chip>& chips) {
  // counts[commune] = per-split chip counts among that commune's members
  std::map<uint32_t, std::array<int64_t, 3>> counts;
  for (const Chip& chip : chips) {
    if (chip.split == Split::Unassigned)
      throw ValueError("commune_coherent_split: chip " + std::to_string(chip.id) +
                       " has no band split");
    counts[chip.dominant_commune()][static_cast<size_t>(chip.split)]++;
  }
  // Majority with ties resolved train > test > validation.
  std::map<uint32_t, Split> decision;
  for (const auto& [commune, c] : counts) {
    Split best = Split::Train;
    int64_t best_count = c[static_cast<size_t>(Split::Train)];
    for (Split s : {Split::Test, Split::Validation}) {
      if (c[static_cast<size_t>(s)] > best_count) {
        best = s;
        best_count = c[static_cast<size_t>(s)];
      }
    }
    decision[commune] = best;
  }
  for (Chip& chip : chips) chip.split = decision[chip.dominant_commune()];
}

std::vector<uint8_t> chip_pack_write(const Dataset& ds) {
  ByteWriter w;
  w.magic("LLPK");
  w.u8(1);
  w.u8(ds.n_classes);
  w.u32(static_cast<uint32_t>(ds.chips.size()));
  for (const Chip& chip : ds.chips) {
    if (chip.rgb.size() != kRgbBytes)
      throw ValueError("chip " + std::to_string(chip.id) + ": image must be 100x100x3");
    if (chip.overlaps.empty())
      throw ValueError("chip " + std::to_string(chip.id) + ": overlaps must be nonempty");
    w.u64(chip.id);
    w.i32(chip.grid_x);
    w.i32(chip.grid_y);
    w.u16(static_cast<uint16_t>(chip.overlaps.size()));
    for (const Overlap& o : chip.overlaps) {
      w.u32(o.commune_id);
      w.f32(o.weight);
    }
    w.bytes(chip.rgb.data(), kRgbBytes);
    if (chip.labels) {
      if (chip.labels->size() != kLabelBytes)
        throw ValueError("chip " + std::to_string(chip.id) + ": label map must be 100x100");
      w.u8(1);
      w.bytes(chip.labels->data(), kLabelBytes);
    } else {
      w.u8(0);
    }
    w.u8(static_cast<uint8_t>(chip.split));
  }
  const uint32_t checksum = crc32(w.data().data(), w.size());
  w.u32(checksum);
  return w.take();
}

namespace {

// Walks the chip records without validating values so that a short file is
// reported as truncation rather than as a checksum mismatch.
void skim_chip_pack(ByteReader& r, uint32_t count) {
  for (uint32_t i = 0; i < count; ++i) {
    r.u64();
    r.i32();
    r.i32();
    const uint16_t n_overlaps = r.u16();
    for (uint16_t k = 0; k < n_overlaps; ++k) {
      r.u32();
      r.f32();
    }
    std::vector<uint8_t> skip(kRgbBytes);
    r.bytes(skip.data(), kRgbBytes);
    if (r.u8() != 0) r.bytes(skip.data(), kLabelBytes);
    r.u8();
  }
  if (r.remaining() < 4)
    throw FormatError(FormatError::Kind::Truncated, "chip pack: missing trailing CRC32");
}

}  // namespace

Dataset chip_pack_read(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4)
    throw FormatError(FormatError::Kind::Truncated, "chip pack: shorter than its magic");
  ByteReader header(bytes.data(), bytes.size());
  header.expect_magic("LLPK", "chip pack");
  const uint8_t version = header.u8();
  if (version != 1)
    throw FormatError(FormatError::Kind::BadVersion,
                      "chip pack: unsupported version " + std::to_string(version));
  {
    ByteReader skim = header;
    skim.u8();  // n_classes
    skim_chip_pack(skim, skim.u32());
  }
  const uint32_t stored = ByteReader(bytes.data() + bytes.size() - 4, 4).u32();
  const uint32_t computed = crc32(bytes.data(), bytes.size() - 4);
  if (stored != computed)
    throw FormatError(FormatError::Kind::ChecksumMismatch,
                      "chip pack: CRC32 mismatch (stored " + std::to_string(stored) +
                          ", computed " + std::to_string(computed) + ")");

  Dataset ds;
  ByteReader r = header;
  ds.n_classes = r.u8();
  const uint32_t count = r.u32();
  ds.chips.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Chip chip;
    chip.id = r.u64();
    chip.grid_x = r.i32();
    chip.grid_y = r.i32();
    const uint16_t n_overlaps = r.u16();
    if (n_overlaps == 0)
      throw FormatError(FormatError::Kind::BadValue,
                        "chip pack: chip " + std::to_string(chip.id) + " has no overlaps");
    float weight_sum = 0;
    for (uint16_t k = 0; k < n_overlaps; ++k) {
      Overlap o;
      o.commune_id = r.u32();
      o.weight = r.f32();
      if (!(o.weight > 0))
        throw FormatError(FormatError::Kind::BadValue,
                          "chip pack: non-positive overlap weight on chip " +
                              std::to_string(chip.id));
      weight_sum += o.weight;
      chip.overlaps.push_back(o);
    }
    if (std::abs(weight_sum - 1.0f) > 1e-5f)
      throw FormatError(FormatError::Kind::BadValue,
                        "chip pack: overlap weights of chip " + std::to_string(chip.id) +
                            " sum to " + std::to_string(weight_sum));
    chip.rgb.resize(kRgbBytes);
    r.bytes(chip.rgb.data(), kRgbBytes);
    const uint8_t has_labels = r.u8();
    if (has_labels > 1)
      throw FormatError(FormatError::Kind::BadValue, "chip pack: has_labels flag not 0/1");
    if (has_labels) {
      std::vector<uint8_t> labels(kLabelBytes);
      r.bytes(labels.data(), kLabelBytes);
      for (uint8_t c : labels)
        if (c >= ds.n_classes)
          throw FormatError(FormatError::Kind::BadValue,
                            "chip pack: label id " + std::to_string(c) + " out of range");
      chip.labels = std::move(labels);
    }
    const uint8_t split = r.u8();
    if (split > 2 && split != 255)
      throw FormatError(FormatError::Kind::BadValue,
                        "chip pack: bad split code " + std::to_string(split));
    chip.split = static_cast<Split>(split);
    ds.chips.push_back(std::move(chip));
  }
  if (r.remaining() != 4)
    throw FormatError(FormatError::Kind::BadValue, "chip pack: trailing garbage before CRC");
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_file(dir + "/chips.llpk", chip_pack_write(ds));

  json manifest;
  manifest["scheme"] = ds.scheme_name;
  manifest["n_classes"] = ds.n_classes;
  manifest["class_labels"] = ds.class_labels;
  manifest["seed"] = ds.seed;
  json communes = json::array();
  for (const CommuneEntry& e : ds.communes.entries) {
    communes.push_back(
        {{"id", e.id}, {"proportions", e.proportions}, {"chips", e.chip_count}});
  }
  manifest["communes"] = communes;
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw ValueError("cannot create manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds = chip_pack_read(read_file(dir + "/chips.llpk"));
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw ValueError("missing manifest.json in " + dir);
  json manifest = json::parse(in);
  ds.scheme_name = manifest.at("scheme").get<std::string>();
  ds.class_labels = manifest.at("class_labels").get<std::vector<std::string>>();
  ds.seed = manifest.at("seed").get<uint64_t>();
  const int n = manifest.at("n_classes").get<int>();
  if (n != ds.n_classes)
    throw ValueError("manifest/pack class count mismatch in " + dir);
  for (const auto& e : manifest.at("communes")) {
    ds.communes.entries.push_back(CommuneEntry{e.at("id").get<uint32_t>(),
                                               e.at("proportions").get<ProportionVector>(),
                                               e.at("chips").get<uint32_t>()});
  }
  std::sort(ds.communes.entries.begin(), ds.communes.entries.end(),
            [](const CommuneEntry& a, const CommuneEntry& b) { return a.id < b.id; });
  return ds;
}

}  // namespace llp
