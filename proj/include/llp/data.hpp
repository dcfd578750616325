#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "llp/error.hpp"
#include "llp/tensor.hpp"

namespace llp {

/// Per-class occurrence fractions; nonnegative, summing to 1.
using ProportionVector = std::vector<double>;

enum class Split : uint8_t { Train = 0, Validation = 1, Test = 2, Unassigned = 255 };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

/// Ordered class list plus the remapping from source-dataset ids.
struct ClassScheme {
  std::string name;
  std::vector<std::string> labels;       // index = class id, 0..n-1
  std::map<int, int> source_map;         // source id -> class id

  int n_classes() const { return static_cast<int>(labels.size()); }
  /// Throws ValueError naming the code when it is not declared.
  int map_source(int source_id) const;
};

/// The land-use scheme: Infrequent / Treecover / Vegetation / Cropland /
/// Built-up over the 11 source land-cover codes.
const ClassScheme& esaworldcover_scheme();
int map_esaworldcover(int source_id);

/// Population-density classes from an inhabitants-per-250m-cell count.
/// Density per km2 is cell_count * 16; class 0 up to 15, class 1 up to 1600,
/// class 2 above.
int map_humanpop(double cell_count);

struct Overlap {
  uint32_t commune_id;
  float weight;  // > 0; weights of one chip sum to 1
};

/// One 100x100 RGB tile covering 1 km2. Pixels are stored as u8 and map to
/// [0,1] via value/255. The label map, when present, holds class ids.
struct Chip {
  uint64_t id = 0;
  int32_t grid_x = 0, grid_y = 0;  // km-grid coordinates
  std::vector<uint8_t> rgb;        // 100*100*3
  std::vector<Overlap> overlaps;
  std::optional<std::vector<uint8_t>> labels;  // 100*100 class ids
  Split split = Split::Unassigned;

  template <class T>
  Tensor<T> image() const;

  /// Overlap with the largest weight; ties resolved toward the smaller
  /// commune id.
  uint32_t dominant_commune() const;
};

struct CommuneEntry {
  uint32_t id;
  ProportionVector proportions;
  uint32_t chip_count;
};

struct CommuneTable {
  std::vector<CommuneEntry> entries;  // ascending id

  const CommuneEntry* find(uint32_t id) const;
  const CommuneEntry& at(uint32_t id) const;  // throws ValueError when absent
};

struct Dataset {
  std::string scheme_name;
  std::vector<std::string> class_labels;
  uint8_t n_classes = 0;
  uint64_t seed = 0;  // generation seed, 0 when not synthetic
  std::vector<Chip> chips;
  CommuneTable communes;
};

/// Pixel-count histogram of a label map, normalized to sum 1.
ProportionVector chip_proportions(const std::vector<uint8_t>& labels, int n_classes);

/// Commune-level vectors: the overlap-weighted mean of member chips'
/// label-derived proportions, renormalized. Every chip must carry labels and
/// every commune referenced by an overlap gains an entry.
CommuneTable commune_proportions(const std::vector<Chip>& chips, int n_classes);

/// Training target of a chip: sum_k weight_k * commune_vector_k over its
/// overlaps, renormalized.
ProportionVector blended_target(const Chip& chip, const CommuneTable& table);

/// Diagonal geographic bands: band index floor((grid_x+grid_y)/band_width)
/// cycles through `pattern`. The default pattern approximates a 60/20/20
/// partition.
std::vector<Split> default_split_pattern();
void band_split(std::vector<Chip>& chips, int band_width_km, const std::vector<Split>& pattern);

/// Forces every chip of a (dominant) commune onto that commune's majority
/// band split. Majority ties resolve train > test > validation.
void commune_coherent_split(std::vector<Chip>& chips);

/// Chip-pack container "LLPK" (little-endian), CRC32 of everything before
/// the trailing checksum. Round-trips bit-exactly.
std::vector<uint8_t> chip_pack_write(const Dataset& ds);
Dataset chip_pack_read(const std::vector<uint8_t>& bytes);

/// Directory layout: <dir>/chips.llpk plus <dir>/manifest.json carrying the
/// scheme, class labels, commune table and generation seed.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace llp
