#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace blockcal {

inline constexpr double kEarthRadiusKm = 6371.0;

struct Location {
  int index;      // unique id within a grid
  double lat;     // degrees in [-90, 90]
  double lon;     // degrees in [-180, 180)
  int region;     // connectivity label; blocks never span regions
};

class SpatialGrid {
 public:
  explicit SpatialGrid(std::vector<Location> locations);

  const std::vector<Location>& locations() const { return locs_; }
  std::size_t n() const { return locs_.size(); }
  const Location& at(std::size_t pos) const { return locs_[pos]; }
  std::size_t pos_of(int id) const;  // OutOfDomain for unknown ids

 private:
  std::vector<Location> locs_;
  std::unordered_map<int, std::size_t> pos_;
};

// Great-circle (haversine) distance in km. Central angles below 1e-12 rad
// are treated as coincident and return exactly 0.
double geodesic_distance(const Location& a, const Location& b, double radius = kEarthRadiusKm);

// A tessellation of the grid into M blocks. All index lists hold location
// ids (the Location::index field), each block sorted ascending so that the
// omitted location (largest id) comes last.
struct Blocking {
  std::vector<std::vector<int>> blocks;
  std::vector<int> omitted;                 // one id per block, member of it
  std::vector<std::vector<int>> subsample;  // per block, sorted ids, size <= n_i
  std::uint64_t seed = 0;

  std::size_t M() const { return blocks.size(); }
};

// Check the Blocking invariants against the grid (partition, region purity,
// omitted/subsample membership); throws OutOfDomain on violation.
void validate_blocking(const SpatialGrid& grid, const Blocking& blocking);

// Nearest-centroid tessellation with M centroids drawn uniformly without
// replacement, redrawn until every non-empty region owns a centroid
// (at most 100 redraws, then RegionUnreachable). Ties go to the centroid
// with the lower location id. Subsamples are drawn without replacement,
// size min(m_max, n_i).
Blocking random_tessellation(const SpatialGrid& grid, std::size_t M, std::uint64_t seed,
                             std::size_t m_max = 10, double radius = kEarthRadiusKm);

// The centroid ids the tessellation for (grid, M, seed) is built around.
std::vector<int> tessellation_centroids(const SpatialGrid& grid, std::size_t M,
                                        std::uint64_t seed);

// Per-block positions into grid.locations(), with the omitted location
// moved to the last slot of its block.
std::vector<std::vector<std::size_t>> block_positions(const SpatialGrid& grid,
                                                      const Blocking& blocking);

// A rectilinear lat-lon field with possibly missing (masked) nodes.
struct RegularField {
  std::vector<double> lats;  // ascending
  std::vector<double> lons;  // ascending
  std::vector<double> values;  // row-major [lat][lon], NaN where masked

  double value(std::size_t i, std::size_t j) const { return values[i * lons.size() + j]; }
};

struct RegridResult {
  std::vector<double> values;
  std::vector<bool> missing;
};

// Bilinear interpolation of src onto the target grid points. Masked source
// nodes with nonzero weight mark the target point missing. Points outside
// the source bounding box throw OutOfDomain unless allow_outside is set,
// in which case they are marked missing.
RegridResult bilinear_regrid(const RegularField& src, const SpatialGrid& target,
                             bool allow_outside = false);

// --- file formats ---

SpatialGrid read_grid_csv(const std::string& path);                 // index,lat,lon,region
void write_grid_csv(const std::string& path, const SpatialGrid& grid);
RegularField read_field_csv(const std::string& path);               // lat,lon,value (NA = masked)

std::string blocking_to_json(const Blocking& blocking);
Blocking blocking_from_json(const std::string& text);
void save_blocking(const std::string& path, const Blocking& blocking);
Blocking load_blocking(const std::string& path);

}  // namespace blockcal
