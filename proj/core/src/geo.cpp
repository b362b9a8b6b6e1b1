#include "blockcal/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "blockcal/csv.hpp"
#include "blockcal/errors.hpp"
#include "blockcal/rng.hpp"

namespace blockcal {

SpatialGrid::SpatialGrid(std::vector<Location> locations) : locs_(std::move(locations)) {
  if (locs_.empty()) throw OutOfDomain("grid must contain at least one location");
  pos_.reserve(locs_.size());
  for (std::size_t i = 0; i < locs_.size(); ++i) {
    const Location& l = locs_[i];
    if (!(l.lat >= -90.0 && l.lat <= 90.0))
      throw OutOfDomain("latitude out of [-90, 90] at id " + std::to_string(l.index));
    if (!(l.lon >= -180.0 && l.lon < 180.0))
      throw OutOfDomain("longitude out of [-180, 180) at id " + std::to_string(l.index));
    if (!pos_.emplace(l.index, i).second)
      throw OutOfDomain("duplicate location id " + std::to_string(l.index));
  }
}

std::size_t SpatialGrid::pos_of(int id) const {
  auto it = pos_.find(id);
  if (it == pos_.end()) throw OutOfDomain("unknown location id " + std::to_string(id));
  return it->second;
}

double geodesic_distance(const Location& a, const Location& b, double radius) {
  constexpr double deg = M_PI / 180.0;
  double la1 = a.lat * deg, la2 = b.lat * deg;
  double dla = (b.lat - a.lat) * deg, dlo = (b.lon - a.lon) * deg;
  double s1 = std::sin(0.5 * dla), s2 = std::sin(0.5 * dlo);
  double h = s1 * s1 + std::cos(la1) * std::cos(la2) * s2 * s2;
  double angle = 2.0 * std::asin(std::min(1.0, std::sqrt(h)));
  if (angle < 1e-12) return 0.0;
  return radius * angle;
}

void validate_blocking(const SpatialGrid& grid, const Blocking& blocking) {
  if (blocking.blocks.size() != blocking.omitted.size() ||
      blocking.blocks.size() != blocking.subsample.size())
    throw OutOfDomain("blocking: blocks/omitted/subsample lengths differ");
  std::set<int> seen;
  for (std::size_t i = 0; i < blocking.blocks.size(); ++i) {
    const auto& blk = blocking.blocks[i];
    if (blk.empty()) throw OutOfDomain("blocking: empty block " + std::to_string(i));
    int region = grid.at(grid.pos_of(blk[0])).region;
    for (int id : blk) {
      if (!seen.insert(id).second)
        throw OutOfDomain("blocking: id " + std::to_string(id) + " appears twice");
      if (grid.at(grid.pos_of(id)).region != region)
        throw OutOfDomain("blocking: block " + std::to_string(i) + " mixes regions");
    }
    if (std::find(blk.begin(), blk.end(), blocking.omitted[i]) == blk.end())
      throw OutOfDomain("blocking: omitted id not in block " + std::to_string(i));
    if (blocking.subsample[i].empty() || blocking.subsample[i].size() > blk.size())
      throw OutOfDomain("blocking: bad subsample size in block " + std::to_string(i));
    for (int id : blocking.subsample[i])
      if (std::find(blk.begin(), blk.end(), id) == blk.end())
        throw OutOfDomain("blocking: subsample id not in block " + std::to_string(i));
  }
  if (seen.size() != grid.n())
    throw OutOfDomain("blocking: blocks do not cover the grid");
}

namespace {

// Uniform draw without replacement, redrawn until every non-empty region
// holds a centroid. Consumes the caller's stream so the subsequent subsample
// draws stay reproducible.
std::vector<std::size_t> draw_centroid_positions(const SpatialGrid& grid, std::size_t M,
                                                 Rng& rng) {
  std::size_t n = grid.n();
  if (M < 1 || M > n) throw OutOfDomain("random_tessellation: need 1 <= M <= n");

  std::set<int> regions;
  for (const Location& l : grid.locations()) regions.insert(l.region);

  std::vector<std::size_t> centroids;
  bool covered = false;
  for (int attempt = 0; attempt < 100 && !covered; ++attempt) {
    centroids = rng.sample_without_replacement(n, M);
    std::set<int> hit;
    for (std::size_t c : centroids) hit.insert(grid.at(c).region);
    covered = hit.size() == regions.size();
  }
  if (!covered)
    throw RegionUnreachable("no centroid drawn in some region after 100 attempts; increase M");
  return centroids;
}

}  // namespace

std::vector<int> tessellation_centroids(const SpatialGrid& grid, std::size_t M,
                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> ids;
  for (std::size_t p : draw_centroid_positions(grid, M, rng)) ids.push_back(grid.at(p).index);
  return ids;
}

Blocking random_tessellation(const SpatialGrid& grid, std::size_t M, std::uint64_t seed,
                             std::size_t m_max, double radius) {
  if (m_max < 1) throw OutOfDomain("random_tessellation: m_max must be positive");
  std::size_t n = grid.n();

  Rng rng(seed);
  std::vector<std::size_t> centroids = draw_centroid_positions(grid, M, rng);

  // Nearest same-region centroid; ties broken by lower centroid id.
  std::vector<std::vector<int>> members(M);
  for (std::size_t p = 0; p < n; ++p) {
    const Location& loc = grid.at(p);
    double best = std::numeric_limits<double>::infinity();
    int best_id = 0;
    std::size_t best_c = M;
    for (std::size_t c = 0; c < M; ++c) {
      const Location& cen = grid.at(centroids[c]);
      if (cen.region != loc.region) continue;
      double d = geodesic_distance(loc, cen, radius);
      int cid = cen.index;
      if (d < best || (d == best && cid < best_id)) {
        best = d;
        best_id = cid;
        best_c = c;
      }
    }
    if (best_c == M)
      throw RegionUnreachable("location id " + std::to_string(loc.index) +
                              " has no centroid in its region");
    members[best_c].push_back(loc.index);
  }

  // Order blocks by centroid id; members ascending so the omitted one
  // (largest id) is last.
  std::vector<std::size_t> order(M);
  for (std::size_t c = 0; c < M; ++c) order[c] = c;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return grid.at(centroids[a]).index < grid.at(centroids[b]).index;
  });

  Blocking out;
  out.seed = seed;
  for (std::size_t c : order) {
    auto blk = members[c];
    std::sort(blk.begin(), blk.end());
    out.omitted.push_back(blk.back());
    std::size_t m = std::min(m_max, blk.size());
    auto picks = rng.sample_without_replacement(blk.size(), m);
    std::vector<int> sub;
    sub.reserve(m);
    for (std::size_t t : picks) sub.push_back(blk[t]);
    out.subsample.push_back(std::move(sub));
    out.blocks.push_back(std::move(blk));
  }
  return out;
}

std::vector<std::vector<std::size_t>> block_positions(const SpatialGrid& grid,
                                                      const Blocking& blocking) {
  std::vector<std::vector<std::size_t>> out(blocking.M());
  for (std::size_t i = 0; i < blocking.M(); ++i) {
    out[i].reserve(blocking.blocks[i].size());
    for (int id : blocking.blocks[i])
      if (id != blocking.omitted[i]) out[i].push_back(grid.pos_of(id));
    out[i].push_back(grid.pos_of(blocking.omitted[i]));
  }
  return out;
}

namespace {

std::size_t cell_index(const std::vector<double>& axis, double x) {
  // Index i with axis[i] <= x <= axis[i+1]; the last cell owns its upper edge.
  auto it = std::upper_bound(axis.begin(), axis.end(), x);
  std::size_t i = static_cast<std::size_t>(it - axis.begin());
  if (i == 0) return 0;  // x == axis.front() handled by caller's bounds check
  if (i >= axis.size()) return axis.size() - 2;
  return i - 1;
}

}  // namespace

RegridResult bilinear_regrid(const RegularField& src, const SpatialGrid& target,
                             bool allow_outside) {
  if (src.lats.size() < 2 || src.lons.size() < 2)
    throw OutOfDomain("bilinear_regrid: source grid needs at least 2x2 nodes");
  RegridResult out;
  out.values.assign(target.n(), std::numeric_limits<double>::quiet_NaN());
  out.missing.assign(target.n(), false);
  for (std::size_t t = 0; t < target.n(); ++t) {
    const Location& loc = target.at(t);
    double la = loc.lat, lo = loc.lon;
    if (la < src.lats.front() || la > src.lats.back() || lo < src.lons.front() ||
        lo > src.lons.back()) {
      if (!allow_outside)
        throw OutOfDomain("target id " + std::to_string(loc.index) +
                          " lies outside the source grid hull");
      out.missing[t] = true;
      continue;
    }
    std::size_t i = cell_index(src.lats, la);
    std::size_t j = cell_index(src.lons, lo);
    double la0 = src.lats[i], la1 = src.lats[i + 1];
    double lo0 = src.lons[j], lo1 = src.lons[j + 1];
    double u = (la - la0) / (la1 - la0);
    double v = (lo - lo0) / (lo1 - lo0);
    double w00 = (1 - u) * (1 - v), w01 = (1 - u) * v, w10 = u * (1 - v), w11 = u * v;
    double c00 = src.value(i, j), c01 = src.value(i, j + 1);
    double c10 = src.value(i + 1, j), c11 = src.value(i + 1, j + 1);
    double acc = 0.0;
    bool bad = false;
    const double ws[4] = {w00, w01, w10, w11};
    const double cs[4] = {c00, c01, c10, c11};
    for (int k = 0; k < 4; ++k) {
      if (ws[k] == 0.0) continue;
      if (std::isnan(cs[k])) {
        bad = true;
        break;
      }
      acc += ws[k] * cs[k];
    }
    if (bad)
      out.missing[t] = true;
    else
      out.values[t] = acc;
  }
  return out;
}

SpatialGrid read_grid_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  std::size_t ci = t.col("index"), cla = t.col("lat"), clo = t.col("lon"), cr = t.col("region");
  std::vector<Location> locs;
  locs.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    locs.push_back(Location{static_cast<int>(t.integer(r, ci)), t.num(r, cla), t.num(r, clo),
                            static_cast<int>(t.integer(r, cr))});
  }
  try {
    return SpatialGrid(std::move(locs));
  } catch (const OutOfDomain& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_grid_csv(const std::string& path, const SpatialGrid& grid) {
  CsvWriter w(path);
  w.header({"index", "lat", "lon", "region"});
  for (const Location& l : grid.locations())
    w.row({std::to_string(l.index), format_double(l.lat), format_double(l.lon),
           std::to_string(l.region)});
}

RegularField read_field_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  std::size_t cla = t.col("lat"), clo = t.col("lon"), cv = t.col("value");
  std::set<double> lats, lons;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    lats.insert(t.num(r, cla));
    lons.insert(t.num(r, clo));
  }
  RegularField f;
  f.lats.assign(lats.begin(), lats.end());
  f.lons.assign(lons.begin(), lons.end());
  f.values.assign(f.lats.size() * f.lons.size(), std::numeric_limits<double>::quiet_NaN());
  auto axis_pos = [](const std::vector<double>& axis, double x) {
    return static_cast<std::size_t>(std::lower_bound(axis.begin(), axis.end(), x) - axis.begin());
  };
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::size_t i = axis_pos(f.lats, t.num(r, cla));
    std::size_t j = axis_pos(f.lons, t.num(r, clo));
    const std::string& cell = t.rows[r][cv];
    if (cell == "NA" || cell == "nan" || cell == "NaN") continue;
    f.values[i * f.lons.size() + j] = t.num(r, cv);
  }
  return f;
}

std::string blocking_to_json(const Blocking& blocking) {
  nlohmann::json j;
  j["blocks"] = blocking.blocks;
  j["omitted"] = blocking.omitted;
  j["subsample"] = blocking.subsample;
  j["seed"] = blocking.seed;
  return j.dump(2) + "\n";
}

Blocking blocking_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("blocking json: ") + e.what());
  }
  Blocking b;
  try {
    b.blocks = j.at("blocks").get<std::vector<std::vector<int>>>();
    b.omitted = j.at("omitted").get<std::vector<int>>();
    b.subsample = j.at("subsample").get<std::vector<std::vector<int>>>();
    b.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("blocking json: ") + e.what());
  }
  return b;
}

void save_blocking(const std::string& path, const Blocking& blocking) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << blocking_to_json(blocking);
}

Blocking load_blocking(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return blocking_from_json(ss.str());
}

}  // namespace blockcal
