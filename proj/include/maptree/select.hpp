#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "maptree/error.hpp"
#include "maptree/fmap.hpp"
#include "maptree/geodesic.hpp"
#include "maptree/mesh.hpp"

namespace maptree {

using ShapePairKey = std::pair<Index, Index>;

/// Candidate functional maps per ordered shape pair. C_ab carries functions
/// on shape b to shape a (rows index the basis of a), so C_1j C_j2 ~ C_12 for
/// consistent selections.
struct CandidateSet {
  std::vector<std::string> shape_ids;
  std::map<ShapePairKey, std::vector<Eigen::MatrixXd>> candidates;
  /// Optional orientation scores per candidate, used for initialization.
  std::map<ShapePairKey, std::vector<double>> orientation;
  std::map<ShapePairKey, Index> selection;

  /// Current map C_ab; falls back to the transpose of C_ba when only the
  /// reverse pair was supplied.
  const Eigen::MatrixXd& selected(Index a, Index b) const {
    if (auto it = candidates.find({a, b}); it != candidates.end()) return it->second[index_of({a, b})];
    throw Error(ErrorCode::DimensionMismatch, "select/selected",
                "no candidates for pair " + std::to_string(a) + "," + std::to_string(b));
  }

  std::optional<Eigen::MatrixXd> current(Index a, Index b) const {
    if (candidates.contains({a, b})) return selected(a, b);
    if (candidates.contains({b, a})) return selected(b, a).transpose();
    return std::nullopt;
  }

 private:
  std::size_t index_of(const ShapePairKey& key) const {
    auto it = selection.find(key);
    return it == selection.end() ? 0 : static_cast<std::size_t>(it->second);
  }
};

/// Shape triplets as unordered index sets.
using Triplet = std::array<Index, 3>;

inline std::vector<Triplet> all_triplets(Index shapes) {
  std::vector<Triplet> out;
  for (Index a = 0; a < shapes; ++a)
    for (Index b = a + 1; b < shapes; ++b)
      for (Index c = b + 1; c < shapes; ++c) out.push_back({a, b, c});
  return out;
}

/// Third members j of every triplet containing both a and b.
inline std::vector<Index> triplet_partners(Index a, Index b, std::span<const Triplet> triplets) {
  std::vector<Index> out;
  for (const auto& t : triplets) {
    const bool has_a = std::find(t.begin(), t.end(), a) != t.end();
    const bool has_b = std::find(t.begin(), t.end(), b) != t.end();
    if (!has_a || !has_b || a == b) continue;
    for (Index j : t)
      if (j != a && j != b) out.push_back(j);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Sum over partners j of ||C_1j C_j2 - C_12|| + ||C_12 C_2j - C_1j|| +
/// ||C_j1 C_12 - C_j2|| (Frobenius), with pair (1, 2) = (a, b) and every
/// other map taken from the current selections.
inline double cycle_energy(const Eigen::MatrixXd& c12, Index a, Index b, const CandidateSet& set,
                           std::span<const Index> partners) {
  const char* where = "select/cycle_energy";
  double e = 0;
  for (Index j : partners) {
    const auto c1j = set.current(a, j), cj2 = set.current(j, b), c2j = set.current(b, j), cj1 = set.current(j, a);
    if (!c1j || !cj2 || !c2j || !cj1)
      throw Error(ErrorCode::DimensionMismatch, where, "missing selection for partner " + std::to_string(j));
    for (const auto* m : {&*c1j, &*cj2, &*c2j, &*cj1})
      if (m->rows() != c12.rows() || m->cols() != c12.cols() || c12.rows() != c12.cols())
        throw Error(ErrorCode::DimensionMismatch, where, "selections do not share a square size");
    e += (*c1j * *cj2 - c12).norm() + (c12 * *c2j - *c1j).norm() + (*cj1 * c12 - *cj2).norm();
  }
  return e;
}

struct SelectionUpdate {
  ShapePairKey pair;
  Index sweep = 0;
  Index from = 0;
  Index to = 0;
  double energy_before = 0;
  double energy_after = 0;
};

struct SelectionResult {
  std::map<ShapePairKey, Index> chosen;
  std::map<ShapePairKey, double> energy;
  Index sweeps = 0;
  std::vector<SelectionUpdate> history;
};

/// Coordinate descent on cycle consistency. Each pair starts from its
/// lowest orientation score (index 0 without scores); sweeps visit pairs in
/// key order and move to the candidate of minimal cycle energy (lowest index
/// on ties) when it strictly improves, until a sweep changes nothing or
/// max_sweeps is reached.
inline SelectionResult select_by_cycles(CandidateSet& set, std::span<const Triplet> triplets, Index max_sweeps = 5) {
  const char* where = "select/select_by_cycles";
  for (const auto& [key, list] : set.candidates)
    if (list.empty())
      throw Error(ErrorCode::EmptyCandidates, where,
                  "pair " + std::to_string(key.first) + "," + std::to_string(key.second) + " has no candidates");
  for (const auto& [key, list] : set.candidates) {
    Index init = 0;
    if (auto it = set.orientation.find(key); it != set.orientation.end() && it->second.size() == list.size())
      init = static_cast<Index>(std::min_element(it->second.begin(), it->second.end()) - it->second.begin());
    set.selection[key] = init;
  }
  SelectionResult result;
  for (Index sweep = 1; sweep <= max_sweeps; ++sweep) {
    result.sweeps = sweep;
    bool changed = false;
    for (const auto& [key, list] : set.candidates) {
      const auto partners = triplet_partners(key.first, key.second, triplets);
      const Index current = set.selection[key];
      std::vector<double> energies(list.size());
      for (std::size_t i = 0; i < list.size(); ++i)
        energies[i] = cycle_energy(list[i], key.first, key.second, set, partners);
      const auto best = static_cast<Index>(std::min_element(energies.begin(), energies.end()) - energies.begin());
      if (energies[static_cast<std::size_t>(best)] < energies[static_cast<std::size_t>(current)]) {
        result.history.push_back({key, sweep, current, best, energies[static_cast<std::size_t>(current)],
                                  energies[static_cast<std::size_t>(best)]});
        set.selection[key] = best;
        changed = true;
      }
    }
    if (!changed) break;
  }
  for (const auto& [key, list] : set.candidates) {
    result.chosen[key] = set.selection[key];
    result.energy[key] = cycle_energy(list[static_cast<std::size_t>(set.selection[key])], key.first, key.second, set,
                                      triplet_partners(key.first, key.second, triplets));
  }
  return result;
}

inline nlohmann::json to_json(const SelectionResult& r, const std::vector<std::string>& shape_ids) {
  auto name = [&](Index i) {
    return i >= 0 && static_cast<std::size_t>(i) < shape_ids.size() ? shape_ids[static_cast<std::size_t>(i)]
                                                                     : std::to_string(i);
  };
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [key, idx] : r.chosen)
    pairs.push_back({{"source", name(key.first)}, {"target", name(key.second)}, {"chosen", idx},
                     {"cycle_energy", r.energy.at(key)}});
  nlohmann::json history = nlohmann::json::array();
  for (const auto& u : r.history)
    history.push_back({{"source", name(u.pair.first)}, {"target", name(u.pair.second)}, {"sweep", u.sweep},
                       {"from", u.from}, {"to", u.to}, {"energy_before", u.energy_before},
                       {"energy_after", u.energy_after}});
  return {{"pairs", pairs}, {"sweeps", r.sweeps}, {"history", history}};
}

struct SymmetryCandidate {
  Eigen::MatrixXd fmap;
  PointwiseMap map;
};

struct SymmetrySelection {
  Index index = 0;
  bool no_symmetry_found = false;
  std::vector<double> displacement;  // mean normalized geodesic displacement per candidate
  std::vector<double> lapcomm;       // normalized E_lapComm per candidate
  double lapcomm_gate = 0;
};

/// Mean normalized geodesic distance between v and map(v) over `samples`.
inline double mean_displacement(const PointwiseMap& map, const GeodesicCache& geo, std::span<const Index> samples) {
  if (samples.empty()) return 0.0;
  double sum = 0;
  for (Index v : samples) sum += geo.distance(v, map[v]);
  return sum / static_cast<double>(samples.size());
}

/// Among candidates whose normalized E_lapComm is at most the upper median,
/// picks the one farthest from the identity. When even that one moves the
/// samples less than `threshold` on average, returns the candidate closest
/// to the identity and sets no_symmetry_found.
inline SymmetrySelection select_self_symmetry(std::span<const SymmetryCandidate> candidates, const Eigen::VectorXd& eigs,
                                              const GeodesicCache& geo, std::span<const Index> samples,
                                              double threshold = 0.02) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "select/select_self_symmetry", "no candidates");
  SymmetrySelection out;
  for (const auto& c : candidates) {
    out.lapcomm.push_back(normalized_lap_comm(c.fmap, eigs, eigs));
    out.displacement.push_back(mean_displacement(c.map, geo, samples));
  }
  std::vector<double> sorted = out.lapcomm;
  std::sort(sorted.begin(), sorted.end());
  out.lapcomm_gate = sorted[sorted.size() / 2];
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (out.lapcomm[i] <= out.lapcomm_gate && (!best || out.displacement[i] > out.displacement[*best])) best = i;
  if (out.displacement[*best] >= threshold) {
    out.index = static_cast<Index>(*best);
    return out;
  }
  out.no_symmetry_found = true;
  out.index = static_cast<Index>(std::min_element(out.displacement.begin(), out.displacement.end()) -
                                 out.displacement.begin());
  return out;
}

struct RegionOptions {
  double round_trip_threshold = 0.05;
  double ring_factor = 3.0;
};

/// Vertex mask from per-vertex displacement d(v, T v) and round-trip error
/// d(v, T T v). A vertex is kept when its round trip is exact or below the
/// threshold and its displacement differs from the 1-ring median by less
/// than ring_factor times its longest incident edge (a continuous isometry
/// changes displacement by at most twice the edge length).
inline std::vector<char> symmetric_region_mask(const TriangleMesh& mesh, const Eigen::VectorXd& displacement,
                                               const Eigen::VectorXd& round_trip, const RegionOptions& opt = {}) {
  const Index n = mesh.num_vertices();
  const double scale = 1.0 / std::sqrt(mesh.total_area());
  std::vector<char> mask(static_cast<std::size_t>(n), 0);
  std::vector<double> ring;
  for (Index v = 0; v < n; ++v) {
    if (!(round_trip(v) < opt.round_trip_threshold || round_trip(v) == 0)) continue;
    const auto nb = mesh.neighbors(v);
    bool consistent = true;
    if (!nb.empty()) {
      ring.clear();
      double edge = 0;
      for (Index w : nb) {
        ring.push_back(displacement(w));
        edge = std::max(edge, (mesh.position(v) - mesh.position(w)).norm() * scale);
      }
      std::nth_element(ring.begin(), ring.begin() + static_cast<std::ptrdiff_t>(ring.size() / 2), ring.end());
      consistent = std::abs(displacement(v) - ring[ring.size() / 2]) < opt.ring_factor * edge;
    }
    mask[static_cast<std::size_t>(v)] = consistent;
  }
  return mask;
}

/// Region mask with distances read from a cache holding every vertex (or at
/// least every v, T v and T T v triple).
inline std::vector<char> extract_symmetric_region(const TriangleMesh& mesh, const PointwiseMap& map,
                                                  const GeodesicCache& geo, const RegionOptions& opt = {}) {
  const Index n = mesh.num_vertices();
  if (map.domain_size() != n || map.codomain_size() != n)
    throw Error(ErrorCode::DimensionMismatch, "select/extract_symmetric_region", "not a self-map of the mesh");
  Eigen::VectorXd disp(n), trip(n);
  for (Index v = 0; v < n; ++v) {
    disp(v) = geo.distance(v, map[v]);
    trip(v) = geo.distance(v, map[map[v]]);
  }
  return symmetric_region_mask(mesh, disp, trip, opt);
}

/// Same mask with distances computed on demand on the mesh.
inline std::vector<char> extract_symmetric_region(const TriangleMesh& mesh, const PointwiseMap& map,
                                                  const RegionOptions& opt = {}, std::size_t workers = 0) {
  const Index n = mesh.num_vertices();
  if (map.domain_size() != n || map.codomain_size() != n)
    throw Error(ErrorCode::DimensionMismatch, "select/extract_symmetric_region", "not a self-map of the mesh");
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(2 * n));
  for (Index v = 0; v < n; ++v) pairs.emplace_back(v, map[v]);
  for (Index v = 0; v < n; ++v) pairs.emplace_back(v, map[map[v]]);
  const Eigen::VectorXd d = point_pair_distances(mesh, pairs, workers);
  return symmetric_region_mask(mesh, d.head(n), d.tail(n), opt);
}

}  // namespace maptree
