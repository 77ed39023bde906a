#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <ostream>
#include <utility>
#include <vector>

#include "maptree/error.hpp"
#include "maptree/fmap.hpp"

namespace maptree {

struct RefineConfig {
  Index k_init = 5;
  Index k_step = 1;
  Index k_final = 50;
  Index sample_count = 300;

  void validate() const {
    const char* where = "refine/config";
    if (k_init < 1 || k_init > k_final)
      throw Error(ErrorCode::InvalidArgument, where, "need 1 <= k_init <= k_final");
    if (k_step < 1) throw Error(ErrorCode::InvalidArgument, where, "k_step must be >= 1");
    if (sample_count < k_final) throw Error(ErrorCode::InvalidArgument, where, "sample_count must be >= k_final");
  }
};

/// Maps in both directions between the sample sets of two shapes.
struct MapPair {
  PointwiseMap pi_12;
  PointwiseMap pi_21;
};

struct RefineLogEntry {
  Index k = 0;
  double e_zm_12 = 0;
  double e_zm_21 = 0;
  double e_bij = 0;
};

struct RefineLog {
  std::vector<RefineLogEntry> entries;

  void write_csv(std::ostream& out) const {
    out << "k,E_ZM_12,E_ZM_21,E_bij\n";
    out.precision(12);
    for (const auto& e : entries) out << e.k << ',' << e.e_zm_12 << ',' << e.e_zm_21 << ',' << e.e_bij << '\n';
  }
};

/// Both conversions of a pair at size k: c12 (S1 -> S2 functions) from pi_21
/// and c21 (S2 -> S1 functions) from pi_12.
struct FunctionalPair {
  Eigen::MatrixXd c12;
  Eigen::MatrixXd c21;
};

inline FunctionalPair convert_pair(const MapPair& pair, const SampledBasis& b1, const SampledBasis& b2, Index k) {
  return {pointwise_to_functional(pair.pi_21, b2, b1, k, k), pointwise_to_functional(pair.pi_12, b1, b2, k, k)};
}

/// E_ZM(C12) + E_ZM(C21) plus the scaled bijectivity terms
/// sum_k (1/k) (||C12_k C21_k - I||^2 + ||C21_k C12_k - I||^2).
inline double bijective_energy(const Eigen::MatrixXd& c12, const Eigen::MatrixXd& c21) {
  double e = energy_zoomout(c12) + energy_zoomout(c21);
  for (Index k = 1; k <= c12.rows(); ++k) {
    const auto a = c12.topLeftCorner(k, k), b = c21.topLeftCorner(k, k);
    const auto id = Eigen::MatrixXd::Identity(k, k);
    e += ((a * b - id).squaredNorm() + (b * a - id).squaredNorm()) / static_cast<double>(k);
  }
  return e;
}

inline double bijective_energy(const MapPair& pair, const SampledBasis& b1, const SampledBasis& b2, Index k) {
  const auto f = convert_pair(pair, b1, b2, k);
  return bijective_energy(f.c12, f.c21);
}

namespace detail {

// Weighted ridge solve of min sum_i w_i ||x_i C - y_i||^2 + damping ||C||^2,
// returning C^T so that rows of the result index the output basis.
inline Eigen::MatrixXd stacked_solve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& w) {
  Eigen::MatrixXd gram = x.transpose() * w.asDiagonal() * x;
  gram.diagonal().array() += 1e-9;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw Error(ErrorCode::SingularLeastSquares, "refine/bijective_zoomout", "stacked system is rank deficient");
  return ldlt.solve(x.transpose() * w.asDiagonal() * y).transpose();
}

inline Eigen::MatrixXd gather(const Eigen::MatrixXd& rows, const PointwiseMap& map) {
  Eigen::MatrixXd out(map.domain_size(), rows.cols());
  for (Index i = 0; i < map.domain_size(); ++i) out.row(i) = rows.row(map[i]);
  return out;
}

inline Eigen::MatrixXd hstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

inline Eigen::MatrixXd vstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

inline Eigen::VectorXd vstack(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

inline void check_pair(const MapPair& pair, const SampledBasis& b1, const SampledBasis& b2, Index k_final,
                       const char* where) {
  if (pair.pi_12.domain_size() != b1.count() || pair.pi_12.codomain_size() != b2.count() ||
      pair.pi_21.domain_size() != b2.count() || pair.pi_21.codomain_size() != b1.count())
    throw Error(ErrorCode::DimensionMismatch, where, "map pair does not match the sample sets");
  if (k_final > b1.size() || k_final > b2.size())
    throw Error(ErrorCode::DimensionMismatch, where,
                "k_final " + std::to_string(k_final) + " exceeds basis sizes " + std::to_string(b1.size()) + " / " +
                    std::to_string(b2.size()));
}

}  // namespace detail

/// Bijective spectral upsampling of a pair of maps. For each k it converts
/// both maps, updates them by nearest neighbours, refits both functional maps
/// jointly from the stacked bijectivity systems, and takes a final
/// nearest-neighbour step on the concatenated embeddings.
inline MapPair bijective_zoomout(MapPair pair, const SampledBasis& b1, const SampledBasis& b2, const RefineConfig& cfg,
                                 RefineLog* log = nullptr) {
  const char* where = "refine/bijective_zoomout";
  if (cfg.k_init < 1 || cfg.k_init > cfg.k_final || cfg.k_step < 1)
    throw Error(ErrorCode::InvalidArgument, where, "invalid k schedule");
  detail::check_pair(pair, b1, b2, cfg.k_final, where);
  const Eigen::VectorXd w12 = detail::vstack(b2.weights, b1.weights);
  const Eigen::VectorXd w21 = detail::vstack(b1.weights, b2.weights);
  for (Index k = cfg.k_init; k <= cfg.k_final; k += cfg.k_step) {
    const Eigen::MatrixXd a1 = b1.rows.leftCols(k), a2 = b2.rows.leftCols(k);
    auto [c12, c21] = convert_pair(pair, b1, b2, k);
    pair.pi_12 = PointwiseMap(nearest_rows(a2 * c21.transpose(), a1), b2.count());
    pair.pi_21 = PointwiseMap(nearest_rows(a1 * c12.transpose(), a2), b1.count());

    // Phi2 C12 ~ Pi21 Phi1 and Pi12 Phi2 C12 ~ Phi1; symmetrically for C21.
    c12 = detail::stacked_solve(detail::vstack(a2, detail::gather(a2, pair.pi_12)),
                                detail::vstack(detail::gather(a1, pair.pi_21), a1), w12);
    c21 = detail::stacked_solve(detail::vstack(a1, detail::gather(a1, pair.pi_21)),
                                detail::vstack(detail::gather(a2, pair.pi_12), a2), w21);

    pair.pi_12 = PointwiseMap(nearest_rows(detail::hstack(a2 * c21.transpose(), a2 * c12), detail::hstack(a1, a1)),
                              b2.count());
    pair.pi_21 = PointwiseMap(nearest_rows(detail::hstack(a1 * c12.transpose(), a1 * c21), detail::hstack(a2, a2)),
                              b1.count());
    if (log) {
      const auto f = convert_pair(pair, b1, b2, k);
      log->entries.push_back({k, energy_zoomout(f.c12), energy_zoomout(f.c21), bijective_energy(f.c12, f.c21)});
    }
  }
  return pair;
}

/// Single-direction spectral upsampling: alternate conversion and
/// nearest-neighbour update while k grows.
inline PointwiseMap zoomout(PointwiseMap map, const SampledBasis& b1, const SampledBasis& b2, const RefineConfig& cfg) {
  const char* where = "refine/zoomout";
  if (cfg.k_init < 1 || cfg.k_init > cfg.k_final || cfg.k_step < 1)
    throw Error(ErrorCode::InvalidArgument, where, "invalid k schedule");
  if (map.domain_size() != b1.count() || map.codomain_size() != b2.count())
    throw Error(ErrorCode::DimensionMismatch, where, "map does not match the sample sets");
  if (cfg.k_final > b1.size() || cfg.k_final > b2.size())
    throw Error(ErrorCode::DimensionMismatch, where, "k_final exceeds basis size");
  for (Index k = cfg.k_init; k <= cfg.k_final; k += cfg.k_step) {
    const Eigen::MatrixXd c21 = pointwise_to_functional(map, b1, b2, k, k);
    map = functional_to_pointwise(c21, b1, b2);
  }
  return map;
}

/// Both directions of the nearest-neighbour conversion of a (possibly
/// rectangular) C_21 seed.
inline MapPair pair_from_functional(const Eigen::MatrixXd& c21, const SampledBasis& b1, const SampledBasis& b2) {
  const Index r = c21.rows(), c = c21.cols();
  PointwiseMap pi_12(nearest_rows(b2.rows.leftCols(c) * c21.transpose(), b1.rows.leftCols(r)), b2.count());
  PointwiseMap pi_21(nearest_rows(b1.rows.leftCols(r) * c21, b2.rows.leftCols(c)), b1.count());
  return {std::move(pi_12), std::move(pi_21)};
}

struct RefinedNode {
  Eigen::MatrixXd fmap;
  MapPair pair;
};

/// Converts a seed to a pair, runs bijective zoomout from max(rows, cols) to
/// that size + budget with unit steps (capped by the basis), and converts
/// back to a functional map of the seed's shape.
inline RefinedNode refine_node(const Eigen::MatrixXd& seed, const SampledBasis& b1, const SampledBasis& b2, Index budget) {
  const char* where = "refine/refine_node";
  if (seed.rows() > b1.size() || seed.cols() > b2.size())
    throw Error(ErrorCode::DimensionMismatch, where, "seed larger than the bases");
  const Index start = std::max(seed.rows(), seed.cols());
  RefineConfig cfg;
  cfg.k_init = std::min({start, b1.size(), b2.size()});
  cfg.k_final = std::min({start + std::max<Index>(budget, 0), b1.size(), b2.size()});
  cfg.k_step = 1;
  MapPair pair = bijective_zoomout(pair_from_functional(seed, b1, b2), b1, b2, cfg);
  Eigen::MatrixXd fmap = pointwise_to_functional(pair.pi_12, b1, b2, seed.rows(), seed.cols());
  return {std::move(fmap), std::move(pair)};
}

}  // namespace maptree
