#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "maptree/error.hpp"
#include "maptree/fmap.hpp"
#include "maptree/geodesic.hpp"
#include "maptree/parallel.hpp"

namespace maptree {

/// Maps sharing one domain (usually a sample set) and codomain.
struct MapEnsemble {
  std::vector<PointwiseMap> maps;
  std::vector<std::string> labels;

  void validate() const {
    for (const auto& m : maps)
      if (m.domain_size() != maps.front().domain_size() || m.codomain_size() != maps.front().codomain_size())
        throw Error(ErrorCode::DimensionMismatch, "analysis/ensemble", "maps differ in domain or codomain size");
  }
};

struct MapDistance {
  double mean = 0;
  double max = 0;
};

/// Mean and max normalized geodesic distance between a(v) and b(v) over the
/// domain. `geo` lives on the codomain and must cover, for each v, a(v) or b(v).
inline MapDistance map_pair_distance(const PointwiseMap& a, const PointwiseMap& b, const GeodesicCache& geo) {
  if (a.domain_size() != b.domain_size() || a.codomain_size() != b.codomain_size())
    throw Error(ErrorCode::DimensionMismatch, "analysis/map_pair_distance", "maps differ in shape");
  MapDistance d;
  for (Index v = 0; v < a.domain_size(); ++v) {
    const double x = a[v] == b[v] ? 0.0 : geo.distance(a[v], b[v]);
    d.mean += x;
    d.max = std::max(d.max, x);
  }
  if (a.domain_size() > 0) d.mean /= static_cast<double>(a.domain_size());
  return d;
}

struct DistanceMatrices {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd max;
};

inline DistanceMatrices ensemble_distances(const MapEnsemble& ensemble, const GeodesicCache& geo, std::size_t workers = 0) {
  ensemble.validate();
  const auto n = static_cast<Index>(ensemble.maps.size());
  DistanceMatrices out{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
  parallel_for(
      static_cast<std::size_t>(n),
      [&](std::size_t i) {
        for (Index j = static_cast<Index>(i) + 1; j < n; ++j) {
          const auto d = map_pair_distance(ensemble.maps[i], ensemble.maps[static_cast<std::size_t>(j)], geo);
          out.mean(static_cast<Index>(i), j) = d.mean;
          out.max(static_cast<Index>(i), j) = d.max;
        }
      },
      workers);
  out.mean = out.mean.triangularView<Eigen::StrictlyUpper>().toDenseMatrix() +
             out.mean.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().transpose();
  out.max = out.max.triangularView<Eigen::StrictlyUpper>().toDenseMatrix() +
            out.max.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().transpose();
  return out;
}

struct Landscape2D {
  Eigen::MatrixX2d coordinates;
  double stress = 0;  // Kruskal stress-1 of the embedding
  std::optional<std::vector<Index>> cluster_ids;
};

/// Classical (Torgerson) scaling to two dimensions.
inline Landscape2D mds_embed(const Eigen::MatrixXd& dist) {
  const char* where = "analysis/mds_embed";
  const Index n = dist.rows();
  if (dist.cols() != n) throw Error(ErrorCode::NonSymmetric, where, "matrix is not square");
  const double tol = 1e-9 * std::max(1.0, dist.cwiseAbs().maxCoeff());
  if ((dist - dist.transpose()).cwiseAbs().maxCoeff() > tol)
    throw Error(ErrorCode::NonSymmetric, where, "matrix is not symmetric");
  if (dist.minCoeff() < 0) throw Error(ErrorCode::InvalidArgument, where, "negative distance");
  if (dist.diagonal().cwiseAbs().maxCoeff() > tol) throw Error(ErrorCode::InvalidArgument, where, "non-zero diagonal");
  Landscape2D out;
  out.coordinates = Eigen::MatrixX2d::Zero(n, 2);
  if (n < 2) return out;
  const Eigen::MatrixXd centering = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const Eigen::MatrixXd gram = -0.5 * centering * dist.cwiseAbs2() * centering;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (gram + gram.transpose()));
  for (int c = 0; c < 2 && c < n; ++c) {
    const Index col = n - 1 - c;
    const double lambda = std::max(0.0, eig.eigenvalues()(col));
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0) v = -v;
    out.coordinates.col(c) = v * std::sqrt(lambda);
  }
  double num = 0, den = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const double e = (out.coordinates.row(i) - out.coordinates.row(j)).norm() - dist(i, j);
      num += e * e;
      den += dist(i, j) * dist(i, j);
    }
  out.stress = den > 0 ? std::sqrt(num / den) : 0.0;
  return out;
}

/// Seeded k-means++ initialization followed by Lloyd iterations (at most
/// max_iterations); ties go to the lowest cluster id.
inline std::vector<Index> kmeans(const Eigen::MatrixXd& points, Index k, std::uint64_t seed, Index max_iterations = 100) {
  const char* where = "analysis/kmeans";
  const Index n = points.rows();
  if (k < 1) throw Error(ErrorCode::InvalidArgument, where, "k must be positive");
  if (k > n) throw Error(ErrorCode::KTooLarge, where, "k " + std::to_string(k) + " exceeds point count " + std::to_string(n));
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers(k, points.cols());
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  Index first = static_cast<Index>(std::uniform_int_distribution<std::uint64_t>(0, static_cast<std::uint64_t>(n - 1))(rng));
  centers.row(0) = points.row(first);
  taken[static_cast<std::size_t>(first)] = 1;
  Eigen::VectorXd nearest = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Index pick = -1;
    if (total > 0) {
      double r = std::uniform_real_distribution<double>(0, total)(rng);
      for (Index i = 0; i < n; ++i) {
        if (taken[static_cast<std::size_t>(i)] || nearest(i) <= 0) continue;
        pick = i;
        r -= nearest(i);
        if (r <= 0) break;
      }
    }
    if (pick < 0)  // all remaining points coincide with a center
      pick = static_cast<Index>(std::find(taken.begin(), taken.end(), 0) - taken.begin());
    taken[static_cast<std::size_t>(pick)] = 1;
    centers.row(c) = points.row(pick);
    nearest = nearest.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  std::vector<Index> ids(static_cast<std::size_t>(n), -1);
  for (Index it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < k; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (ids[static_cast<std::size_t>(i)] != best) {
        ids[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Index i = 0; i < n; ++i) {
      sums.row(ids[static_cast<std::size_t>(i)]) += points.row(i);
      counts(ids[static_cast<std::size_t>(i)]) += 1;
    }
    for (Index c = 0; c < k; ++c)
      if (counts(c) > 0) centers.row(c) = sums.row(c) / counts(c);
  }
  return ids;
}

/// Mean silhouette coefficient; points in singleton clusters score 0.
inline double silhouette(const Eigen::MatrixXd& points, std::span<const Index> ids) {
  const Index n = points.rows();
  if (n == 0) return 0.0;
  const Index k = *std::max_element(ids.begin(), ids.end()) + 1;
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(k), count = Eigen::VectorXd::Zero(k);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      sum(ids[static_cast<std::size_t>(j)]) += (points.row(i) - points.row(j)).norm();
      count(ids[static_cast<std::size_t>(j)]) += 1;
    }
    const Index own = ids[static_cast<std::size_t>(i)];
    if (count(own) == 0) continue;
    const double a = sum(own) / count(own);
    double b = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < k; ++c)
      if (c != own && count(c) > 0) b = std::min(b, sum(c) / count(c));
    if (!std::isfinite(b)) continue;
    const double denom = std::max(a, b);
    total += denom > 0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

/// `count` maps with independent uniform targets, seeded.
inline MapEnsemble random_maps(Index domain_size, Index codomain_size, Index count, std::uint64_t seed) {
  if (count < 1 || domain_size < 1 || codomain_size < 1)
    throw Error(ErrorCode::InvalidArgument, "analysis/random_maps", "sizes and count must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> pick(0, static_cast<std::uint64_t>(codomain_size - 1));
  MapEnsemble out;
  for (Index m = 0; m < count; ++m) {
    std::vector<Index> t(static_cast<std::size_t>(domain_size));
    for (auto& x : t) x = static_cast<Index>(pick(rng));
    out.maps.emplace_back(std::move(t), codomain_size);
    out.labels.push_back("random_" + std::to_string(m));
  }
  return out;
}

/// CSV with header map_id,x,y,cluster,geodesic_distortion; cluster is -1
/// without clustering and distortion is left empty when not supplied.
inline void write_landscape_csv(std::ostream& out, const Landscape2D& land, std::span<const std::string> map_ids,
                                std::span<const double> distortion = {}) {
  out << "map_id,x,y,cluster,geodesic_distortion\n";
  out.precision(10);
  for (Index i = 0; i < land.coordinates.rows(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    out << (u < map_ids.size() ? map_ids[u] : std::to_string(i)) << ',' << land.coordinates(i, 0) << ','
        << land.coordinates(i, 1) << ',' << (land.cluster_ids ? (*land.cluster_ids)[u] : Index{-1}) << ',';
    if (u < distortion.size()) out << distortion[u];
    out << '\n';
  }
}

}  // namespace maptree
