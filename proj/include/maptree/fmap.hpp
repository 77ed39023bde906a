#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "maptree/error.hpp"
#include "maptree/geodesic.hpp"
#include "maptree/mesh.hpp"
#include "maptree/spectral.hpp"

namespace maptree {

/// Discrete correspondence in index form: domain element i maps to targets[i].
class PointwiseMap {
 public:
  PointwiseMap() = default;
  PointwiseMap(std::vector<Index> targets, Index codomain_size)
      : targets_(std::move(targets)), codomain_size_(codomain_size) {
    for (std::size_t i = 0; i < targets_.size(); ++i)
      if (targets_[i] < 0 || targets_[i] >= codomain_size_)
        throw Error(ErrorCode::ValidationError, "fmap/pointwise_map",
                    "target " + std::to_string(targets_[i]) + " of element " + std::to_string(i) + " outside [0, " +
                        std::to_string(codomain_size_) + ")");
  }

  Index domain_size() const { return static_cast<Index>(targets_.size()); }
  Index codomain_size() const { return codomain_size_; }
  const std::vector<Index>& targets() const { return targets_; }
  Index operator[](Index i) const { return targets_[static_cast<std::size_t>(i)]; }

  friend bool operator==(const PointwiseMap&, const PointwiseMap&) = default;

 private:
  std::vector<Index> targets_;
  Index codomain_size_ = 0;
};

/// Fraction of domain elements on which two maps agree.
inline double agreement(const PointwiseMap& a, const PointwiseMap& b) {
  if (a.domain_size() != b.domain_size() || a.domain_size() == 0)
    throw Error(ErrorCode::DimensionMismatch, "fmap/agreement", "maps have different domains");
  Index same = 0;
  for (Index i = 0; i < a.domain_size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.domain_size());
}

/// Composition b(a(i)).
inline PointwiseMap compose(const PointwiseMap& a, const PointwiseMap& b) {
  if (a.codomain_size() != b.domain_size())
    throw Error(ErrorCode::DimensionMismatch, "fmap/compose", "codomain of the first map is not the domain of the second");
  std::vector<Index> t(static_cast<std::size_t>(a.domain_size()));
  for (Index i = 0; i < a.domain_size(); ++i) t[static_cast<std::size_t>(i)] = b[a[i]];
  return PointwiseMap(std::move(t), b.codomain_size());
}

/// "n_source n_target" header, then one 0-based target per line.
inline void write_pointwise(std::ostream& out, const PointwiseMap& map) {
  out << map.domain_size() << ' ' << map.codomain_size() << '\n';
  for (Index t : map.targets()) out << t << '\n';
}

inline PointwiseMap read_pointwise(std::istream& in) {
  const char* where = "fmap/read_pointwise";
  long long n = -1, m = -1;
  if (!(in >> n >> m) || n < 0 || m < 1) throw Error(ErrorCode::ParseError, where, "malformed header");
  std::vector<Index> t(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i)
    if (!(in >> t[static_cast<std::size_t>(i)]))
      throw Error(ErrorCode::ParseError, where, "expected " + std::to_string(n) + " targets, got " + std::to_string(i));
  try {
    return PointwiseMap(std::move(t), static_cast<Index>(m));
  } catch (const Error& e) {
    throw Error(ErrorCode::ValidationError, where, e.detail());
  }
}

inline void save_pointwise(const std::filesystem::path& path, const PointwiseMap& map) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "fmap/save_pointwise", "cannot write '" + path.string() + "'");
  write_pointwise(out, map);
}

inline PointwiseMap load_pointwise(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "fmap/load_pointwise", "cannot open '" + path.string() + "'");
  return read_pointwise(in);
}

/// Matrix C_21 of a map S1 -> S2: rows index the S1 basis, columns the S2
/// basis, and C transports S2 coefficient vectors to S1 coefficient vectors.
struct FunctionalMap {
  Eigen::MatrixXd matrix;
  std::string source_id;
  std::string target_id;

  Index rows() const { return matrix.rows(); }
  Index cols() const { return matrix.cols(); }
};

inline nlohmann::json to_json(const FunctionalMap& c) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(c.matrix.size()));
  for (Index r = 0; r < c.rows(); ++r)
    for (Index k = 0; k < c.cols(); ++k) values.push_back(c.matrix(r, k));
  return {{"source_id", c.source_id}, {"target_id", c.target_id}, {"rows", c.rows()}, {"cols", c.cols()},
          {"row_major_values", values}};
}

inline FunctionalMap functional_map_from_json(const nlohmann::json& j) {
  const char* where = "fmap/read_functional";
  try {
    FunctionalMap c;
    c.source_id = j.at("source_id").get<std::string>();
    c.target_id = j.at("target_id").get<std::string>();
    const auto rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
    const auto values = j.at("row_major_values").get<std::vector<double>>();
    if (rows < 1 || cols < 1 || static_cast<Index>(values.size()) != rows * cols)
      throw Error(ErrorCode::ValidationError, where, "value count does not match rows x cols");
    c.matrix.resize(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index k = 0; k < cols; ++k) c.matrix(r, k) = values[static_cast<std::size_t>(r * cols + k)];
    if (!c.matrix.allFinite()) throw Error(ErrorCode::ValidationError, where, "non-finite entry");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, where, e.what());
  }
}

/// Spectral basis restricted to a subset of vertices, with quadrature weights
/// so that sums over rows approximate surface integrals.
struct SampledBasis {
  Eigen::MatrixXd rows;  // one row of eigenfunction values per sample
  Eigen::VectorXd weights;
  Eigen::VectorXd eigenvalues;
  std::vector<Index> vertices;
  /// True when rows cover every vertex with the mass matrix as weights, so
  /// that rows^T diag(weights) rows = I and the pseudo-inverse is rows^T M.
  bool mass_orthonormal = false;

  Index count() const { return rows.rows(); }
  Index size() const { return rows.cols(); }
};

inline SampledBasis full_domain(const SpectralBasis& basis) {
  SampledBasis s;
  s.rows = basis.eigenfunctions;
  s.weights = basis.mass;
  s.eigenvalues = basis.eigenvalues;
  s.vertices.resize(static_cast<std::size_t>(basis.num_vertices()));
  std::iota(s.vertices.begin(), s.vertices.end(), Index{0});
  s.mass_orthonormal = true;
  return s;
}

/// Restriction to `samples`; weights are the lumped areas of each sample's
/// geodesic Voronoi cell, so they still sum to the total area.
inline SampledBasis restrict_to_samples(const TriangleMesh& mesh, const SpectralBasis& basis, std::vector<Index> samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptySourceSet, "fmap/restrict_to_samples", "no samples");
  std::vector<Index> owner;
  dijkstra(mesh, samples, &owner);
  SampledBasis s;
  s.rows.resize(static_cast<Index>(samples.size()), basis.size());
  for (std::size_t i = 0; i < samples.size(); ++i) s.rows.row(static_cast<Index>(i)) = basis.eigenfunctions.row(samples[i]);
  s.weights = Eigen::VectorXd::Zero(static_cast<Index>(samples.size()));
  for (Index v = 0; v < mesh.num_vertices(); ++v) {
    const Index o = owner[static_cast<std::size_t>(v)];
    // Vertices unreachable from every sample carry no weight.
    if (o >= 0) s.weights(o) += basis.mass(v);
  }
  s.eigenvalues = basis.eigenvalues;
  s.vertices = std::move(samples);
  return s;
}

namespace detail {

inline void require_columns(const SampledBasis& b, Index k, const char* where, const char* which) {
  if (k < 1 || k > b.size())
    throw Error(ErrorCode::DimensionMismatch, where,
                std::string(which) + " size " + std::to_string(k) + " outside [1, " + std::to_string(b.size()) + "]");
}

}  // namespace detail

/// Functional map C_21 (k1 x k2) of a pointwise map S1 -> S2 given on the
/// rows of `basis1` and `basis2`. On a full, mass-orthonormal domain this is
/// Phi1^T M1 Pi Phi2; on sampled domains the pseudo-inverse becomes the
/// weighted least-squares solve (A^T W A)^-1 A^T W.
inline Eigen::MatrixXd pointwise_to_functional(const PointwiseMap& map, const SampledBasis& basis1,
                                               const SampledBasis& basis2, Index k1, Index k2) {
  const char* where = "fmap/pointwise_to_functional";
  detail::require_columns(basis1, k1, where, "k1");
  detail::require_columns(basis2, k2, where, "k2");
  if (map.domain_size() != basis1.count() || map.codomain_size() != basis2.count())
    throw Error(ErrorCode::DimensionMismatch, where,
                "map is " + std::to_string(map.domain_size()) + " -> " + std::to_string(map.codomain_size()) +
                    " but bases have " + std::to_string(basis1.count()) + " and " + std::to_string(basis2.count()) + " rows");
  Eigen::MatrixXd pulled(map.domain_size(), k2);
  for (Index i = 0; i < map.domain_size(); ++i) pulled.row(i) = basis2.rows.row(map[i]).head(k2);
  const auto a = basis1.rows.leftCols(k1);
  const Eigen::MatrixXd rhs = a.transpose() * basis1.weights.asDiagonal() * pulled;
  if (basis1.mass_orthonormal) return rhs;
  const Eigen::MatrixXd gram = a.transpose() * basis1.weights.asDiagonal() * a;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-14 * ldlt.vectorD().maxCoeff())
    throw Error(ErrorCode::SingularLeastSquares, where, "sampled basis is rank deficient at k1 = " + std::to_string(k1));
  return ldlt.solve(rhs);
}

inline FunctionalMap pointwise_to_functional(const PointwiseMap& map, const SpectralBasis& basis1,
                                             const SpectralBasis& basis2, Index k1, Index k2) {
  return {pointwise_to_functional(map, full_domain(basis1), full_domain(basis2), k1, k2), {}, {}};
}

/// Index of the nearest `database` row for every `query` row (Euclidean),
/// lowest index on ties. Brute force in chunks via a single GEMM per chunk.
inline std::vector<Index> nearest_rows(const Eigen::MatrixXd& database, const Eigen::MatrixXd& query) {
  if (database.cols() != query.cols())
    throw Error(ErrorCode::DimensionMismatch, "fmap/nearest_rows", "embedding dimensions differ");
  if (database.rows() == 0) throw Error(ErrorCode::EmptySourceSet, "fmap/nearest_rows", "empty database");
  constexpr Index chunk = 256;
  const Eigen::VectorXd db_norm = database.rowwise().squaredNorm();
  std::vector<Index> out(static_cast<std::size_t>(query.rows()));
  Eigen::MatrixXd cross;
  for (Index start = 0; start < query.rows(); start += chunk) {
    const Index len = std::min(chunk, query.rows() - start);
    cross.noalias() = database * query.middleRows(start, len).transpose();
    for (Index q = 0; q < len; ++q) {
      Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Index r = 0; r < database.rows(); ++r) {
        const double d = db_norm(r) - 2.0 * cross(r, q);
        if (d < best_d) {
          best_d = d;
          best = r;
        }
      }
      out[static_cast<std::size_t>(start + q)] = best;
    }
  }
  return out;
}

/// Pointwise map S1 -> S2 recovered from C_21: each S1 row of Phi1 (first k1
/// columns) is matched to the nearest row of Phi2 C_21^T.
inline PointwiseMap functional_to_pointwise(const Eigen::MatrixXd& c21, const SampledBasis& basis1,
                                            const SampledBasis& basis2) {
  const char* where = "fmap/functional_to_pointwise";
  detail::require_columns(basis1, c21.rows(), where, "fmap rows");
  detail::require_columns(basis2, c21.cols(), where, "fmap cols");
  const Eigen::MatrixXd db = basis2.rows.leftCols(c21.cols()) * c21.transpose();
  return PointwiseMap(nearest_rows(db, basis1.rows.leftCols(c21.rows())), basis2.count());
}

inline PointwiseMap functional_to_pointwise(const FunctionalMap& c21, const SpectralBasis& basis1,
                                            const SpectralBasis& basis2) {
  return functional_to_pointwise(c21.matrix, full_domain(basis1), full_domain(basis2));
}

// ---------------------------------------------------------------------------
// Energies.

/// ||C C^T - I||_F^2 with I sized by the row count.
inline double energy_ortho(const Eigen::MatrixXd& c) {
  return (c * c.transpose() - Eigen::MatrixXd::Identity(c.rows(), c.rows())).squaredNorm();
}

/// ||C diag(eigs2) - diag(eigs1) C||_F^2 for C_21 (rows on S1, columns on S2).
inline double energy_lap_comm(const Eigen::MatrixXd& c, const Eigen::VectorXd& eigs1, const Eigen::VectorXd& eigs2) {
  if (eigs1.size() < c.rows() || eigs2.size() < c.cols())
    throw Error(ErrorCode::DimensionMismatch, "fmap/energy_lap_comm", "eigenvalue lists shorter than the fmap");
  double e = 0.0;
  for (Index r = 0; r < c.rows(); ++r)
    for (Index k = 0; k < c.cols(); ++k) e += std::pow(c(r, k) * (eigs2(k) - eigs1(r)), 2);
  return e;
}

/// sum_k (1/k) ||C_k C_k^T - I_k||^2 over leading principal blocks.
inline double energy_zoomout(const Eigen::MatrixXd& c) {
  if (c.rows() != c.cols())
    throw Error(ErrorCode::NonSquare, "fmap/energy_zoomout",
                "fmap is " + std::to_string(c.rows()) + " x " + std::to_string(c.cols()));
  double e = 0.0;
  for (Index k = 1; k <= c.rows(); ++k) e += energy_ortho(c.topLeftCorner(k, k)) / static_cast<double>(k);
  return e;
}

/// Squared spectral range used to make the commutativity energy scale-free:
/// the largest eigenvalue addressed by either side of C.
inline double spectral_range_squared(Index rows, Index cols, const Eigen::VectorXd& eigs1, const Eigen::VectorXd& eigs2) {
  const double top = std::max(eigs1.head(rows).cwiseAbs().maxCoeff(), eigs2.head(cols).cwiseAbs().maxCoeff());
  return top > 0 ? top * top : 1.0;
}

inline double normalized_lap_comm(const Eigen::MatrixXd& c, const Eigen::VectorXd& eigs1, const Eigen::VectorXd& eigs2) {
  return energy_lap_comm(c, eigs1, eigs2) / spectral_range_squared(c.rows(), c.cols(), eigs1, eigs2);
}

/// E_ortho divided by the larger dimension.
inline double normalized_ortho(const Eigen::MatrixXd& c) {
  return energy_ortho(c) / static_cast<double>(std::max(c.rows(), c.cols()));
}

inline double fmap_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::DimensionMismatch, "fmap/fmap_distance", "matrices differ in shape");
  return (a - b).norm();
}

/// Block-diagonal [base 0; 0 block].
inline Eigen::MatrixXd embed_block(const Eigen::MatrixXd& base, const Eigen::MatrixXd& block) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(base.rows() + block.rows(), base.cols() + block.cols());
  out.topLeftCorner(base.rows(), base.cols()) = base;
  out.bottomRightCorner(block.rows(), block.cols()) = block;
  return out;
}

}  // namespace maptree
