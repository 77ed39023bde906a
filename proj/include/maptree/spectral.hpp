#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maptree/error.hpp"
#include "maptree/mesh.hpp"

namespace maptree {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Cotangent stiffness W (positive semidefinite, zero row sums) and lumped
/// barycentric mass M stored as its diagonal.
struct LaplacianPair {
  SparseMatrix stiffness;
  Eigen::VectorXd mass;
};

inline LaplacianPair build_laplacian(const TriangleMesh& mesh) {
  const Index n = mesh.num_vertices();
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(mesh.num_faces()) * 12);
  for (Index f = 0; f < mesh.num_faces(); ++f) {
    const auto corners = mesh.face(f);
    for (int c = 0; c < 3; ++c) {
      const Index i = corners[static_cast<std::size_t>((c + 1) % 3)];
      const Index j = corners[static_cast<std::size_t>((c + 2) % 3)];
      const Index o = corners[static_cast<std::size_t>(c)];
      const Eigen::Vector3d e1 = mesh.position(i) - mesh.position(o);
      const Eigen::Vector3d e2 = mesh.position(j) - mesh.position(o);
      const double cot = e1.dot(e2) / e1.cross(e2).norm();
      if (!std::isfinite(cot) || std::abs(cot) > 1e8)
        throw Error(ErrorCode::DegenerateAngle, "spectral/build_laplacian",
                    "cotangent at vertex " + std::to_string(o) + " of face " + std::to_string(f) + " is out of range");
      const double w = 0.5 * cot;
      entries.emplace_back(i, j, -w);
      entries.emplace_back(j, i, -w);
      entries.emplace_back(i, i, w);
      entries.emplace_back(j, j, w);
    }
  }
  LaplacianPair out;
  out.stiffness.resize(n, n);
  out.stiffness.setFromTriplets(entries.begin(), entries.end());
  out.stiffness.makeCompressed();
  out.mass = mesh.lumped_areas();
  return out;
}

/// Leading eigenpairs of W phi = lambda M phi, ascending, M-orthonormal, with
/// the largest-magnitude entry of every column positive.
struct SpectralBasis {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenfunctions;
  Eigen::VectorXd mass;

  Index size() const { return eigenvalues.size(); }
  Index num_vertices() const { return eigenfunctions.rows(); }
};

struct EigensolverOptions {
  /// Problems up to this size use a dense solver.
  Index dense_threshold = 1200;
  Index block_size = 8;
  /// Shift of the inverted operator, in units of 1 / total area (so 1 on
  /// unit-area meshes). Near-zero shifts leave the factorization too close to
  /// singular for tight residuals.
  double shift = 1.0;
  double tolerance = 1e-10;
  int max_restarts = 60;
  std::uint64_t seed = 0x5eed;
};

namespace detail {

inline void fix_signs(Eigen::MatrixXd& phi) {
  for (Index c = 0; c < phi.cols(); ++c) {
    Index arg = 0;
    for (Index r = 1; r < phi.rows(); ++r)
      if (std::abs(phi(r, c)) > std::abs(phi(arg, c))) arg = r;
    if (phi(arg, c) < 0) phi.col(c) *= -1.0;
  }
}

inline SpectralBasis dense_basis(const LaplacianPair& lap, Index k) {
  const Eigen::VectorXd inv_sqrt = lap.mass.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd a = inv_sqrt.asDiagonal() * Eigen::MatrixXd(lap.stiffness) * inv_sqrt.asDiagonal();
  a = 0.5 * (a + a.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success)
    throw Error(ErrorCode::SolverNoConvergence, "spectral/compute_basis", "dense symmetric eigensolver failed");
  SpectralBasis out;
  out.eigenvalues = solver.eigenvalues().head(k);
  out.eigenfunctions = inv_sqrt.asDiagonal() * solver.eigenvectors().leftCols(k);
  out.mass = lap.mass;
  return out;
}

// Orthonormalizes `block` against the columns of `basis` (two passes) and
// within itself; columns that collapse are replaced by fresh random vectors.
inline Eigen::MatrixXd orthonormal_block(const Eigen::MatrixXd& basis, Eigen::MatrixXd block, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(block.rows(), 0);
  for (Index c = 0; c < block.cols(); ++c) {
    Eigen::VectorXd v = block.col(c);
    for (int attempt = 0; attempt < 4; ++attempt) {
      const double before = v.norm();
      for (int pass = 0; pass < 2; ++pass) {
        if (basis.cols() > 0) v -= basis * (basis.transpose() * v);
        if (out.cols() > 0) v -= out * (out.transpose() * v);
      }
      if (v.norm() > 1e-10 * std::max(before, 1e-300)) break;
      v = Eigen::VectorXd::NullaryExpr(block.rows(), [&] { return normal(rng); });
    }
    out.conservativeResize(Eigen::NoChange, out.cols() + 1);
    out.col(out.cols() - 1) = v.normalized();
  }
  return out;
}

// Restarted block Krylov method for the largest eigenvalues of the
// shift-inverted operator y -> D K^-1 D y, with K = W + shift M and D = sqrt(M).
// Converged Ritz vectors are locked and deflated from later projections, which
// keeps the near-null modes (operator values near 1/shift) from swamping the
// precision of the rest. Unconverged Ritz vectors are retained across restarts
// and their residuals seed the next block.
inline SpectralBasis krylov_basis(const LaplacianPair& lap, Index k, const EigensolverOptions& opt) {
  const char* where = "spectral/compute_basis";
  const Index n = lap.mass.size();
  const double shift = opt.shift / lap.mass.sum();
  const SparseMatrix k_mat = lap.stiffness + SparseMatrix(Eigen::VectorXd(shift * lap.mass).asDiagonal());
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(k_mat);
  if (ldlt.info() != Eigen::Success)
    throw Error(ErrorCode::SolverNoConvergence, where, "factorization of the shifted stiffness failed");
  const Eigen::VectorXd d = lap.mass.cwiseSqrt();
  const auto apply = [&](const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
    Eigen::MatrixXd rhs = d.asDiagonal() * y;
    return d.asDiagonal() * ldlt.solve(rhs);
  };
  const auto converged = [&](const Eigen::VectorXd& y, double theta) {
    const Eigen::VectorXd phi = y.cwiseQuotient(d);
    const double lambda = 1.0 / theta - shift;
    const Eigen::VectorXd mphi = lap.mass.cwiseProduct(phi);
    const double res = (lap.stiffness * phi - lambda * mphi).norm() / mphi.norm();
    return res <= opt.tolerance * std::max(1.0, std::abs(lambda));
  };

  const Index b = std::min(opt.block_size, n);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;

  Eigen::MatrixXd locked(n, 0);
  std::vector<double> locked_theta;
  Eigen::MatrixXd ritz(n, 0), a_ritz(n, 0);
  Eigen::MatrixXd seed_block = Eigen::MatrixXd::NullaryExpr(n, b, [&] { return normal(rng); });

  for (int restart = 0; restart <= opt.max_restarts; ++restart) {
    const Index wanted = k - locked.cols();
    const Index keep = std::min(wanted + b, n - locked.cols());
    const Index max_dim = std::min(n - locked.cols(), std::max(keep + 4 * b, 2 * keep + b));

    Eigen::MatrixXd q = ritz, aq = a_ritz;
    Eigen::MatrixXd guard(n, locked.cols() + q.cols());
    guard << locked, q;
    Eigen::MatrixXd block = orthonormal_block(guard, seed_block, rng);
    while (q.cols() < max_dim) {
      block.conservativeResize(Eigen::NoChange, std::min(block.cols(), max_dim - q.cols()));
      const Eigen::MatrixXd a_block = apply(block);
      q.conservativeResize(Eigen::NoChange, q.cols() + block.cols());
      q.rightCols(block.cols()) = block;
      aq.conservativeResize(Eigen::NoChange, aq.cols() + block.cols());
      aq.rightCols(block.cols()) = a_block;
      if (q.cols() >= max_dim) break;
      guard.resize(n, locked.cols() + q.cols());
      guard << locked, q;
      block = orthonormal_block(guard, a_block, rng);
    }
    Eigen::MatrixXd t = q.transpose() * aq;
    t = 0.5 * (t + t.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(t);
    const Index p = std::min(keep, q.cols());
    // Largest shift-inverted values first.
    const Eigen::MatrixXd s = small.eigenvectors().rightCols(p).rowwise().reverse();
    const Eigen::VectorXd theta = small.eigenvalues().tail(p).reverse();
    const Eigen::MatrixXd x = q * s;
    const Eigen::MatrixXd ax = aq * s;

    // Lock the leading run of converged pairs; later ones wait so that the
    // locked set always holds the extreme part of the spectrum.
    Index run = 0;
    while (run < std::min(wanted, p) && converged(x.col(run), theta(run))) ++run;
    if (run > 0) {
      locked.conservativeResize(Eigen::NoChange, locked.cols() + run);
      locked.rightCols(run) = x.leftCols(run);
      for (Index i = 0; i < run; ++i) locked_theta.push_back(theta(i));
    }
    if (locked.cols() >= k) {
      SpectralBasis out;
      out.eigenvalues.resize(k);
      for (Index i = 0; i < k; ++i) out.eigenvalues(i) = 1.0 / locked_theta[static_cast<std::size_t>(i)] - shift;
      out.eigenfunctions = d.cwiseInverse().asDiagonal() * locked.leftCols(k);
      out.mass = lap.mass;
      return out;
    }
    ritz = x.rightCols(p - run);
    a_ritz = ax.rightCols(p - run);
    const Index open = std::min(b, wanted - run);
    seed_block.resize(n, b);
    for (Index c = 0; c < b; ++c)
      seed_block.col(c) = c < open ? Eigen::VectorXd(ax.col(run + c) - theta(run + c) * x.col(run + c))
                                   : Eigen::VectorXd::NullaryExpr(n, [&] { return normal(rng); });
  }
  throw Error(ErrorCode::SolverNoConvergence, where,
              "block Krylov iteration did not converge after " + std::to_string(opt.max_restarts) + " restarts");
}

}  // namespace detail

/// Smallest `k` generalized eigenpairs. `k` may equal the vertex count, in
/// which case the dense path is used regardless of size.
inline SpectralBasis compute_basis(const LaplacianPair& lap, Index k, const EigensolverOptions& opt = {}) {
  const Index n = lap.mass.size();
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "spectral/compute_basis", "k must be positive");
  if (k > n)
    throw Error(ErrorCode::KTooLarge, "spectral/compute_basis",
                "k = " + std::to_string(k) + " exceeds vertex count " + std::to_string(n));
  const bool dense = n <= opt.dense_threshold || k + opt.block_size >= n;
  SpectralBasis out = dense ? detail::dense_basis(lap, k) : detail::krylov_basis(lap, k, opt);
  // Ritz values arrive sorted; keep eigenvector order tied to ascending values.
  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return out.eigenvalues(a) < out.eigenvalues(b); });
  SpectralBasis sorted;
  sorted.eigenvalues.resize(k);
  sorted.eigenfunctions.resize(n, k);
  for (Index i = 0; i < k; ++i) {
    sorted.eigenvalues(i) = out.eigenvalues(order[static_cast<std::size_t>(i)]);
    sorted.eigenfunctions.col(i) = out.eigenfunctions.col(order[static_cast<std::size_t>(i)]);
  }
  sorted.mass = std::move(out.mass);
  detail::fix_signs(sorted.eigenfunctions);
  return sorted;
}

/// Inclusive, 0-based column range.
struct IndexRange {
  Index first = 0;
  Index last = 0;
  Index size() const { return last - first + 1; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Largest p with eigs[p] - eigs[start] <= epsilon.
inline IndexRange group_eigenvalues(const Eigen::VectorXd& eigs, Index start, double epsilon) {
  if (start < 0 || start >= eigs.size())
    throw Error(ErrorCode::InvalidArgument, "spectral/group_eigenvalues", "start index " + std::to_string(start) + " outside basis");
  if (epsilon < 0) throw Error(ErrorCode::InvalidArgument, "spectral/group_eigenvalues", "epsilon must be non-negative");
  Index p = start;
  while (p + 1 < eigs.size() && eigs(p + 1) - eigs(start) <= epsilon) ++p;
  return {start, p};
}

/// Consecutive groups covering the whole spectrum.
inline std::vector<IndexRange> group_spectrum(const Eigen::VectorXd& eigs, double epsilon) {
  std::vector<IndexRange> out;
  for (Index s = 0; s < eigs.size(); s = out.back().last + 1) out.push_back(group_eigenvalues(eigs, s, epsilon));
  return out;
}

/// Spectral coefficients Phi^T M f.
inline Eigen::VectorXd project_function(const SpectralBasis& basis, const Eigen::VectorXd& f) {
  if (f.size() != basis.num_vertices())
    throw Error(ErrorCode::DimensionMismatch, "spectral/project_function",
                "function has " + std::to_string(f.size()) + " values, mesh has " + std::to_string(basis.num_vertices()));
  return basis.eigenfunctions.transpose() * basis.mass.cwiseProduct(f);
}

// ---------------------------------------------------------------------------
// On-disk basis cache.

/// FNV-1a over positions, faces and k.
inline std::uint64_t basis_cache_key(const TriangleMesh& mesh, Index k) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(mesh.positions().data(), sizeof(double) * static_cast<std::size_t>(mesh.positions().size()));
  mix(mesh.faces().data(), sizeof(Index) * static_cast<std::size_t>(mesh.faces().size()));
  const auto k64 = static_cast<std::uint64_t>(k);
  mix(&k64, sizeof k64);
  return h;
}

namespace detail {

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(sizeof(T) == 8);
  auto bits = std::bit_cast<std::uint64_t>(value);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  out.write(reinterpret_cast<const char*>(&bits), 8);
}

template <class T>
T read_le(std::istream& in) {
  std::uint64_t bits = 0;
  in.read(reinterpret_cast<char*>(&bits), 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

/// Flat little-endian layout: n, k (u64), k eigenvalues, column-major Phi.
inline void write_basis(const std::filesystem::path& path, const SpectralBasis& basis) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "spectral/write_basis", "cannot write '" + path.string() + "'");
  detail::write_le(out, static_cast<std::uint64_t>(basis.num_vertices()));
  detail::write_le(out, static_cast<std::uint64_t>(basis.size()));
  for (Index i = 0; i < basis.size(); ++i) detail::write_le(out, basis.eigenvalues(i));
  for (Index c = 0; c < basis.size(); ++c)
    for (Index r = 0; r < basis.num_vertices(); ++r) detail::write_le(out, basis.eigenfunctions(r, c));
}

inline SpectralBasis read_basis(const std::filesystem::path& path, const Eigen::VectorXd& mass) {
  const char* where = "spectral/read_basis";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, where, "cannot open '" + path.string() + "'");
  const auto n = static_cast<Index>(detail::read_le<std::uint64_t>(in));
  const auto k = static_cast<Index>(detail::read_le<std::uint64_t>(in));
  if (!in || n != mass.size() || k < 1 || k > n)
    throw Error(ErrorCode::ParseError, where, "header of '" + path.string() + "' does not match the mesh");
  SpectralBasis out;
  out.eigenvalues.resize(k);
  out.eigenfunctions.resize(n, k);
  for (Index i = 0; i < k; ++i) out.eigenvalues(i) = detail::read_le<double>(in);
  for (Index c = 0; c < k; ++c)
    for (Index r = 0; r < n; ++r) out.eigenfunctions(r, c) = detail::read_le<double>(in);
  if (!in) throw Error(ErrorCode::ParseError, where, "'" + path.string() + "' is truncated");
  out.mass = mass;
  return out;
}

/// compute_basis with an optional cache directory (defaults to $MAPTREE_CACHE_DIR).
inline SpectralBasis cached_basis(const TriangleMesh& mesh, const LaplacianPair& lap, Index k,
                                  std::optional<std::filesystem::path> cache_dir = std::nullopt,
                                  const EigensolverOptions& opt = {}) {
  if (!cache_dir)
    if (const char* env = std::getenv("MAPTREE_CACHE_DIR"); env && *env) cache_dir = env;
  if (!cache_dir) return compute_basis(lap, k, opt);
  char name[40];
  std::snprintf(name, sizeof name, "%016llx.basis", static_cast<unsigned long long>(basis_cache_key(mesh, k)));
  const auto path = *cache_dir / name;
  if (std::filesystem::exists(path)) {
    try {
      return read_basis(path, lap.mass);
    } catch (const Error&) {
      // Stale or corrupt entries are recomputed and overwritten.
    }
  }
  SpectralBasis basis = compute_basis(lap, k, opt);
  std::filesystem::create_directories(*cache_dir);
  write_basis(path, basis);
  return basis;
}

}  // namespace maptree
