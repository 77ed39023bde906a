#pragma once

// Synthetic meshes shared by the unit and acceptance suites. Grids use
// alternating diagonals ((i + j) even -> "/" split) so that even cell counts
// give triangulations invariant under both axis reflections.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "maptree/mesh.hpp"

namespace fixtures {

using maptree::Faces;
using maptree::Index;
using maptree::Positions;
using maptree::TriangleMesh;

using Warp = std::function<Eigen::Vector3d(double u, double v)>;

struct Grid {
  Index nx = 0;  // cells along u
  Index ny = 0;  // cells along v
  Index vertex(Index i, Index j) const { return j * (nx + 1) + i; }
};

inline TriangleMesh grid_mesh(Index nx, Index ny, const Warp& warp) {
  const Grid g{nx, ny};
  Positions p((nx + 1) * (ny + 1), 3);
  for (Index j = 0; j <= ny; ++j)
    for (Index i = 0; i <= nx; ++i)
      p.row(g.vertex(i, j)) = warp(static_cast<double>(i) / nx, static_cast<double>(j) / ny).transpose();
  Faces f(2 * nx * ny, 3);
  Index t = 0;
  for (Index j = 0; j < ny; ++j)
    for (Index i = 0; i < nx; ++i) {
      const Index p00 = g.vertex(i, j), p10 = g.vertex(i + 1, j), p01 = g.vertex(i, j + 1), p11 = g.vertex(i + 1, j + 1);
      if ((i + j) % 2 == 0) {
        f.row(t++) << p00, p10, p11;
        f.row(t++) << p00, p11, p01;
      } else {
        f.row(t++) << p00, p10, p01;
        f.row(t++) << p10, p11, p01;
      }
    }
  return TriangleMesh(std::move(p), std::move(f));
}

/// Flat width x height rectangle.
inline TriangleMesh rectangle(Index nx, Index ny, double width, double height) {
  return grid_mesh(nx, ny, [=](double u, double v) { return Eigen::Vector3d(width * u, height * v, 0.0); });
}

/// Unit-area rectangle with aspect 1.6, whose only isometries form the Klein group.
inline TriangleMesh klein_rectangle() {
  const double a = std::sqrt(1.6);
  return rectangle(26, 16, a, 1.0 / a);
}

/// Unit square, 16 x 16 cells: full dihedral symmetry and a repeated second eigenvalue.
inline TriangleMesh square() { return rectangle(16, 16, 1.0, 1.0); }

/// Skewed, tapered strip with an off-centre bump; no intrinsic symmetry.
inline TriangleMesh asymmetric_strip(Index nx = 26, Index ny = 16) {
  return grid_mesh(nx, ny, [](double u, double v) {
    const double x = 1.6 * u + 0.5 * v * v;
    const double y = v * (0.5 + 0.6 * u * u);
    const double z = 0.25 * std::exp(-((u - 0.75) * (u - 0.75) + (v - 0.3) * (v - 0.3)) / 0.02);
    return Eigen::Vector3d(x, y, z);
  });
}

/// Trapezoid symmetric about x = 0 (one intrinsic reflection).
inline TriangleMesh trapezoid(Index nx = 20, Index ny = 24) {
  return grid_mesh(nx, ny, [](double u, double v) {
    const double s = 2.0 * u - 1.0;
    return Eigen::Vector3d(s * (0.45 + 0.3 * v), 1.2 * v, 0.0);
  });
}

/// Vertex of the mirror image under u -> 1 - u.
inline std::vector<Index> mirror_u(Index nx, Index ny) {
  const Grid g{nx, ny};
  std::vector<Index> out(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (Index j = 0; j <= ny; ++j)
    for (Index i = 0; i <= nx; ++i) out[static_cast<std::size_t>(g.vertex(i, j))] = g.vertex(nx - i, j);
  return out;
}

inline std::vector<Index> mirror_v(Index nx, Index ny) {
  const Grid g{nx, ny};
  std::vector<Index> out(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (Index j = 0; j <= ny; ++j)
    for (Index i = 0; i <= nx; ++i) out[static_cast<std::size_t>(g.vertex(i, j))] = g.vertex(i, ny - j);
  return out;
}

inline std::vector<Index> rotate_half(Index nx, Index ny) {
  const Grid g{nx, ny};
  std::vector<Index> out(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (Index j = 0; j <= ny; ++j)
    for (Index i = 0; i <= nx; ++i) out[static_cast<std::size_t>(g.vertex(i, j))] = g.vertex(nx - i, ny - j);
  return out;
}

inline std::vector<Index> identity_map(Index n) {
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

inline std::vector<Index> random_permutation(Index n, std::uint64_t seed) {
  auto p = identity_map(n);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

/// Copy of `mesh` whose vertex `v` is stored at position perm[v]; faces are
/// relabelled so the copy is the same surface. The ground-truth map from the
/// original to the copy is therefore v -> perm[v].
inline TriangleMesh permuted(const TriangleMesh& mesh, const std::vector<Index>& perm) {
  Positions p(mesh.num_vertices(), 3);
  for (Index v = 0; v < mesh.num_vertices(); ++v) p.row(perm[static_cast<std::size_t>(v)]) = mesh.positions().row(v);
  Faces f(mesh.num_faces(), 3);
  for (Index t = 0; t < mesh.num_faces(); ++t)
    for (int c = 0; c < 3; ++c) f(t, c) = perm[static_cast<std::size_t>(mesh.faces()(t, c))];
  return TriangleMesh(std::move(p), std::move(f));
}

/// Applies x -> R x + t to every vertex.
inline TriangleMesh rigid_motion(const TriangleMesh& mesh, const Eigen::Matrix3d& rotation, const Eigen::Vector3d& shift) {
  Positions p = (mesh.positions() * rotation.transpose()).rowwise() + shift.transpose();
  return TriangleMesh(std::move(p), mesh.faces());
}

/// Wraps the x coordinate around a cylinder of radius `radius`; an isometric bend.
inline TriangleMesh bent(const TriangleMesh& mesh, double radius) {
  Positions p = mesh.positions();
  for (Index v = 0; v < p.rows(); ++v) {
    const double x = p(v, 0), z = p(v, 2);
    p(v, 0) = radius * std::sin(x / radius);
    p(v, 2) = z + radius - radius * std::cos(x / radius);
  }
  return TriangleMesh(std::move(p), mesh.faces());
}

inline TriangleMesh scaled(const TriangleMesh& mesh, const Eigen::Vector3d& factors) {
  return TriangleMesh(mesh.positions() * factors.asDiagonal(), mesh.faces());
}

/// Closed torus with a seeded radial jitter; every vertex has a distinct
/// spectral embedding at full rank.
inline TriangleMesh jittered_torus(Index nu, Index nv, double jitter, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Positions p(nu * nv, 3);
  for (Index j = 0; j < nv; ++j)
    for (Index i = 0; i < nu; ++i) {
      const double a = 2.0 * std::numbers::pi * i / nu, b = 2.0 * std::numbers::pi * j / nv;
      const double r = 0.35 * (1.0 + jitter * unit(rng));
      const double big = 1.0;
      p.row(j * nu + i) << (big + r * std::cos(b)) * std::cos(a), (big + r * std::cos(b)) * std::sin(a), r * std::sin(b);
    }
  Faces f(2 * nu * nv, 3);
  Index t = 0;
  for (Index j = 0; j < nv; ++j)
    for (Index i = 0; i < nu; ++i) {
      const Index a = j * nu + i, b = j * nu + (i + 1) % nu, c = ((j + 1) % nv) * nu + i,
                  d = ((j + 1) % nv) * nu + (i + 1) % nu;
      f.row(t++) << a, b, d;
      f.row(t++) << a, d, c;
    }
  return TriangleMesh(std::move(p), std::move(f));
}

inline TriangleMesh single_triangle() {
  Positions p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  Faces f(1, 3);
  f << 0, 1, 2;
  return TriangleMesh(std::move(p), std::move(f));
}

inline TriangleMesh equilateral_triangle() {
  Positions p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2.0, 0;
  Faces f(1, 3);
  f << 0, 1, 2;
  return TriangleMesh(std::move(p), std::move(f));
}

inline TriangleMesh tetrahedron() {
  Positions p(4, 3);
  p << 0, 0, 0, 1, 0, 0, 0.2, 0.9, 0, 0.3, 0.25, 0.8;
  Faces f(4, 3);
  f << 0, 2, 1, 0, 1, 3, 1, 2, 3, 0, 3, 2;
  return TriangleMesh(std::move(p), std::move(f));
}

inline TriangleMesh unit_cube() {
  Positions p(8, 3);
  p << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1;
  Faces f(12, 3);
  f << 0, 2, 1, 0, 3, 2, 4, 5, 6, 4, 6, 7, 0, 1, 5, 0, 5, 4, 1, 2, 6, 1, 6, 5, 2, 3, 7, 2, 7, 6, 3, 0, 4, 3, 4, 7;
  return TriangleMesh(std::move(p), std::move(f));
}

/// Long strip one cell wide along x (vertices on y = 0 and y = width).
inline TriangleMesh strip(Index cells, double width) {
  return rectangle(cells, 1, static_cast<double>(cells), width);
}

/// Disjoint union of meshes, vertex blocks concatenated in argument order.
inline TriangleMesh merge(const std::vector<TriangleMesh>& parts) {
  Index nv = 0, nf = 0;
  for (const auto& m : parts) {
    nv += m.num_vertices();
    nf += m.num_faces();
  }
  Positions p(nv, 3);
  Faces f(nf, 3);
  Index ov = 0, of = 0;
  for (const auto& m : parts) {
    p.middleRows(ov, m.num_vertices()) = m.positions();
    f.middleRows(of, m.num_faces()) = m.faces().array() + ov;
    ov += m.num_vertices();
    of += m.num_faces();
  }
  return TriangleMesh(std::move(p), std::move(f));
}

/// Closed axis-aligned box spanning [lo, hi].
inline TriangleMesh box(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  const TriangleMesh cube = unit_cube();
  Positions p = cube.positions();
  for (Index v = 0; v < p.rows(); ++v)
    for (int c = 0; c < 3; ++c) p(v, c) = lo(c) + p(v, c) * (hi(c) - lo(c));
  return TriangleMesh(std::move(p), cube.faces());
}

}  // namespace fixtures
