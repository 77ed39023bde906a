#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "maptree/error.hpp"
#include "maptree/fmap.hpp"
#include "maptree/geodesic.hpp"
#include "maptree/mesh.hpp"
#include "maptree/spectral.hpp"

namespace maptree {

/// Mean normalized geodesic distance between pmap(v) and gt(v), over `domain`
/// (every source vertex when empty).
inline double accuracy(const PointwiseMap& pmap, const PointwiseMap& gt, const GeodesicCache& target_geo,
                       std::span<const Index> domain = {}) {
  if (pmap.domain_size() != gt.domain_size() || pmap.codomain_size() != gt.codomain_size())
    throw Error(ErrorCode::DimensionMismatch, "metrics/accuracy", "map and ground truth differ in shape");
  double sum = 0;
  Index count = 0;
  auto add = [&](Index v) {
    if (pmap[v] != gt[v]) sum += target_geo.distance(gt[v], pmap[v]);
    ++count;
  };
  if (domain.empty())
    for (Index v = 0; v < pmap.domain_size(); ++v) add(v);
  else
    for (Index v : domain) add(v);
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Same quantity over every source vertex, with distances computed on demand
/// on the target mesh instead of read from a cache.
inline double accuracy(const PointwiseMap& pmap, const PointwiseMap& gt, const TriangleMesh& target,
                       std::size_t workers = 0) {
  if (pmap.domain_size() != gt.domain_size() || pmap.codomain_size() != gt.codomain_size() ||
      gt.codomain_size() != target.num_vertices())
    throw Error(ErrorCode::DimensionMismatch, "metrics/accuracy", "map and ground truth differ in shape");
  std::vector<std::pair<Index, Index>> pairs;
  for (Index v = 0; v < pmap.domain_size(); ++v)
    if (pmap[v] != gt[v]) pairs.emplace_back(gt[v], pmap[v]);
  if (pmap.domain_size() == 0) return 0.0;
  return point_pair_distances(target, pairs, workers).sum() / static_cast<double>(pmap.domain_size());
}

/// Images of the given vertices, deduplicated and sorted; the natural source
/// set for the target-side cache of geodesic_distortion.
inline std::vector<Index> image_vertices(const PointwiseMap& pmap, std::span<const Index> vertices) {
  std::vector<Index> out;
  for (Index v : vertices) out.push_back(pmap[v]);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Mean over ordered sample pairs i != j of (G1(i, j) - G2(T i, T j))^2.
inline double geodesic_distortion(const PointwiseMap& pmap, const GeodesicCache& geo1, const GeodesicCache& geo2,
                                  std::span<const Index> samples) {
  const auto n = static_cast<Index>(samples.size());
  if (n < 2) return 0.0;
  double sum = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Index a = samples[static_cast<std::size_t>(i)], b = samples[static_cast<std::size_t>(j)];
      const double d = geo1.distance(a, b) - geo2.distance(pmap[a], pmap[b]);
      sum += d * d;
    }
  return sum / static_cast<double>(n * (n - 1));
}

/// Sum over x, y, z of P^T W1 P, P the mapped target coordinates.
inline double dirichlet_energy(const PointwiseMap& pmap, const LaplacianPair& source_lap, const Positions& target_positions) {
  if (pmap.domain_size() != source_lap.stiffness.rows() || pmap.codomain_size() != target_positions.rows())
    throw Error(ErrorCode::DimensionMismatch, "metrics/dirichlet_energy", "map does not match the meshes");
  Eigen::MatrixXd p(pmap.domain_size(), 3);
  for (Index v = 0; v < pmap.domain_size(); ++v) p.row(v) = target_positions.row(pmap[v]);
  return (p.transpose() * (source_lap.stiffness * p)).trace();
}

namespace detail {

// Triangle in a local orthonormal frame: columns are the edge vectors
// e1 = b - a and e2 = c - a.
inline Eigen::Matrix2d flatten(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d e1 = b - a, e2 = c - a;
  const Eigen::Vector3d x = e1.normalized();
  const Eigen::Vector3d y = (e2 - e2.dot(x) * x).normalized();
  Eigen::Matrix2d m;
  m << e1.norm(), e2.dot(x), 0.0, e2.dot(y);
  return m;
}

// Image triangles at or below this fraction of the mean target face area are
// treated as degenerate.
inline constexpr double kDegenerateImage = 1e-10;

struct FaceImages {
  std::vector<char> valid;
  Index skipped = 0;
};

inline FaceImages classify_images(const PointwiseMap& pmap, const TriangleMesh& mesh1, const TriangleMesh& mesh2) {
  if (pmap.domain_size() != mesh1.num_vertices() || pmap.codomain_size() != mesh2.num_vertices())
    throw Error(ErrorCode::DimensionMismatch, "metrics", "map does not match the meshes");
  const double floor = kDegenerateImage * mesh2.total_area() / static_cast<double>(mesh2.num_faces());
  FaceImages out{std::vector<char>(static_cast<std::size_t>(mesh1.num_faces()), 0), 0};
  for (Index f = 0; f < mesh1.num_faces(); ++f) {
    const auto [i, j, k] = mesh1.face(f);
    const Eigen::Vector3d q0 = mesh2.position(pmap[i]), q1 = mesh2.position(pmap[j]), q2 = mesh2.position(pmap[k]);
    const bool ok = 0.5 * (q1 - q0).cross(q2 - q0).norm() > floor;
    out.valid[static_cast<std::size_t>(f)] = ok;
    out.skipped += !ok;
  }
  if (out.skipped == mesh1.num_faces())
    throw Error(ErrorCode::AllFacesDegenerate, "metrics", "every image triangle is degenerate");
  return out;
}

}  // namespace detail

struct ConformalResult {
  double value = 0;
  Index skipped_faces = 0;
};

/// Mean over faces with a non-degenerate image of s1/s2 + s2/s1 - 2, where s
/// are the singular values of the per-face linear map.
inline ConformalResult conformal_distortion(const PointwiseMap& pmap, const TriangleMesh& mesh1, const TriangleMesh& mesh2) {
  const auto images = detail::classify_images(pmap, mesh1, mesh2);
  double sum = 0;
  for (Index f = 0; f < mesh1.num_faces(); ++f) {
    if (!images.valid[static_cast<std::size_t>(f)]) continue;
    const auto [i, j, k] = mesh1.face(f);
    const Eigen::Matrix2d src = detail::flatten(mesh1.position(i), mesh1.position(j), mesh1.position(k));
    const Eigen::Matrix2d dst =
        detail::flatten(mesh2.position(pmap[i]), mesh2.position(pmap[j]), mesh2.position(pmap[k]));
    const Eigen::Vector2d s = Eigen::JacobiSVD<Eigen::Matrix2d>(dst * src.inverse()).singularValues();
    sum += s(0) / s(1) + s(1) / s(0) - 2.0;
  }
  return {sum / static_cast<double>(mesh1.num_faces() - images.skipped), images.skipped};
}

/// Surrogate orientation measure: fraction of faces (non-degenerate image)
/// whose image triangle, wound in source order, points against the target
/// surface normal summed over its three image vertices.
inline double orientation_flip_fraction(const PointwiseMap& pmap, const TriangleMesh& mesh1, const TriangleMesh& mesh2) {
  const auto images = detail::classify_images(pmap, mesh1, mesh2);
  const Positions normals = vertex_normal_sums(mesh2);
  Index flipped = 0;
  for (Index f = 0; f < mesh1.num_faces(); ++f) {
    if (!images.valid[static_cast<std::size_t>(f)]) continue;
    const auto [i, j, k] = mesh1.face(f);
    const Index a = pmap[i], b = pmap[j], c = pmap[k];
    const Eigen::Vector3d n = (mesh2.position(b) - mesh2.position(a)).cross(mesh2.position(c) - mesh2.position(a));
    const Eigen::Vector3d ref = (normals.row(a) + normals.row(b) + normals.row(c)).transpose();
    flipped += n.dot(ref) < 0;
  }
  return static_cast<double>(flipped) / static_cast<double>(mesh1.num_faces() - images.skipped);
}

struct QualityReport {
  std::optional<double> accuracy;
  double geodesic_distortion = 0;
  double dirichlet_energy = 0;
  double conformal_distortion = 0;
  Index conformal_skipped_faces = 0;
  double energy_ortho = 0;
  double energy_lapcomm = 0;
  double orientation_flip_fraction = 0;
  Index geodesic_samples = 0;
};

inline nlohmann::json to_json(const QualityReport& r) {
  nlohmann::json j;
  j["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
  j["geodesic_distortion"] = r.geodesic_distortion;
  j["dirichlet_energy"] = r.dirichlet_energy;
  j["conformal_distortion"] = r.conformal_distortion;
  j["energy_ortho"] = r.energy_ortho;
  j["energy_lapcomm"] = r.energy_lapcomm;
  j["orientation_flip_fraction"] = r.orientation_flip_fraction;
  j["metadata"] = {{"distance_normalization", "sqrt_area"},
                   {"geodesic_distortion_reduction", "mean_over_ordered_pairs"},
                   {"geodesic_samples", r.geodesic_samples},
                   {"conformal_skipped_faces", r.conformal_skipped_faces},
                   {"orientation_metric", "surrogate: image normal vs target vertex normals"}};
  return j;
}

inline QualityReport quality_report_from_json(const nlohmann::json& j) {
  try {
    QualityReport r;
    if (!j.at("accuracy").is_null()) r.accuracy = j.at("accuracy").get<double>();
    r.geodesic_distortion = j.at("geodesic_distortion").get<double>();
    r.dirichlet_energy = j.at("dirichlet_energy").get<double>();
    r.conformal_distortion = j.at("conformal_distortion").get<double>();
    r.energy_ortho = j.at("energy_ortho").get<double>();
    r.energy_lapcomm = j.at("energy_lapcomm").get<double>();
    r.orientation_flip_fraction = j.at("orientation_flip_fraction").get<double>();
    if (j.contains("metadata")) {
      r.geodesic_samples = j["metadata"].value("geodesic_samples", Index{0});
      r.conformal_skipped_faces = j["metadata"].value("conformal_skipped_faces", Index{0});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "metrics/quality_report_from_json", e.what());
  }
}

inline std::string report_header() {
  return "map        accuracy   geo_dist   dirichlet  conformal  E_ortho    E_lapcomm  flips";
}

inline std::string report_row(const std::string& name, const QualityReport& r) {
  char buf[256];
  char acc[32];
  if (r.accuracy)
    std::snprintf(acc, sizeof acc, "%-10.4g", *r.accuracy);
  else
    std::snprintf(acc, sizeof acc, "%-10s", "-");
  std::snprintf(buf, sizeof buf, "%-10s %s %-10.4g %-10.4g %-10.4g %-10.4g %-10.4g %.4f", name.c_str(), acc,
                r.geodesic_distortion, r.dirichlet_energy, r.conformal_distortion, r.energy_ortho, r.energy_lapcomm,
                r.orientation_flip_fraction);
  return buf;
}

}  // namespace maptree
