#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "maptree/error.hpp"

namespace maptree {

using Index = std::ptrdiff_t;
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<Index, Eigen::Dynamic, 3, Eigen::RowMajor>;

enum class MeshFormat { OFF, OBJ, PLY };

/// Validated, immutable triangle mesh with cached vertex adjacency.
///
/// Invariants enforced by the constructor: indices in range, three distinct
/// vertices per face, every undirected edge shared by at most two faces, and
/// no face with area below 1e-12 times the mean face area.
class TriangleMesh {
 public:
  TriangleMesh(Positions positions, Faces faces) : positions_(std::move(positions)), faces_(std::move(faces)) {
    validate();
    build_adjacency();
  }

  Index num_vertices() const { return positions_.rows(); }
  Index num_faces() const { return faces_.rows(); }
  const Positions& positions() const { return positions_; }
  const Faces& faces() const { return faces_; }
  double total_area() const { return total_area_; }
  const Eigen::VectorXd& face_areas() const { return face_areas_; }

  Eigen::Vector3d position(Index v) const { return positions_.row(v).transpose(); }
  std::array<Index, 3> face(Index f) const { return {faces_(f, 0), faces_(f, 1), faces_(f, 2)}; }

  /// Sorted neighbours of `v` along mesh edges.
  std::span<const Index> neighbors(Index v) const {
    return {adjacency_.data() + adjacency_offsets_[static_cast<std::size_t>(v)],
            adjacency_.data() + adjacency_offsets_[static_cast<std::size_t>(v) + 1]};
  }

  /// One third of the incident face areas per vertex.
  Eigen::VectorXd lumped_areas() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(num_vertices());
    for (Index f = 0; f < num_faces(); ++f)
      for (int c = 0; c < 3; ++c) m(faces_(f, c)) += face_areas_(f) / 3.0;
    return m;
  }

 private:
  void validate() {
    const char* where = "mesh_core/validate";
    const Index n = positions_.rows();
    if (n == 0) throw Error(ErrorCode::ValidationError, where, "mesh has no vertices");
    if (faces_.rows() == 0) throw Error(ErrorCode::ValidationError, where, "mesh has no faces");
    if (!positions_.allFinite()) throw Error(ErrorCode::ValidationError, where, "non-finite vertex coordinate");

    std::map<std::pair<Index, Index>, int> edge_use;
    face_areas_.resize(faces_.rows());
    for (Index f = 0; f < faces_.rows(); ++f) {
      for (int c = 0; c < 3; ++c) {
        const Index v = faces_(f, c);
        if (v < 0 || v >= n)
          throw Error(ErrorCode::ValidationError, where,
                      "face " + std::to_string(f) + " references vertex " + std::to_string(v) + " outside [0, " +
                          std::to_string(n) + ")");
      }
      const Index a = faces_(f, 0), b = faces_(f, 1), c = faces_(f, 2);
      if (a == b || b == c || a == c)
        throw Error(ErrorCode::ValidationError, where, "face " + std::to_string(f) + " repeats a vertex");
      for (auto [i, j] : {std::pair{a, b}, std::pair{b, c}, std::pair{c, a}}) {
        if (++edge_use[std::minmax(i, j)] > 2)
          throw Error(ErrorCode::ValidationError, where,
                      "non-manifold edge (" + std::to_string(std::min(i, j)) + ", " + std::to_string(std::max(i, j)) +
                          ") at face " + std::to_string(f));
      }
      const Eigen::Vector3d e1 = (positions_.row(b) - positions_.row(a)).transpose();
      const Eigen::Vector3d e2 = (positions_.row(c) - positions_.row(a)).transpose();
      face_areas_(f) = 0.5 * e1.cross(e2).norm();
    }
    total_area_ = face_areas_.sum();
    const double floor = 1e-12 * total_area_ / static_cast<double>(faces_.rows());
    for (Index f = 0; f < faces_.rows(); ++f)
      if (!(face_areas_(f) > floor) || !(total_area_ > 0))
        throw Error(ErrorCode::ValidationError, where, "degenerate face " + std::to_string(f));
  }

  void build_adjacency() {
    std::vector<std::vector<Index>> nbrs(static_cast<std::size_t>(num_vertices()));
    for (Index f = 0; f < num_faces(); ++f)
      for (int c = 0; c < 3; ++c) {
        const Index i = faces_(f, c), j = faces_(f, (c + 1) % 3);
        nbrs[static_cast<std::size_t>(i)].push_back(j);
        nbrs[static_cast<std::size_t>(j)].push_back(i);
      }
    adjacency_offsets_.assign(1, 0);
    for (auto& list : nbrs) {
      std::sort(list.begin(), list.end());
      list.erase(std::unique(list.begin(), list.end()), list.end());
      adjacency_.insert(adjacency_.end(), list.begin(), list.end());
      adjacency_offsets_.push_back(static_cast<Index>(adjacency_.size()));
    }
  }

  Positions positions_;
  Faces faces_;
  Eigen::VectorXd face_areas_;
  double total_area_ = 0.0;
  std::vector<Index> adjacency_;
  std::vector<Index> adjacency_offsets_;
};

/// Uniformly rescales positions so that the total area is 1.
inline TriangleMesh normalize_to_unit_area(const TriangleMesh& mesh) {
  const double s = 1.0 / std::sqrt(mesh.total_area());
  if (std::abs(s - 1.0) < 1e-14) return mesh;
  return TriangleMesh(mesh.positions() * s, mesh.faces());
}

namespace detail {

struct RawMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<Index, 3>> triangles;
};

// Polygons are fan-triangulated around their first corner.
inline void add_polygon(RawMesh& raw, const std::vector<Index>& poly, std::size_t line) {
  if (poly.size() < 3)
    throw Error(ErrorCode::ParseError, "mesh_core/load_mesh", "face with fewer than 3 vertices at line " + std::to_string(line));
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) raw.triangles.push_back({poly[0], poly[i], poly[i + 1]});
}

inline TriangleMesh to_mesh(const RawMesh& raw) {
  Positions p(static_cast<Index>(raw.vertices.size()), 3);
  for (std::size_t i = 0; i < raw.vertices.size(); ++i) p.row(static_cast<Index>(i)) = raw.vertices[i].transpose();
  Faces f(static_cast<Index>(raw.triangles.size()), 3);
  for (std::size_t i = 0; i < raw.triangles.size(); ++i)
    for (int c = 0; c < 3; ++c) f(static_cast<Index>(i), c) = raw.triangles[i][static_cast<std::size_t>(c)];
  return TriangleMesh(std::move(p), std::move(f));
}

// Reads whitespace tokens while skipping '#' comments and blank lines.
class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  bool next_line(std::istringstream& out) {
    std::string s;
    while (std::getline(in_, s)) {
      ++line_;
      if (auto hash = s.find('#'); hash != std::string::npos) s.erase(hash);
      if (s.find_first_not_of(" \t\r") == std::string::npos) continue;
      out.clear();
      out.str(s);
      return true;
    }
    return false;
  }
  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

[[noreturn]] inline void parse_fail(const std::string& what, std::size_t line) {
  throw Error(ErrorCode::ParseError, "mesh_core/load_mesh", what + " at line " + std::to_string(line));
}

inline RawMesh read_off(std::istream& in) {
  TokenReader reader(in);
  std::istringstream ls;
  if (!reader.next_line(ls)) parse_fail("empty file", 0);
  std::string magic;
  ls >> magic;
  if (magic.rfind("OFF", 0) != 0) parse_fail("missing OFF header", reader.line());
  long long nv = -1, nf = -1, ne = 0;
  if (!(ls >> nv)) {
    if (!reader.next_line(ls)) parse_fail("missing counts", reader.line());
    ls >> nv;
  }
  if (!(ls >> nf >> ne) || nv < 0 || nf < 0) parse_fail("malformed counts", reader.line());
  RawMesh raw;
  raw.vertices.reserve(static_cast<std::size_t>(nv));
  for (long long i = 0; i < nv; ++i) {
    if (!reader.next_line(ls)) parse_fail("unexpected end of vertex list", reader.line());
    Eigen::Vector3d v;
    if (!(ls >> v.x() >> v.y() >> v.z())) parse_fail("malformed vertex", reader.line());
    raw.vertices.push_back(v);
  }
  for (long long i = 0; i < nf; ++i) {
    if (!reader.next_line(ls)) parse_fail("unexpected end of face list", reader.line());
    long long count = 0;
    if (!(ls >> count) || count < 0) parse_fail("malformed face", reader.line());
    std::vector<Index> poly(static_cast<std::size_t>(count));
    for (auto& idx : poly)
      if (!(ls >> idx)) parse_fail("malformed face", reader.line());
    add_polygon(raw, poly, reader.line());
  }
  return raw;
}

inline RawMesh read_obj(std::istream& in) {
  TokenReader reader(in);
  std::istringstream ls;
  RawMesh raw;
  while (reader.next_line(ls)) {
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Eigen::Vector3d v;
      if (!(ls >> v.x() >> v.y() >> v.z())) parse_fail("malformed vertex", reader.line());
      raw.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<Index> poly;
      std::string tok;
      while (ls >> tok) {
        // "i", "i/t", "i//n", "i/t/n"; negative indices are relative to the end.
        long long idx = 0;
        try {
          idx = std::stoll(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          parse_fail("malformed face index '" + tok + "'", reader.line());
        }
        if (idx == 0) parse_fail("face index 0 is invalid in OBJ", reader.line());
        poly.push_back(idx > 0 ? static_cast<Index>(idx - 1) : static_cast<Index>(raw.vertices.size()) + static_cast<Index>(idx));
      }
      add_polygon(raw, poly, reader.line());
    }
  }
  return raw;
}

inline RawMesh read_ply(std::istream& in) {
  TokenReader reader(in);
  std::istringstream ls;
  if (!reader.next_line(ls)) parse_fail("empty file", 0);
  std::string tok;
  ls >> tok;
  if (tok != "ply") parse_fail("missing ply magic", reader.line());

  struct Element {
    std::string name;
    long long count = 0;
    std::vector<std::string> props;  // "list" entries marked by name "list:<name>"
  };
  std::vector<Element> elements;
  bool ascii = false;
  for (;;) {
    if (!reader.next_line(ls)) parse_fail("unterminated header", reader.line());
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (tok == "element") {
      Element e;
      if (!(ls >> e.name >> e.count)) parse_fail("malformed element", reader.line());
      elements.push_back(e);
    } else if (tok == "property") {
      if (elements.empty()) parse_fail("property before element", reader.line());
      std::string type, a, b, name;
      ls >> type;
      if (type == "list") {
        ls >> a >> b >> name;
        elements.back().props.push_back("list:" + name);
      } else {
        ls >> name;
        elements.back().props.push_back(name);
      }
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!ascii) parse_fail("only ASCII PLY is supported", reader.line());

  RawMesh raw;
  for (const auto& e : elements) {
    for (long long r = 0; r < e.count; ++r) {
      if (!reader.next_line(ls)) parse_fail("unexpected end of element '" + e.name + "'", reader.line());
      Eigen::Vector3d v = Eigen::Vector3d::Zero();
      std::vector<Index> poly;
      for (const auto& p : e.props) {
        if (p.rfind("list:", 0) == 0) {
          long long count = 0;
          if (!(ls >> count) || count < 0) parse_fail("malformed list", reader.line());
          std::vector<Index> items(static_cast<std::size_t>(count));
          for (auto& i : items)
            if (!(ls >> i)) parse_fail("malformed list", reader.line());
          if (p == "list:vertex_indices" || p == "list:vertex_index") poly = std::move(items);
        } else {
          double value = 0;
          if (!(ls >> value)) parse_fail("malformed property '" + p + "'", reader.line());
          if (p == "x") v.x() = value;
          if (p == "y") v.y() = value;
          if (p == "z") v.z() = value;
        }
      }
      if (e.name == "vertex") raw.vertices.push_back(v);
      if (e.name == "face") add_polygon(raw, poly, reader.line());
    }
  }
  return raw;
}

}  // namespace detail

inline std::optional<MeshFormat> format_from_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".off") return MeshFormat::OFF;
  if (ext == ".obj") return MeshFormat::OBJ;
  if (ext == ".ply") return MeshFormat::PLY;
  return std::nullopt;
}

inline TriangleMesh read_mesh(std::istream& in, MeshFormat format) {
  switch (format) {
    case MeshFormat::OFF: return detail::to_mesh(detail::read_off(in));
    case MeshFormat::OBJ: return detail::to_mesh(detail::read_obj(in));
    case MeshFormat::PLY: return detail::to_mesh(detail::read_ply(in));
  }
  throw Error(ErrorCode::InvalidArgument, "mesh_core/load_mesh", "unknown format");
}

inline TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "mesh_core/load_mesh", "cannot open '" + path.string() + "'");
  try {
    return read_mesh(in, format);
  } catch (const Error& e) {
    throw Error(e.code(), e.where(), path.string() + ": " + e.detail());
  }
}

inline TriangleMesh load_mesh(const std::filesystem::path& path) {
  auto format = format_from_extension(path);
  if (!format) throw Error(ErrorCode::ParseError, "mesh_core/load_mesh", "unrecognised extension on '" + path.string() + "'");
  return load_mesh(path, *format);
}

using VertexColors = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline void write_ply(std::ostream& out, const TriangleMesh& mesh, const VertexColors* colors = nullptr) {
  out << "ply\nformat ascii 1.0\nelement vertex " << mesh.num_vertices() << "\n"
      << "property double x\nproperty double y\nproperty double z\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.num_faces() << "\nproperty list uchar int vertex_indices\nend_header\n";
  out.precision(17);
  for (Index v = 0; v < mesh.num_vertices(); ++v) {
    out << mesh.positions()(v, 0) << ' ' << mesh.positions()(v, 1) << ' ' << mesh.positions()(v, 2);
    if (colors)
      for (int c = 0; c < 3; ++c) out << ' ' << static_cast<int>((*colors)(v, c));
    out << '\n';
  }
  for (Index f = 0; f < mesh.num_faces(); ++f)
    out << "3 " << mesh.faces()(f, 0) << ' ' << mesh.faces()(f, 1) << ' ' << mesh.faces()(f, 2) << '\n';
}

inline void write_off(std::ostream& out, const TriangleMesh& mesh) {
  out << "OFF\n" << mesh.num_vertices() << ' ' << mesh.num_faces() << " 0\n";
  out.precision(17);
  for (Index v = 0; v < mesh.num_vertices(); ++v)
    out << mesh.positions()(v, 0) << ' ' << mesh.positions()(v, 1) << ' ' << mesh.positions()(v, 2) << '\n';
  for (Index f = 0; f < mesh.num_faces(); ++f)
    out << "3 " << mesh.faces()(f, 0) << ' ' << mesh.faces()(f, 1) << ' ' << mesh.faces()(f, 2) << '\n';
}

/// Colours derived from normalized coordinates, used for colour-transfer export.
inline VertexColors coordinate_colors(const TriangleMesh& mesh) {
  const Eigen::RowVector3d lo = mesh.positions().colwise().minCoeff();
  const Eigen::RowVector3d span = (mesh.positions().colwise().maxCoeff() - lo).cwiseMax(1e-300);
  VertexColors out(mesh.num_vertices(), 3);
  for (Index v = 0; v < mesh.num_vertices(); ++v)
    for (int c = 0; c < 3; ++c)
      out(v, c) = static_cast<std::uint8_t>(std::lround(255.0 * (mesh.positions()(v, c) - lo(c)) / span(c)));
  return out;
}

/// Per-vertex sum of incident (area-weighted) face normals.
inline Positions vertex_normal_sums(const TriangleMesh& mesh) {
  Positions n = Positions::Zero(mesh.num_vertices(), 3);
  for (Index f = 0; f < mesh.num_faces(); ++f) {
    const auto [a, b, c] = mesh.face(f);
    const Eigen::RowVector3d fn =
        (mesh.position(b) - mesh.position(a)).cross(mesh.position(c) - mesh.position(a)).transpose();
    n.row(a) += fn;
    n.row(b) += fn;
    n.row(c) += fn;
  }
  return n;
}

}  // namespace maptree
