#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <unordered_map>
#include <vector>

#include "maptree/error.hpp"
#include "maptree/mesh.hpp"
#include "maptree/parallel.hpp"

namespace maptree {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Raw (unnormalized) Dijkstra distances over the edge graph from a set of
/// sources; `owner[v]` receives the position in `sources` of the closest
/// source, ties going to the source reached first in (distance, vertex) order.
inline Eigen::VectorXd dijkstra(const TriangleMesh& mesh, std::span<const Index> sources,
                                std::vector<Index>* owner = nullptr) {
  const Index n = mesh.num_vertices();
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(n, kInfinity);
  if (owner) owner->assign(static_cast<std::size_t>(n), -1);
  using Item = std::pair<double, Index>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const Index v = sources[s];
    if (dist(v) > 0) {
      dist(v) = 0;
      if (owner) (*owner)[static_cast<std::size_t>(v)] = static_cast<Index>(s);
      heap.emplace(0.0, v);
    }
  }
  const auto& p = mesh.positions();
  while (!heap.empty()) {
    auto [d, v] = heap.top();
    heap.pop();
    if (d > dist(v)) continue;
    for (Index w : mesh.neighbors(v)) {
      const double nd = d + (p.row(v) - p.row(w)).norm();
      if (nd < dist(w)) {
        dist(w) = nd;
        if (owner) (*owner)[static_cast<std::size_t>(w)] = (*owner)[static_cast<std::size_t>(v)];
        heap.emplace(nd, w);
      }
    }
  }
  return dist;
}

/// Normalized graph-geodesic distances from a set of source vertices.
///
/// Row i holds distances from `sources()[i]` to every vertex, divided by
/// sqrt(total_area) so that values are scale-free.
class GeodesicCache {
 public:
  GeodesicCache(std::vector<Index> sources, Eigen::MatrixXd distances)
      : sources_(std::move(sources)), distances_(std::move(distances)) {
    for (std::size_t i = 0; i < sources_.size(); ++i) row_of_.emplace(sources_[i], static_cast<Index>(i));
  }

  const std::vector<Index>& sources() const { return sources_; }
  const Eigen::MatrixXd& matrix() const { return distances_; }
  Index num_vertices() const { return distances_.cols(); }

  bool has_source(Index v) const { return row_of_.contains(v); }

  /// Distance between two vertices; at least one must be a source.
  double distance(Index a, Index b) const {
    if (auto it = row_of_.find(a); it != row_of_.end()) return distances_(it->second, b);
    if (auto it = row_of_.find(b); it != row_of_.end()) return distances_(it->second, a);
    throw Error(ErrorCode::MissingDistances, "mesh_core/geodesic_cache",
                "neither vertex " + std::to_string(a) + " nor " + std::to_string(b) + " is a cached source");
  }

  /// Row of distances from a source vertex.
  auto row(Index source) const {
    auto it = row_of_.find(source);
    if (it == row_of_.end())
      throw Error(ErrorCode::MissingDistances, "mesh_core/geodesic_cache",
                  "vertex " + std::to_string(source) + " is not a cached source");
    return distances_.row(it->second);
  }

 private:
  std::vector<Index> sources_;
  Eigen::MatrixXd distances_;
  std::unordered_map<Index, Index> row_of_;
};

inline GeodesicCache geodesic_distances(const TriangleMesh& mesh, std::vector<Index> sources, std::size_t workers = 0) {
  if (sources.empty()) throw Error(ErrorCode::EmptySourceSet, "mesh_core/geodesic_distances", "no source vertices");
  for (Index s : sources)
    if (s < 0 || s >= mesh.num_vertices())
      throw Error(ErrorCode::InvalidArgument, "mesh_core/geodesic_distances", "source " + std::to_string(s) + " out of range");
  const double scale = 1.0 / std::sqrt(mesh.total_area());
  Eigen::MatrixXd d(static_cast<Index>(sources.size()), mesh.num_vertices());
  parallel_for(
      sources.size(),
      [&](std::size_t i) {
        const Index s = sources[i];
        d.row(static_cast<Index>(i)) = dijkstra(mesh, std::span<const Index>(&s, 1)).transpose() * scale;
      },
      workers);
  return GeodesicCache(std::move(sources), std::move(d));
}

/// All-vertex cache; quadratic memory, intended for small meshes and tests.
inline GeodesicCache all_pairs_geodesics(const TriangleMesh& mesh, std::size_t workers = 0) {
  std::vector<Index> all(static_cast<std::size_t>(mesh.num_vertices()));
  std::iota(all.begin(), all.end(), Index{0});
  return geodesic_distances(mesh, std::move(all), workers);
}

/// Normalized distance for each (a, b) pair, by a Dijkstra from a that stops
/// once b is settled. Suited to per-vertex queries on meshes too large for a
/// full cache.
inline Eigen::VectorXd point_pair_distances(const TriangleMesh& mesh, std::span<const std::pair<Index, Index>> pairs,
                                            std::size_t workers = 0) {
  const Index n = mesh.num_vertices();
  for (const auto& [a, b] : pairs)
    if (a < 0 || a >= n || b < 0 || b >= n)
      throw Error(ErrorCode::InvalidArgument, "mesh_core/point_pair_distances", "vertex out of range");
  const double scale = 1.0 / std::sqrt(mesh.total_area());
  const auto& p = mesh.positions();
  Eigen::VectorXd out(static_cast<Index>(pairs.size()));
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        const auto [a, b] = pairs[i];
        if (a == b) {
          out(static_cast<Index>(i)) = 0;
          return;
        }
        std::unordered_map<Index, double> dist{{a, 0.0}};
        using Item = std::pair<double, Index>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
        heap.emplace(0.0, a);
        double found = kInfinity;
        while (!heap.empty()) {
          auto [d, v] = heap.top();
          heap.pop();
          if (d > dist[v]) continue;
          if (v == b) {
            found = d;
            break;
          }
          for (Index w : mesh.neighbors(v)) {
            const double nd = d + (p.row(v) - p.row(w)).norm();
            auto it = dist.find(w);
            if (it == dist.end() || nd < it->second) {
              dist[w] = nd;
              heap.emplace(nd, w);
            }
          }
        }
        out(static_cast<Index>(i)) = found * scale;
      },
      workers);
  return out;
}

/// Vertex with maximal lumped area, lowest index on ties.
inline Index default_seed_vertex(const TriangleMesh& mesh) {
  const Eigen::VectorXd m = mesh.lumped_areas();
  Index best = 0;
  for (Index v = 1; v < m.size(); ++v)
    if (m(v) > m(best)) best = v;
  return best;
}

/// Greedy farthest-point sampling under the graph geodesic metric.
inline std::vector<Index> farthest_point_sample(const TriangleMesh& mesh, Index count, Index seed_vertex) {
  const char* where = "mesh_core/farthest_point_sample";
  if (count < 1) throw Error(ErrorCode::InvalidArgument, where, "count must be positive");
  if (count > mesh.num_vertices())
    throw Error(ErrorCode::CountTooLarge, where,
                "count " + std::to_string(count) + " exceeds vertex count " + std::to_string(mesh.num_vertices()));
  if (seed_vertex < 0 || seed_vertex >= mesh.num_vertices())
    throw Error(ErrorCode::InvalidArgument, where, "seed vertex " + std::to_string(seed_vertex) + " out of range");
  std::vector<Index> picked{seed_vertex};
  Eigen::VectorXd nearest = dijkstra(mesh, std::span<const Index>(&seed_vertex, 1));
  while (static_cast<Index>(picked.size()) < count) {
    Index best = -1;
    for (Index v = 0; v < nearest.size(); ++v)
      if (nearest(v) > 0 && (best < 0 || nearest(v) > nearest(best))) best = v;
    if (best < 0) {
      // Only coincident vertices remain; take the lowest unpicked index.
      std::vector<bool> used(static_cast<std::size_t>(mesh.num_vertices()), false);
      for (Index p : picked) used[static_cast<std::size_t>(p)] = true;
      best = static_cast<Index>(std::find(used.begin(), used.end(), false) - used.begin());
    }
    picked.push_back(best);
    nearest = nearest.cwiseMin(dijkstra(mesh, std::span<const Index>(&best, 1)));
    nearest(best) = 0;
  }
  return picked;
}

inline std::vector<Index> farthest_point_sample(const TriangleMesh& mesh, Index count) {
  return farthest_point_sample(mesh, count, default_seed_vertex(mesh));
}

struct ComponentSplit {
  std::vector<TriangleMesh> component_meshes;
  /// vertex_maps[c][i] is the original index of vertex i of component c.
  std::vector<std::vector<Index>> vertex_maps;
};

/// Edge-connected components, ordered by their lowest original vertex; vertex
/// order inside a component follows the original order.
inline ComponentSplit connected_components(const TriangleMesh& mesh) {
  const Index n = mesh.num_vertices();
  std::vector<Index> label(static_cast<std::size_t>(n), -1);
  Index count = 0;
  for (Index s = 0; s < n; ++s) {
    if (label[static_cast<std::size_t>(s)] >= 0) continue;
    std::vector<Index> stack{s};
    label[static_cast<std::size_t>(s)] = count;
    while (!stack.empty()) {
      const Index v = stack.back();
      stack.pop_back();
      for (Index w : mesh.neighbors(v))
        if (label[static_cast<std::size_t>(w)] < 0) {
          label[static_cast<std::size_t>(w)] = count;
          stack.push_back(w);
        }
    }
    ++count;
  }
  ComponentSplit split;
  split.vertex_maps.resize(static_cast<std::size_t>(count));
  std::vector<Index> local(static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v) {
    auto& vm = split.vertex_maps[static_cast<std::size_t>(label[static_cast<std::size_t>(v)])];
    local[static_cast<std::size_t>(v)] = static_cast<Index>(vm.size());
    vm.push_back(v);
  }
  std::vector<std::vector<Index>> faces_of(static_cast<std::size_t>(count));
  for (Index f = 0; f < mesh.num_faces(); ++f)
    faces_of[static_cast<std::size_t>(label[static_cast<std::size_t>(mesh.faces()(f, 0))])].push_back(f);
  for (Index c = 0; c < count; ++c) {
    const auto& vm = split.vertex_maps[static_cast<std::size_t>(c)];
    const auto& fl = faces_of[static_cast<std::size_t>(c)];
    Positions p(static_cast<Index>(vm.size()), 3);
    for (std::size_t i = 0; i < vm.size(); ++i) p.row(static_cast<Index>(i)) = mesh.positions().row(vm[i]);
    Faces f(static_cast<Index>(fl.size()), 3);
    for (std::size_t i = 0; i < fl.size(); ++i)
      for (int k = 0; k < 3; ++k) f(static_cast<Index>(i), k) = local[static_cast<std::size_t>(mesh.faces()(fl[i], k))];
    split.component_meshes.emplace_back(std::move(p), std::move(f));
  }
  return split;
}

}  // namespace maptree
