#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "maptree/error.hpp"
#include "maptree/fmap.hpp"
#include "maptree/parallel.hpp"
#include "maptree/refine.hpp"
#include "maptree/spectral.hpp"

namespace maptree {

enum class NodeStatus { Unexplored, Explored, PrunedQuality, PrunedDuplicate };

inline std::string_view to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::Unexplored: return "unexplored";
    case NodeStatus::Explored: return "explored";
    case NodeStatus::PrunedQuality: return "pruned_quality";
    case NodeStatus::PrunedDuplicate: return "pruned_duplicate";
  }
  return "unknown";
}

struct ExplorationConfig {
  double epsilon_group = 1.0;
  double epsilon_ortho = 0.5;
  double epsilon_lapcomm = 0.5;
  Index kappa = 10;
  Index max_group_size = 3;
  double dedup_agreement = 0.95;
  Index refine_budget = 5;
  Index sample_count = 300;
  Index max_leaves = 64;
  Index k_final = 50;
  /// Fixed-k zoomout passes over the full vertex sets after the sample-level
  /// refinement; stops early once the dense map is stationary.
  Index dense_polish = 3;
  /// Divide E_ortho by the larger fmap dimension before gating. Off by
  /// default: the raw energy separates good and bad candidates far better.
  bool normalize_ortho = false;
  std::size_t workers = 0;

  void validate() const {
    const char* where = "maptree/config";
    if (!(epsilon_group > 0 && epsilon_ortho > 0 && epsilon_lapcomm > 0))
      throw Error(ErrorCode::InvalidArgument, where, "thresholds must be positive");
    if (kappa < 2) throw Error(ErrorCode::InvalidArgument, where, "kappa must be >= 2");
    if (max_group_size < 1) throw Error(ErrorCode::InvalidArgument, where, "max_group_size must be >= 1");
    if (!(dedup_agreement > 0 && dedup_agreement <= 1))
      throw Error(ErrorCode::InvalidArgument, where, "dedup_agreement must lie in (0, 1]");
    if (refine_budget < 0) throw Error(ErrorCode::InvalidArgument, where, "refine_budget must be >= 0");
    if (dense_polish < 0) throw Error(ErrorCode::InvalidArgument, where, "dense_polish must be >= 0");
    if (sample_count < 1) throw Error(ErrorCode::InvalidArgument, where, "sample_count must be >= 1");
    if (max_leaves < 1) throw Error(ErrorCode::InvalidArgument, where, "max_leaves must be >= 1");
    if (k_final < 1) throw Error(ErrorCode::InvalidArgument, where, "k_final must be >= 1");
  }
};

struct MapTreeNode {
  Index id = 0;
  std::optional<Index> parent;
  std::vector<Index> children;
  Eigen::MatrixXd fmap;
  NodeStatus status = NodeStatus::Unexplored;
  double e_ortho = 0;    // as gated (see ExplorationConfig::normalize_ortho)
  double e_lapcomm = 0;  // divided by the squared spectral range
  /// Refined map between sample sets; empty for the root.
  std::optional<MapPair> pair;
  /// ||leading block of fmap - parent fmap||_F at creation.
  double leading_deviation = 0;
  /// No further eigenfunctions were available when this node was expanded.
  bool terminal = false;

  Index rows() const { return fmap.rows(); }
  Index cols() const { return fmap.cols(); }
  Index max_dim() const { return std::max(fmap.rows(), fmap.cols()); }
  bool pruned() const { return status == NodeStatus::PrunedQuality || status == NodeStatus::PrunedDuplicate; }
};

/// Output of the final refinement of one surviving leaf.
struct LeafResult {
  Index node = 0;
  Eigen::MatrixXd fmap;    // C_21 at k_final, fitted to dense_map
  MapPair sample_pair;     // refined to k_final
  PointwiseMap dense_map;  // every vertex of S1 -> vertex of S2
};

struct MapTree {
  std::vector<MapTreeNode> nodes;
  std::pair<std::string, std::string> shape_ids;
  ExplorationConfig config;
  std::vector<LeafResult> results;
  std::vector<std::string> warnings;
  bool max_leaves_triggered = false;

  const MapTreeNode& root() const { return nodes.front(); }
  const MapTreeNode& node(Index id) const { return nodes[static_cast<std::size_t>(id)]; }
  MapTreeNode& node(Index id) { return nodes[static_cast<std::size_t>(id)]; }

  /// Nodes that end the exploration alive: non-pruned, without children, and
  /// either beyond kappa or terminal.
  std::vector<Index> surviving_leaves() const {
    std::vector<Index> out;
    for (const auto& n : nodes)
      if (!n.pruned() && n.children.empty() && n.id != 0 &&
          (n.status == NodeStatus::Unexplored || n.terminal))
        out.push_back(n.id);
    return out;
  }
};

/// The bases one exploration works on: sampled rows drive the search, full
/// rows produce dense output maps.
struct ShapePair {
  const SampledBasis& sampled1;
  const SampledBasis& sampled2;
  const SampledBasis& full1;
  const SampledBasis& full2;
};

inline MapTree init_tree(const SpectralBasis& basis1, const SpectralBasis& basis2, const ExplorationConfig& cfg,
                         std::pair<std::string, std::string> ids = {"S1", "S2"}) {
  cfg.validate();
  if (basis1.size() < 1 || basis2.size() < 1)
    throw Error(ErrorCode::InvalidArgument, "maptree/init_tree", "empty basis");
  const double s1 = basis1.eigenfunctions.col(0).sum(), s2 = basis2.eigenfunctions.col(0).sum();
  if (std::abs(s1) < 1e-300 || !std::isfinite(s2 / s1))
    throw Error(ErrorCode::ZeroConstantSum, "maptree/init_tree", "first eigenfunction of S1 sums to zero");
  MapTree tree;
  tree.shape_ids = std::move(ids);
  tree.config = cfg;
  MapTreeNode root;
  root.fmap = Eigen::MatrixXd::Constant(1, 1, s2 / s1);
  tree.nodes.push_back(std::move(root));
  return tree;
}

/// All rows x cols matrices with entries in {0, +1, -1} that place exactly one
/// nonzero in every line of the smaller dimension and at most one in every
/// line of the larger one. Square inputs give the 2^n n! signed permutations.
/// Order: assignments lexicographically, then sign patterns with + first.
inline std::vector<Eigen::MatrixXd> enumerate_signed_permutations(Index rows, Index cols, Index max_group_size) {
  if (rows < 1 || cols < 1) throw Error(ErrorCode::InvalidArgument, "maptree/enumerate_signed_permutations", "empty group");
  if (std::max(rows, cols) > max_group_size)
    throw Error(ErrorCode::GroupTooLarge, "maptree/enumerate_signed_permutations",
                std::to_string(rows) + " x " + std::to_string(cols) + " exceeds max_group_size " +
                    std::to_string(max_group_size));
  const bool tall = rows >= cols;
  const Index small = tall ? cols : rows, large = tall ? rows : cols;
  std::vector<Eigen::MatrixXd> out;
  // Choose an injective assignment of the `small` lines into the `large` ones.
  std::vector<Index> pool(static_cast<std::size_t>(large));
  std::iota(pool.begin(), pool.end(), Index{0});
  std::vector<Index> pick;
  std::vector<bool> used(static_cast<std::size_t>(large), false);
  auto emit = [&] {
    for (Index mask = 0; mask < (Index{1} << small); ++mask) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows, cols);
      for (Index s = 0; s < small; ++s) {
        const double sign = (mask >> (small - 1 - s)) & 1 ? -1.0 : 1.0;
        if (tall)
          m(pick[static_cast<std::size_t>(s)], s) = sign;
        else
          m(s, pick[static_cast<std::size_t>(s)]) = sign;
      }
      out.push_back(std::move(m));
    }
  };
  auto recurse = [&](auto&& self) -> void {
    if (static_cast<Index>(pick.size()) == small) {
      emit();
      return;
    }
    for (Index l = 0; l < large; ++l) {
      if (used[static_cast<std::size_t>(l)]) continue;
      used[static_cast<std::size_t>(l)] = true;
      pick.push_back(l);
      self(self);
      pick.pop_back();
      used[static_cast<std::size_t>(l)] = false;
    }
  };
  recurse(recurse);
  return out;
}

namespace detail {

// Fallback for oversized groups: the rectangular identity block and every
// variant with one diagonal sign flipped.
inline std::vector<Eigen::MatrixXd> truncated_group_candidates(Index rows, Index cols) {
  std::vector<Eigen::MatrixXd> out;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(rows, cols);
  out.push_back(id);
  for (Index i = 0; i < std::min(rows, cols); ++i) {
    Eigen::MatrixXd m = id;
    m(i, i) = -1.0;
    out.push_back(std::move(m));
  }
  return out;
}

inline void gate_energies(MapTreeNode& n, const ExplorationConfig& cfg, const SampledBasis& b1, const SampledBasis& b2) {
  n.e_ortho = cfg.normalize_ortho ? normalized_ortho(n.fmap) : energy_ortho(n.fmap);
  n.e_lapcomm = normalized_lap_comm(n.fmap, b1.eigenvalues, b2.eigenvalues);
}

}  // namespace detail

/// Expands one unexplored node: groups the next eigenvalues on both shapes,
/// enumerates block candidates, refines each, and attaches the refined maps
/// as unexplored children ordered by (E_ortho + E_lapComm). Returns the new
/// child ids. Throws BasisExhausted (after marking the node terminal) when
/// either basis has no further column.
inline std::vector<Index> expand_node(MapTree& tree, Index id, const ShapePair& shapes) {
  const char* where = "maptree/expand_node";
  const auto& cfg = tree.config;
  const SampledBasis& b1 = shapes.sampled1;
  const SampledBasis& b2 = shapes.sampled2;
  {
    MapTreeNode& n = tree.node(id);
    if (n.status != NodeStatus::Unexplored)
      throw Error(ErrorCode::PreconditionViolated, where, "node " + std::to_string(id) + " is not unexplored");
    if (n.rows() >= b1.size() || n.cols() >= b2.size()) {
      n.status = NodeStatus::Explored;
      n.terminal = true;
      throw Error(ErrorCode::BasisExhausted, where, "node " + std::to_string(id) + " uses every basis column");
    }
  }
  const Eigen::MatrixXd base = tree.node(id).fmap;
  const IndexRange g1 = group_eigenvalues(b1.eigenvalues, base.rows(), cfg.epsilon_group);
  const IndexRange g2 = group_eigenvalues(b2.eigenvalues, base.cols(), cfg.epsilon_group);
  std::vector<Eigen::MatrixXd> blocks;
  try {
    blocks = enumerate_signed_permutations(g1.size(), g2.size(), cfg.max_group_size);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::GroupTooLarge) throw;
    tree.warnings.push_back("node " + std::to_string(id) + ": eigenvalue group " + std::to_string(g1.size()) + " x " +
                            std::to_string(g2.size()) + " exceeds max_group_size; using identity block and single sign flips");
    blocks = detail::truncated_group_candidates(g1.size(), g2.size());
  }

  struct Candidate {
    MapTreeNode node;
    std::size_t order = 0;
  };
  std::vector<Candidate> cands(blocks.size());
  parallel_for(
      blocks.size(),
      [&](std::size_t i) {
        RefinedNode r = refine_node(embed_block(base, blocks[i]), b1, b2, cfg.refine_budget);
        Candidate& c = cands[i];
        c.order = i;
        c.node.fmap = std::move(r.fmap);
        c.node.pair = std::move(r.pair);
        c.node.parent = id;
        c.node.leading_deviation = (c.node.fmap.topLeftCorner(base.rows(), base.cols()) - base).norm();
        detail::gate_energies(c.node, cfg, b1, b2);
      },
      cfg.workers);
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    return a.node.e_ortho + a.node.e_lapcomm < b.node.e_ortho + b.node.e_lapcomm;
  });
  std::vector<Index> ids;
  for (auto& c : cands) {
    c.node.id = static_cast<Index>(tree.nodes.size());
    ids.push_back(c.node.id);
    tree.nodes.push_back(std::move(c.node));
  }
  MapTreeNode& n = tree.node(id);
  n.children = ids;
  n.status = NodeStatus::Explored;
  return ids;
}

/// Rule 1: quality gates on the children's energies. Rule 2: a child whose
/// sample map agrees with an earlier-created, non-pruned node of the same
/// dimensions on at least dedup_agreement of the samples is a duplicate.
inline void prune(MapTree& tree, const std::vector<Index>& new_children) {
  const auto& cfg = tree.config;
  for (Index id : new_children) {
    MapTreeNode& c = tree.node(id);
    if (c.e_ortho > cfg.epsilon_ortho || c.e_lapcomm > cfg.epsilon_lapcomm) {
      c.status = NodeStatus::PrunedQuality;
      continue;
    }
    for (Index other = 0; other < id; ++other) {
      const MapTreeNode& o = tree.node(other);
      if (o.pruned() || !o.pair || o.rows() != c.rows() || o.cols() != c.cols()) continue;
      if (agreement(o.pair->pi_12, c.pair->pi_12) >= cfg.dedup_agreement) {
        c.status = NodeStatus::PrunedDuplicate;
        break;
      }
    }
  }
  // Pruned nodes never keep children; detach nothing here because freshly
  // created children have none.
}

/// Refines one surviving leaf to k_final on the samples and converts it to
/// a dense vertex map.
inline LeafResult finalize_leaf(const MapTree& tree, Index id, const ShapePair& shapes) {
  const MapTreeNode& n = tree.node(id);
  const SampledBasis& b1 = shapes.sampled1;
  const SampledBasis& b2 = shapes.sampled2;
  const Index k_final = std::min({tree.config.k_final, b1.size(), b2.size(), shapes.full1.size(), shapes.full2.size()});
  RefineConfig rc;
  rc.k_init = std::min(n.max_dim(), k_final);
  rc.k_final = k_final;
  rc.k_step = 1;
  MapPair pair = n.pair ? *n.pair : pair_from_functional(n.fmap, b1, b2);
  pair = bijective_zoomout(std::move(pair), b1, b2, rc);
  LeafResult r;
  r.node = id;
  r.fmap = pointwise_to_functional(pair.pi_12, b1, b2, k_final, k_final);
  r.dense_map = functional_to_pointwise(r.fmap, shapes.full1, shapes.full2);
  for (Index pass = 0; pass < tree.config.dense_polish; ++pass) {
    const Eigen::MatrixXd c = pointwise_to_functional(r.dense_map, shapes.full1, shapes.full2, k_final, k_final);
    PointwiseMap next = functional_to_pointwise(c, shapes.full1, shapes.full2);
    r.fmap = c;
    if (next == r.dense_map) break;
    r.dense_map = std::move(next);
  }
  r.sample_pair = std::move(pair);
  return r;
}

/// Breadth-first expansion and pruning until every live leaf exceeds kappa
/// (or is terminal), followed by final refinement of the survivors. Leaves
/// whose final dense maps coincide (dedup_agreement) are collapsed onto the
/// earliest one.
inline MapTree& explore(MapTree& tree, const ShapePair& shapes) {
  const auto& cfg = tree.config;
  std::size_t cursor = 0;
  while (cursor < tree.nodes.size()) {
    const Index id = static_cast<Index>(cursor++);
    if (tree.node(id).status != NodeStatus::Unexplored) continue;
    if (id != 0 && tree.node(id).max_dim() > cfg.kappa) continue;
    std::size_t live = 0;
    for (const auto& n : tree.nodes) live += n.status == NodeStatus::Unexplored && !n.pruned();
    if (static_cast<Index>(live) > cfg.max_leaves) {
      tree.max_leaves_triggered = true;
      tree.warnings.push_back("max_leaves " + std::to_string(cfg.max_leaves) + " reached; exploration stopped early");
      break;
    }
    try {
      prune(tree, expand_node(tree, id, shapes));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BasisExhausted) throw;
    }
  }

  std::vector<Index> leaves = tree.surviving_leaves();
  if (tree.max_leaves_triggered) {
    // Unexpanded nodes below kappa are also reported as leaves.
    leaves.clear();
    for (const auto& n : tree.nodes)
      if (!n.pruned() && n.children.empty() && n.id != 0) leaves.push_back(n.id);
  }
  std::vector<LeafResult> results(leaves.size());
  parallel_for(
      leaves.size(), [&](std::size_t i) { results[i] = finalize_leaf(tree, leaves[i], shapes); }, cfg.workers);
  tree.results.clear();
  for (auto& r : results) {
    bool duplicate = false;
    for (const auto& kept : tree.results)
      if (agreement(kept.dense_map, r.dense_map) >= cfg.dedup_agreement) {
        duplicate = true;
        break;
      }
    if (duplicate)
      tree.node(r.node).status = NodeStatus::PrunedDuplicate;
    else
      tree.results.push_back(std::move(r));
  }
  return tree;
}

/// Structural invariants: dimension growth along edges, recorded agreement of
/// leading blocks, and no children under pruned nodes.
inline bool well_formed(const MapTree& tree, double tolerance = 1e-9) {
  for (const auto& n : tree.nodes) {
    if (n.pruned() && !n.children.empty()) return false;
    for (Index c : n.children) {
      const auto& ch = tree.node(c);
      if (ch.parent != n.id || ch.rows() <= n.rows() || ch.cols() <= n.cols()) return false;
      const double dev = (ch.fmap.topLeftCorner(n.rows(), n.cols()) - n.fmap).norm();
      if (std::abs(dev - ch.leading_deviation) > tolerance * std::max(1.0, dev)) return false;
    }
  }
  return true;
}

/// Compares the sign patterns of the first `kappa` diagonal entries of the
/// surviving leaves with those of the given isometries. Requires simple and
/// matching spectra over the first kappa eigenvalues.
inline bool theorem2_check(const MapTree& tree, const std::vector<PointwiseMap>& isometries, const SampledBasis& full1,
                           const SampledBasis& full2, Index kappa) {
  const char* where = "maptree/theorem2_check";
  const double eps = tree.config.epsilon_group;
  if (kappa > full1.size() || kappa > full2.size())
    throw Error(ErrorCode::PreconditionViolated, where, "bases shorter than kappa");
  for (Index i = 1; i < kappa; ++i) {
    if (full1.eigenvalues(i) - full1.eigenvalues(i - 1) <= eps || full2.eigenvalues(i) - full2.eigenvalues(i - 1) <= eps)
      throw Error(ErrorCode::PreconditionViolated, where, "spectrum is not simple at index " + std::to_string(i));
    if (std::abs(full1.eigenvalues(i) - full2.eigenvalues(i)) > 1e-6 * std::max(1.0, full1.eigenvalues(i)))
      throw Error(ErrorCode::PreconditionViolated, where, "spectra differ at index " + std::to_string(i));
  }
  auto signs = [kappa](const Eigen::MatrixXd& c) {
    std::vector<int> s;
    for (Index i = 0; i < kappa; ++i) s.push_back(c(i, i) >= 0 ? 1 : -1);
    return s;
  };
  std::set<std::vector<int>> from_tree, from_truth;
  for (const auto& r : tree.results) {
    const auto& c = tree.node(r.node).fmap;
    if (c.rows() < kappa || c.cols() < kappa)
      throw Error(ErrorCode::PreconditionViolated, where, "leaf smaller than kappa");
    from_tree.insert(signs(c));
  }
  for (const auto& t : isometries) from_truth.insert(signs(pointwise_to_functional(t, full1, full2, kappa, kappa)));
  return from_tree == from_truth && tree.results.size() == from_truth.size();
}

inline nlohmann::json tree_to_json(const MapTree& tree, const std::vector<std::string>& leaf_map_files = {}) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : tree.nodes) {
    nlohmann::json j;
    j["id"] = n.id;
    j["parent_id"] = n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr);
    j["dims"] = {n.rows(), n.cols()};
    j["status"] = to_string(n.status);
    j["terminal"] = n.terminal;
    j["energies"] = {{"ortho", n.e_ortho}, {"lapcomm", n.e_lapcomm}};
    j["leading_deviation"] = n.leading_deviation;
    j["children"] = n.children;
    FunctionalMap f{n.fmap, tree.shape_ids.first, tree.shape_ids.second};
    j["fmap"] = to_json(f);
    nodes.push_back(std::move(j));
  }
  nlohmann::json leaves = nlohmann::json::array();
  for (std::size_t i = 0; i < tree.results.size(); ++i) {
    nlohmann::json l{{"node", tree.results[i].node}, {"k_final", tree.results[i].fmap.rows()}};
    if (i < leaf_map_files.size()) l["map_file"] = leaf_map_files[i];
    leaves.push_back(std::move(l));
  }
  const auto& c = tree.config;
  return {{"shape_ids", {tree.shape_ids.first, tree.shape_ids.second}},
          {"config",
           {{"epsilon_group", c.epsilon_group},
            {"epsilon_ortho", c.epsilon_ortho},
            {"epsilon_lapcomm", c.epsilon_lapcomm},
            {"kappa", c.kappa},
            {"max_group_size", c.max_group_size},
            {"dedup_agreement", c.dedup_agreement},
            {"refine_budget", c.refine_budget},
            {"sample_count", c.sample_count},
            {"max_leaves", c.max_leaves},
            {"k_final", c.k_final},
            {"dense_polish", c.dense_polish},
            {"normalize_ortho", c.normalize_ortho}}},
          {"max_leaves_triggered", tree.max_leaves_triggered},
          {"warnings", tree.warnings},
          {"nodes", std::move(nodes)},
          {"leaves", std::move(leaves)}};
}

}  // namespace maptree
