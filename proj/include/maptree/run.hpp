#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "maptree/analysis.hpp"
#include "maptree/config.hpp"
#include "maptree/error.hpp"
#include "maptree/fmap.hpp"
#include "maptree/geodesic.hpp"
#include "maptree/map_tree.hpp"
#include "maptree/mesh.hpp"
#include "maptree/metrics.hpp"
#include "maptree/refine.hpp"
#include "maptree/select.hpp"
#include "maptree/spectral.hpp"

namespace maptree {

/// Seconds spent per named phase, in the order the phases ran.
class PhaseTimer {
 public:
  template <class F>
  decltype(auto) time(const std::string& phase, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    struct Record {
      PhaseTimer& timer;
      const std::string& phase;
      std::chrono::steady_clock::time_point start;
      ~Record() {
        timer.phases_.emplace_back(phase, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      }
    } record{*this, phase, start};
    return body();
  }

  nlohmann::json to_json() const {
    nlohmann::json phases = nlohmann::json::array();
    double total = 0;
    for (const auto& [name, seconds] : phases_) {
      phases.push_back({{"phase", name}, {"seconds", seconds}});
      total += seconds;
    }
    return {{"phases", phases}, {"total_seconds", total}};
  }

 private:
  std::vector<std::pair<std::string, double>> phases_;
};

/// Output directory that remembers what it wrote so a failed run can remove
/// its partial artifacts.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec || !std::filesystem::is_directory(root_))
      throw Error(ErrorCode::IoError, "cli_io/output", "cannot create output directory '" + root_.string() + "'");
  }

  const std::filesystem::path& root() const { return root_; }

  void write(const std::string& relative, const std::string& content) {
    const auto path = root_ / relative;
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cli_io/output", "cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw Error(ErrorCode::IoError, "cli_io/output", "write to '" + path.string() + "' failed");
    written_.push_back(path);
  }

  void write_json(const std::string& relative, const nlohmann::json& j) { write(relative, j.dump(2) + "\n"); }

  /// Removes every file written so far and any directories left empty.
  void rollback() {
    std::error_code ec;
    for (auto it = written_.rbegin(); it != written_.rend(); ++it) {
      std::filesystem::remove(*it, ec);
      for (auto dir = it->parent_path(); dir != root_ && dir.string().size() > root_.string().size();
           dir = dir.parent_path())
        if (!std::filesystem::remove(dir, ec)) break;  // only empty directories are removed
    }
    written_.clear();
  }

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> written_;
};

/// One shape with everything the pipelines need: unit-area mesh, operator,
/// basis, farthest-point samples with their restricted basis, and geodesic
/// distances from the samples.
struct PreparedShape {
  std::string id;
  TriangleMesh mesh;
  LaplacianPair lap;
  SpectralBasis basis;
  std::vector<Index> samples;
  SampledBasis sampled;
  SampledBasis full;
  GeodesicCache sample_geo;
};

/// Basis size that covers the final refinement and the deepest expansion.
inline Index basis_size(const ExplorationConfig& cfg, Index vertices) {
  return std::min(vertices, std::max(cfg.k_final, cfg.kappa + 2 * cfg.max_group_size));
}

inline PreparedShape prepare_shape(const TriangleMesh& raw, std::string id, const ExplorationConfig& cfg) {
  TriangleMesh mesh = normalize_to_unit_area(raw);
  LaplacianPair lap = build_laplacian(mesh);
  SpectralBasis basis = cached_basis(mesh, lap, basis_size(cfg, mesh.num_vertices()));
  SampledBasis full = full_domain(basis);
  std::vector<Index> samples;
  SampledBasis sampled;
  if (cfg.sample_count >= mesh.num_vertices()) {
    samples = full.vertices;
    sampled = full;
  } else {
    samples = farthest_point_sample(mesh, cfg.sample_count);
    sampled = restrict_to_samples(mesh, basis, samples);
  }
  GeodesicCache geo = geodesic_distances(mesh, samples, cfg.workers);
  return {std::move(id),      std::move(mesh),    std::move(lap),  std::move(basis), std::move(samples),
          std::move(sampled), std::move(full), std::move(geo)};
}

/// Quality report of a dense map a -> b; energies are those of its k x k
/// functional map on the full domains.
inline QualityReport evaluate_map(const PointwiseMap& map, const PreparedShape& a, const PreparedShape& b,
                                  const std::optional<PointwiseMap>& ground_truth, Index k, std::size_t workers) {
  if (map.domain_size() != a.mesh.num_vertices() || map.codomain_size() != b.mesh.num_vertices())
    throw Error(ErrorCode::DimensionMismatch, "cli_io/evaluate_map",
                "map is " + std::to_string(map.domain_size()) + " -> " + std::to_string(map.codomain_size()) +
                    " but the shapes have " + std::to_string(a.mesh.num_vertices()) + " and " +
                    std::to_string(b.mesh.num_vertices()) + " vertices");
  k = std::min({k, a.basis.size(), b.basis.size()});
  QualityReport r;
  const Eigen::MatrixXd c = pointwise_to_functional(map, a.full, b.full, k, k);
  r.energy_ortho = normalized_ortho(c);
  r.energy_lapcomm = normalized_lap_comm(c, a.basis.eigenvalues, b.basis.eigenvalues);
  const auto image_geo = geodesic_distances(b.mesh, image_vertices(map, a.samples), workers);
  r.geodesic_distortion = geodesic_distortion(map, a.sample_geo, image_geo, a.samples);
  r.geodesic_samples = static_cast<Index>(a.samples.size());
  r.dirichlet_energy = dirichlet_energy(map, a.lap, b.mesh.positions());
  const auto conformal = conformal_distortion(map, a.mesh, b.mesh);
  r.conformal_distortion = conformal.value;
  r.conformal_skipped_faces = conformal.skipped_faces;
  r.orientation_flip_fraction = orientation_flip_fraction(map, a.mesh, b.mesh);
  if (ground_truth) {
    if (ground_truth->domain_size() != map.domain_size() || ground_truth->codomain_size() != map.codomain_size())
      throw Error(ErrorCode::DimensionMismatch, "cli_io/evaluate_map", "ground truth does not match the shapes");
    r.accuracy = accuracy(map, *ground_truth, b.mesh, workers);
  }
  return r;
}

namespace detail {

inline std::string padded(std::size_t index, std::size_t count) {
  std::size_t width = 2;
  for (std::size_t c = count > 0 ? count - 1 : 0; c >= 100; c /= 10) ++width;
  std::string s = std::to_string(index);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "/" + name;
}

inline std::string map_text(const PointwiseMap& map) {
  std::ostringstream s;
  write_pointwise(s, map);
  return s.str();
}

inline std::string shape_id(const std::filesystem::path& p) { return p.stem().string(); }

inline void require_file(const std::filesystem::path& p) {
  if (!std::filesystem::is_regular_file(p))
    throw Error(ErrorCode::IoError, "cli_io/run", "input file '" + p.string() + "' does not exist");
}

inline void require_inputs(const RunConfig& cfg, std::size_t count) {
  if (cfg.inputs.size() != count)
    throw Error(ErrorCode::InvalidArgument, "cli_io/run",
                std::string(to_string(cfg.mode)) + " takes " + std::to_string(count) + " input files");
}

inline void note(std::ostream* log, const RunConfig& cfg, Index level, const std::string& message) {
  if (log && cfg.verbosity >= level) *log << message << '\n';
}

}  // namespace detail

/// Context shared by the writers of one run.
struct RunContext {
  const RunConfig& config;
  OutputDir& out;
  PhaseTimer& timer;
  std::ostream* log = nullptr;
};

/// Map-tree exploration from a to b, written under `prefix`; returns the
/// manifest fragment listing the tree file and one entry per surviving map.
inline nlohmann::json explore_and_write(RunContext& ctx, const std::string& prefix, const PreparedShape& a,
                                        const PreparedShape& b, const std::optional<PointwiseMap>& ground_truth,
                                        MapTree* tree_out = nullptr) {
  ExplorationConfig cfg = ctx.config.exploration;
  cfg.k_final = std::min({cfg.k_final, a.basis.size(), b.basis.size(), a.sampled.count(), b.sampled.count()});
  MapTree tree = init_tree(a.basis, b.basis, cfg, {a.id, b.id});
  ctx.timer.time(detail::join(prefix, "explore"), [&] { return &explore(tree, {a.sampled, b.sampled, a.full, b.full}); });
  detail::note(ctx.log, ctx.config, 1,
               detail::join(prefix, "explore") + ": " + std::to_string(tree.nodes.size()) + " nodes, " +
                   std::to_string(tree.results.size()) + " surviving maps");

  nlohmann::json maps = nlohmann::json::array();
  std::vector<std::string> map_files;
  const std::size_t count = tree.results.size();
  std::vector<QualityReport> reports(count);
  ctx.timer.time(detail::join(prefix, "metrics"), [&] {
    for (std::size_t i = 0; i < count; ++i)
      reports[i] = evaluate_map(tree.results[i].dense_map, a, b, ground_truth, cfg.k_final, cfg.workers);
    return 0;
  });
  ctx.timer.time(detail::join(prefix, "write"), [&] {
    if (count > 0) detail::note(ctx.log, ctx.config, 0, report_header());
    for (std::size_t i = 0; i < count; ++i) {
      const auto& r = tree.results[i];
      const std::string nn = detail::padded(i, count);
      const std::string map_file = detail::join(prefix, "maps/" + nn + ".map");
      const std::string report_file = detail::join(prefix, "reports/" + nn + ".json");
      ctx.out.write(map_file, detail::map_text(r.dense_map));
      ctx.out.write_json(report_file, to_json(reports[i]));
      nlohmann::json entry{{"index", i},
                           {"node", r.node},
                           {"map_file", map_file},
                           {"report_file", report_file},
                           {"report", to_json(reports[i])}};
      if (ctx.config.export_colors) {
        const VertexColors target = coordinate_colors(b.mesh);
        VertexColors colors(a.mesh.num_vertices(), 3);
        for (Index v = 0; v < a.mesh.num_vertices(); ++v) colors.row(v) = target.row(r.dense_map[v]);
        std::ostringstream ply;
        write_ply(ply, a.mesh, &colors);
        const std::string color_file = detail::join(prefix, "colors/" + nn + ".ply");
        ctx.out.write(color_file, ply.str());
        entry["color_file"] = color_file;
      }
      map_files.push_back(map_file);
      maps.push_back(std::move(entry));
      detail::note(ctx.log, ctx.config, 0, report_row(detail::join(prefix, nn), reports[i]));
    }
    ctx.out.write_json(detail::join(prefix, "tree.json"), tree_to_json(tree, map_files));
    return 0;
  });
  nlohmann::json fragment{{"shape_ids", {a.id, b.id}},
                          {"tree_file", detail::join(prefix, "tree.json")},
                          {"max_leaves_triggered", tree.max_leaves_triggered},
                          {"warnings", tree.warnings},
                          {"maps", std::move(maps)}};
  if (tree_out) *tree_out = std::move(tree);
  return fragment;
}

/// Self exploration plus automatic symmetry choice and its symmetric region.
inline nlohmann::json selfsym_and_write(RunContext& ctx, const std::string& prefix, const PreparedShape& s) {
  MapTree tree;
  nlohmann::json fragment = explore_and_write(ctx, prefix, s, s, std::nullopt, &tree);
  std::vector<SymmetryCandidate> candidates;
  for (const auto& r : tree.results) candidates.push_back({r.fmap, r.dense_map});
  if (candidates.empty()) return fragment;
  const auto choice = ctx.timer.time(detail::join(prefix, "symmetry"), [&] {
    return select_self_symmetry(candidates, s.basis.eigenvalues, s.sample_geo, s.samples, ctx.config.symmetry_threshold);
  });
  nlohmann::json sym{{"selected", choice.index},
                     {"no_symmetry_found", choice.no_symmetry_found},
                     {"displacement", choice.displacement},
                     {"lapcomm", choice.lapcomm},
                     {"lapcomm_gate", choice.lapcomm_gate}};
  if (!choice.no_symmetry_found) {
    const auto mask = ctx.timer.time(detail::join(prefix, "region"), [&] {
      return extract_symmetric_region(s.mesh, candidates[static_cast<std::size_t>(choice.index)].map,
                                      ctx.config.region, ctx.config.exploration.workers);
    });
    std::string text;
    Index inside = 0;
    for (char m : mask) {
      text += m ? "1\n" : "0\n";
      inside += m != 0;
    }
    const std::string region_file = detail::join(prefix, "region.txt");
    ctx.out.write(region_file, text);
    sym["region_file"] = region_file;
    sym["region_vertices"] = inside;
  }
  ctx.out.write_json(detail::join(prefix, "symmetry.json"), sym);
  fragment["symmetry"] = std::move(sym);
  return fragment;
}

namespace detail {

inline std::optional<PointwiseMap> load_ground_truth(const RunConfig& cfg) {
  if (!cfg.ground_truth) return std::nullopt;
  return load_pointwise(*cfg.ground_truth);
}

inline nlohmann::json run_pair(RunContext& ctx) {
  const auto& cfg = ctx.config;
  require_inputs(cfg, 2);
  const auto [a, b] = ctx.timer.time("prepare", [&] {
    return std::pair{prepare_shape(load_mesh(cfg.inputs[0]), shape_id(cfg.inputs[0]), cfg.exploration),
                     prepare_shape(load_mesh(cfg.inputs[1]), shape_id(cfg.inputs[1]), cfg.exploration)};
  });
  return explore_and_write(ctx, "", a, b, load_ground_truth(cfg));
}

inline nlohmann::json run_selfsym(RunContext& ctx) {
  const auto& cfg = ctx.config;
  require_inputs(cfg, 1);
  const auto s = ctx.timer.time(
      "prepare", [&] { return prepare_shape(load_mesh(cfg.inputs[0]), shape_id(cfg.inputs[0]), cfg.exploration); });
  return selfsym_and_write(ctx, "", s);
}

/// Every component is explored against itself and against every later one.
inline nlohmann::json run_components(RunContext& ctx) {
  const auto& cfg = ctx.config;
  require_inputs(cfg, 1);
  const TriangleMesh mesh = load_mesh(cfg.inputs[0]);
  const ComponentSplit split = ctx.timer.time("components", [&] { return connected_components(mesh); });
  const std::size_t count = split.component_meshes.size();
  std::vector<PreparedShape> shapes;
  ctx.timer.time("prepare", [&] {
    for (std::size_t c = 0; c < count; ++c)
      shapes.push_back(prepare_shape(split.component_meshes[c], "component_" + padded(c, count), cfg.exploration));
    return 0;
  });
  nlohmann::json components = nlohmann::json::array(), pairs = nlohmann::json::array();
  for (std::size_t c = 0; c < count; ++c) {
    const std::string prefix = "components/" + padded(c, count);
    std::string vertices;
    for (Index v : split.vertex_maps[c]) vertices += std::to_string(v) + "\n";
    ctx.out.write(prefix + "/vertices.txt", vertices);
    std::ostringstream ply;
    write_ply(ply, split.component_meshes[c]);
    ctx.out.write(prefix + "/mesh.ply", ply.str());
    nlohmann::json entry{{"index", c},
                         {"vertices", split.component_meshes[c].num_vertices()},
                         {"vertex_map_file", prefix + "/vertices.txt"},
                         {"mesh_file", prefix + "/mesh.ply"},
                         {"self", selfsym_and_write(ctx, prefix, shapes[c])}};
    components.push_back(std::move(entry));
  }
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = i + 1; j < count; ++j) {
      const std::string prefix = "pairs/" + padded(i, count) + "_" + padded(j, count);
      pairs.push_back(explore_and_write(ctx, prefix, shapes[i], shapes[j], std::nullopt));
    }
  return {{"component_count", count}, {"components", std::move(components)}, {"pairs", std::move(pairs)}};
}

inline nlohmann::json run_refine(RunContext& ctx) {
  const auto& cfg = ctx.config;
  require_inputs(cfg, 2);
  const auto [a, b] = ctx.timer.time("prepare", [&] {
    return std::pair{prepare_shape(load_mesh(cfg.inputs[0]), shape_id(cfg.inputs[0]), cfg.exploration),
                     prepare_shape(load_mesh(cfg.inputs[1]), shape_id(cfg.inputs[1]), cfg.exploration)};
  });
  const PointwiseMap init = load_pointwise(*cfg.initial_map);
  if (init.domain_size() != a.mesh.num_vertices() || init.codomain_size() != b.mesh.num_vertices())
    throw Error(ErrorCode::DimensionMismatch, "cli_io/refine", "initial map does not match the shapes");
  RefineConfig rc = cfg.refine;
  rc.k_final = std::min({rc.k_final, a.basis.size(), b.basis.size(), a.sampled.count(), b.sampled.count()});
  rc.k_init = std::min(rc.k_init, rc.k_final);
  rc.sample_count = std::min(a.sampled.count(), b.sampled.count());
  RefineLog log;
  const auto [c21, dense] = ctx.timer.time("refine", [&] {
    const Eigen::MatrixXd seed = pointwise_to_functional(init, a.full, b.full, rc.k_init, rc.k_init);
    MapPair pair = bijective_zoomout(pair_from_functional(seed, a.sampled, b.sampled), a.sampled, b.sampled, rc, &log);
    Eigen::MatrixXd c = pointwise_to_functional(pair.pi_12, a.sampled, b.sampled, rc.k_final, rc.k_final);
    PointwiseMap d = functional_to_pointwise(c, a.full, b.full);
    return std::pair{std::move(c), std::move(d)};
  });
  const auto report = ctx.timer.time(
      "metrics", [&] { return evaluate_map(dense, a, b, load_ground_truth(cfg), rc.k_final, cfg.exploration.workers); });
  ctx.out.write("maps/00.map", map_text(dense));
  ctx.out.write_json("reports/00.json", to_json(report));
  ctx.out.write_json("fmap.json", to_json(FunctionalMap{c21, a.id, b.id}));
  nlohmann::json fragment{{"shape_ids", {a.id, b.id}},
                          {"fmap_file", "fmap.json"},
                          {"maps",
                           {{{"index", 0},
                             {"map_file", "maps/00.map"},
                             {"report_file", "reports/00.json"},
                             {"report", to_json(report)}}}}};
  if (cfg.verbosity > 0) {
    std::ostringstream csv;
    log.write_csv(csv);
    ctx.out.write("refine_log.csv", csv.str());
    fragment["refine_log_file"] = "refine_log.csv";
  }
  note(ctx.log, cfg, 0, report_header());
  note(ctx.log, cfg, 0, report_row("00", report));
  return fragment;
}

inline nlohmann::json run_metrics(RunContext& ctx) {
  const auto& cfg = ctx.config;
  require_inputs(cfg, 3);
  const auto [a, b] = ctx.timer.time("prepare", [&] {
    return std::pair{prepare_shape(load_mesh(cfg.inputs[0]), shape_id(cfg.inputs[0]), cfg.exploration),
                     prepare_shape(load_mesh(cfg.inputs[1]), shape_id(cfg.inputs[1]), cfg.exploration)};
  });
  const PointwiseMap map = load_pointwise(cfg.inputs[2]);
  const auto report = ctx.timer.time("metrics", [&] {
    return evaluate_map(map, a, b, load_ground_truth(cfg), cfg.exploration.k_final, cfg.exploration.workers);
  });
  ctx.out.write_json("reports/00.json", to_json(report));
  note(ctx.log, cfg, 0, report_header());
  note(ctx.log, cfg, 0, report_row(shape_id(cfg.inputs[2]), report));
  return {{"shape_ids", {a.id, b.id}},
          {"maps",
           {{{"index", 0}, {"map_file", cfg.inputs[2].string()}, {"report_file", "reports/00.json"}, {"report", to_json(report)}}}}};
}

/// Candidate manifest: {"shapes": [ids], "pairs": [{"source", "target",
/// "candidates": [fmap JSON files], "orientation": [scores]?}]}; candidate
/// paths are relative to the manifest.
inline CandidateSet load_candidate_manifest(const std::filesystem::path& path) {
  const char* where = "select/load_candidate_manifest";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, where, "cannot open '" + path.string() + "'");
  CandidateSet set;
  try {
    const auto j = nlohmann::json::parse(in);
    set.shape_ids = j.at("shapes").get<std::vector<std::string>>();
    auto index_of = [&](const std::string& id) {
      const auto it = std::find(set.shape_ids.begin(), set.shape_ids.end(), id);
      if (it == set.shape_ids.end()) throw Error(ErrorCode::ValidationError, where, "unknown shape id '" + id + "'");
      return static_cast<Index>(it - set.shape_ids.begin());
    };
    for (const auto& p : j.at("pairs")) {
      const ShapePairKey key{index_of(p.at("source").get<std::string>()), index_of(p.at("target").get<std::string>())};
      auto& list = set.candidates[key];
      for (const auto& file : p.at("candidates")) {
        const auto candidate_path = path.parent_path() / file.get<std::string>();
        std::ifstream cin(candidate_path);
        if (!cin) throw Error(ErrorCode::IoError, where, "cannot open candidate '" + candidate_path.string() + "'");
        list.push_back(functional_map_from_json(nlohmann::json::parse(cin)).matrix);
      }
      if (p.contains("orientation")) set.orientation[key] = p.at("orientation").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, where, "'" + path.string() + "': " + e.what());
  }
  return set;
}

inline nlohmann::json run_select(RunContext& ctx) {
  const auto& cfg = ctx.config;
  require_inputs(cfg, 1);
  CandidateSet set = load_candidate_manifest(cfg.inputs[0]);
  const auto triplets = all_triplets(static_cast<Index>(set.shape_ids.size()));
  const auto result = ctx.timer.time("select", [&] { return select_by_cycles(set, triplets, cfg.max_sweeps); });
  const auto j = to_json(result, set.shape_ids);
  ctx.out.write_json("selection.json", j);
  return {{"shape_ids", set.shape_ids}, {"selection_file", "selection.json"}, {"selection", j}};
}

inline nlohmann::json run_landscape(RunContext& ctx) {
  const auto& cfg = ctx.config;
  require_inputs(cfg, 1);
  const auto s = ctx.timer.time(
      "prepare", [&] { return prepare_shape(load_mesh(cfg.inputs[0]), shape_id(cfg.inputs[0]), cfg.exploration); });
  const auto m = static_cast<Index>(s.samples.size());
  // Maps act on sample indices; distances between samples come from the
  // sample cache restricted to sample columns.
  std::vector<Index> sample_ids(static_cast<std::size_t>(m));
  std::iota(sample_ids.begin(), sample_ids.end(), Index{0});
  const Eigen::MatrixXd dss = s.sample_geo.matrix()(Eigen::all, s.samples);
  const GeodesicCache geo(sample_ids, 0.5 * (dss + dss.transpose()));

  MapEnsemble ens;
  ctx.timer.time("maps", [&] {
    if (!cfg.map_files.empty()) {
      // Loaded vertex maps are restricted to the samples and snapped to the
      // geodesically nearest sample.
      for (const auto& f : cfg.map_files) {
        const PointwiseMap dense = load_pointwise(f);
        if (dense.domain_size() != s.mesh.num_vertices() || dense.codomain_size() != s.mesh.num_vertices())
          throw Error(ErrorCode::DimensionMismatch, "analysis/landscape", "'" + f.string() + "' is not a self-map");
        std::vector<Index> t(static_cast<std::size_t>(m));
        for (Index i = 0; i < m; ++i) s.sample_geo.matrix().col(dense[s.samples[static_cast<std::size_t>(i)]]).minCoeff(&t[static_cast<std::size_t>(i)]);
        ens.maps.emplace_back(std::move(t), m);
        ens.labels.push_back(shape_id(f));
      }
    } else {
      ens = random_maps(m, m, cfg.landscape.random_count, cfg.landscape.seed);
      if (cfg.landscape.refine) {
        RefineConfig rc = cfg.refine;
        rc.k_final = std::min({rc.k_final, s.sampled.size(), m});
        rc.k_init = std::min(rc.k_init, rc.k_final);
        parallel_for(
            ens.maps.size(), [&](std::size_t i) { ens.maps[i] = zoomout(ens.maps[i], s.sampled, s.sampled, rc); },
            cfg.exploration.workers);
      }
    }
    return 0;
  });
  std::vector<double> distortion(ens.maps.size());
  const auto dist = ctx.timer.time("distances", [&] {
    parallel_for(
        ens.maps.size(), [&](std::size_t i) { distortion[i] = geodesic_distortion(ens.maps[i], geo, geo, sample_ids); },
        cfg.exploration.workers);
    return ensemble_distances(ens, geo, cfg.exploration.workers);
  });
  auto land = ctx.timer.time("embed", [&] { return mds_embed(dist.mean); });
  const Index k = std::min<Index>(cfg.landscape.clusters, static_cast<Index>(ens.maps.size()));
  land.cluster_ids = kmeans(land.coordinates, k, cfg.landscape.seed);
  const double sil = silhouette(land.coordinates, *land.cluster_ids);

  std::ostringstream csv;
  write_landscape_csv(csv, land, ens.labels, distortion);
  ctx.out.write("landscape.csv", csv.str());
  auto matrix_csv = [](const Eigen::MatrixXd& d) {
    std::ostringstream o;
    o.precision(10);
    for (Index i = 0; i < d.rows(); ++i)
      for (Index j = 0; j < d.cols(); ++j) o << d(i, j) << (j + 1 < d.cols() ? ',' : '\n');
    return o.str();
  };
  ctx.out.write("distances_mean.csv", matrix_csv(dist.mean));
  ctx.out.write("distances_max.csv", matrix_csv(dist.max));
  std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
  for (Index id : *land.cluster_ids) ++sizes[static_cast<std::size_t>(id)];
  note(ctx.log, cfg, 0,
       "landscape: " + std::to_string(ens.maps.size()) + " maps, stress " + std::to_string(land.stress) +
           ", silhouette " + std::to_string(sil));
  return {{"shape_ids", {s.id}},
          {"landscape_file", "landscape.csv"},
          {"distance_files", {{"mean", "distances_mean.csv"}, {"max", "distances_max.csv"}}},
          {"map_count", ens.maps.size()},
          {"samples", m},
          {"stress", land.stress},
          {"silhouette", sil},
          {"cluster_sizes", sizes}};
}

}  // namespace detail

struct RunManifest {
  nlohmann::json content;
  nlohmann::json timing;
};

/// Runs one subcommand and writes its artifacts. On error the partial
/// artifacts are removed before the error propagates.
inline RunManifest run(const RunConfig& config, std::ostream* log = nullptr) {
  config.validate();
  for (const auto& p : config.inputs) detail::require_file(p);
  if (config.ground_truth) detail::require_file(*config.ground_truth);
  if (config.initial_map) detail::require_file(*config.initial_map);
  for (const auto& p : config.map_files) detail::require_file(p);
  if (config.mode == RunMode::Refine && !config.initial_map)
    throw Error(ErrorCode::InvalidArgument, "cli_io/run", "refine needs an initial map");

  OutputDir out(config.output_dir);
  PhaseTimer timer;
  RunContext ctx{config, out, timer, log};
  try {
    nlohmann::json body;
    switch (config.mode) {
      case RunMode::Pair: body = detail::run_pair(ctx); break;
      case RunMode::SelfSym: body = detail::run_selfsym(ctx); break;
      case RunMode::Components: body = detail::run_components(ctx); break;
      case RunMode::Refine: body = detail::run_refine(ctx); break;
      case RunMode::Metrics: body = detail::run_metrics(ctx); break;
      case RunMode::Select: body = detail::run_select(ctx); break;
      case RunMode::Landscape: body = detail::run_landscape(ctx); break;
    }
    std::vector<std::string> inputs;
    for (const auto& p : config.inputs) inputs.push_back(p.string());
    RunManifest manifest;
    manifest.content = {{"status", "ok"},
                        {"mode", to_string(config.mode)},
                        {"inputs", inputs},
                        {"config", config_to_json(config)},
                        {"timing_file", "timing.json"}};
    if (config.ground_truth) manifest.content["ground_truth"] = config.ground_truth->string();
    manifest.content.update(body);
    manifest.timing = timer.to_json();
    out.write_json("timing.json", manifest.timing);
    out.write_json("manifest.json", manifest.content);
    return manifest;
  } catch (...) {
    out.rollback();
    throw;
  }
}

/// Records a failed run: a manifest holding only the error.
inline void write_failure_manifest(const RunConfig& config, const Error& e) {
  std::error_code ec;
  std::filesystem::create_directories(config.output_dir, ec);
  std::ofstream out(config.output_dir / "manifest.json");
  if (!out) return;
  const nlohmann::json j{{"status", "failed"},
                         {"mode", to_string(config.mode)},
                         {"error",
                          {{"code", to_string(e.code())},
                           {"where", e.where()},
                           {"message", e.detail()},
                           {"exit_code", exit_code(e.code())}}}};
  out << j.dump(2) << "\n";
}

/// run() with errors turned into a failure manifest and an exit code.
inline int execute(const RunConfig& config, std::ostream& log, std::ostream& err) {
  try {
    run(config, &log);
    return 0;
  } catch (const Error& e) {
    err << "maptree: " << e.what() << '\n';
    write_failure_manifest(config, e);
    return exit_code(e.code());
  }
}

}  // namespace maptree
