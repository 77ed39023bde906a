#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "maptree/error.hpp"
#include "maptree/map_tree.hpp"
#include "maptree/refine.hpp"
#include "maptree/select.hpp"

namespace maptree {

enum class RunMode { Pair, SelfSym, Components, Refine, Metrics, Select, Landscape };

/// Subcommand name of a mode; pair mode is spelled "explore" on the command line.
inline std::string_view to_string(RunMode m) {
  switch (m) {
    case RunMode::Pair: return "explore";
    case RunMode::SelfSym: return "selfsym";
    case RunMode::Components: return "components";
    case RunMode::Refine: return "refine";
    case RunMode::Metrics: return "metrics";
    case RunMode::Select: return "select";
    case RunMode::Landscape: return "landscape";
  }
  return "unknown";
}

struct LandscapeOptions {
  Index random_count = 1000;
  Index clusters = 2;
  std::size_t seed = 1;
  /// Refine random maps with plain zoomout before embedding.
  bool refine = true;
};

struct RunConfig {
  RunMode mode = RunMode::Pair;
  ExplorationConfig exploration;
  RefineConfig refine;
  LandscapeOptions landscape;
  RegionOptions region;
  double symmetry_threshold = 0.02;
  Index max_sweeps = 5;

  std::vector<std::filesystem::path> inputs;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> ground_truth;
  std::optional<std::filesystem::path> initial_map;
  std::vector<std::filesystem::path> map_files;
  bool export_colors = false;
  Index verbosity = 0;

  /// Sample count and k_final are shared by exploration and refinement; the
  /// exploration values are authoritative.
  void sync() {
    refine.k_final = exploration.k_final;
    refine.sample_count = exploration.sample_count;
  }

  void validate() const {
    exploration.validate();
    const char* where = "cli_io/config";
    if (refine.k_init < 1 || refine.k_step < 1) throw Error(ErrorCode::InvalidArgument, where, "k_init and k_step must be >= 1");
    if (landscape.random_count < 1) throw Error(ErrorCode::InvalidArgument, where, "random_count must be >= 1");
    if (landscape.clusters < 1) throw Error(ErrorCode::InvalidArgument, where, "clusters must be >= 1");
    if (max_sweeps < 1) throw Error(ErrorCode::InvalidArgument, where, "max_sweeps must be >= 1");
    if (!(symmetry_threshold >= 0)) throw Error(ErrorCode::InvalidArgument, where, "symmetry_threshold must be >= 0");
  }
};

/// Numeric and boolean settings that may come from a flag or a JSON config
/// file. The flag spelling is the name with '_' replaced by '-'.
struct Setting {
  std::string name;
  std::variant<double*, Index*, std::size_t*, bool*> target;
  std::string help;
};

inline std::vector<Setting> settings(RunConfig& c) {
  auto& e = c.exploration;
  return {
      {"epsilon_group", &e.epsilon_group, "eigenvalue grouping tolerance"},
      {"epsilon_ortho", &e.epsilon_ortho, "orthogonality pruning threshold"},
      {"epsilon_lapcomm", &e.epsilon_lapcomm, "Laplacian commutativity pruning threshold"},
      {"kappa", &e.kappa, "largest fmap size explored"},
      {"max_group_size", &e.max_group_size, "largest eigenvalue group enumerated exhaustively"},
      {"dedup_agreement", &e.dedup_agreement, "fraction of agreeing vertices at which two maps are duplicates"},
      {"refine_budget", &e.refine_budget, "refinement steps per tree node"},
      {"dense_polish", &e.dense_polish, "full-domain zoomout passes per output map"},
      {"samples", &e.sample_count, "farthest-point samples per shape"},
      {"max_leaves", &e.max_leaves, "live-leaf budget of the exploration"},
      {"k_final", &e.k_final, "spectral size of the final refinement"},
      {"normalize_ortho", &e.normalize_ortho, "gate on E_ortho divided by the fmap size"},
      {"workers", &e.workers, "worker threads (0 = logical cores)"},
      {"k_init", &c.refine.k_init, "starting spectral size of refinement"},
      {"k_step", &c.refine.k_step, "spectral size increment of refinement"},
      {"random_count", &c.landscape.random_count, "random maps in a landscape"},
      {"clusters", &c.landscape.clusters, "k-means clusters in a landscape"},
      {"seed", &c.landscape.seed, "random seed of the landscape"},
      {"refine_random", &c.landscape.refine, "zoomout-refine random landscape maps"},
      {"symmetry_threshold", &c.symmetry_threshold, "mean displacement below which no symmetry is reported"},
      {"round_trip_threshold", &c.region.round_trip_threshold, "round-trip error bound of the symmetric region"},
      {"ring_factor", &c.region.ring_factor, "edge-length multiple of the region consistency test"},
      {"max_sweeps", &c.max_sweeps, "coordinate-descent sweeps of the cycle selection"},
  };
}

namespace detail {

inline std::string flag_name(const std::string& name) {
  std::string f = name;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

template <class T>
void assign_text(T* target, const std::string& text, const std::string& name) {
  const auto fail = [&] {
    throw Error(ErrorCode::TypeError, "cli_io/parse_config", "flag " + flag_name(name) + " got '" + text + "'");
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text.empty())
      *target = true;
    else if (text == "false" || text == "0")
      *target = false;
    else
      fail();
  } else {
    if constexpr (std::is_unsigned_v<T>)
      if (!text.empty() && text.front() == '-') fail();
    T value{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size()) fail();
    *target = value;
  }
}

template <class T>
void assign_json(T* target, const nlohmann::json& value, const std::string& name) {
  const auto fail = [&] {
    throw Error(ErrorCode::TypeError, "cli_io/parse_config",
                "config key '" + name + "' has type " + std::string(value.type_name()));
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!value.is_boolean()) fail();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!value.is_number()) fail();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!value.is_number_unsigned()) fail();
  } else {
    if (!value.is_number_integer()) fail();
  }
  *target = value.get<T>();
}

}  // namespace detail

/// Applies a JSON object of settings; keys use the underscore spelling.
inline void apply_config_json(RunConfig& config, const nlohmann::json& j) {
  const char* where = "cli_io/parse_config";
  if (!j.is_object()) throw Error(ErrorCode::TypeError, where, "config file must hold a JSON object");
  auto table = settings(config);
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(table.begin(), table.end(), [&](const Setting& s) { return s.name == key; });
    if (it == table.end()) throw Error(ErrorCode::UnknownFlag, where, "unknown config key '" + key + "'");
    std::visit([&](auto* target) { detail::assign_json(target, value, key); }, it->target);
  }
}

inline nlohmann::json config_to_json(RunConfig config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : settings(config)) std::visit([&](auto* target) { j[s.name] = *target; }, s.target);
  return j;
}

struct ParsedArgs {
  std::optional<RunConfig> config;  // empty when help was requested
  std::string help;
};

/// Parses `args` (without the program name): a subcommand, its positional
/// inputs, and settings. Precedence is flag, then --config file, then default.
inline ParsedArgs parse_config(std::vector<std::string> args) {
  const char* where = "cli_io/parse_config";
  RunConfig config;
  CLI::App app{"Spectral map-tree exploration of shape correspondences", "maptree"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::string output = config.output_dir.string();
  std::string ground_truth, initial_map;
  std::vector<std::string> map_files;
  app.add_option("--config", config_file, "JSON file of settings")->type_name("FILE");
  app.add_option("-o,--output", output, "output directory")->type_name("DIR");
  app.add_flag("-v,--verbose", config.verbosity, "more logging; repeat for more")->type_name("");
  app.add_flag("--export-colors", config.export_colors, "write coordinate-colored PLY files per map");

  auto table = settings(config);
  std::vector<std::string> texts(table.size());
  std::vector<CLI::Option*> options(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const bool is_flag = std::holds_alternative<bool*>(table[i].target);
    if (is_flag) {
      options[i] = app.add_flag(detail::flag_name(table[i].name), texts[i], table[i].help);
    } else {
      const bool real = std::holds_alternative<double*>(table[i].target);
      options[i] = app.add_option(detail::flag_name(table[i].name), texts[i], table[i].help)->type_name(real ? "REAL" : "INT");
    }
  }

  struct Sub {
    RunMode mode;
    const char* name;
    const char* help;
    std::vector<const char*> positional;
  };
  const std::vector<Sub> subs{
      {RunMode::Pair, "explore", "explore maps between two shapes", {"mesh1", "mesh2"}},
      {RunMode::SelfSym, "selfsym", "self-symmetries of one shape", {"mesh"}},
      {RunMode::Components, "components", "split a mesh into components and map all of them", {"mesh"}},
      {RunMode::Refine, "refine", "bijective zoomout from an initial map", {"mesh1", "mesh2"}},
      {RunMode::Metrics, "metrics", "quality report of a map", {"mesh1", "mesh2", "map"}},
      {RunMode::Select, "select", "cycle-consistent selection from a candidate manifest", {"manifest"}},
      {RunMode::Landscape, "landscape", "MDS landscape of a map collection", {"mesh"}},
  };
  std::vector<std::vector<std::string>> positional(subs.size());
  std::vector<CLI::App*> commands;
  for (std::size_t s = 0; s < subs.size(); ++s) {
    auto* cmd = app.add_subcommand(subs[s].name, subs[s].help);
    positional[s].resize(subs[s].positional.size());
    for (std::size_t p = 0; p < subs[s].positional.size(); ++p)
      cmd->add_option(subs[s].positional[p], positional[s][p], subs[s].positional[p])->required();
    if (subs[s].mode == RunMode::Pair || subs[s].mode == RunMode::Metrics || subs[s].mode == RunMode::Refine)
      cmd->add_option("--gt", ground_truth, "ground-truth vertex map from mesh1 to mesh2");
    if (subs[s].mode == RunMode::Refine) cmd->add_option("--init", initial_map, "initial vertex map")->required();
    if (subs[s].mode == RunMode::Landscape) cmd->add_option("--maps", map_files, "vertex self-maps instead of random maps");
    commands.push_back(cmd);
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    return {std::nullopt, app.help()};
  } catch (const CLI::CallForAllHelp&) {
    return {std::nullopt, app.help("", CLI::AppFormatMode::All)};
  } catch (const CLI::ExtrasError& e) {
    throw Error(ErrorCode::UnknownFlag, where, e.what());
  } catch (const CLI::ConversionError& e) {
    throw Error(ErrorCode::TypeError, where, e.what());
  } catch (const CLI::ParseError& e) {
    throw Error(ErrorCode::InvalidArgument, where, e.what());
  }

  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw Error(ErrorCode::IoError, where, "cannot open config file '" + config_file + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, where, "config file '" + config_file + "': " + e.what());
    }
    apply_config_json(config, j);
  }
  for (std::size_t i = 0; i < table.size(); ++i)
    if (options[i]->count() > 0)
      std::visit([&](auto* target) { detail::assign_text(target, texts[i], table[i].name); }, table[i].target);

  for (std::size_t s = 0; s < subs.size(); ++s)
    if (commands[s]->parsed()) {
      config.mode = subs[s].mode;
      for (const auto& p : positional[s]) config.inputs.emplace_back(p);
    }
  config.output_dir = output;
  if (!ground_truth.empty()) config.ground_truth = ground_truth;
  if (!initial_map.empty()) config.initial_map = initial_map;
  for (const auto& m : map_files) config.map_files.emplace_back(m);
  config.sync();
  config.validate();
  return {config, {}};
}

}  // namespace maptree
