#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "layoutforge/optimizer.hpp"
#include "layoutforge/plausibility.hpp"
#include "layoutforge/scene_model.hpp"

namespace layoutforge::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kQualityFailure = 1, kEnvironmentFailure = 2 };

/// Everything one invocation needs after config and flags are merged.
struct RunConfig {
  std::filesystem::path bundle;
  std::filesystem::path out;
  OptimConfig optim;
  PlausibilityOptions metrics;
  AblationMode mode = AblationMode::kFull;
};

/// Flag values; unset ones fall back to the config file, then to defaults.
struct Overrides {
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_iters_alignment, max_iters_physics, sdf_resolution;
  std::optional<double> eta_s, eta_yaw, eta_t, convergence_tol, tau;
  std::optional<std::size_t> n_surface, m_pairs;
  std::optional<double> agent_radius, cell, contact_tol;
  std::optional<std::string> sdf_cache;
};

namespace detail {

class ConfigError : public Error {
 public:
  using Error::Error;
};

template <typename T>
T typed(const nlohmann::json& j, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ConfigError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (j.get<long long>() < 0) throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ConfigError("");
    } else {
      if (!j.is_string()) throw ConfigError("");
    }
    return j.get<T>();
  } catch (const ConfigError&) {
    throw ConfigError("config: '" + key + "' has the wrong type");
  }
}

/// Applies a config document onto `rc`; unknown keys are errors.
inline void apply_config(const nlohmann::json& doc, RunConfig& rc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  auto& o = rc.optim;
  for (const auto& [key, v] : doc.items()) {
    if (key == "mode") rc.mode = parse_mode(typed<std::string>(v, key));
    else if (key == "seed") o.seed = typed<std::uint64_t>(v, key);
    else if (key == "max_iters_alignment") o.max_iters_alignment = typed<int>(v, key);
    else if (key == "max_iters_physics") o.max_iters_physics = typed<int>(v, key);
    else if (key == "eta_s") o.eta_s = typed<double>(v, key);
    else if (key == "eta_yaw") o.eta_yaw = typed<double>(v, key);
    else if (key == "eta_t") o.eta_t = typed<double>(v, key);
    else if (key == "max_step_t") o.max_step_t = typed<double>(v, key);
    else if (key == "max_step_s") o.max_step_s = typed<double>(v, key);
    else if (key == "max_step_yaw") o.max_step_yaw = typed<double>(v, key);
    else if (key == "convergence_tol") o.convergence_tol = typed<double>(v, key);
    else if (key == "n_surface") o.n_surface = typed<std::size_t>(v, key);
    else if (key == "m_pairs") o.m_pairs = typed<std::size_t>(v, key);
    else if (key == "tau") o.tau = typed<double>(v, key);
    else if (key == "sdf_resolution") o.sdf_resolution = typed<int>(v, key);
    else if (key == "bottom_k") o.bottom_k = typed<std::size_t>(v, key);
    else if (key == "feature_probes") o.feature_probes = typed<bool>(v, key);
    else if (key == "sdf_cache") o.sdf_cache_dir = typed<std::string>(v, key);
    else if (key == "agent_radius") rc.metrics.agent_radius = typed<double>(v, key);
    else if (key == "cell") rc.metrics.cell = typed<double>(v, key);
    else if (key == "contact_tol") rc.metrics.contact_tol = typed<double>(v, key);
    else if (key == "weights") {
      if (!v.is_object()) throw ConfigError("config: 'weights' must be an object");
      for (const auto& [wk, wv] : v.items()) {
        const std::string k = "weights." + wk;
        if (wk == "pose") o.weights.pose = typed<double>(wv, k);
        else if (wk == "two_d") o.weights.two_d = typed<double>(wv, k);
        else if (wk == "three_d") o.weights.three_d = typed<double>(wv, k);
        else if (wk == "trans") o.weights.trans = typed<double>(wv, k);
        else if (wk == "scale") o.weights.scale = typed<double>(wv, k);
        else if (wk == "stab") o.weights.stab = typed<double>(wv, k);
        else throw ConfigError("config: unknown key '" + k + "'");
      }
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
}

inline void apply_overrides(const Overrides& f, RunConfig& rc) {
  auto& o = rc.optim;
  if (f.mode) rc.mode = parse_mode(*f.mode);
  if (f.seed) o.seed = *f.seed;
  if (f.max_iters_alignment) o.max_iters_alignment = *f.max_iters_alignment;
  if (f.max_iters_physics) o.max_iters_physics = *f.max_iters_physics;
  if (f.sdf_resolution) o.sdf_resolution = *f.sdf_resolution;
  if (f.eta_s) o.eta_s = *f.eta_s;
  if (f.eta_yaw) o.eta_yaw = *f.eta_yaw;
  if (f.eta_t) o.eta_t = *f.eta_t;
  if (f.convergence_tol) o.convergence_tol = *f.convergence_tol;
  if (f.tau) o.tau = *f.tau;
  if (f.n_surface) o.n_surface = *f.n_surface;
  if (f.m_pairs) o.m_pairs = *f.m_pairs;
  if (f.sdf_cache) o.sdf_cache_dir = *f.sdf_cache;
  if (f.agent_radius) rc.metrics.agent_radius = *f.agent_radius;
  if (f.cell) rc.metrics.cell = *f.cell;
  if (f.contact_tol) rc.metrics.contact_tol = *f.contact_tol;
}

inline void check_metrics(const PlausibilityOptions& m) {
  if (!(m.agent_radius > 0.0)) throw ConfigError("config: agent_radius must be > 0");
  if (!(m.cell > 0.0) || m.cell > m.agent_radius) throw ConfigError("config: need 0 < cell <= agent_radius");
  if (m.contact_tol && !(*m.contact_tol > 0.0)) throw ConfigError("config: contact_tol must be > 0");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline void require_file(const std::filesystem::path& p) {
  if (!std::filesystem::is_regular_file(p)) throw IoError("cannot open bundle '" + p.string() + "'");
}

}  // namespace detail

inline int cmd_validate(const std::filesystem::path& bundle_path, std::ostream& out) {
  detail::require_file(bundle_path);
  std::ifstream in(bundle_path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    out << "parse error: " << e.what() << '\n';
    return kQualityFailure;
  }
  const SceneBundle b = parse_bundle(doc, bundle_path.parent_path());
  const auto violations = validate_bundle(b);
  for (const auto& v : violations) out << v.to_string() << '\n';
  return violations.empty() ? kOk : kQualityFailure;
}

inline int cmd_report(const RunConfig& rc, std::ostream& out) {
  detail::require_file(rc.bundle);
  const SceneBundle b = load_bundle(rc.bundle);
  const PlausibilityReport r = plausibility_report(b, rc.metrics);
  const auto path = rc.out.empty() ? std::filesystem::path("report.json") : rc.out;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::write_json(path, report_to_json(r));
  out << "col_o " << r.col_o << " col_s " << r.col_s << " inst_o " << r.inst_o << " inst_s " << r.inst_s << " reach "
      << r.reach << " walk " << r.walk << '\n';
  return kOk;
}

inline int cmd_optimize(const RunConfig& rc, std::ostream& out) {
  if (rc.out.empty()) throw detail::ConfigError("optimize: --out is required");
  detail::require_file(rc.bundle);
  const SceneBundle b = load_bundle(rc.bundle);
  std::filesystem::create_directories(rc.out);
  SceneResult res = optimize_scene(b, rc.optim, rc.mode);
  save_bundle(res.bundle, rc.out / "scene.out.json");
  {
    std::ofstream trace(rc.out / "trace.ndjson");
    if (!trace) throw IoError("cannot write trace in '" + rc.out.string() + "'");
    write_trace_ndjson(trace, res.trace);
  }
  PlausibilityReport r = plausibility_report(res.bundle, rc.metrics);
  for (const auto& d : res.trace.nodes) {
    if (d.aborted) r.diagnostics.push_back("aborted " + d.node + ": " + d.message);
  }
  auto j = report_to_json(r);
  j["mode"] = std::string(to_string(rc.mode));
  j["seed"] = rc.optim.seed;
  detail::write_json(rc.out / "report.json", j);
  for (const auto& d : res.trace.nodes) {
    if (d.aborted) out << "aborted " << d.node << ": " << d.message << '\n';
  }
  out << "col_o " << r.col_o << " inst_o " << r.inst_o << " reach " << r.reach << " walk " << r.walk << '\n';
  return kOk;
}

/// Writes every posed mesh into one OBJ with a `g <id>` group per node.
inline int cmd_export(const RunConfig& rc, std::ostream& out) {
  if (rc.out.empty()) throw detail::ConfigError("export: --out is required");
  detail::require_file(rc.bundle);
  const SceneBundle b = load_bundle(rc.bundle);
  if (rc.out.has_parent_path()) std::filesystem::create_directories(rc.out.parent_path());
  std::ofstream obj(rc.out);
  if (!obj) throw IoError("cannot write '" + rc.out.string() + "'");
  obj.precision(17);
  std::size_t base = 1;
  for (const auto& n : b.graph.nodes) {
    const TriangleMesh m = apply_pose(b.mesh_of(n), n.pose);
    obj << "g " << n.id << '\n';
    for (const auto& v : m.vertices) obj << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& f : m.faces) obj << "f " << f[0] + base << ' ' << f[1] + base << ' ' << f[2] + base << '\n';
    base += m.vertices.size();
  }
  if (!obj) throw IoError("short write to '" + rc.out.string() + "'");
  out << "exported " << b.graph.nodes.size() << " objects to " << rc.out.string() << '\n';
  return kOk;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Physics-aware scene layout refinement and plausibility metrics", "layoutforge"};
  app.require_subcommand(1);
  std::string bundle, out_path, config_path;
  Overrides ov;

  auto add_metric_flags = [&](CLI::App* sub) {
    sub->add_option("--agent-radius", ov.agent_radius, "Agent radius in meters (0.25)");
    sub->add_option("--cell", ov.cell, "Occupancy cell size in meters (0.05)");
    sub->add_option("--contact-tol", ov.contact_tol, "Stability contact tolerance in meters (grid spacing)");
  };

  auto* validate = app.add_subcommand("validate", "Check a scene bundle against the data-model rules");
  validate->add_option("--bundle", bundle, "Scene bundle JSON")->required();

  auto* optimize = app.add_subcommand("optimize", "Refine all poses and write scene, trace and report");
  optimize->add_option("--bundle", bundle, "Scene bundle JSON")->required();
  optimize->add_option("--out", out_path, "Output directory")->required();
  optimize->add_option("--config", config_path, "JSON config (flags take precedence)");
  optimize->add_option("--mode", ov.mode, "raw|pose|collision|full");
  optimize->add_option("--seed", ov.seed, "Sampling seed");
  optimize->add_option("--max-iters-alignment", ov.max_iters_alignment);
  optimize->add_option("--max-iters-physics", ov.max_iters_physics);
  optimize->add_option("--eta-s", ov.eta_s);
  optimize->add_option("--eta-yaw", ov.eta_yaw);
  optimize->add_option("--eta-t", ov.eta_t);
  optimize->add_option("--convergence-tol", ov.convergence_tol);
  optimize->add_option("--n-surface", ov.n_surface);
  optimize->add_option("--m-pairs", ov.m_pairs);
  optimize->add_option("--tau", ov.tau);
  optimize->add_option("--sdf-resolution", ov.sdf_resolution);
  optimize->add_option("--sdf-cache", ov.sdf_cache, "Directory for cached object grids");
  add_metric_flags(optimize);

  auto* report = app.add_subcommand("report", "Compute plausibility metrics without optimizing");
  report->add_option("--bundle", bundle, "Scene bundle JSON")->required();
  report->add_option("--out", out_path, "Report file (report.json)");
  report->add_option("--config", config_path, "JSON config (flags take precedence)");
  add_metric_flags(report);

  auto* exporter = app.add_subcommand("export", "Write all posed meshes into one OBJ");
  exporter->add_option("--bundle", bundle, "Scene bundle JSON")->required();
  exporter->add_option("--out", out_path, "Output OBJ file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kEnvironmentFailure;
  }

  try {
    RunConfig rc;
    rc.bundle = bundle;
    rc.out = out_path;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config '" + config_path + "'");
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw detail::ConfigError(std::string("config: ") + e.what());
      }
      detail::apply_config(doc, rc);
    }
    detail::apply_overrides(ov, rc);
    if (const auto e = rc.optim.check(); !e.empty()) throw detail::ConfigError("config: " + e);
    detail::check_metrics(rc.metrics);

    if (validate->parsed()) return cmd_validate(rc.bundle, out);
    if (optimize->parsed()) return cmd_optimize(rc, out);
    if (report->parsed()) return cmd_report(rc, out);
    return cmd_export(rc, out);
  } catch (const ValidationError& e) {
    out << e.rule() << ": " << e.subject() << '\n';
    return kQualityFailure;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kQualityFailure;
  } catch (const detail::ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kEnvironmentFailure;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return kEnvironmentFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kEnvironmentFailure;
  }
}

}  // namespace layoutforge::cli
