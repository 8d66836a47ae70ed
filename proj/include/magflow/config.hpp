#ifndef MAGFLOW_CONFIG_HPP
#define MAGFLOW_CONFIG_HPP

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "magflow/leafwise.hpp"
#include "magflow/mane.hpp"
#include "magflow/morse.hpp"

namespace magflow {

inline constexpr const char* tool_name = "magflow";
inline constexpr const char* tool_version = "0.1.0";

using Json = nlohmann::json;

/**
 * Run configuration shared by every command: the model table, the energy
 * level, homotopy classes, grid size, and a seed. Command-specific parameters
 * stay in `raw` and are read through the section helpers, so one config file
 * can drive several commands. The hash covers the whole file, canonically
 * serialized (sorted keys), and is embedded in every report.
 */
struct RunConfig {
  ManifoldModel model;
  double k = 0.5;
  std::vector<HomotopyClass> classes;
  int n = 64;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  Json raw;
  std::uint64_t hash = 0;

  Json section(const std::string& name) const {
    if (raw.contains(name)) {
      if (!raw[name].is_object())
        throw ConfigError("config section '" + name + "' must be an object");
      return raw[name];
    }
    return Json::object();
  }

  double tolerance(const std::string& name, double fallback) const {
    if (!raw.contains("tolerances")) return fallback;
    const Json& tols = raw["tolerances"];
    if (!tols.contains(name)) return fallback;
    return tols[name].get<double>();
  }
};

namespace detail {

inline double require_number(const Json& j, const std::string& what) {
  if (!j.is_number()) throw ConfigError(what + " must be a number");
  return j.get<double>();
}

}  // namespace detail

inline FourierTable2 parse_modes(const Json& j, const std::string& what) {
  FourierTable2 t;
  if (j.is_null()) return t;
  if (!j.is_array()) throw ConfigError(what + " must be an array of [kx, ky, re, im]");
  for (const Json& row : j) {
    if (!row.is_array() || row.size() != 4)
      throw ConfigError(what + " rows must be [kx, ky, re, im]");
    if (!row[0].is_number_integer() || !row[1].is_number_integer())
      throw ConfigError(what + " wave numbers must be integers");
    t.add(row[0].get<int>(), row[1].get<int>(),
          detail::require_number(row[2], what + " re"),
          detail::require_number(row[3], what + " im"));
  }
  return t;
}

inline Json dump_modes(const FourierTable2& t) {
  Json j = Json::array();
  for (const auto& m : t.modes()) j.push_back({m.kx, m.ky, m.re, m.im});
  return j;
}

inline ManifoldModel parse_model(const Json& j) {
  if (!j.is_object()) throw ConfigError("model must be an object");
  ManifoldModel m;
  if (j.contains("B")) m.B = detail::require_number(j["B"], "model.B");
  if (j.contains("phi")) m.phi = parse_modes(j["phi"], "model.phi");
  if (j.contains("U")) m.U = parse_modes(j["U"], "model.U");
  if (j.contains("theta_x")) m.theta_x = parse_modes(j["theta_x"], "model.theta_x");
  if (j.contains("theta_y")) m.theta_y = parse_modes(j["theta_y"], "model.theta_y");
  return m;
}

inline Json dump_model(const ManifoldModel& m) {
  return Json{{"B", m.B},
              {"phi", dump_modes(m.phi)},
              {"U", dump_modes(m.U)},
              {"theta_x", dump_modes(m.theta_x)},
              {"theta_y", dump_modes(m.theta_y)}};
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  RunConfig cfg;
  try {
    cfg.raw = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!cfg.raw.is_object()) throw ConfigError("config root must be an object");
  cfg.hash = fnv1a(cfg.raw.dump());

  if (cfg.raw.contains("model")) cfg.model = parse_model(cfg.raw["model"]);
  if (cfg.raw.contains("k")) cfg.k = detail::require_number(cfg.raw["k"], "k");
  if (!std::isfinite(cfg.k)) throw ConfigError("k must be finite");

  if (cfg.raw.contains("n")) {
    if (!cfg.raw["n"].is_number_integer()) throw ConfigError("n must be an integer");
    cfg.n = cfg.raw["n"].get<int>();
  }
  if (cfg.n < 16 || cfg.n % 2 != 0)
    throw ConfigError("grid n must be an even integer of at least 16");

  if (cfg.raw.contains("seed")) {
    if (!cfg.raw["seed"].is_number_unsigned() && !cfg.raw["seed"].is_number_integer())
      throw ConfigError("seed must be a nonnegative integer");
    const std::int64_t s = cfg.raw["seed"].get<std::int64_t>();
    if (s < 0) throw ConfigError("seed must be a nonnegative integer");
    cfg.seed = static_cast<std::uint64_t>(s);
  }

  if (cfg.raw.contains("classes")) {
    if (!cfg.raw["classes"].is_array()) throw ConfigError("classes must be an array");
    for (const Json& c : cfg.raw["classes"]) {
      if (!c.is_array() || c.size() != 2 || !c[0].is_number_integer() ||
          !c[1].is_number_integer())
        throw ConfigError("each class must be an integer pair [m1, m2]");
      cfg.classes.push_back({c[0].get<int>(), c[1].get<int>()});
    }
  }

  if (cfg.raw.contains("out_dir")) {
    if (!cfg.raw["out_dir"].is_string()) throw ConfigError("out_dir must be a string");
    cfg.out_dir = cfg.raw["out_dir"].get<std::string>();
  }

  if (cfg.raw.contains("tolerances")) {
    const Json& tols = cfg.raw["tolerances"];
    if (!tols.is_object()) throw ConfigError("tolerances must be an object");
    for (const auto& [key, val] : tols.items())
      if (!val.is_number() || !(val.get<double>() > 0.0))
        throw ConfigError("tolerance '" + key + "' must be positive");
  }
  return cfg;
}

inline std::string utc_timestamp() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/** Common report header; `generated_at` is the only nondeterministic field. */
inline Json report_envelope(const RunConfig& cfg) {
  Json j;
  j["tool"] = Json{{"name", tool_name}, {"version", tool_version}};
  j["config_hash"] = hash_hex(cfg.hash);
  j["seed"] = cfg.seed;
  j["generated_at"] = utc_timestamp();
  return j;
}

inline void write_json(const std::string& dir, const std::string& name, const Json& j) {
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / name);
  if (!out) throw ConfigError("cannot write report: " + dir + "/" + name);
  out << j.dump(2) << '\n';
}

inline Json class_json(HomotopyClass cls) { return Json{cls.m1, cls.m2}; }

inline Json orbit_json(const CriticalCircle& c) {
  return Json{{"class", class_json(c.orbit.loop.cls)},
              {"T", c.orbit.T},
              {"S", c.orbit.S},
              {"residual", c.orbit.residual},
              {"i", c.index.i},
              {"i_T", c.index.i_t},
              {"nullity", c.index.nullity},
              {"chi", c.chi}};
}

inline Json mane_json(const ManeBracket& b) {
  Json j{{"e0", b.e0},
         {"lower", b.lower},
         {"upper_is_infinite", b.upper_is_infinite},
         {"c0_lower", b.c0_lower},
         {"probed", b.probed},
         {"witnessed", b.witnessed}};
  if (b.upper_is_infinite) {
    j["upper"] = "inf";
    j["c0_upper"] = "inf";
  } else {
    j["upper"] = b.upper;
    j["c0_upper"] = b.c0_upper;
  }
  return j;
}

inline Json morse_json(const MorseComplex& mc) {
  Json gens = Json::array();
  for (const auto& g : mc.gens) {
    Json e{{"degree", g.degree}, {"action", g.action}, {"i_f", g.i_f}};
    if (g.circle >= 0)
      e["circle"] = g.circle;
    else
      e["at_infinity"] = Json{g.at_infinity.x(), g.at_infinity.y()};
    gens.push_back(e);
  }
  Json circles = Json::array();
  for (const auto& c : mc.circles) circles.push_back(orbit_json(c));
  Json boundary = Json::array();
  for (std::size_t d = 0; d < mc.boundary.size(); ++d) {
    const auto& block = mc.boundary[d];
    Json entries = Json::array();
    for (std::size_t r = 0; r < block.size(); ++r)
      for (std::size_t c = 0; c < block[r].size(); ++c)
        if (block[r][c]) entries.push_back({int(r), int(c)});
    boundary.push_back(Json{{"degree", int(d)},
                            {"rows", int(block.size())},
                            {"cols", int(block.empty() ? 0 : block[0].size())},
                            {"entries", entries}});
  }
  return Json{{"class", class_json(mc.cls)},
              {"k", mc.k},
              {"action_cap", mc.action_cap},
              {"n", mc.n},
              {"complete", mc.complete},
              {"d2_zero", mc.d2_zero},
              {"filtration_ok", mc.filtration_ok},
              {"fan_stable", mc.fan_stable},
              {"betti", mc.betti},
              {"generators", gens},
              {"circles", circles},
              {"boundary", boundary}};
}

inline Json leafwise_json(const LeafwiseWitness& w) {
  return Json{{"eta", w.eta},
              {"junction_point",
               Json{w.junction(0), w.junction(1), w.junction(2), w.junction(3)}},
              {"verification_distance", w.verification_distance},
              {"F_spec_hash", hash_hex(w.f_spec_hash)},
              {"verified", w.verified},
              {"residual", w.residual},
              {"newton_steps", w.newton_steps}};
}

inline Json flow_json(const FlowReport& r) {
  return Json{{"samples", int(r.samples.size())},
              {"monotone", r.monotone},
              {"energy_defect", r.energy_defect},
              {"energy_ok", r.energy_ok},
              {"eta_within", r.eta_within},
              {"exited_window", r.exited_window},
              {"blew_up", r.blew_up},
              {"step_underflow", r.step_underflow},
              {"final_action", r.samples.empty() ? 0.0 : r.samples.back().action},
              {"final_eta", r.final.eta}};
}

inline void write_flow_csv(const std::string& dir, const std::string& name,
                           const FlowReport& r) {
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / name);
  if (!out) throw ConfigError("cannot write flow series: " + dir + "/" + name);
  out << "s,A,eta,grad_norm,sup_p\n";
  out.precision(17);
  for (const auto& s : r.samples)
    out << s.s << ',' << s.action << ',' << s.eta << ',' << s.grad_norm << ','
        << s.sup_p << '\n';
}

}  // namespace magflow

#endif
