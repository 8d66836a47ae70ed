/**
 * Batch front-end. Grammar:
 *
 *   magflow <command> --config <path> [--out <dir>] [--seed <u64>] [--n <grid>]
 *
 * Commands: find-orbits, indices, mane, rf-flow, morse-homology, leafwise,
 * verify. Exit codes: 0 success, 2 config error, 3 nonconvergence,
 * 4 verification failure. TOOL_THREADS caps fan-out; every JSON report embeds
 * the config hash and tool version, and is byte-stable for a fixed
 * config+seed apart from the generated_at field.
 */

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "magflow/config.hpp"

namespace {

using namespace magflow;

struct CliArgs {
  std::string config_path;
  std::string out_override;
  std::optional<std::uint64_t> seed;
  std::optional<int> n;
};

RunConfig load_config(const CliArgs& args) {
  RunConfig cfg = parse_config(args.config_path);
  if (!args.out_override.empty()) cfg.out_dir = args.out_override;
  if (args.seed) cfg.seed = *args.seed;
  if (args.n) {
    if (*args.n < 16 || *args.n % 2 != 0)
      throw ConfigError("grid n must be an even integer of at least 16");
    cfg.n = *args.n;
  }
  return cfg;
}

/** Multistart closed-orbit search for one class; first clean limit wins. */
CriticalOrbit find_class_orbit(const ManifoldModel& m, double k, HomotopyClass cls,
                               int n) {
  const double t0 =
      std::max(1e-3, cls.vec().norm()) / std::sqrt(2.0 * std::max(k - u_min(m), 0.1));
  const Vector2d bases[] = {{0.0, 0.0}, {0.0, 0.5}, {0.5, 0.0}, {0.5, 0.5},
                            {0.25, 0.25}};
  for (const Vector2d& base : bases) {
    try {
      const CriticalOrbit cp = find_critical(m, k, straight_loop(cls, n, base), t0);
      if (cp.converged && cp.residual < 1e-8) return cp;
    } catch (const NonConvergence&) {
    }
  }
  throw NonConvergence("no closed orbit found for the requested class");
}

DiscreteLoop random_loop(Rng& rng, HomotopyClass cls, int n, double amp) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Vector2d base(0.5 * (u(rng) + 1.0), 0.5 * (u(rng) + 1.0));
  double a[2][3], b[2][3];
  for (int c = 0; c < 2; ++c)
    for (int m = 0; m < 3; ++m) {
      a[c][m] = amp * u(rng);
      b[c][m] = amp * u(rng);
    }
  return make_loop(cls, n, [&](double t) -> Vector2d {
    Vector2d q = base + t * cls.vec();
    for (int c = 0; c < 2; ++c)
      for (int m = 0; m < 3; ++m) {
        q(c) += a[c][m] * std::cos(two_pi * (m + 1) * t) +
                b[c][m] * std::sin(two_pi * (m + 1) * t);
      }
    return q;
  });
}

RabinowitzPoint random_point(Rng& rng, HomotopyClass cls, int n, double amp) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RabinowitzPoint x;
  x.q = random_loop(rng, cls, n, amp);
  x.p.resize(n, 2);
  const Vector2d p0(1.0 + 0.3 * u(rng), 0.3 * u(rng));
  for (int i = 0; i < n; ++i) {
    const double t = double(i) / n;
    x.p.row(i) = (p0 + amp * Vector2d(u(rng) * std::cos(two_pi * t),
                                      u(rng) * std::sin(two_pi * t)))
                     .transpose();
  }
  x.eta = 1.5 * u(rng);
  return x;
}

/** Constant on the level plus smooth low-mode noise: a bounded flow start. */
RabinowitzPoint noisy_constant(const ManifoldModel& m, double k, Rng& rng, int n,
                               double noise) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector2d q0;
  do {
    q0 = Vector2d(u01(rng), u01(rng));
  } while (!(k - m.U(q0) > 0.05));
  const double ang = two_pi * u01(rng);
  RabinowitzPoint x = constant_point(m, k, q0, n, {std::cos(ang), std::sin(ang)});
  double a[2], b[2], c_[2], d[2];
  for (int c = 0; c < 2; ++c) {
    a[c] = noise * u(rng);
    b[c] = noise * u(rng);
    c_[c] = noise * u(rng);
    d[c] = noise * u(rng);
  }
  for (int i = 0; i < n; ++i) {
    const double t = double(i) / n;
    for (int c = 0; c < 2; ++c) {
      x.q.q(i, c) += a[c] * std::cos(two_pi * t) + b[c] * std::sin(two_pi * t);
      x.p(i, c) += c_[c] * std::cos(two_pi * t) + d[c] * std::sin(two_pi * t);
    }
  }
  x.eta = 0.2 * u(rng);
  return x;
}

FlowOptions flow_options(const RunConfig& cfg, const Json& params, double* c0_out) {
  FlowOptions fo;
  fo.s_max = params.value("s_max", 2.0);
  // The energy identity is judged against a fixed bound, so the defaults sit
  // well below it: the trapezoid defect scales like rtol^(2/3) and saturates
  // at the atol floor.
  fo.rtol = params.value("rtol", 1e-9);
  fo.atol = params.value("atol", 1e-12);
  fo.h_max = params.value("h_max", fo.h_max);
  double lo = -2.0, hi = 2.0;
  if (params.contains("action_window")) {
    const Json& w = params["action_window"];
    if (!w.is_array() || w.size() != 2)
      throw ConfigError("flow.action_window must be [lo, hi]");
    lo = w[0].get<double>();
    hi = w[1].get<double>();
  }
  fo.action_window = std::make_pair(lo, hi);
  if (c0_out) *c0_out = 0.0;
  if (cfg.model.bounded_primitive_exists() && cfg.k > u_max(cfg.model)) {
    const double rho0 = params.value("rho0", 0.05);
    const EtaBounds eb = eta_bound_constants(cfg.model, cfg.k, rho0, lo, hi, 0.0);
    fo.c0 = eb.c0;
    if (c0_out) *c0_out = eb.c0;
  }
  return fo;
}

int run_find_orbits(const RunConfig& cfg) {
  if (cfg.classes.empty()) throw ConfigError("find-orbits needs a class list");
  const Json params = cfg.section("find");
  MorseOptions opt;
  opt.n = cfg.n;
  opt.seed_grid = params.value("seed_grid", 6);
  const double cap = params.value("action_cap", 3.0);

  Json report = report_envelope(cfg);
  Json orbits = Json::array();
  bool complete = true;
  int idx = 0;
  for (const HomotopyClass cls : cfg.classes) {
    const Enumeration en = enumerate_critical(cfg.model, cfg.k, cls, cap, opt);
    complete = complete && en.complete;
    for (const CriticalCircle& c : en.circles) {
      Json e = orbit_json(c);
      const std::string csv = "orbit_" + std::to_string(idx) + ".csv";
      std::filesystem::create_directories(cfg.out_dir);
      dump_loop_csv((std::filesystem::path(cfg.out_dir) / csv).string(), c.orbit.loop,
                    c.orbit.T);
      e["loop_csv"] = csv;
      orbits.push_back(e);
      ++idx;
    }
  }
  report["action_cap"] = cap;
  report["complete"] = complete;
  report["orbits"] = orbits;
  write_json(cfg.out_dir, "orbits.json", report);
  std::printf("find-orbits: %d orbit(s) under action cap %g\n", idx, cap);
  return 0;
}

int run_indices(const RunConfig& cfg) {
  if (cfg.classes.empty()) throw ConfigError("indices needs a class list");
  const Json params = cfg.section("find");
  MorseOptions opt;
  opt.n = cfg.n;
  const double cap = params.value("action_cap", 3.0);

  Json report = report_envelope(cfg);
  Json entries = Json::array();
  for (const HomotopyClass cls : cfg.classes) {
    const Enumeration en = enumerate_critical(cfg.model, cfg.k, cls, cap, opt);
    for (const CriticalCircle& c : en.circles) {
      const IndexReport ir = orbit_indices(cfg.model, c.orbit.loop, c.orbit.T);
      const int chi_cont =
          chi_by_continuation(cfg.model, cfg.k, c.orbit.loop, c.orbit.T);
      Json e = orbit_json(c);
      e["mu_cz"] = ir.mu_cz;
      e["mu_plus"] = ir.mu_plus;
      e["mu_minus"] = ir.mu_minus;
      e["transversal"] = ir.transversal;
      e["cz_nullity"] = ir.nullity;
      e["chi_block"] = ir.chi;
      e["chi_continuation"] = chi_cont;
      e["identity_i"] = (c.index.i == c.index.i_t + (1 - ir.chi) / 2);
      e["identity_mu_plus"] = (std::abs(ir.mu_plus - c.index.i) < 1e-9);
      e["identity_transversal"] = (ir.transversal == c.index.i_t);
      e["identity_chi"] = (ir.chi == chi_cont);
      entries.push_back(e);
    }
  }
  report["orbits"] = entries;
  write_json(cfg.out_dir, "indices.json", report);
  std::printf("indices: %d orbit(s) graded\n", int(entries.size()));
  return 0;
}

int run_mane(const RunConfig& cfg) {
  const Json params = cfg.section("mane");
  ManeOptions opt;
  opt.seed = cfg.seed;
  opt.gauge_budget = params.value("gauge_budget", opt.gauge_budget);
  opt.grid = params.value("grid", opt.grid);
  opt.loop_samples = params.value("loop_samples", opt.loop_samples);
  opt.bisect_tol = params.value("bisect_tol", opt.bisect_tol);

  const ManeBracket b = mane_bracket(cfg.model, opt);
  Json report = report_envelope(cfg);
  report["mane"] = mane_json(b);
  write_json(cfg.out_dir, "mane.json", report);
  if (b.upper_is_infinite)
    std::printf("mane: c = inf (no bounded primitive), lower bound %g\n", b.lower);
  else
    std::printf("mane: bracket [%g, %g], e0 = %g\n", b.lower, b.upper, b.e0);
  return 0;
}

int run_rf_flow(const RunConfig& cfg) {
  const Json params = cfg.section("flow");
  const int count = params.value("count", 20);
  if (count < 1) throw ConfigError("flow.count must be positive");
  const double noise = params.value("noise", 0.05);
  double c0 = 0.0;
  const FlowOptions fo = flow_options(cfg, params, &c0);

  // Seeds are drawn up front so the fan-out stays deterministic.
  Rng rng(cfg.seed);
  std::vector<RabinowitzPoint> starts;
  starts.reserve(count);
  for (int i = 0; i < count; ++i)
    starts.push_back(noisy_constant(cfg.model, cfg.k, rng, cfg.n, noise));

  std::vector<FlowReport> reports(count);
  parallel_for(count, [&](int i) {
    reports[i] = rabinowitz_flow(cfg.model, cfg.k, starts[i], fo);
  });

  Json report = report_envelope(cfg);
  Json flows = Json::array();
  int violations = 0;
  for (int i = 0; i < count; ++i) {
    const FlowReport& r = reports[i];
    Json e = flow_json(r);
    const std::string csv = "flow_" + std::to_string(i) + ".csv";
    write_flow_csv(cfg.out_dir, csv, r);
    e["series_csv"] = csv;
    flows.push_back(e);
    violations += int(!r.monotone) + int(!r.energy_ok) + int(!r.eta_within);
  }
  report["c0"] = (fo.c0 ? Json(c0) : Json());
  report["violations"] = violations;
  report["flows"] = flows;
  write_json(cfg.out_dir, "flow_summary.json", report);
  std::printf("rf-flow: %d flow(s), %d monitor violation(s)\n", count, violations);
  return 0;
}

int run_morse(const RunConfig& cfg) {
  if (cfg.classes.empty()) throw ConfigError("morse-homology needs a class list");
  const Json params = cfg.section("morse");
  MorseOptions opt;
  opt.n = cfg.n;
  opt.seed_grid = params.value("seed_grid", opt.seed_grid);
  opt.fan = params.value("fan", opt.fan);
  const double cap = params.value("action_cap", 3.0);

  const MorseComplex mc = build_complex(cfg.model, cfg.k, cfg.classes.front(), cap, opt);
  Json report = report_envelope(cfg);
  report["morse"] = morse_json(mc);
  write_json(cfg.out_dir, "morse.json", report);
  std::printf("morse-homology: betti (%d, %d, %d), d2_zero %d, fan_stable %d\n",
              mc.betti.size() > 0 ? mc.betti[0] : 0,
              mc.betti.size() > 1 ? mc.betti[1] : 0,
              mc.betti.size() > 2 ? mc.betti[2] : 0, int(mc.d2_zero),
              int(mc.fan_stable));
  return 0;
}

int run_leafwise(const RunConfig& cfg) {
  const Json params = cfg.section("leafwise");
  FSpec f;
  f.amp = params.value("amp", 0.02);
  if (params.contains("p_center")) {
    const Json& pc = params["p_center"];
    if (!pc.is_array() || pc.size() != 2)
      throw ConfigError("leafwise.p_center must be [px, py]");
    f.p_center = Vector2d(pc[0].get<double>(), pc[1].get<double>());
  }
  f.p_width = params.value("p_width", 0.5);
  f.beta_window = params.value("beta_window", 0.0);
  const MoserPair mp = build_moser_pair(cfg.model, cfg.k, f);

  LeafwiseOptions opt;
  opt.n = cfg.n;
  opt.verify_tol = cfg.tolerance("leafwise_verify", opt.verify_tol);

  LeafwiseWitness wit;
  if (cfg.classes.empty() || cfg.classes.front().trivial()) {
    RabinowitzPoint seed = constant_point(cfg.model, cfg.k, Vector2d(0.25, 0.25), opt.n);
    wit = find_leafwise(cfg.model, mp, seed, opt);
  } else {
    const CriticalOrbit cp =
        find_class_orbit(cfg.model, cfg.k, cfg.classes.front(), opt.n);
    wit = find_leafwise_from_orbit(cfg.model, mp, cp.loop, cp.T, opt);
  }

  Json report = report_envelope(cfg);
  report["leafwise"] = leafwise_json(wit);
  report["verify_tol"] = opt.verify_tol;
  write_json(cfg.out_dir, "leafwise.json", report);
  std::printf("leafwise: eta %.6g, verification distance %.3g (tol %g)\n", wit.eta,
              wit.verification_distance, opt.verify_tol);
  if (!wit.verified)
    throw VerificationFailure("leafwise verification distance above tolerance");
  return 0;
}

struct CheckRow {
  std::string name;
  std::string status;  // pass / fail / skip
  double residual = 0.0;
  double tolerance = 0.0;
  std::string note;
};

Json check_json(const CheckRow& c) {
  return Json{{"name", c.name},
              {"status", c.status},
              {"residual", c.residual},
              {"tolerance", c.tolerance},
              {"note", c.note}};
}

/** Tolerance lookup with the weak-tolerance annotation contract. */
double suite_tol(const RunConfig& cfg, const std::string& name, double fallback,
                 std::vector<std::string>& warnings) {
  const double t = cfg.tolerance(name, fallback);
  if (t > 10.0 * fallback) {
    const std::string w = "weak tolerance: " + name + " = " + std::to_string(t);
    if (std::find(warnings.begin(), warnings.end(), w) == warnings.end())
      warnings.push_back(w);
  }
  return t;
}

int run_verify(const RunConfig& cfg) {
  std::vector<CheckRow> checks;
  std::vector<std::string> warnings;
  const bool supercritical = cfg.k > u_max(cfg.model);
  if (!supercritical)
    warnings.push_back("k <= max U: level set misses fibers, "
                       "constants and flow checks skipped");

  // chi profile mass: the leafwise time bump integrates to one
  {
    const ChiProfile chi;
    const int n = 4096;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += chi(double(i) / n);
    const double res = std::abs(acc / n - 1.0);
    checks.push_back({"chi_profile_mass", res < 1e-12 ? "pass" : "fail", res, 1e-12, ""});
  }

  // free-time gradient versus central differences on random smooth loops
  {
    const double tol = suite_tol(cfg, "gradient_fd", 1e-5, warnings);
    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double worst = 0.0;
    const int probes = 20;
    for (int p = 0; p < probes; ++p) {
      const DiscreteLoop w = random_loop(rng, {1, 0}, 32, 0.08);
      const double t_period = 0.6 + u01(rng);
      const ActionDifferential d = free_time_differential(cfg.model, cfg.k, w, t_period);
      const double h = 1e-6;
      for (int probe = 0; probe < 3; ++probe) {
        const int i = int(u01(rng) * 32) % 32;
        const int c = int(u01(rng) * 2) % 2;
        DiscreteLoop wp = w, wm = w;
        wp.q(i, c) += h;
        wm.q(i, c) -= h;
        const double fd = (free_time_action(cfg.model, cfg.k, wp, t_period) -
                           free_time_action(cfg.model, cfg.k, wm, t_period)) /
                          (2.0 * h);
        worst = std::max(worst, std::abs(d.dq(i, c) * 32 - fd * 32) /
                                    std::max(1.0, std::abs(fd * 32)));
      }
      const double fd_t = (free_time_action(cfg.model, cfg.k, w, t_period + h) -
                           free_time_action(cfg.model, cfg.k, w, t_period - h)) /
                          (2.0 * h);
      worst = std::max(worst, std::abs(d.dT - fd_t) / std::max(1.0, std::abs(fd_t)));
    }
    checks.push_back(
        {"gradient_free_time", worst < tol ? "pass" : "fail", worst, tol, ""});
  }

  // Rabinowitz gradient versus central differences
  {
    const double tol = suite_tol(cfg, "gradient_fd", 1e-5, warnings);
    Rng rng(cfg.seed + 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double worst = 0.0;
    for (int p = 0; p < 20; ++p) {
      const RabinowitzPoint x = random_point(rng, {1, 0}, 32, 0.08);
      const RabinowitzDifferential d = rabinowitz_differential(cfg.model, cfg.k, x);
      const double h = 1e-6;
      for (int probe = 0; probe < 3; ++probe) {
        const int i = int(u01(rng) * 32) % 32;
        const int c = int(u01(rng) * 2) % 2;
        const bool momentum = u01(rng) < 0.5;
        RabinowitzPoint xp = x, xm = x;
        (momentum ? xp.p(i, c) : xp.q.q(i, c)) += h;
        (momentum ? xm.p(i, c) : xm.q.q(i, c)) -= h;
        const double fd = (rabinowitz_action(cfg.model, cfg.k, xp) -
                           rabinowitz_action(cfg.model, cfg.k, xm)) /
                          (2.0 * h);
        const double exact = momentum ? d.dp(i, c) : d.dq(i, c);
        worst = std::max(worst, std::abs(exact * 32 - fd * 32) /
                                    std::max(1.0, std::abs(fd * 32)));
      }
    }
    checks.push_back(
        {"gradient_rabinowitz", worst < tol ? "pass" : "fail", worst, tol, ""});
  }

  // action of the two lifts against the free-period action
  {
    const double tol = suite_tol(cfg, "lift_identity", 1e-8, warnings);
    double worst = 0.0;
    bool any = false;
    std::string note;
    for (const HomotopyClass cls : cfg.classes) {
      if (cls.trivial()) continue;
      try {
        const CriticalOrbit cp = find_class_orbit(cfg.model, cfg.k, cls, cfg.n);
        const RabinowitzPoint zp = z_lift(cfg.model, cp.loop, cp.T, +1);
        worst = std::max(
            worst, std::abs(rabinowitz_action(cfg.model, cfg.k, zp) - cp.S));
        if (cfg.model.B * cls.m1 * cls.m2 == 0.0) {
          const RabinowitzPoint zm = z_lift(cfg.model, cp.loop, cp.T, -1);
          worst = std::max(
              worst, std::abs(rabinowitz_action(cfg.model, cfg.k, zm) + cp.S));
        } else {
          note = "negative lift skipped: B m1 m2 != 0 leaves a lift defect";
        }
        any = true;
      } catch (const NonConvergence&) {
      }
    }
    if (any)
      checks.push_back(
          {"action_lift_identity", worst < tol ? "pass" : "fail", worst, tol, note});
    else
      checks.push_back(
          {"action_lift_identity", "skip", 0.0, tol, "no class orbit found"});
  }

  // Morse-Bott kernel of the constants
  if (supercritical) {
    Rng rng(cfg.seed + 2);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    bool ok = true;
    double worst_gap = 1e300;
    for (int p = 0; p < 5; ++p) {
      Vector2d q0(u01(rng), u01(rng));
      if (!(cfg.k - cfg.model.U(q0) > 0)) continue;
      const double ang = two_pi * u01(rng);
      const KernelReport kr = constant_hessian_kernel(
          cfg.model, cfg.k, q0, 16, {std::cos(ang), std::sin(ang)});
      ok = ok && kr.near_zero == 3 && kr.gap >= 1e3;
      worst_gap = std::min(worst_gap, kr.gap);
    }
    checks.push_back({"constants_kernel", ok ? "pass" : "fail", worst_gap, 1e3,
                      "gap ratio must stay above tolerance"});
  } else {
    checks.push_back({"constants_kernel", "skip", 0.0, 1e3, "needs k > max U"});
  }

  // flow monitors on a few seeded descents
  if (supercritical && cfg.model.bounded_primitive_exists()) {
    const Json params = cfg.section("flow");
    double c0 = 0.0;
    const FlowOptions fo = flow_options(cfg, params, &c0);
    Rng rng(cfg.seed + 3);
    bool ok = true;
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
      const RabinowitzPoint x0 = noisy_constant(cfg.model, cfg.k, rng, cfg.n, 0.05);
      const FlowReport r = rabinowitz_flow(cfg.model, cfg.k, x0, fo);
      ok = ok && r.monotone && r.energy_ok && r.eta_within && !r.blew_up;
      worst = std::max(worst, r.energy_defect);
    }
    checks.push_back({"flow_monitors", ok ? "pass" : "fail", worst, 0.0,
                      "monotone action, energy identity, eta bound"});
  } else {
    checks.push_back({"flow_monitors", "skip", 0.0, 0.0,
                      supercritical ? "needs a bounded primitive (B = 0)"
                                    : "needs k > max U"});
  }

  // truncated Hamiltonian agrees with H on bounded trajectories
  {
    const double tol = suite_tol(cfg, "truncation", 1e-8, warnings);
    const double radius = cfg.section("flow").value("truncation_R", 10.0);
    try {
      check_truncation(cfg.model, cfg.k, radius);
      TruncationProfile trunc;
      trunc.R = radius;
      Rng rng(cfg.seed + 4);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      double worst = 0.0;
      for (int i = 0; i < 2; ++i) {
        Vector2d q0(u01(rng), u01(rng));
        if (!(cfg.k - cfg.model.U(q0) > 0)) continue;
        const double r =
            std::sqrt(2.0 * cfg.model.conformal(q0) *
                      std::max(cfg.k - cfg.model.U(q0), 0.0));
        const double ang = two_pi * u01(rng);
        Vector4d x0;
        x0 << q0, r * std::cos(ang), r * std::sin(ang);
        const MatrixXd plain = hamiltonian_trajectory(cfg.model, x0, 1.0, 2000);
        const MatrixXd cut = hamiltonian_trajectory(cfg.model, x0, 1.0, 2000, &trunc);
        worst = std::max(worst, (plain - cut).cwiseAbs().maxCoeff());
      }
      checks.push_back(
          {"truncation_agreement", worst < tol ? "pass" : "fail", worst, tol, ""});
    } catch (const ConfigError& e) {
      checks.push_back({"truncation_agreement", "skip", 0.0, tol, e.what()});
    }
  }

  // index identities at a nondegenerate class orbit
  {
    std::string note = "no nondegenerate class orbit";
    std::string status = "skip";
    double res = 0.0;
    for (const HomotopyClass cls : cfg.classes) {
      if (cls.trivial()) continue;
      try {
        const CriticalOrbit cp = find_class_orbit(cfg.model, cfg.k, cls, cfg.n);
        const MorseIndices mi = morse_indices(cfg.model, cfg.k, cp.loop, cp.T);
        if (mi.nullity != 1) continue;
        const IndexReport ir = orbit_indices(cfg.model, cp.loop, cp.T);
        const int chi_cont = chi_by_continuation(cfg.model, cfg.k, cp.loop, cp.T);
        const bool ok = (mi.i == mi.i_t + (1 - ir.chi) / 2) &&
                        (std::abs(ir.mu_plus - mi.i) < 1e-9) &&
                        (ir.transversal == mi.i_t) && (ir.chi == chi_cont);
        status = ok ? "pass" : "fail";
        res = std::abs(ir.mu_plus - mi.i);
        note = "";
        break;
      } catch (const NonConvergence& e) {
        note = e.what();
      }
    }
    checks.push_back({"index_identity", status, res, 0.0, note});
  }

  Json report = report_envelope(cfg);
  Json rows = Json::array();
  bool failed = false;
  for (const CheckRow& c : checks) {
    rows.push_back(check_json(c));
    failed = failed || c.status == "fail";
    std::printf("[%s] %-24s residual=%.3g tol=%.3g%s%s\n",
                c.status == "pass" ? "PASS" : (c.status == "fail" ? "FAIL" : "SKIP"),
                c.name.c_str(), c.residual, c.tolerance, c.note.empty() ? "" : "  ",
                c.note.c_str());
  }
  report["checks"] = rows;
  report["warnings"] = warnings;
  report["verdict"] = failed ? "fail" : "pass";
  write_json(cfg.out_dir, "verify.json", report);
  for (const std::string& w : warnings) std::printf("note: %s\n", w.c_str());
  if (failed) throw VerificationFailure("verify suite reported a hard failure");
  std::printf("verify: all executed checks passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"magnetic flow toolkit for twisted cotangent bundles over T^2"};
  app.require_subcommand(1);

  CliArgs args;
  const struct {
    const char* name;
    const char* blurb;
    int (*fn)(const RunConfig&);
  } commands[] = {
      {"find-orbits", "enumerate closed orbits per homotopy class", run_find_orbits},
      {"indices", "grade closed orbits by Morse and Conley-Zehnder data", run_indices},
      {"mane", "bracket the critical level", run_mane},
      {"rf-flow", "run monitored action descents", run_rf_flow},
      {"morse-homology", "build the cascade complex and its homology", run_morse},
      {"leafwise", "search for a leafwise intersection witness", run_leafwise},
      {"verify", "run the consolidated identity suite", run_verify},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.blurb);
    sub->add_option("--config", args.config_path, "JSON run configuration")
        ->required();
    sub->add_option("--out", args.out_override, "output directory override");
    sub->add_option("--seed", args.seed, "seed override");
    sub->add_option("--n", args.n, "grid override");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    for (const auto& c : commands)
      if (app.got_subcommand(c.name)) return c.fn(load_config(args));
    std::fprintf(stderr, "error: no command selected\n");
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NonConvergence& e) {
    std::fprintf(stderr, "nonconvergence: %s\n", e.what());
    return 3;
  } catch (const VerificationFailure& e) {
    std::fprintf(stderr, "verification failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
