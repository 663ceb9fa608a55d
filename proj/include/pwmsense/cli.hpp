#pragma once

// Command implementations behind the pwmsense executable. Each returns the
// process exit code: 0 success, 1 usage/config/input error, 2 runtime error.

#include <cmath>
#include <filesystem>
#include <future>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pwmsense/demod.hpp"
#include "pwmsense/io.hpp"
#include "pwmsense/pwm.hpp"
#include "pwmsense/sim.hpp"

namespace pwmsense::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

namespace fs = std::filesystem;

inline RunConfig config_or_default(const std::optional<fs::path>& path) {
  return path ? load_config(*path) : parse_config(nlohmann::json::object());
}

inline fs::path resolve_out(const RunConfig& cfg, const std::optional<fs::path>& out) {
  const fs::path dir = out.value_or(fs::path(cfg.output_dir));
  fs::create_directories(dir);
  return dir;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::domain_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
}

/// Least-squares slope of log(err) against log(eps).
inline double loglog_slope(const std::vector<double>& eps, const std::vector<double>& err) {
  const std::size_t n = eps.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(eps[i]) / n;
    my += std::log(err[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(eps[i]) - mx;
    sxy += dx * (std::log(err[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::optional<fs::path> config;
  std::optional<fs::path> out;
};

/// Runs the configured scenario; writes samples.csv, truth.csv and the
/// resolved config.json.
inline int cmd_simulate(const SimulateArgs& args, std::ostream& msg, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = config_or_default(args.config);
    const SampleLog log = run_scenario(cfg.scenario, cfg.motor);
    const fs::path dir = resolve_out(cfg, args.out);
    write_samples_csv(log, dir / "samples.csv");
    write_truth_csv(log, dir / "truth.csv");
    csv::open_out(dir / "config.json") << to_json(cfg).dump(2) << '\n';
    msg << "simulate: " << log.samples.size() << " samples (" << log.periods() << " carrier periods, "
        << to_string(cfg.scenario.pwm.scheme) << ") -> " << dir.string() << '\n';
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------

struct DemodArgs {
  fs::path samples;
  std::optional<fs::path> truth;  // default: truth.csv next to samples, if present
  std::optional<fs::path> config;
  std::optional<fs::path> out;
  std::optional<CarrierScheme> scheme;
  std::optional<double> seed_theta;
};

inline int cmd_demod(const DemodArgs& args, std::ostream& msg, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = config_or_default(args.config);
    if (args.scheme) cfg.demod.extraction = *args.scheme;
    fs::path truth;
    if (args.truth) {
      truth = *args.truth;
    } else if (fs::exists(args.samples.parent_path() / "truth.csv")) {
      truth = args.samples.parent_path() / "truth.csv";
    }
    const SampleLog log = read_sample_log(args.samples, truth, cfg.scenario.pwm);
    std::optional<double> seed = args.seed_theta;
    if (!seed && truth.empty()) seed = cfg.scenario.initial_theta;
    const auto est = run_pipeline(log, cfg.motor, cfg.demod, seed);
    const fs::path dir = resolve_out(cfg, args.out);
    write_estimates_csv(est, dir / "estimates.csv", cfg.demod.extraction == CarrierScheme::Interleaved);
    msg << "demod: " << est.size() << " estimates (" << to_string(cfg.demod.extraction) << ")";
    if (!truth.empty()) msg << ", max |theta_hat - theta| after " << cfg.demod.transient_skip
                            << " s = " << max_angle_error(est, cfg.demod.transient_skip) << " rad";
    msg << " -> " << (dir / "estimates.csv").string() << '\n';
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::optional<fs::path> config;
  std::optional<fs::path> out;
  std::vector<double> epsilons;
  std::optional<double> duration;  // compress the scenario to this length
  std::optional<CarrierScheme> scheme;
  int jobs = 1;
};

struct SweepPoint {
  double epsilon;
  double max_error;
};

/// Simulate + demod per epsilon (independent deterministic jobs).
inline std::vector<SweepPoint> sweep_epsilon(const RunConfig& base, const std::vector<double>& epsilons, int jobs) {
  auto job = [&base](double eps) {
    ScenarioConfig sc = base.scenario;
    sc.pwm.epsilon = eps;
    const SampleLog log = run_scenario(sc, base.motor);
    const auto est = run_pipeline(log, base.motor, base.demod);
    return SweepPoint{eps, max_angle_error(est, base.demod.transient_skip)};
  };
  std::vector<SweepPoint> out;
  out.reserve(epsilons.size());
  for (std::size_t i = 0; i < epsilons.size(); i += static_cast<std::size_t>(std::max(1, jobs))) {
    std::vector<std::future<SweepPoint>> batch;
    for (std::size_t k = i; k < std::min(epsilons.size(), i + std::max(1, jobs)); ++k) {
      batch.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, job, epsilons[k]));
    }
    for (auto& f : batch) out.push_back(f.get());
  }
  return out;
}

inline int cmd_sweep_epsilon(const SweepArgs& args, std::ostream& msg, std::ostream& err) {
  return guarded(err, [&] {
    if (args.epsilons.size() < 2) throw std::invalid_argument("sweep-epsilon needs at least two epsilon values");
    for (double e : args.epsilons) {
      if (!(e > 0.0)) throw std::invalid_argument("sweep-epsilon: epsilon values must be positive");
    }
    RunConfig cfg = config_or_default(args.config);
    if (args.scheme) {
      cfg.scenario.pwm.scheme = *args.scheme;
      cfg.demod.extraction = *args.scheme;
    }
    if (args.duration) {
      if (!(*args.duration > 0.0)) throw std::invalid_argument("sweep-epsilon: duration must be positive");
      cfg.scenario = cfg.scenario.shortened(*args.duration);
    }
    const auto pts = sweep_epsilon(cfg, args.epsilons, args.jobs);
    std::vector<double> eps, errs;
    for (const auto& p : pts) {
      eps.push_back(p.epsilon);
      errs.push_back(p.max_error);
    }
    const double slope = loglog_slope(eps, errs);
    const fs::path dir = resolve_out(cfg, args.out);
    auto out = csv::open_out(dir / "sweep.csv");
    out << "epsilon,max_error,slope\n";
    for (const auto& p : pts) out << csv::num(p.epsilon) << ',' << csv::num(p.max_error) << ',' << csv::num(slope) << '\n';
    for (const auto& p : pts) msg << "  epsilon = " << p.epsilon << " s: max error " << p.max_error << " rad\n";
    msg << "sweep-epsilon: log-log slope " << slope << " -> " << (dir / "sweep.csv").string() << '\n';
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------

struct AnalyzePwmArgs {
  std::optional<fs::path> config;
  std::optional<fs::path> out;
  Abc u_abc;
  std::optional<CarrierScheme> scheme;
  int points = 1000;
};

/// One period of s1 (abc and alpha-beta) plus the ripple matrix summary.
inline int cmd_analyze_pwm(const AnalyzePwmArgs& args, std::ostream& msg, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = config_or_default(args.config);
    PwmConfig pwm = cfg.scenario.pwm;
    if (args.scheme) pwm.scheme = *args.scheme;
    if (args.points < 2) throw std::invalid_argument("analyze-pwm: points must be >= 2");
    const RippleMatrix a = ripple_matrix_alphabeta(pwm, args.u_abc, cfg.demod.rank_tol);
    const fs::path dir = resolve_out(cfg, args.out);

    auto trace = csv::open_out(dir / "s1_alphabeta.csv");
    trace << "sigma,s1_a,s1_b,s1_c,s1_alpha,s1_beta\n";
    for (int k = 0; k < args.points; ++k) {
      const double sigma = static_cast<double>(k) / args.points;
      const Abc s = s1_abc(pwm, args.u_abc, sigma);
      const AlphaBeta sab = clarke(s);
      trace << csv::num(sigma) << ',' << csv::num(s.a) << ',' << csv::num(s.b) << ',' << csv::num(s.c) << ','
            << csv::num(sab.alpha) << ',' << csv::num(sab.beta) << '\n';
    }

    auto summary = csv::open_out(dir / "ripple_matrix.csv");
    summary << "scheme,u_a,u_b,u_c,a11,a12,a22,determinant,rank,condition\n";
    summary << to_string(pwm.scheme) << ',' << csv::num(args.u_abc.a) << ',' << csv::num(args.u_abc.b) << ','
            << csv::num(args.u_abc.c) << ',' << csv::num(a.m(0, 0)) << ',' << csv::num(a.m(0, 1)) << ','
            << csv::num(a.m(1, 1)) << ',' << csv::num(a.m.determinant()) << ',' << to_string(a.rank) << ','
            << csv::num(a.condition()) << '\n';

    msg << "analyze-pwm (" << to_string(pwm.scheme) << ", u = " << args.u_abc.a << ", " << args.u_abc.b << ", "
        << args.u_abc.c << " V): A_ab = [" << a.m(0, 0) << ", " << a.m(0, 1) << "; " << a.m(1, 0) << ", "
        << a.m(1, 1) << "] V^2, rank " << to_string(a.rank) << ", condition " << a.condition() << '\n';
    return int{kOk};
  });
}

}  // namespace pwmsense::cli
