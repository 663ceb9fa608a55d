#pragma once

// Run configuration (JSON) and the CSV files exchanged between the
// simulate, demod, sweep-epsilon and analyze-pwm commands.

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pwmsense/demod.hpp"
#include "pwmsense/motor.hpp"
#include "pwmsense/pwm.hpp"
#include "pwmsense/sim.hpp"

namespace pwmsense {

/// Bad configuration or input file contents (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  MotorParams motor;
  ScenarioConfig scenario;
  DemodOptions demod;
  std::string output_dir = "out";
};

inline constexpr int kConfigVersion = 1;

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + where + "." + key + "'");
  }
}

inline void read_number(const json& obj, const std::string& where, const char* key, double& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError("config: '" + where + "." + key + "' must be a number");
  out = v.get<double>();
}

inline void read_int(const json& obj, const std::string& where, const char* key, int& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError("config: '" + where + "." + key + "' must be an integer");
  out = v.get<int>();
}

inline void read_bool(const json& obj, const std::string& where, const char* key, bool& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError("config: '" + where + "." + key + "' must be a boolean");
  out = v.get<bool>();
}

inline CarrierScheme read_scheme(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError("config: '" + where + "' must be a string");
  try {
    return carrier_scheme_from_string(v.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace detail

/// Parses and validates a configuration document. Every key is optional and
/// defaults to the built-in value; unknown keys are rejected.
inline RunConfig parse_config(const nlohmann::json& doc) {
  using detail::check_keys;
  using detail::read_number;
  using detail::read_int;
  RunConfig cfg;
  check_keys(doc, "<root>", {"version", "motor", "pwm", "scenario", "controller", "spikes", "demod", "output_dir"});

  if (doc.contains("version")) {
    if (!doc["version"].is_number_integer() || doc["version"].get<int>() != kConfigVersion) {
      throw ConfigError("config: unsupported version (expected " + std::to_string(kConfigVersion) + ")");
    }
  }
  if (doc.contains("motor")) {
    const auto& m = doc["motor"];
    check_keys(m, "motor", {"Rs", "Ld", "Lq", "phi_m", "pole_pairs", "J", "u_m", "rated_torque"});
    read_number(m, "motor", "Rs", cfg.motor.Rs);
    read_number(m, "motor", "Ld", cfg.motor.Ld);
    read_number(m, "motor", "Lq", cfg.motor.Lq);
    read_number(m, "motor", "phi_m", cfg.motor.phi_m);
    read_int(m, "motor", "pole_pairs", cfg.motor.pole_pairs);
    read_number(m, "motor", "J", cfg.motor.J);
    read_number(m, "motor", "u_m", cfg.motor.u_m);
    read_number(m, "motor", "rated_torque", cfg.motor.rated_torque);
  }
  PwmConfig& pwm = cfg.scenario.pwm;
  bool extraction_given = false;
  if (doc.contains("pwm")) {
    const auto& w = doc["pwm"];
    check_keys(w, "pwm", {"scheme", "epsilon", "samples_per_period"});
    if (w.contains("scheme")) pwm.scheme = detail::read_scheme(w["scheme"], "pwm.scheme");
    read_number(w, "pwm", "epsilon", pwm.epsilon);
    read_int(w, "pwm", "samples_per_period", pwm.samples_per_period);
  }
  pwm.u_m = cfg.motor.u_m;
  if (doc.contains("scenario")) {
    const auto& s = doc["scenario"];
    check_keys(s, "scenario", {"rest_duration", "ramp_end_time", "final_elec_freq", "load_fraction", "total_duration",
                               "initial_theta", "noise_std", "seed"});
    ScenarioConfig& sc = cfg.scenario;
    read_number(s, "scenario", "rest_duration", sc.rest_duration);
    read_number(s, "scenario", "ramp_end_time", sc.ramp_end_time);
    read_number(s, "scenario", "final_elec_freq", sc.final_elec_freq);
    read_number(s, "scenario", "load_fraction", sc.load_fraction);
    read_number(s, "scenario", "total_duration", sc.total_duration);
    read_number(s, "scenario", "initial_theta", sc.initial_theta);
    read_number(s, "scenario", "noise_std", sc.noise_std);
    if (s.contains("seed")) {
      if (!s["seed"].is_number_unsigned()) throw ConfigError("config: 'scenario.seed' must be a non-negative integer");
      sc.seed = s["seed"].get<std::uint64_t>();
    }
  }
  if (doc.contains("controller")) {
    const auto& c = doc["controller"];
    check_keys(c, "controller", {"speed_bandwidth_hz", "current_bandwidth_hz", "max_current", "voltage_fraction"});
    ControllerTuning& t = cfg.scenario.tuning;
    read_number(c, "controller", "speed_bandwidth_hz", t.speed_bandwidth_hz);
    read_number(c, "controller", "current_bandwidth_hz", t.current_bandwidth_hz);
    read_number(c, "controller", "max_current", t.max_current);
    read_number(c, "controller", "voltage_fraction", t.voltage_fraction);
    if (!(t.speed_bandwidth_hz > 0 && t.current_bandwidth_hz > 0 && t.max_current > 0 && t.voltage_fraction > 0 &&
          t.voltage_fraction <= 1)) {
      throw ConfigError("config: controller bandwidths and limits must be positive, voltage_fraction <= 1");
    }
  }
  if (doc.contains("spikes")) {
    const auto& k = doc["spikes"];
    check_keys(k, "spikes", {"enabled", "amplitude_fraction", "decay"});
    detail::read_bool(k, "spikes", "enabled", cfg.scenario.spikes.enabled);
    read_number(k, "spikes", "amplitude_fraction", cfg.scenario.spikes.amplitude_fraction);
    read_number(k, "spikes", "decay", cfg.scenario.spikes.decay);
  }
  if (doc.contains("demod")) {
    const auto& d = doc["demod"];
    check_keys(d, "demod", {"scheme", "prefilter_fraction", "max_condition", "rank_tol_rel", "rank_tol_abs",
                            "transient_skip"});
    if (d.contains("scheme")) {
      cfg.demod.extraction = detail::read_scheme(d["scheme"], "demod.scheme");
      extraction_given = true;
    }
    read_number(d, "demod", "prefilter_fraction", cfg.demod.prefilter_fraction);
    read_number(d, "demod", "max_condition", cfg.demod.max_condition);
    read_number(d, "demod", "rank_tol_rel", cfg.demod.rank_tol.rel);
    read_number(d, "demod", "rank_tol_abs", cfg.demod.rank_tol.abs);
    read_number(d, "demod", "transient_skip", cfg.demod.transient_skip);
    if (!(cfg.demod.prefilter_fraction >= 0 && cfg.demod.max_condition > 1 && cfg.demod.rank_tol.rel >= 0 &&
          cfg.demod.rank_tol.abs >= 0 && cfg.demod.transient_skip >= 0)) {
      throw ConfigError("config: demod options out of range");
    }
  }
  if (!extraction_given) cfg.demod.extraction = pwm.scheme;
  if (doc.contains("output_dir")) {
    if (!doc["output_dir"].is_string()) throw ConfigError("config: 'output_dir' must be a string");
    cfg.output_dir = doc["output_dir"].get<std::string>();
  }

  try {
    cfg.motor.validate();
    cfg.scenario.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline nlohmann::json to_json(const RunConfig& c) {
  const MotorParams& m = c.motor;
  const ScenarioConfig& s = c.scenario;
  return {
      {"version", kConfigVersion},
      {"motor",
       {{"Rs", m.Rs}, {"Ld", m.Ld}, {"Lq", m.Lq}, {"phi_m", m.phi_m}, {"pole_pairs", m.pole_pairs}, {"J", m.J},
        {"u_m", m.u_m}, {"rated_torque", m.rated_torque}}},
      {"pwm",
       {{"scheme", to_string(s.pwm.scheme)}, {"epsilon", s.pwm.epsilon},
        {"samples_per_period", s.pwm.samples_per_period}}},
      {"scenario",
       {{"rest_duration", s.rest_duration}, {"ramp_end_time", s.ramp_end_time},
        {"final_elec_freq", s.final_elec_freq}, {"load_fraction", s.load_fraction},
        {"total_duration", s.total_duration}, {"initial_theta", s.initial_theta}, {"noise_std", s.noise_std},
        {"seed", s.seed}}},
      {"controller",
       {{"speed_bandwidth_hz", s.tuning.speed_bandwidth_hz}, {"current_bandwidth_hz", s.tuning.current_bandwidth_hz},
        {"max_current", s.tuning.max_current}, {"voltage_fraction", s.tuning.voltage_fraction}}},
      {"spikes",
       {{"enabled", s.spikes.enabled}, {"amplitude_fraction", s.spikes.amplitude_fraction},
        {"decay", s.spikes.decay}}},
      {"demod",
       {{"scheme", to_string(c.demod.extraction)}, {"prefilter_fraction", c.demod.prefilter_fraction},
        {"max_condition", c.demod.max_condition}, {"rank_tol_rel", c.demod.rank_tol.rel},
        {"rank_tol_abs", c.demod.rank_tol.abs}, {"transient_skip", c.demod.transient_skip}}},
      {"output_dir", c.output_dir},
  };
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

/// 17 significant digits: parses back to the identical double.
inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::vector<double> parse_row(const std::string& line, std::size_t expected, const std::string& file,
                                     std::size_t line_no) {
  std::vector<double> out;
  out.reserve(expected);
  const char* p = line.c_str();
  while (true) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(p, &end);
    if (end == p || errno == ERANGE) break;
    out.push_back(v);
    p = end;
    if (*p != ',') break;
    ++p;
  }
  if (*p != '\0' && *p != '\r') out.clear();
  if (out.size() != expected) {
    throw ConfigError(file + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                      " numeric fields");
  }
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

/// Reads a numeric CSV with an exact header line.
inline std::vector<std::vector<double>> read(const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || (line != header && line != header + "\r")) {
    throw ConfigError(path.string() + ": expected header '" + header + "'");
  }
  const std::size_t cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    rows.push_back(parse_row(line, cols, path.string(), line_no));
  }
  return rows;
}

}  // namespace csv

inline const std::string kSamplesHeader = "t,i_alpha,i_beta,u_a,u_b,u_c";
inline const std::string kTruthHeader = "t,theta_true,omega_true";

inline void write_samples_csv(const SampleLog& log, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << kSamplesHeader << '\n';
  for (const Sample& s : log.samples) {
    out << csv::num(s.t) << ',' << csv::num(s.i.alpha) << ',' << csv::num(s.i.beta) << ',' << csv::num(s.u_ref.a)
        << ',' << csv::num(s.u_ref.b) << ',' << csv::num(s.u_ref.c) << '\n';
  }
}

inline void write_truth_csv(const SampleLog& log, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << kTruthHeader << '\n';
  for (const Sample& s : log.samples) out << csv::num(s.t) << ',' << csv::num(s.theta) << ',' << csv::num(s.omega) << '\n';
}

/// Loads samples.csv (and truth.csv when given) into a log laid out per pwm.
/// Truth angles are NaN without a truth file.
inline SampleLog read_sample_log(const std::filesystem::path& samples, const std::filesystem::path& truth,
                                 const PwmConfig& pwm) {
  SampleLog log;
  log.pwm = pwm;
  const auto rows = csv::read(samples, kSamplesHeader);
  log.samples.reserve(rows.size());
  for (const auto& r : rows) {
    Sample s;
    s.t = r[0];
    s.i = {r[1], r[2]};
    s.u_ref = {r[3], r[4], r[5]};
    s.theta = std::numeric_limits<double>::quiet_NaN();
    s.omega = std::numeric_limits<double>::quiet_NaN();
    log.samples.push_back(s);
  }
  if (!truth.empty()) {
    const auto trows = csv::read(truth, kTruthHeader);
    if (trows.size() != rows.size()) throw ConfigError("truth file row count does not match samples");
    for (std::size_t i = 0; i < trows.size(); ++i) {
      if (trows[i][0] != log.samples[i].t) {
        throw ConfigError("truth file timestamps do not match samples at row " + std::to_string(i + 2));
      }
      log.samples[i].theta = trows[i][1];
      log.samples[i].omega = trows[i][2];
    }
  }
  const std::size_t n = pwm.samples_per_period;
  if (log.samples.empty() || log.samples.size() % n != 0) {
    throw ConfigError(samples.string() + ": " + std::to_string(log.samples.size()) +
                      " rows is not a whole number of carrier periods of " + std::to_string(n) + " samples");
  }
  for (std::size_t i = 0; i < log.samples.size(); ++i) {
    const double expected = sample_time(i, pwm);
    if (std::abs(log.samples[i].t - expected) > 1e-6 * pwm.sample_spacing()) {
      throw ConfigError(samples.string() + ": sample spacing does not match the configured PWM (row " +
                        std::to_string(i + 2) + ")");
    }
  }
  return log;
}

inline void write_estimates_csv(std::span<const PeriodEstimate> est, const std::filesystem::path& path,
                                bool with_saliency) {
  auto out = csv::open_out(path);
  out << "t,cos2theta_hat,sin2theta_hat,theta_hat,theta_true,error,quality";
  if (with_saliency) out << ",s11,s12,s21,s22";
  out << '\n';
  for (const PeriodEstimate& e : est) {
    out << csv::num(e.t) << ',' << csv::num(e.pair.cos2) << ',' << csv::num(e.pair.sin2) << ','
        << csv::num(e.angle.theta_hat) << ',' << csv::num(e.theta_true) << ',' << csv::num(e.error()) << ','
        << to_string(e.angle.quality);
    if (with_saliency) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      const Mat2 s = e.saliency.value_or(Mat2::Constant(nan));
      out << ',' << csv::num(s(0, 0)) << ',' << csv::num(s(0, 1)) << ',' << csv::num(s(1, 0)) << ','
          << csv::num(s(1, 1));
    }
    out << '\n';
  }
}

}  // namespace pwmsense
