// pwmsense: simulate a PWM-fed PMSM, recover the rotor angle from the PWM
// current ripple, sweep the carrier period, inspect ripple matrices.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pwmsense/cli.hpp"

namespace {

using pwmsense::CarrierScheme;
namespace cli = pwmsense::cli;

std::optional<CarrierScheme> scheme_option(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return pwmsense::carrier_scheme_from_string(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotor position from PWM-induced current ripple"};
  app.require_subcommand(1);

  std::string config, out, scheme, samples, truth;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (default: config output_dir)");
  };
  const std::vector<std::string> schemes{"single-carrier", "interleaved"};

  auto* simulate = app.add_subcommand("simulate", "Run the test scenario, write samples.csv and truth.csv");
  add_common(simulate);

  auto* demod = app.add_subcommand("demod", "Estimate the rotor angle from a samples.csv, write estimates.csv");
  add_common(demod);
  demod->add_option("--samples", samples, "samples.csv written by simulate")->required()->check(CLI::ExistingFile);
  demod->add_option("--truth", truth, "truth.csv (default: next to samples.csv)")->check(CLI::ExistingFile);
  demod->add_option("--scheme", scheme, "Extraction scheme (default: config)")->check(CLI::IsMember(schemes));
  std::optional<double> seed_theta;
  demod->add_option("--seed-theta", seed_theta, "Initial angle used to resolve the half-turn ambiguity [rad]");

  auto* sweep = app.add_subcommand("sweep-epsilon", "Max angle error against the carrier period, with log-log slope");
  add_common(sweep);
  std::vector<double> epsilons;
  sweep->add_option("--epsilons", epsilons, "Carrier periods [s], comma separated")->required()->delimiter(',');
  sweep->add_option("--scheme", scheme, "Carrier and extraction scheme (default: config)")
      ->check(CLI::IsMember(schemes));
  std::optional<double> duration;
  sweep->add_option("--duration", duration, "Compress the scenario to this duration [s]");
  int jobs = 1;
  sweep->add_option("--jobs", jobs, "Concurrent simulations")->check(CLI::PositiveNumber);

  auto* analyze = app.add_subcommand("analyze-pwm", "One period of s1 and the ripple matrix for a fixed reference");
  add_common(analyze);
  std::vector<double> u_abc;
  analyze->add_option("--u", u_abc, "Phase references u_a,u_b,u_c [V]")->required()->delimiter(',')->expected(3);
  analyze->add_option("--scheme", scheme, "Carrier scheme (default: config)")->check(CLI::IsMember(schemes));
  int points = 1000;
  analyze->add_option("--points", points, "Points in the s1 trace");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsage;
  }

  auto opt_path = [](const std::string& s) -> std::optional<std::filesystem::path> {
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
  };

  if (simulate->parsed()) return cli::cmd_simulate({opt_path(config), opt_path(out)}, std::cout, std::cerr);
  if (demod->parsed()) {
    return cli::cmd_demod({samples, opt_path(truth), opt_path(config), opt_path(out), scheme_option(scheme), seed_theta},
                          std::cout, std::cerr);
  }
  if (sweep->parsed()) {
    return cli::cmd_sweep_epsilon({opt_path(config), opt_path(out), epsilons, duration, scheme_option(scheme), jobs},
                                  std::cout, std::cerr);
  }
  if (analyze->parsed()) {
    return cli::cmd_analyze_pwm(
        {opt_path(config), opt_path(out), {u_abc[0], u_abc[1], u_abc[2]}, scheme_option(scheme), points}, std::cout,
        std::cerr);
  }
  return cli::kUsage;
}
