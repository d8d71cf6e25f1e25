// SPDX-License-Identifier: Apache-2.0
//
// fiberfrp: simulate | kernels | optimize | evaluate | sweep
//
// Exit codes: 0 success, 1 other error, 2 configuration error,
// 3 numerical failure, 4 optimizer failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fiberfrp/fiberfrp.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumerical = 3, kOptimizer = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> power;
  std::optional<int> memory;
  std::optional<std::string> constellation;
  std::optional<bool> ase;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--power", c.power, "launch power in dBm (replaces the power sweep)");
  app->add_option("--memory", c.memory, "memory M (replaces the memory sweep)");
  app->add_option("--constellation", c.constellation, "QPSK, 16QAM or 64QAM");
  app->add_option("--ase", c.ase, "enable EDFA noise (true/false)");
}

fiberfrp::ExperimentConfig resolve(const Common& c) {
  auto cfg = c.config.empty() ? fiberfrp::ExperimentConfig{} : fiberfrp::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.out_dir = *c.out;
  if (c.power) cfg.powers_dbm = {*c.power};
  if (c.memory) cfg.memories = {*c.memory};
  if (c.constellation) cfg.constellation = *c.constellation;
  if (c.ase) cfg.ase.enabled = *c.ase;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"First-order regular perturbation fiber model toolkit"};
  app.require_subcommand(1);

  Common c_sim, c_ker, c_opt, c_eval, c_sweep;
  auto* sim = app.add_subcommand("simulate", "SSFM link simulation; CSV of transmitted and received symbols");
  add_common(sim, c_sim);
  auto* ker = app.add_subcommand("kernels", "analytical kernel tensors with convergence certificates");
  add_common(ker, c_ker);
  auto* opt = app.add_subcommand("optimize", "NBGD kernel training at each power and memory");
  add_common(opt, c_opt);
  auto* ev = app.add_subcommand("evaluate", "SNR, radius/phase differences and relative error per model");
  add_common(ev, c_eval);
  std::vector<std::string> kernel_files;
  ev->add_option("--kernels", kernel_files, "kernel tensor files (default: analytical + trained in --out)")
      ->check(CLI::ExistingFile);
  auto* sw = app.add_subcommand("sweep", "resumable power x memory grid");
  add_common(sw, c_sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      for (const auto& p : fiberfrp::cmd_simulate(resolve(c_sim))) std::cout << p.string() << '\n';
    } else if (ker->parsed()) {
      const auto cfg = resolve(c_ker);
      for (int m : cfg.memories) {
        const auto cert = fiberfrp::cmd_kernels(cfg, m);
        std::cout << fiberfrp::kernel_path(cfg, m).string() << "  certificate "
                  << (cert.passed() ? "passed" : "FAILED") << " (max relative change "
                  << cert.max_relative_change << ")\n";
      }
    } else if (opt->parsed()) {
      const auto cfg = resolve(c_opt);
      for (double p : cfg.powers_dbm)
        for (int m : cfg.memories) {
          const auto res = fiberfrp::cmd_optimize(cfg, m, p);
          std::cout << fiberfrp::nbgd_path(cfg, m, p).string() << "  " << res.report.total_iterations()
                    << " iterations, mse " << res.report.final_mse << '\n';
        }
    } else if (ev->parsed()) {
      const auto cfg = resolve(c_eval);
      std::cout << fiberfrp::cmd_evaluate(cfg, kernel_files, c_eval.memory).string() << '\n';
    } else if (sw->parsed()) {
      const auto sum = fiberfrp::cmd_sweep(resolve(c_sweep));
      std::cout << sum.cells << " cells: " << sum.computed << " computed, " << sum.skipped << " skipped, "
                << sum.failures.size() << " failed\n";
      for (const auto& [cell, msg] : sum.failures) std::cerr << "  " << cell << ": " << msg << '\n';
      if (!sum.failures.empty()) return kOther;
    }
  } catch (const fiberfrp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fiberfrp::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kConfig;
  } catch (const fiberfrp::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const fiberfrp::OptimizerError& e) {
    std::cerr << "optimizer error: " << e.what() << '\n';
    return kOptimizer;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOk;
}
