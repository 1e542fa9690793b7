#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tdisc/experiment.hpp"

namespace {

using namespace tdisc;

struct Common {
  std::string config;
  std::size_t jobs = 1;
};

ExperimentConfig config_of(const Common& c) {
  return c.config.empty() ? ExperimentConfig{} : load_config(c.config);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "Experiment config (JSON; empty file = defaults)");
  cmd->add_option("-j,--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

int print_grad_report(const GradCheckReport& r) {
  std::printf("check-grad: %zu weights, max relative error %.3e (weight %zu), tolerance %.0e\n", r.weights,
              r.max_rel_error, r.worst_weight, r.tolerance);
  std::printf("per-primitive worst offenders (tolerance %.0e):\n", r.primitive_tolerance);
  for (const auto& p : r.primitives) {
    std::printf("  %-16s %.3e  at %.6g%s\n", p.name.c_str(), p.max_rel_error, p.at,
                p.max_rel_error < r.primitive_tolerance ? "" : "  FAIL");
  }
  const bool ok = r.passed();
  std::printf("check-grad: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-aware timestep discretization on analytic Gaussian-mixture oracles"};
  app.require_subcommand(1);

  Common common;
  bool force = false;
  std::string strategy = "instance";
  std::size_t nfe = 3;
  bool resume = false;
  std::size_t stop_after = 0;
  std::size_t checkpoint_every = 0;
  std::string nfe_list;
  bool build = false;
  std::string out = "scatter.csv";
  double corrupt_tanh = 1.0;

  auto* gen = app.add_subcommand("gen-teacher", "Generate the teacher dataset");
  add_common(gen, common);
  gen->add_flag("--force", force, "Overwrite an existing dataset");

  auto* train = app.add_subcommand("train", "Train a learned strategy");
  add_common(train, common);
  train->add_option("--strategy", strategy, "global | overfit | instance")->required();
  train->add_option("--nfe", nfe, "Number of steps")->required()->check(CLI::PositiveNumber);
  train->add_flag("--resume", resume, "Continue from the last checkpoint");
  train->add_option("--stop-after", stop_after, "Stop after this many network steps (0 = run to the end)");
  train->add_option("--checkpoint-every", checkpoint_every, "Checkpoint every k network steps");

  auto* eval = app.add_subcommand("eval", "Evaluate a strategy on the teacher set");
  add_common(eval, common);
  eval->add_option("--strategy", strategy, "uniform | logsnr | polynomial | global | overfit | instance")->required();
  eval->add_option("--nfe", nfe, "Number of steps")->required()->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "Evaluate every configured strategy over an NFE list");
  add_common(sweep, common);
  sweep->add_option("--nfe-list", nfe_list, "e.g. 3..10 or 3,4,5 (default: from config)");
  sweep->add_flag("--build", build, "Generate missing teacher data and train missing artifacts");

  auto* scatter = app.add_subcommand("export-scatter", "Write per-sample (x_T, error) CSV");
  add_common(scatter, common);
  scatter->add_option("--strategy", strategy, "Strategy to evaluate")->required();
  scatter->add_option("--nfe", nfe, "Number of steps")->required()->check(CLI::PositiveNumber);
  scatter->add_option("-o,--out", out, "Output CSV");

  auto* check = app.add_subcommand("check-grad", "Compare tape gradients with finite differences");
  add_common(check, common);
  check->add_option("--corrupt-tanh", corrupt_tanh, "Scale the tanh partial (negative control)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const ExperimentConfig cfg = config_of(common);
    RunOptions opt;
    opt.jobs = common.jobs;
    opt.log = &std::cerr;

    if (*gen) {
      cmd_gen_teacher(cfg, force, opt);
    } else if (*train) {
      TrainOptions topt;
      topt.resume = resume;
      if (stop_after > 0) topt.stop_after = stop_after;
      topt.checkpoint_every = checkpoint_every;
      const auto path = cmd_train(cfg, strategy_from_string(strategy), nfe, opt, topt);
      std::cout << path.string() << "\n";
    } else if (*eval) {
      const auto r = cmd_eval(cfg, strategy_from_string(strategy), nfe, opt);
      std::cout << io::report_to_json(r).dump(2) << "\n";
    } else if (*sweep) {
      const auto list = nfe_list.empty() ? cfg.solver.nfe_list : parse_nfe_list(nfe_list);
      const auto result = cmd_sweep(cfg, list, build, opt);
      std::cout << io::read_text(cfg.sweep_path());
      if (!result.skipped.empty()) {
        std::cerr << "error: " << result.skipped.size() << " cell(s) skipped for missing artifacts\n";
        return 1;
      }
    } else if (*scatter) {
      cmd_export_scatter(cfg, strategy_from_string(strategy), nfe, out, opt);
    } else if (*check) {
      grad::testing::set_tanh_partial_scale(corrupt_tanh);
      return print_grad_report(cmd_check_grad(cfg));
    }
    return 0;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
