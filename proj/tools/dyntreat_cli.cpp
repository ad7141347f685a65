// Command-line front end: one subcommand per pipeline stage plus the full
// pipeline and the grid value solver.
#include "dyntreat/error.hpp"
#include "dyntreat/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic treatment allocation under a budget: estimation, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  bool deterministic = false;
  bool force = false;
  bool quiet = false;
  std::size_t time_steps = 200;

  app.add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Master seed; overrides the config");
  app.add_option("--out", out, "Output directory")->capture_default_str();
  auto* workers_opt = app.add_option("--workers", workers, "Training workers; overrides the config")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "Single-writer training; bitwise reproducible");
  app.add_flag("--force", force, "Rerun stages even when their inputs are unchanged");
  app.add_flag("--quiet", quiet, "No progress output");

  std::vector<CLI::App*> stage_cmds;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"synth", "Generate the synthetic data set named in the config"},
      {"estimate", "Cross-fitted doubly robust rewards"},
      {"cluster", "k-median clusters of the covariates"},
      {"rates", "Seasonal Poisson arrival rates per cluster"},
      {"ewm", "Static empirical welfare maximizing rule"},
      {"train", "Asynchronous actor-critic training"},
      {"evaluate", "Welfare of the trained policy"},
      {"compare", "Paired comparison against the static rule"},
      {"selectivity", "Rejections before each treatment"}};
  for (const auto& [name, help] : stages) stage_cmds.push_back(app.add_subcommand(name, help));
  auto* dp = app.add_subcommand("dp-solve", "Integrated value of the trained policy on a (z, t) grid");
  dp->add_option("--time-steps", time_steps, "Time cells of the grid")->capture_default_str();
  auto* pipe = app.add_subcommand("pipeline", "All stages in order, skipping those that are up to date");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // usage errors count as validation errors; --help exits 0
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    const dyntreat::PipelineConfig config = dyntreat::PipelineConfig::load(config_path);
    dyntreat::RunOptions opt;
    opt.out = out;
    if (*seed_opt) opt.seed = seed;
    if (*workers_opt) opt.workers = workers;
    opt.deterministic = deterministic;
    opt.force = force;
    opt.log = quiet ? nullptr : &std::cerr;

    if (*pipe) {
      for (const auto& r : dyntreat::run_pipeline(config, opt))
        std::cout << r.stage << (r.skipped ? " skipped" : " done") << '\n';
    } else if (*dp) {
      const auto r = dyntreat::run_dp_solve(config, opt, time_steps);
      for (const auto& f : r.outputs) std::cout << (opt.out / f).string() << '\n';
    } else {
      for (std::size_t i = 0; i < stages.size(); ++i)
        if (*stage_cmds[i]) {
          const auto r = dyntreat::run_stage(stages[i].first, config, opt);
          std::cout << r.stage << (r.skipped ? " skipped" : " done") << '\n';
        }
    }
    return kExitOk;
  } catch (const dyntreat::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const dyntreat::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const dyntreat::HashMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const dyntreat::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
