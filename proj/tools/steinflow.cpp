#include "experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <tuple>

namespace {

namespace sc = steinflow::cli;

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_config = 2;
constexpr int exit_numerical = 3;

//! --threads wins over STEINFLOW_THREADS; neither keeps the OpenMP default.
void
configure_threads(int flag_value)
{
  int threads = flag_value;
  if (threads <= 0) {
    if (const char* env = std::getenv("STEINFLOW_THREADS"))
      threads = std::atoi(env);
  }
  steinflow::set_num_threads(threads);
}

int
command_run(const std::string& config_path,
            const std::string& output_override,
            int snapshot_every)
{
  sc::ExperimentConfig cfg = sc::load_config(config_path);
  if (!output_override.empty())
    cfg.output_dir = output_override;
  const sc::RunOutcome outcome = sc::run_experiment(cfg, snapshot_every);
  const auto& last = outcome.result.records.back();
  std::cout << sc::variant_name(cfg.schedule.variant) << ": "
            << outcome.result.grad_evals << " gradient evaluations, trace/d "
            << sc::format_double(last.cov_trace_over_d) << ", KSD "
            << sc::format_double(last.ksd) << ", log Z "
            << sc::format_double(outcome.result.log_z) << " -> "
            << cfg.output_dir << '\n';
  return exit_ok;
}

int
command_compare(const std::vector<std::string>& config_paths,
                const std::string& output_dir)
{
  if (config_paths.size() < 2)
    throw sc::ConfigError("compare needs at least two configs");
  std::vector<sc::ExperimentConfig> configs;
  for (const auto& path : config_paths)
    configs.push_back(sc::load_config(path));
  for (const auto& cfg : configs)
    if (cfg.target.raw != configs.front().target.raw)
      throw sc::ConfigError("compare: configs do not share a target");

  struct Row
  {
    long grad_evals;
    std::size_t run;
    long step;
    std::string line;
  };
  std::vector<Row> rows;
  for (std::size_t r = 0; r < configs.size(); ++r) {
    const sc::RunOutcome outcome = sc::run_experiment(configs[r]);
    for (const auto& rec : outcome.result.records) {
      std::string line = std::to_string(r) + ',' + config_paths[r] + ',' +
                         sc::variant_name(configs[r].schedule.variant) + ',' +
                         std::to_string(configs[r].seed) + ',' +
                         std::to_string(rec.step) + ',' +
                         sc::format_double(rec.t) + ',' +
                         std::to_string(rec.grad_evals) + ',' +
                         sc::format_double(rec.ksd) + ',' +
                         sc::format_double(rec.cov_trace_over_d) + ',' +
                         sc::format_double(rec.logz_partial) + ',' +
                         sc::format_double(rec.ess) + ',' +
                         sc::format_double(rec.test_accuracy);
      rows.push_back({ rec.grad_evals, r, rec.step, std::move(line) });
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.grad_evals, a.run, a.step) <
           std::tie(b.grad_evals, b.run, b.step);
  });

  std::filesystem::create_directories(output_dir);
  std::ofstream out(std::filesystem::path(output_dir) / "comparison.csv");
  out << "run,config,variant,seed,step,t,grad_evals,ksd,cov_trace_over_d,"
         "logz_partial,ess,test_accuracy\n";
  for (const auto& row : rows)
    out << row.line << '\n';
  std::cout << "compared " << configs.size() << " runs -> " << output_dir
            << "/comparison.csv\n";
  return exit_ok;
}

} // namespace

int
main(int argc, char** argv)
{
  CLI::App app{ "Particle samplers transporting a prior ensemble to the "
                "posterior" };
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "Worker threads for pairwise kernel assembly "
                 "(default: STEINFLOW_THREADS or all cores)");

  auto* run = app.add_subcommand("run", "Run one experiment config");
  std::string config_path;
  std::string run_output;
  int snapshot_every = 0;
  run->add_option("config", config_path, "Experiment JSON")->required();
  run->add_option("--threads", threads, "Worker threads");
  run->add_option("--snapshot-every", snapshot_every,
                  "Write particles_step_<n>.csv every M steps")
    ->check(CLI::NonNegativeNumber);
  run->add_option("-o,--output", run_output,
                  "Output directory (overrides output_dir)");

  auto* compare =
    app.add_subcommand("compare", "Run several configs on one target and "
                                  "merge their diagnostics");
  std::vector<std::string> compare_paths;
  std::string compare_output = "comparison";
  compare->add_option("configs", compare_paths, "Experiment JSON files");
  compare->add_option("--threads", threads, "Worker threads");
  compare->add_option("-o,--output", compare_output,
                      "Directory for comparison.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_config;
  }

  configure_threads(threads);
  try {
    if (run->parsed())
      return command_run(config_path, run_output, snapshot_every);
    return command_compare(compare_paths, compare_output);
  } catch (const sc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const steinflow::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return exit_config;
  } catch (const steinflow::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const steinflow::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const steinflow::DegenerateEnsembleError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_failure;
  }
}
