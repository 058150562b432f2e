#pragma once

#include "steinflow/steinflow.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace steinflow::cli {

using nlohmann::json;

//! Invalid or inconsistent experiment configuration (exit code 2).
class ConfigError : public Error
{
public:
  using Error::Error;
};

struct SyntheticData
{
  Eigen::Index n = 500;
  Eigen::Index p = 20;
  double margin = 1.0;
  std::uint64_t seed = 0;
};

struct TargetSpec
{
  std::string kind;
  Eigen::Index d = 1;
  double sigma = targets::joker_default_sigma;
  std::uint64_t seed_truth = 0;
  bool literal_cos = false;
  std::string dataset_path;
  std::optional<SyntheticData> synthetic;
  bool bias = true;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  //! canonical JSON, used to check that compared configs share a target
  json raw;
};

struct ExperimentConfig
{
  TargetSpec target;
  KernelConfig kernel = KernelConfig::squared_exponential_median();
  Schedule schedule;
  Eigen::Index n_particles = 0;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  int diagnostics_every = 1;
  int ksd_every = 1;
};

namespace detail {

//! Rejects keys of obj outside allowed; path prefixes the message.
inline void
check_keys(const json& obj,
           const std::string& path,
           std::initializer_list<std::string_view> allowed)
{
  if (!obj.is_object())
    throw ConfigError(path + ": expected an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (auto key : allowed)
      known = known || item.key() == key;
    if (!known)
      throw ConfigError("unknown key '" + path + "." + item.key() + "'");
  }
}

inline std::string
key_path(const std::string& path, const std::string& key)
{
  return path.empty() ? key : path + "." + key;
}

inline const json&
require(const json& obj, const std::string& path, const std::string& key)
{
  if (!obj.contains(key))
    throw ConfigError("missing required key '" + key_path(path, key) + "'");
  return obj.at(key);
}

template<class T>
T
read_as(const json& value, const std::string& where)
{
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + where + "' has the wrong type");
  }
}

template<class T>
T
get_or(const json& obj, const std::string& path, const std::string& key, T fallback)
{
  if (!obj.contains(key))
    return fallback;
  return read_as<T>(obj.at(key), key_path(path, key));
}

template<class T>
T
get_required(const json& obj, const std::string& path, const std::string& key)
{
  return read_as<T>(require(obj, path, key), key_path(path, key));
}

inline Variant
parse_variant(const std::string& name)
{
  if (name == "stein_transport")
    return Variant::stein_transport;
  if (name == "adjusted")
    return Variant::adjusted;
  if (name == "svgd")
    return Variant::svgd;
  if (name == "gradient_free")
    return Variant::gradient_free;
  if (name == "weighted")
    return Variant::weighted;
  throw ConfigError("schedule.variant: unknown variant '" + name + "'");
}

inline TargetSpec
parse_target(const json& obj)
{
  TargetSpec spec;
  spec.raw = obj;
  spec.kind = get_required<std::string>(obj, "target", "kind");
  if (spec.kind == "gaussian") {
    check_keys(obj, "target", { "kind", "d" });
    spec.d = get_required<Eigen::Index>(obj, "target", "d");
  } else if (spec.kind == "joker") {
    check_keys(obj, "target", { "kind", "sigma", "seed_truth" });
    spec.d = 2;
    spec.sigma = get_or(obj, "target", "sigma", targets::joker_default_sigma);
    spec.seed_truth = get_required<std::uint64_t>(obj, "target", "seed_truth");
  } else if (spec.kind == "low_rank_mixture") {
    check_keys(obj, "target", { "kind", "d", "literal_cos" });
    spec.d = get_required<Eigen::Index>(obj, "target", "d");
    spec.literal_cos = get_or(obj, "target", "literal_cos", false);
  } else if (spec.kind == "logistic") {
    check_keys(obj, "target",
               { "kind", "dataset_path", "synthetic", "bias", "test_fraction",
                 "split_seed" });
    spec.bias = get_or(obj, "target", "bias", true);
    spec.test_fraction = get_or(obj, "target", "test_fraction", 0.2);
    spec.split_seed = get_or<std::uint64_t>(obj, "target", "split_seed", 0);
    const bool has_path = obj.contains("dataset_path");
    const bool has_synth = obj.contains("synthetic");
    if (has_path == has_synth)
      throw ConfigError(
        "target: logistic needs exactly one of 'target.dataset_path' and "
        "'target.synthetic'");
    if (has_path) {
      spec.dataset_path =
        get_required<std::string>(obj, "target", "dataset_path");
      if (!std::filesystem::is_regular_file(spec.dataset_path))
        throw ConfigError("key 'target.dataset_path': file '" +
                          spec.dataset_path + "' does not exist");
    } else {
      const json& s = obj.at("synthetic");
      check_keys(s, "target.synthetic", { "n", "p", "margin", "seed" });
      SyntheticData synth;
      synth.n = get_or<Eigen::Index>(s, "target.synthetic", "n", synth.n);
      synth.p = get_or<Eigen::Index>(s, "target.synthetic", "p", synth.p);
      synth.margin = get_or(s, "target.synthetic", "margin", synth.margin);
      synth.seed = get_or<std::uint64_t>(s, "target.synthetic", "seed", 0);
      spec.synthetic = synth;
    }
  } else {
    throw ConfigError("target.kind: unknown target '" + spec.kind + "'");
  }
  return spec;
}

inline KernelConfig
parse_kernel(const json& obj)
{
  check_keys(obj, "kernel", { "family", "bandwidth", "sigma2" });
  const auto family =
    get_or<std::string>(obj, "kernel", "family", "squared_exponential");
  if (family == "inverse_multiquadric") {
    if (obj.contains("bandwidth") || obj.contains("sigma2"))
      throw ConfigError("kernel: inverse_multiquadric takes no bandwidth");
    return KernelConfig::inverse_multiquadric();
  }
  if (family != "squared_exponential")
    throw ConfigError("kernel.family: unknown family '" + family + "'");
  const auto policy = get_or<std::string>(obj, "kernel", "bandwidth", "median");
  if (policy == "median") {
    if (obj.contains("sigma2"))
      throw ConfigError("kernel: 'kernel.sigma2' requires bandwidth 'fixed'");
    return KernelConfig::squared_exponential_median();
  }
  if (policy != "fixed")
    throw ConfigError("kernel.bandwidth: expected 'median' or 'fixed'");
  const double sigma2 = get_required<double>(obj, "kernel", "sigma2");
  if (!(sigma2 > 0.0))
    throw ConfigError("key 'kernel.sigma2' must be positive");
  return KernelConfig::squared_exponential(sigma2);
}

inline Schedule
parse_schedule(const json& obj)
{
  check_keys(obj, "schedule",
             { "variant", "n_steps", "lambda", "n_adjust", "dt_adjust",
               "adjust_optimizer", "svgd_steps", "adagrad" });
  Schedule s;
  s.variant =
    parse_variant(get_required<std::string>(obj, "schedule", "variant"));
  s.n_steps = get_or(obj, "schedule", "n_steps", s.n_steps);
  s.lambda = get_or(obj, "schedule", "lambda", s.lambda);
  s.n_adjust = get_or(obj, "schedule", "n_adjust", s.n_adjust);
  s.dt_adjust = get_or(obj, "schedule", "dt_adjust", s.dt_adjust);
  s.svgd_steps = get_or(obj, "schedule", "svgd_steps", s.svgd_steps);
  const auto opt =
    get_or<std::string>(obj, "schedule", "adjust_optimizer", "plain");
  if (opt == "plain")
    s.adjust_optimizer = AdjustOptimizer::plain;
  else if (opt == "adagrad")
    s.adjust_optimizer = AdjustOptimizer::adagrad;
  else
    throw ConfigError("schedule.adjust_optimizer: expected 'plain' or "
                      "'adagrad'");
  if (obj.contains("adagrad")) {
    const json& a = obj.at("adagrad");
    check_keys(a, "schedule.adagrad", { "learning_rate", "decay", "eps" });
    if (a.contains("learning_rate"))
      s.adagrad.learning_rate = get_required<double>(
        a, "schedule.adagrad", "learning_rate");
    s.adagrad.decay = get_or(a, "schedule.adagrad", "decay", s.adagrad.decay);
    s.adagrad.eps = get_or(a, "schedule.adagrad", "eps", s.adagrad.eps);
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

} // namespace detail

inline ExperimentConfig
parse_config(const json& root)
{
  detail::check_keys(root, "",
                     { "target", "kernel", "schedule", "n_particles", "seed",
                       "output_dir", "diagnostics_every", "ksd_every" });
  ExperimentConfig cfg;
  cfg.target = detail::parse_target(detail::require(root, "", "target"));
  if (root.contains("kernel"))
    cfg.kernel = detail::parse_kernel(root.at("kernel"));
  cfg.schedule = detail::parse_schedule(detail::require(root, "", "schedule"));
  cfg.n_particles = detail::get_required<Eigen::Index>(root, "", "n_particles");
  cfg.seed = detail::get_required<std::uint64_t>(root, "", "seed");
  cfg.output_dir = detail::get_or<std::string>(root, "", "output_dir", "out");
  cfg.diagnostics_every = detail::get_or(root, "", "diagnostics_every", 1);
  cfg.ksd_every = detail::get_or(root, "", "ksd_every", 1);
  if (cfg.n_particles < 1)
    throw ConfigError("key 'n_particles' must be >= 1");
  if (cfg.target.d < 1)
    throw ConfigError("key 'target.d' must be >= 1");
  if (cfg.diagnostics_every < 1)
    throw ConfigError("key 'diagnostics_every' must be >= 1");
  if (cfg.ksd_every < 0)
    throw ConfigError("key 'ksd_every' must be >= 0");
  return cfg;
}

inline ExperimentConfig
load_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(root);
}

//! Target plus the held-out split for logistic problems.
struct Problem
{
  TargetProblem target;
  std::optional<LabelledData> test;
};

inline Problem
build_problem(const TargetSpec& spec)
{
  Problem out;
  if (spec.kind == "gaussian") {
    out.target = targets::gaussian_conjugate(spec.d);
  } else if (spec.kind == "joker") {
    out.target = targets::joker_from_seed(spec.sigma, spec.seed_truth);
  } else if (spec.kind == "low_rank_mixture") {
    out.target = targets::low_rank_mixture(spec.d, spec.literal_cos);
  } else {
    LabelledData raw;
    if (spec.synthetic) {
      Rng rng(spec.synthetic->seed);
      raw = dataset::make_separable(spec.synthetic->n, spec.synthetic->p,
                                    spec.synthetic->margin, rng);
    } else {
      raw = dataset::read_csv(spec.dataset_path);
    }
    const Dataset data = dataset::prepare(
      raw, SplitOptions{ spec.bias, spec.test_fraction, spec.split_seed });
    out.target =
      targets::logistic_regression(data.train.features, data.train.labels);
    if (data.test.features.rows() > 0)
      out.test = data.test;
  }
  return out;
}

//! Fixed 17-significant-digit formatting, independent of the locale.
inline std::string
format_double(double value)
{
  if (std::isnan(value))
    return "nan";
  char buf[64];
  const auto res =
    std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline void
write_diagnostics(std::ostream& out,
                  const std::vector<DiagnosticsRecord>& records,
                  Eigen::Index dim)
{
  out << "step,t,grad_evals,ksd,cov_trace_over_d,logz_partial,ess,h_mean,"
         "test_accuracy,ess_warning";
  for (Eigen::Index k = 0; k < dim; ++k)
    out << ",mean_" << k;
  out << '\n';
  for (const auto& r : records) {
    out << r.step << ',' << format_double(r.t) << ',' << r.grad_evals << ','
        << format_double(r.ksd) << ',' << format_double(r.cov_trace_over_d)
        << ',' << format_double(r.logz_partial) << ',' << format_double(r.ess)
        << ',' << format_double(r.h_mean) << ','
        << format_double(r.test_accuracy) << ',' << (r.ess_warning ? 1 : 0);
    for (Eigen::Index k = 0; k < dim; ++k)
      out << ',' << format_double(r.mean(k));
    out << '\n';
  }
}

//! One row per particle: coordinates x_0..x_{d-1}, then the weight.
inline void
write_particles(std::ostream& out, const Ensemble& ens)
{
  for (Eigen::Index k = 0; k < ens.dim(); ++k)
    out << (k == 0 ? "" : ",") << "x_" << k;
  out << ",weight\n";
  for (Eigen::Index i = 0; i < ens.size(); ++i) {
    for (Eigen::Index k = 0; k < ens.dim(); ++k)
      out << format_double(ens.positions(i, k)) << ',';
    out << format_double(ens.weights(i)) << '\n';
  }
}

inline std::string
variant_name(Variant v)
{
  switch (v) {
    case Variant::stein_transport:
      return "stein_transport";
    case Variant::adjusted:
      return "adjusted";
    case Variant::svgd:
      return "svgd";
    case Variant::gradient_free:
      return "gradient_free";
    case Variant::weighted:
      return "weighted";
  }
  return "unknown";
}

struct RunOutcome
{
  RunResult result;
  Eigen::Index dim = 0;
  double wall_seconds = 0.0;
};

//! Runs the configured sampler. snapshot_every > 0 writes
//! particles_step_<n>.csv into output_dir every that many steps.
inline RunOutcome
run_experiment(const ExperimentConfig& cfg, int snapshot_every = 0)
{
  const Problem problem = build_problem(cfg.target);
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);

  RunOptions options;
  options.diagnostics_every = cfg.diagnostics_every;
  options.ksd_every = cfg.ksd_every;
  if (problem.test) {
    const LabelledData test = *problem.test;
    options.accuracy = [test](const Ensemble& ens) {
      return diagnostics::test_accuracy(ens, test.features, test.labels);
    };
  }
  if (snapshot_every > 0) {
    options.on_step = [dir, snapshot_every](long step, const Ensemble& ens) {
      if (step % snapshot_every != 0)
        return;
      std::ofstream out(dir / ("particles_step_" + std::to_string(step) + ".csv"));
      write_particles(out, ens);
    };
  }

  Rng rng(cfg.seed);
  const auto start = std::chrono::steady_clock::now();
  RunOutcome outcome;
  outcome.result = dynamics::run(problem.target, cfg.kernel, cfg.schedule,
                                 cfg.n_particles, rng, options);
  outcome.wall_seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  outcome.dim = problem.target.dim;

  const RunResult& res = outcome.result;
  {
    std::ofstream out(dir / "diagnostics.csv");
    write_diagnostics(out, res.records, outcome.dim);
  }
  {
    std::ofstream out(dir / "particles_final.csv");
    write_particles(out, res.ensemble);
  }

  auto nan_to_null = [](double v) -> json {
    return std::isfinite(v) ? json(v) : json(nullptr);
  };
  const DiagnosticsRecord& last = res.records.back();
  json summary;
  summary["target"] = cfg.target.raw;
  summary["variant"] = variant_name(cfg.schedule.variant);
  summary["n_particles"] = cfg.n_particles;
  summary["seed"] = cfg.seed;
  summary["dim"] = outcome.dim;
  summary["grad_evals"] = res.grad_evals;
  summary["initial_ksd"] = nan_to_null(res.records.front().ksd);
  summary["final_ksd"] = nan_to_null(last.ksd);
  summary["mean"] = std::vector<double>(last.mean.data(),
                                        last.mean.data() + last.mean.size());
  summary["cov_trace_over_d"] = last.cov_trace_over_d;
  summary["log_z"] = nan_to_null(res.log_z);
  if (problem.target.reference && problem.target.reference->log_z1)
    summary["log_z_reference"] = *problem.target.reference->log_z1;
  summary["ess"] = last.ess;
  summary["test_accuracy"] = nan_to_null(last.test_accuracy);
  summary["wall_time_seconds"] = outcome.wall_seconds;
  std::ofstream out(dir / "summary.json");
  out << summary.dump(2) << '\n';
  return outcome;
}

} // namespace steinflow::cli
