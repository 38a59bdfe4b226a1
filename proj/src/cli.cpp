#include "bd3mg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <thread>

namespace bd3mg {

namespace {

std::ofstream open_output(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

// Runs a validation step and reports failures as configuration errors.
template <class F>
auto checked(const char* what, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", std::string(what) + ": " + e.what());
  }
}

std::int64_t positive_int(const Config& cfg, const std::string& key, std::int64_t fallback) {
  const auto v = cfg.get_int(key, fallback);
  if (v < 1) throw ConfigError(key, "must be >= 1");
  return v;
}

std::uint64_t seed_of(const Config& cfg, const std::string& key, std::uint64_t fallback) {
  const auto v = cfg.get_int(key, std::int64_t(fallback));
  if (v < 0) throw ConfigError(key, "seed must be non-negative");
  return std::uint64_t(v);
}

struct Instance {
  Objective obj;
  std::optional<Volume3D> truth;
};

Instance load_instance(const Config& cfg) {
  cfg.require({"observed", "psf"});
  const RegParams reg = reg_params_from(cfg);
  Volume3D y = load_volume(cfg.get_string("observed"));
  PsfStack psf = load_psf(cfg.get_string("psf"));
  if (y.dims() != psf.dims())
    throw std::runtime_error("observed volume " + to_string(y.dims()) + " does not match psf " + to_string(psf.dims()));
  std::optional<Volume3D> truth;
  if (cfg.has("truth")) {
    truth = load_volume(cfg.get_string("truth"));
    if (truth->dims() != y.dims()) throw std::runtime_error("truth dims differ from the observation");
  }
  return {Objective(std::move(psf), std::move(y), reg), std::move(truth)};
}

Volume3D initial_iterate(const Objective& obj, const Config& cfg) {
  return init_uniform(obj.dims(), obj.observation().max_value(), seed_of(cfg, "init_seed", 1));
}

// Sweep index of the first log entry with rel_dist <= threshold.
std::optional<std::int64_t> sweeps_to(const std::vector<IterationLog>& log, double threshold) {
  for (const auto& e : log)
    if (e.rel_dist && *e.rel_dist <= threshold) return e.sweep;
  return std::nullopt;
}

}  // namespace

RegParams reg_params_from(const Config& cfg) {
  RegParams p;
  p.lambda = cfg.get_double("lambda", p.lambda);
  p.eta = cfg.get_double("eta", p.eta);
  p.kappa = cfg.get_double("kappa", p.kappa);
  p.delta = cfg.get_double("delta", p.delta);
  p.x_min = cfg.get_double("x_min", p.x_min);
  p.x_max = cfg.get_double("x_max", p.x_max);
  checked("regularization", [&] { p.validate(); });
  return p;
}

RunConfig run_config_from(const Config& cfg) {
  RunConfig rc;
  rc.method = checked("method", [&] { return parse_method(cfg.get_string("method", "bd3mg")); });
  rc.engine = checked("engine", [&] { return parse_engine(cfg.get_string("engine", "simulated")); });
  rc.workers = int(positive_int(cfg, "workers", 1));
  rc.block_height = int(positive_int(cfg, "block_height", 1));
  rc.tol = cfg.get_double("tol", 1e-6);
  rc.max_sweeps = positive_int(cfg, "max_sweeps", 1000);
  rc.max_updates = positive_int(cfg, "max_updates", std::numeric_limits<std::int64_t>::max());
  rc.seed = seed_of(cfg, "run_seed", 1);
  rc.mm.tol = cfg.get_double("cg_tol", rc.mm.tol);
  rc.mm.max_iterations = int(positive_int(cfg, "cg_maxit", rc.mm.max_iterations));
  rc.service_base = cfg.get_double("service_base", rc.service_base);
  rc.service_jitter = cfg.get_double("service_jitter", rc.service_jitter);
  rc.log_every_sweep = cfg.get_bool("log_every_sweep", true);
  checked("run settings", [&] { rc.validate(); });
  return rc;
}

PsfRanges psf_ranges_from(const Config& cfg) {
  PsfRanges r;
  r.sigma1 = cfg.get_interval("sigma1", r.sigma1);
  r.sigma2 = cfg.get_interval("sigma2", r.sigma2);
  r.sigma3 = cfg.get_interval("sigma3", r.sigma3);
  r.phi = cfg.get_interval("phi", r.phi);
  r.theta = cfg.get_interval("theta", r.theta);
  for (const char* key : {"sigma1", "sigma2", "sigma3"}) {
    const Interval& s = key[5] == '1' ? r.sigma1 : key[5] == '2' ? r.sigma2 : r.sigma3;
    if (!(s.lo > 0.0)) throw ConfigError(key, "standard deviations must be positive");
  }
  return r;
}

void cmd_phantom(const Config& cfg, std::ostream& out) {
  cfg.require({"dims", "output"});
  const Dims3 dims = cfg.get_dims("dims");
  const auto seed = seed_of(cfg, "seed", 0);
  const std::string path = cfg.get_string("output");
  save_volume(phantom(dims, seed), path);
  out << "phantom " << to_string(dims) << " seed " << seed << " -> " << path << "\n";
}

void cmd_degrade(const Config& cfg, std::ostream& out) {
  cfg.require({"truth", "observed", "psf"});
  const KernelDims kdims = cfg.get_kernel_dims("kernel", {5, 5, 3});
  const PsfRanges ranges = psf_ranges_from(cfg);
  const double sigma = cfg.get_double("noise_sigma", 0.0);
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noise_sigma", "must be finite and >= 0");
  const auto psf_seed = seed_of(cfg, "psf_seed", 0);
  const auto noise_seed = seed_of(cfg, "noise_seed", 0);

  const Volume3D truth = load_volume(cfg.get_string("truth"));
  checked("kernel", [&] { kdims.validate(truth.dims()); });
  const PsfStack psf = generate_psf_stack(truth.dims(), kdims, ranges, psf_seed);
  const Volume3D y = add_gaussian_noise(apply_H(psf, truth), sigma, noise_seed);
  save_volume(y, cfg.get_string("observed"));
  save_psf(psf, cfg.get_string("psf"));
  out << std::setprecision(6) << "input SNR " << snr_db(truth, y) << " dB\n";
}

void cmd_restore(const Config& cfg, std::ostream& out) {
  cfg.require({"observed", "psf", "output"});
  const RunConfig rc = run_config_from(cfg);
  const Instance inst = load_instance(cfg);
  const Volume3D x0 = initial_iterate(inst.obj, cfg);
  References refs;
  if (inst.truth) refs.truth = &*inst.truth;

  const RunResult res = run(inst.obj, x0, rc, refs);
  save_volume(res.x_final, cfg.get_string("output"));
  if (cfg.has("log")) {
    auto os = open_output(cfg.get_string("log"));
    write_log_csv(res.log, os);
  }
  if (cfg.has("trace")) {
    auto os = open_output(cfg.get_string("trace"));
    write_trace_csv(res.trace, os);
  }
  out << std::setprecision(10) << "method " << to_string(rc.method) << " workers " << rc.workers << "\n"
      << "final f " << res.log.back().f << "\n";
  if (inst.truth) out << "SNR " << std::setprecision(6) << snr_db(*inst.truth, res.x_final) << " dB\n";
  out << "tau_hat " << res.tau_hat << "\n"
      << "updates " << res.updates << " sweeps " << res.sweeps << "\n"
      << "stop " << to_string(res.stop_reason) << "\n";
}

void cmd_ablate(const Config& cfg, std::ostream& out) {
  cfg.require({"observed", "psf", "log"});
  RunConfig base = run_config_from(cfg);
  const auto sweeps = positive_int(cfg, "sweeps", 200);
  const auto factor = positive_int(cfg, "reference_factor", 10);
  if (factor < 10) throw ConfigError("reference_factor", "reference run must use at least 10x the sweep budget");
  const Instance inst = load_instance(cfg);
  const Volume3D x0 = initial_iterate(inst.obj, cfg);

  RunConfig ref_cfg = base;
  ref_cfg.method = Method::bd3mg;
  ref_cfg.max_sweeps = sweeps * factor;
  ref_cfg.max_updates = std::numeric_limits<std::int64_t>::max();
  ref_cfg.tol = std::min(base.tol, 1e-14);
  ref_cfg.log_every_sweep = false;
  const RunResult ref = run(inst.obj, x0, ref_cfg);
  const Volume3D& x_star = ref.x_final;
  out << std::setprecision(10) << "reference: " << ref.sweeps << " sweeps, f " << ref.log.back().f << "\n";
  if (cfg.has("output")) save_volume(x_star, cfg.get_string("output"));

  References refs;
  refs.x_star = &x_star;
  if (inst.truth) refs.truth = &*inst.truth;

  auto os = open_output(cfg.get_string("log"));
  write_log_csv({}, os, "method");
  for (Method m : kAllMethods) {
    RunConfig rc = base;
    rc.method = m;
    rc.max_sweeps = sweeps;
    try {
      const RunResult r = run(inst.obj, x0, rc, refs);
      write_log_csv(r.log, os, to_string(m), false);
      const auto reached = sweeps_to(r.log, 1e-3);
      out << std::left << std::setw(9) << to_string(m) << " f " << r.log.back().f << "  sweeps " << r.sweeps
          << "  to rel_dist<=1e-3: " << (reached ? std::to_string(*reached) : std::string("not reached"))
          << "  wall " << r.wall_seconds << " s\n";
    } catch (const std::exception& e) {
      out << std::left << std::setw(9) << to_string(m) << " FAILED: " << e.what() << "\n";
    }
  }
}

void cmd_speedup(const Config& cfg, std::ostream& out, std::ostream& err) {
  cfg.require({"observed", "psf", "log", "workers_list"});
  RunConfig base = run_config_from(cfg);
  base.engine = Engine::live;
  base.log_every_sweep = false;
  std::vector<int> counts;
  for (auto c : cfg.get_int_list("workers_list")) {
    if (c < 1) throw ConfigError("workers_list", "worker counts must be >= 1");
    counts.push_back(int(c));
  }
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  const bool oversubscribe = cfg.get_bool("allow_oversubscribe", false);
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());

  const Instance inst = load_instance(cfg);
  const Volume3D x0 = initial_iterate(inst.obj, cfg);

  auto os = open_output(cfg.get_string("log"));
  os << "method,C,wall_seconds,ratio_vs_smallest_C\n" << std::setprecision(12);
  for (Method m : {Method::bd3mg, Method::bp3mg}) {
    std::optional<double> t_ref;
    for (int c : counts) {
      if (unsigned(c) > cores && !oversubscribe) {
        err << "warning: skipping C=" << c << " (" << cores << " hardware threads)\n";
        continue;
      }
      RunConfig rc = base;
      rc.method = m;
      rc.workers = c;
      const RunResult r = run(inst.obj, x0, rc);
      if (!t_ref) t_ref = r.wall_seconds;
      const double ratio = *t_ref / r.wall_seconds;
      os << to_string(m) << ',' << c << ',' << r.wall_seconds << ',' << ratio << '\n';
      out << to_string(m) << " C=" << c << " wall " << r.wall_seconds << " s ratio " << ratio << " stop "
          << to_string(r.stop_reason) << "\n";
    }
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Asynchronous block-distributed MM memory-gradient solver for 3D deconvolution"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  const std::map<std::string, std::string> descriptions = {
      {"phantom", "write a synthetic phantom volume"},
      {"degrade", "blur and add noise to a volume; writes the observation and the PSF stack"},
      {"restore", "run one method on an observation"},
      {"ablate", "run all five methods against a long reference run"},
      {"speedup", "time bd3mg and bp3mg over a list of worker counts (live engine)"}};
  for (const auto& [name, help] : descriptions) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key=value experiment file")->required();
    sub->add_option("--override", overrides, "key=value applied after the file (repeatable)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  Config cfg;
  try {
    cfg = Config::load(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (cmd == "phantom") cmd_phantom(cfg, out);
    else if (cmd == "degrade") cmd_degrade(cfg, out);
    else if (cmd == "restore") cmd_restore(cfg, out);
    else if (cmd == "ablate") cmd_ablate(cfg, out);
    else cmd_speedup(cfg, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace bd3mg
