#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bd3mg/directions.hpp"
#include "bd3mg/objective.hpp"
#include "bd3mg/scheduler.hpp"
#include "bd3mg/volume.hpp"

namespace bd3mg {

enum class Method { bd3mg, bp3mg, async_gd, async_cg, async_mm };
enum class Engine { live, simulated };

const char* to_string(Method m);
const char* to_string(Engine e);
Method parse_method(const std::string& s);
Engine parse_engine(const std::string& s);
inline constexpr Method kAllMethods[] = {Method::bd3mg, Method::bp3mg, Method::async_gd, Method::async_cg,
                                         Method::async_mm};

struct RunConfig {
  Method method = Method::bd3mg;
  Engine engine = Engine::simulated;
  int workers = 1;
  int block_height = 1;
  double tol = 1e-6;
  std::int64_t max_updates = std::numeric_limits<std::int64_t>::max();
  std::int64_t max_sweeps = std::numeric_limits<std::int64_t>::max();
  std::uint64_t seed = 1;
  KrylovOptions mm;
  /// Simulated service time per task: base + uniform(-jitter, +jitter).
  double service_base = 1.0;
  double service_jitter = 0.3;
  /// Global Lipschitz bound for async_gd / async_cg; computed when <= 0.
  double lipschitz = 0.0;
  /// Evaluate f (and SNR / distance) at every completed sweep; otherwise only at start and end.
  bool log_every_sweep = true;
  /// Barrier mode only: record f after every cycle.
  bool track_cycle_objective = false;
  bool record_grants = false;

  void validate() const;
};

struct IterationLog {
  std::int64_t k = 0;
  std::int64_t sweep = 0;
  double wall_seconds = 0.0;
  double f = 0.0;
  std::optional<double> snr_db;
  std::optional<double> rel_dist;
  std::int64_t max_staleness = 0;
};

struct RunResult {
  Volume3D x_final;
  std::vector<IterationLog> log;
  StopReason stop_reason = StopReason::none;
  std::int64_t tau_hat = 0;
  std::int64_t updates = 0;
  std::int64_t sweeps = 0;
  double wall_seconds = 0.0;
  std::vector<UpdateRecord> trace;
  std::vector<GrantRecord> grants;
  /// f before the first cycle, then after each barrier cycle.
  std::vector<double> cycle_f;
  int unconverged_solves = 0;
};

/// Optional references for quality curves.
struct References {
  const Volume3D* truth = nullptr;
  const Volume3D* x_star = nullptr;
};

class RunAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker side of the protocol: one direction kernel evaluation on a task.
UpdateMessage compute_update(const Objective& obj, const TaskMessage& task, Method method, double lipschitz,
                             const KrylovOptions& mm, bool* solver_converged = nullptr);

RunResult run(const Objective& obj, const Volume3D& x0, const RunConfig& cfg, References refs = {});
/// Synchronous cycles: C tasks anchored at the same iterate, applied together.
RunResult run_bp3mg_barrier(const Objective& obj, const Volume3D& x0, const RunConfig& cfg, References refs = {});

/// |grad f(x)| / (1 + reference), or |grad f(x)| when no reference is given.
double stationarity(const Objective& obj, const Volume3D& x, std::optional<double> reference_grad_norm = std::nullopt);

/// Header k,wall_seconds,f,snr_db,rel_dist,max_staleness; with a label, a leading method column.
void write_log_csv(const std::vector<IterationLog>& log, std::ostream& os, const std::string& method_label = {},
                   bool header = true);

}  // namespace bd3mg
