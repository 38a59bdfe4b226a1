#include "bd3mg/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <ostream>
#include <queue>
#include <thread>

#include "bd3mg/rng.hpp"

namespace bd3mg {

const char* to_string(Method m) {
  switch (m) {
    case Method::bd3mg: return "bd3mg";
    case Method::bp3mg: return "bp3mg";
    case Method::async_gd: return "async_gd";
    case Method::async_cg: return "async_cg";
    case Method::async_mm: return "async_mm";
  }
  return "unknown";
}

const char* to_string(Engine e) { return e == Engine::live ? "live" : "simulated"; }

Method parse_method(const std::string& s) {
  for (Method m : kAllMethods)
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

Engine parse_engine(const std::string& s) {
  if (s == "live") return Engine::live;
  if (s == "simulated") return Engine::simulated;
  throw std::invalid_argument("unknown engine '" + s + "'");
}

void RunConfig::validate() const {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (block_height < 1) throw std::invalid_argument("block_height must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be > 0");
  if (max_updates < 1 || max_sweeps < 1) throw std::invalid_argument("update and sweep budgets must be >= 1");
  if (!(mm.tol > 0.0) || mm.max_iterations < 1) throw std::invalid_argument("invalid Krylov options");
  if (!(service_base > 0.0) || !(service_jitter >= 0.0) || service_jitter >= service_base)
    throw std::invalid_argument("service times must satisfy base > jitter >= 0");
}

UpdateMessage compute_update(const Objective& obj, const TaskMessage& task, Method method, double lipschitz,
                             const KrylovOptions& mm, bool* solver_converged) {
  const BlockTask bt{obj, task.x_slab.view(), task.block, task.d_mem};
  UpdateMessage u{task.worker_id, task.block, {}, task.issue_k};
  if (solver_converged) *solver_converged = true;
  switch (method) {
    case Method::bd3mg:
    case Method::bp3mg: u.increment = mg_direction(bt); break;
    case Method::async_gd: u.increment = gd_direction(bt, lipschitz); break;
    case Method::async_cg: u.increment = cg_direction(bt, lipschitz); break;
    case Method::async_mm: {
      auto inc = mm_direction(bt, mm);
      if (solver_converged) *solver_converged = inc.solver_converged;
      u.increment = std::move(inc.step);
      break;
    }
  }
  return u;
}

namespace {

using Clock = std::chrono::steady_clock;

struct KernelSetup {
  Method method;
  double lipschitz;
  KrylovOptions mm;
};

// Runs worker tasks; the master loop only sees submit / wait_any.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual void submit(TaskMessage task) = 0;
  virtual UpdateMessage wait_any() = 0;
  int unconverged_solves = 0;
};

// Discrete-event interleaving: each task completes at issue time + a seeded
// service time; completions are processed in (time, worker) order.
class SimulatedExecutor final : public Executor {
 public:
  SimulatedExecutor(const Objective& obj, KernelSetup k, int workers, const RunConfig& cfg)
      : obj_(obj), kernel_(k), pending_(std::size_t(workers)), rng_(cfg.seed), base_(cfg.service_base),
        jitter_(cfg.service_jitter) {}

  void submit(TaskMessage task) override {
    const double service = jitter_ > 0.0 ? base_ + jitter_ * (2.0 * rng_.uniform() - 1.0) : base_;
    events_.push({now_ + service, task.worker_id});
    pending_[std::size_t(task.worker_id - 1)] = std::move(task);
  }

  UpdateMessage wait_any() override {
    if (events_.empty()) throw std::logic_error("no task in flight");
    const Event ev = events_.top();
    events_.pop();
    now_ = ev.time;
    bool converged = true;
    auto u = compute_update(obj_, pending_[std::size_t(ev.worker - 1)], kernel_.method, kernel_.lipschitz,
                            kernel_.mm, &converged);
    if (!converged) ++unconverged_solves;
    return u;
  }

 private:
  struct Event {
    double time;
    int worker;
    bool operator>(const Event& o) const { return time != o.time ? time > o.time : worker > o.worker; }
  };
  const Objective& obj_;
  KernelSetup kernel_;
  std::vector<TaskMessage> pending_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  Xoshiro256 rng_;
  double base_, jitter_;
  double now_ = 0.0;
};

template <class T>
class Channel {
 public:
  void push(T v) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  T pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty(); });
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
};

// One thread per worker. Master and workers share nothing mutable except the
// FIFO channels; tasks and updates are moved through them by value.
class LiveExecutor final : public Executor {
 public:
  LiveExecutor(const Objective& obj, KernelSetup k, int workers) : inboxes_(std::size_t(workers)) {
    threads_.reserve(std::size_t(workers));
    for (int c = 0; c < workers; ++c)
      threads_.emplace_back([this, &obj, k, c] { worker_loop(obj, k, inboxes_[std::size_t(c)]); });
  }

  ~LiveExecutor() override {
    for (auto& inbox : inboxes_) inbox.push(std::nullopt);
    for (auto& t : threads_) t.join();
  }

  void submit(TaskMessage task) override {
    const auto idx = std::size_t(task.worker_id - 1);
    inboxes_[idx].push(std::move(task));
  }

  UpdateMessage wait_any() override {
    Reply r = replies_.pop();
    if (r.error) {
      try {
        std::rethrow_exception(r.error);
      } catch (const std::exception& e) {
        throw RunAborted("worker " + std::to_string(r.worker_id) + " failed: " + e.what());
      }
    }
    if (!r.converged) ++unconverged_solves;
    return std::move(r.update);
  }

 private:
  struct Reply {
    int worker_id = 0;
    UpdateMessage update;
    std::exception_ptr error;
    bool converged = true;
  };

  void worker_loop(const Objective& obj, KernelSetup k, Channel<std::optional<TaskMessage>>& inbox) {
    while (true) {
      std::optional<TaskMessage> task = inbox.pop();
      if (!task) return;
      Reply r;
      r.worker_id = task->worker_id;
      try {
        r.update = compute_update(obj, *task, k.method, k.lipschitz, k.mm, &r.converged);
      } catch (...) {
        r.error = std::current_exception();
      }
      replies_.push(std::move(r));
    }
  }

  std::vector<Channel<std::optional<TaskMessage>>> inboxes_;
  Channel<Reply> replies_;
  std::vector<std::thread> threads_;
};

class Session {
 public:
  Session(const Objective& obj, References refs) : obj_(obj), refs_(refs), start_(Clock::now()) {}

  /// Solver time; objective and metric evaluation for the log is excluded.
  double elapsed() const { return std::chrono::duration<double>(Clock::now() - start_).count() - paused_; }

  void log(const Master& m) {
    const auto t0 = Clock::now();
    IterationLog e;
    e.k = m.k();
    e.sweep = m.sweeps_completed();
    e.wall_seconds = elapsed();
    e.f = eval_f(obj_, m.x());
    if (!std::isfinite(e.f)) throw RunAborted("non-finite objective at k=" + std::to_string(m.k()));
    if (refs_.truth) e.snr_db = snr_db(*refs_.truth, m.x());
    if (refs_.x_star) e.rel_dist = rel_dist(m.x(), *refs_.x_star);
    e.max_staleness = m.tau_hat();
    result.log.push_back(e);
    paused_ += std::chrono::duration<double>(Clock::now() - t0).count();
  }

  void finish(Master& m, const Executor& exec) {
    result.wall_seconds = elapsed();
    if (result.log.empty() || result.log.back().k != m.k()) log(m);
    result.stop_reason = m.stop_reason();
    result.tau_hat = m.tau_hat();
    result.updates = m.k();
    result.sweeps = m.sweeps_completed();
    result.trace = m.updates();
    result.grants = m.grants();
    result.unconverged_solves = exec.unconverged_solves;
    result.x_final = m.take_x();
  }

  RunResult result;

 private:
  const Objective& obj_;
  References refs_;
  Clock::time_point start_;
  double paused_ = 0.0;
};

std::unique_ptr<Executor> make_executor(const Objective& obj, const RunConfig& cfg, KernelSetup k) {
  if (cfg.engine == Engine::live) return std::make_unique<LiveExecutor>(obj, k, cfg.workers);
  return std::make_unique<SimulatedExecutor>(obj, k, cfg.workers, cfg);
}

KernelSetup kernel_setup(const Objective& obj, const RunConfig& cfg) {
  KernelSetup k{cfg.method, cfg.lipschitz, cfg.mm};
  if ((cfg.method == Method::async_gd || cfg.method == Method::async_cg) && !(k.lipschitz > 0.0))
    k.lipschitz = lipschitz_estimate(obj);
  return k;
}

Master make_master(const Objective& obj, const Volume3D& x0, const RunConfig& cfg) {
  if (x0.dims() != obj.dims()) throw std::invalid_argument("run: x0 dims differ from the objective's");
  Master m(x0, cfg.workers, cfg.block_height, obj.psf().kdims().kz);
  m.set_max_updates(cfg.max_updates);
  m.set_max_sweeps(cfg.max_sweeps);
  m.set_record_grants(cfg.record_grants);
  return m;
}

[[noreturn]] void abort_run(const Master& m, const RunConfig& cfg, const std::exception& e) {
  throw RunAborted(std::string("run aborted (method ") + to_string(cfg.method) + ", k=" + std::to_string(m.k()) +
                   ", sweep " + std::to_string(m.sweeps_completed()) + "): " + e.what());
}

RunResult run_async(const Objective& obj, const Volume3D& x0, const RunConfig& cfg, References refs) {
  cfg.validate();
  Master m = make_master(obj, x0, cfg);
  const KernelSetup k = kernel_setup(obj, cfg);
  Session session(obj, refs);
  auto exec = make_executor(obj, cfg, k);
  try {
    session.log(m);
    for (auto& t : m.start()) exec->submit(std::move(t));
    while (true) {
      const UpdateMessage u = exec->wait_any();
      m.receive_update(u);
      const bool stop = m.should_stop(cfg.tol);
      if (m.sweep_just_closed() && cfg.log_every_sweep) session.log(m);
      if (stop) break;
      const SliceBlock b = m.next_block(u.worker_id);
      exec->submit(m.make_task(u.worker_id, b));
    }
  } catch (const std::exception& e) {
    abort_run(m, cfg, e);
  }
  session.finish(m, *exec);
  return std::move(session.result);
}

}  // namespace

RunResult run_bp3mg_barrier(const Objective& obj, const Volume3D& x0, const RunConfig& cfg, References refs) {
  cfg.validate();
  Master m = make_master(obj, x0, cfg);
  const KernelSetup k = kernel_setup(obj, cfg);
  Session session(obj, refs);
  auto exec = make_executor(obj, cfg, k);
  try {
    session.log(m);
    if (cfg.track_cycle_objective) session.result.cycle_f.push_back(eval_f(obj, m.x()));
    std::vector<TaskMessage> tasks = m.start();
    while (true) {
      for (auto& t : tasks) exec->submit(std::move(t));
      std::vector<UpdateMessage> updates;
      for (int c = 0; c < cfg.workers; ++c) updates.push_back(exec->wait_any());
      std::sort(updates.begin(), updates.end(),
                [](const UpdateMessage& a, const UpdateMessage& b) { return a.worker_id < b.worker_id; });
      bool stop = false;
      for (const auto& u : updates) {
        m.receive_update(u);
        stop = m.should_stop(cfg.tol) || stop;
        if (m.sweep_just_closed() && cfg.log_every_sweep) session.log(m);
      }
      if (cfg.track_cycle_objective) session.result.cycle_f.push_back(eval_f(obj, m.x()));
      if (stop) break;
      tasks.clear();
      for (int c = 1; c <= cfg.workers; ++c) tasks.push_back(m.make_task(c, m.next_block(c)));
    }
  } catch (const std::exception& e) {
    abort_run(m, cfg, e);
  }
  session.finish(m, *exec);
  return std::move(session.result);
}

RunResult run(const Objective& obj, const Volume3D& x0, const RunConfig& cfg, References refs) {
  if (cfg.method == Method::bp3mg) return run_bp3mg_barrier(obj, x0, cfg, refs);
  return run_async(obj, x0, cfg, refs);
}

double stationarity(const Objective& obj, const Volume3D& x, std::optional<double> reference_grad_norm) {
  const double g = norm2(grad_f(obj, x).data());
  return reference_grad_norm ? g / (1.0 + *reference_grad_norm) : g;
}

void write_log_csv(const std::vector<IterationLog>& log, std::ostream& os, const std::string& method_label,
                   bool header) {
  const auto old_precision = os.precision(12);
  if (header) os << (method_label.empty() ? "" : "method,") << "k,wall_seconds,f,snr_db,rel_dist,max_staleness\n";
  for (const auto& e : log) {
    if (!method_label.empty()) os << method_label << ',';
    os << e.k << ',' << e.wall_seconds << ',' << e.f << ',';
    if (e.snr_db) os << *e.snr_db;
    os << ',';
    if (e.rel_dist) os << *e.rel_dist;
    os << ',' << e.max_staleness << '\n';
  }
  os.precision(old_precision);
}

}  // namespace bd3mg
