#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bd3mg/volume.hpp"

namespace bd3mg {

struct Assignment {
  int worker_id = 0;  // 1-based
  SliceBlock block;
  std::int64_t issue_k = 0;
};

/// Master -> worker. Payload is copied at send time and never mutated afterwards.
struct TaskMessage {
  int worker_id = 0;
  SliceBlock block;
  Slab x_slab;                 // current x on slab_support(block)
  std::vector<double> d_mem;   // last increment applied on the block's voxels
  std::int64_t issue_k = 0;
};

/// Worker -> master.
struct UpdateMessage {
  int worker_id = 0;
  SliceBlock block;
  std::vector<double> increment;
  std::int64_t issue_k = 0;
};

/// One applied update, as logged in the trace CSV.
struct UpdateRecord {
  std::int64_t event_index = 0;
  int worker_id = 0;
  SliceBlock block;
  std::int64_t issue_k = 0;
  std::int64_t receipt_k = 0;
  std::int64_t staleness = 0;
};

/// The set of in-flight blocks right after a grant, for protocol checks.
struct GrantRecord {
  std::int64_t k = 0;
  int worker_id = 0;
  SliceBlock block;
  std::vector<SliceBlock> in_flight;
};

class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class StopReason { none, tolerance, budget };
const char* to_string(StopReason r);

/// Master state of the block-distributed scheme: the iterate, disjoint block
/// assignments, per-voxel last increments (memory directions), and the delay ledger.
class Master {
 public:
  /// Partitions z into ceil(nz / block_height) contiguous blocks. kz fixes the
  /// slab each task carries (see slab_support).
  Master(Volume3D x0, int workers, int block_height, int kz);

  /// Assigns the first C blocks to workers 1..C with zero memory directions.
  std::vector<TaskMessage> start();

  /// Applies the increment on the message's block and retires the assignment.
  void receive_update(const UpdateMessage& msg);
  /// Round-robin over the block partition, skipping blocks held by other workers.
  SliceBlock next_block(int worker_id);
  TaskMessage make_task(int worker_id, const SliceBlock& block);

  /// Called after each receive_update. Compares x with the start-of-sweep
  /// snapshot once every block has been updated since the last comparison.
  bool should_stop(double tol);
  void set_max_updates(std::int64_t n) { max_updates_ = n; }
  void set_max_sweeps(std::int64_t n) { max_sweeps_ = n; }

  const Volume3D& x() const { return x_; }
  Volume3D take_x() { return std::move(x_); }
  std::int64_t k() const { return k_; }
  int workers() const { return workers_; }
  int block_count() const { return int(blocks_.size()); }
  const std::vector<SliceBlock>& blocks() const { return blocks_; }
  int block_cursor() const { return cursor_; }
  const std::vector<std::optional<Assignment>>& in_flight() const { return in_flight_; }
  std::int64_t sweeps_completed() const { return sweeps_; }
  /// True if the last should_stop call closed a sweep.
  bool sweep_just_closed() const { return sweep_closed_; }
  StopReason stop_reason() const { return stop_reason_; }

  // Delay ledger.
  std::int64_t tau_hat() const { return tau_hat_; }
  const std::vector<UpdateRecord>& updates() const { return updates_; }
  const std::vector<GrantRecord>& grants() const { return grants_; }
  /// k - (iteration of the most recent update) for each slice; k for never-touched slices.
  std::vector<std::int64_t> slice_delays() const;
  void set_record_grants(bool on) { record_grants_ = on; }

 private:
  void grant(int worker_id, int block_index);

  Volume3D x_;
  int workers_;
  int kz_;
  std::vector<SliceBlock> blocks_;
  std::vector<std::optional<Assignment>> in_flight_;  // index worker_id - 1
  std::vector<int> held_by_;                          // block -> worker_id or 0
  std::vector<double> prev_increment_;
  std::vector<std::int64_t> last_touch_;
  int cursor_ = 0;
  std::int64_t k_ = 0;

  Volume3D sweep_snapshot_;
  std::vector<bool> visited_;
  int visited_count_ = 0;
  std::int64_t sweeps_ = 0;
  bool sweep_closed_ = false;
  std::int64_t max_updates_ = std::numeric_limits<std::int64_t>::max();
  std::int64_t max_sweeps_ = std::numeric_limits<std::int64_t>::max();
  StopReason stop_reason_ = StopReason::none;

  std::int64_t tau_hat_ = 0;
  std::vector<UpdateRecord> updates_;
  std::vector<GrantRecord> grants_;
  bool record_grants_ = false;
};

void write_trace_csv(const std::vector<UpdateRecord>& trace, std::ostream& os);

}  // namespace bd3mg
