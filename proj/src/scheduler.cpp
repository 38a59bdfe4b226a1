#include "bd3mg/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "bd3mg/blur.hpp"

namespace bd3mg {

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::none: return "none";
    case StopReason::tolerance: return "tolerance";
    case StopReason::budget: return "budget";
  }
  return "unknown";
}

Master::Master(Volume3D x0, int workers, int block_height, int kz)
    : x_(std::move(x0)), workers_(workers), kz_(kz) {
  const Dims3& d = x_.dims();
  if (workers < 1) throw std::invalid_argument("need at least one worker");
  if (block_height < 1) throw std::invalid_argument("block height must be >= 1");
  if (!x_.all_finite()) throw std::invalid_argument("initial iterate is not finite");
  for (int z = 0; z < d.nz; z += block_height) blocks_.push_back({z, std::min(d.nz, z + block_height) - 1, d});
  if (std::int64_t(workers) * block_height > d.nz || workers > int(blocks_.size()))
    throw std::invalid_argument("too few slices for " + std::to_string(workers) + " workers with block height " +
                                std::to_string(block_height) + " (nz=" + std::to_string(d.nz) + ")");
  in_flight_.resize(std::size_t(workers));
  held_by_.assign(blocks_.size(), 0);
  prev_increment_.assign(x_.size(), 0.0);
  last_touch_.assign(std::size_t(d.nz), 0);
  visited_.assign(blocks_.size(), false);
  sweep_snapshot_ = x_;
}

std::vector<TaskMessage> Master::start() {
  std::vector<TaskMessage> tasks;
  for (int c = 1; c <= workers_; ++c) {
    grant(c, c - 1);
    tasks.push_back(make_task(c, blocks_[std::size_t(c - 1)]));
  }
  cursor_ = workers_ % block_count();
  return tasks;
}

void Master::grant(int worker_id, int block_index) {
  const SliceBlock& b = blocks_[std::size_t(block_index)];
  for (const auto& a : in_flight_)
    if (a && a->worker_id != worker_id && a->block.overlaps(b))
      throw ProtocolError("grant would overlap an in-flight block");
  in_flight_[std::size_t(worker_id - 1)] = Assignment{worker_id, b, k_};
  held_by_[std::size_t(block_index)] = worker_id;
  if (record_grants_) {
    GrantRecord rec{k_, worker_id, b, {}};
    for (const auto& a : in_flight_)
      if (a) rec.in_flight.push_back(a->block);
    grants_.push_back(std::move(rec));
  }
}

void Master::receive_update(const UpdateMessage& msg) {
  if (msg.worker_id < 1 || msg.worker_id > workers_)
    throw ProtocolError("update from unknown worker " + std::to_string(msg.worker_id));
  auto& slot = in_flight_[std::size_t(msg.worker_id - 1)];
  if (!slot) throw ProtocolError("worker " + std::to_string(msg.worker_id) + " has no in-flight assignment");
  if (!(slot->block == msg.block))
    throw ProtocolError("worker " + std::to_string(msg.worker_id) + " returned a block it was not assigned");
  if (msg.increment.size() != msg.block.voxels()) throw ProtocolError("increment length does not match block");
  for (double v : msg.increment)
    if (!std::isfinite(v)) throw std::runtime_error("non-finite increment from worker " + std::to_string(msg.worker_id));

  add_on_block(x_, msg.block, msg.increment);
  std::copy(msg.increment.begin(), msg.increment.end(),
            prev_increment_.begin() + std::ptrdiff_t(x_.dims().slice_voxels() * std::size_t(msg.block.z_lo)));

  const std::int64_t staleness = k_ - slot->issue_k;
  tau_hat_ = std::max(tau_hat_, staleness);
  updates_.push_back({std::int64_t(updates_.size()), msg.worker_id, msg.block, slot->issue_k, k_, staleness});

  ++k_;
  for (int z = msg.block.z_lo; z <= msg.block.z_hi; ++z) last_touch_[std::size_t(z)] = k_;

  const int index = msg.block.z_lo / blocks_.front().height();
  held_by_[std::size_t(index)] = 0;
  if (!visited_[std::size_t(index)]) {
    visited_[std::size_t(index)] = true;
    ++visited_count_;
  }
  slot.reset();
}

SliceBlock Master::next_block(int worker_id) {
  if (worker_id < 1 || worker_id > workers_) throw ProtocolError("unknown worker " + std::to_string(worker_id));
  if (in_flight_[std::size_t(worker_id - 1)]) throw ProtocolError("worker still holds an assignment");
  const int n = block_count();
  for (int step = 0; step < n; ++step) {
    const int idx = (cursor_ + step) % n;
    if (held_by_[std::size_t(idx)] == 0) {
      grant(worker_id, idx);
      cursor_ = (idx + 1) % n;
      return blocks_[std::size_t(idx)];
    }
  }
  throw ProtocolError("no free block available");
}

TaskMessage Master::make_task(int worker_id, const SliceBlock& block) {
  const auto& slot = in_flight_[std::size_t(worker_id - 1)];
  if (!slot || !(slot->block == block)) throw ProtocolError("make_task for a block that was not granted");
  const SliceBlock support = slab_support(kz_, block);
  TaskMessage t;
  t.worker_id = worker_id;
  t.block = block;
  t.x_slab = extract_slab(x_, support.z_lo, support.z_hi);
  const auto first = prev_increment_.begin() + std::ptrdiff_t(x_.dims().slice_voxels() * std::size_t(block.z_lo));
  t.d_mem.assign(first, first + std::ptrdiff_t(block.voxels()));
  t.issue_k = k_;
  return t;
}

bool Master::should_stop(double tol) {
  sweep_closed_ = false;
  if (visited_count_ == block_count()) {
    sweep_closed_ = true;
    ++sweeps_;
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < x_.size(); ++i) {
      const double d = x_[i] - sweep_snapshot_[i];
      diff += d * d;
      ref += sweep_snapshot_[i] * sweep_snapshot_[i];
    }
    const bool converged = std::isinf(tol) || diff == 0.0 || std::sqrt(diff) <= tol * std::sqrt(ref);
    sweep_snapshot_ = x_;
    std::fill(visited_.begin(), visited_.end(), false);
    visited_count_ = 0;
    if (converged) {
      stop_reason_ = StopReason::tolerance;
      return true;
    }
  }
  if (k_ >= max_updates_ || sweeps_ >= max_sweeps_) {
    stop_reason_ = StopReason::budget;
    return true;
  }
  return false;
}

std::vector<std::int64_t> Master::slice_delays() const {
  std::vector<std::int64_t> d(last_touch_.size());
  for (std::size_t z = 0; z < d.size(); ++z) d[z] = k_ - last_touch_[z];
  return d;
}

void write_trace_csv(const std::vector<UpdateRecord>& trace, std::ostream& os) {
  os << "event_index,worker_id,z_lo,z_hi,issue_k,receipt_k,staleness\n";
  for (const auto& r : trace)
    os << r.event_index << ',' << r.worker_id << ',' << r.block.z_lo << ',' << r.block.z_hi << ',' << r.issue_k << ','
       << r.receipt_k << ',' << r.staleness << '\n';
}

}  // namespace bd3mg
