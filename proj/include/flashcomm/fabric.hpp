// Copyright 2026 The FlashComm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flashcomm/errors.hpp"

namespace flashcomm {

// Flat homogeneous fabric: every rank pair is joined by an identical link.
// qdq_cost is seconds per quantize-or-dequantize pass per MiB of FP16 payload.
struct FabricTopology {
  int world_size = 1;
  double link_bandwidth = 64e9;  // bytes / second
  double base_latency = 10e-6;   // seconds / message round
  double qdq_cost = 0.0;
  std::string name;

  void validate() const {
    if (world_size < 1) throw ConfigError("world_size must be at least 1");
    if (!(link_bandwidth > 0.0)) throw ConfigError("link_bandwidth must be positive");
    if (base_latency < 0.0 || qdq_cost < 0.0) throw ConfigError("latencies must be non-negative");
  }
};

enum class Phase : std::size_t { kReduce = 0, kGather = 1, kOther = 2 };

inline constexpr std::size_t kPhaseCount = 3;

struct StepCounters {
  std::uint64_t reduce_steps = 0;
  std::uint64_t gather_steps = 0;
  std::uint64_t qdq_passes = 0;

  friend bool operator==(const StepCounters&, const StepCounters&) = default;
};

// Byte/message accounting for one run. Self-transfers never reach the fabric,
// so the diagonal stays zero.
struct TrafficLedger {
  int world_size = 0;
  std::vector<std::uint64_t> bytes;     // [from * world_size + to]
  std::vector<std::uint64_t> messages;  // [from * world_size + to]
  std::vector<std::uint64_t> received;  // per receiving rank
  std::vector<std::array<std::uint64_t, kPhaseCount>> phase_bytes;  // per sending rank
  std::vector<StepCounters> steps;                                  // per rank

  TrafficLedger() = default;
  explicit TrafficLedger(int n)
      : world_size(n),
        bytes(static_cast<std::size_t>(n) * n, 0),
        messages(static_cast<std::size_t>(n) * n, 0),
        received(static_cast<std::size_t>(n), 0),
        phase_bytes(static_cast<std::size_t>(n), {0, 0, 0}),
        steps(static_cast<std::size_t>(n)) {}

  std::uint64_t bytes_sent(int from, int to) const { return bytes[index(from, to)]; }
  std::uint64_t messages_sent(int from, int to) const { return messages[index(from, to)]; }

  std::uint64_t bytes_sent_by(int rank) const {
    std::uint64_t total = 0;
    for (int to = 0; to < world_size; ++to) total += bytes_sent(rank, to);
    return total;
  }

  std::uint64_t bytes_in_phase(int rank, Phase p) const {
    return phase_bytes[static_cast<std::size_t>(rank)][static_cast<std::size_t>(p)];
  }

  std::uint64_t total_bytes_sent() const {
    std::uint64_t total = 0;
    for (auto b : bytes) total += b;
    return total;
  }

  std::uint64_t total_bytes_received() const {
    std::uint64_t total = 0;
    for (auto b : received) total += b;
    return total;
  }

  nlohmann::json to_json() const {
    nlohmann::json links = nlohmann::json::array();
    for (int f = 0; f < world_size; ++f) {
      for (int t = 0; t < world_size; ++t) {
        if (f == t) continue;
        links.push_back({{"sender", f}, {"receiver", t}, {"bytes", bytes_sent(f, t)}, {"messages", messages_sent(f, t)}});
      }
    }
    nlohmann::json ranks = nlohmann::json::array();
    for (int r = 0; r < world_size; ++r) {
      const auto& s = steps[static_cast<std::size_t>(r)];
      ranks.push_back({{"rank", r},
                       {"bytes_sent", bytes_sent_by(r)},
                       {"bytes_received", received[static_cast<std::size_t>(r)]},
                       {"reduce_phase_bytes", bytes_in_phase(r, Phase::kReduce)},
                       {"gather_phase_bytes", bytes_in_phase(r, Phase::kGather)},
                       {"reduce_steps", s.reduce_steps},
                       {"gather_steps", s.gather_steps},
                       {"qdq_passes", s.qdq_passes}});
    }
    return {{"world_size", world_size}, {"links", links}, {"ranks", ranks}};
  }

  // One row per ordered rank pair: sender,receiver,bytes,messages.
  std::string to_csv() const {
    std::ostringstream os;
    os << "sender,receiver,bytes,messages\n";
    for (int f = 0; f < world_size; ++f) {
      for (int t = 0; t < world_size; ++t) {
        if (f == t) continue;
        os << f << ',' << t << ',' << bytes_sent(f, t) << ',' << messages_sent(f, t) << '\n';
      }
    }
    return os.str();
  }

  friend bool operator==(const TrafficLedger&, const TrafficLedger&) = default;

 private:
  std::size_t index(int from, int to) const {
    return static_cast<std::size_t>(from) * static_cast<std::size_t>(world_size) + static_cast<std::size_t>(to);
  }
};

struct RunOptions {
  std::chrono::milliseconds timeout{5000};
};

namespace detail {

// Raised in ranks blocked on a fabric that another rank already failed.
class FabricAborted : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class Fabric {
 public:
  Fabric(int world, RunOptions opts)
      : world_(world), opts_(opts), queues_(static_cast<std::size_t>(world) * world), ledger_(world) {}

  void send(int from, int to, Phase phase, std::span<const std::uint8_t> payload) {
    check_peer(from, to, "send to");
    std::lock_guard lock(mu_);
    if (aborted_) throw FabricAborted("fabric aborted by rank " + std::to_string(failed_rank_));
    queue(from, to).emplace_back(payload.begin(), payload.end());
    const std::size_t i = static_cast<std::size_t>(from) * world_ + to;
    ledger_.bytes[i] += payload.size();
    ledger_.messages[i] += 1;
    ledger_.phase_bytes[static_cast<std::size_t>(from)][static_cast<std::size_t>(phase)] += payload.size();
    cv_.notify_all();
  }

  std::vector<std::uint8_t> recv(int self, int from) {
    check_peer(self, from, "receive from");
    std::unique_lock lock(mu_);
    auto& q = queue(from, self);
    const auto deadline = std::chrono::steady_clock::now() + opts_.timeout;
    while (q.empty()) {
      if (aborted_) throw FabricAborted("fabric aborted by rank " + std::to_string(failed_rank_));
      if (cv_.wait_until(lock, deadline) == std::cv_status::timeout && q.empty() && !aborted_) {
        throw ProtocolError("rank " + std::to_string(self) + " timed out after " +
                            std::to_string(opts_.timeout.count()) + " ms waiting for a message from rank " +
                            std::to_string(from));
      }
    }
    std::vector<std::uint8_t> payload = std::move(q.front());
    q.pop_front();
    ledger_.received[static_cast<std::size_t>(self)] += payload.size();
    return payload;
  }

  void barrier(int self) {
    std::unique_lock lock(mu_);
    if (aborted_) throw FabricAborted("fabric aborted by rank " + std::to_string(failed_rank_));
    const std::uint64_t generation = barrier_generation_;
    if (++barrier_arrived_ == world_) {
      barrier_arrived_ = 0;
      ++barrier_generation_;
      cv_.notify_all();
      return;
    }
    const auto deadline = std::chrono::steady_clock::now() + opts_.timeout;
    while (barrier_generation_ == generation) {
      if (aborted_) throw FabricAborted("fabric aborted by rank " + std::to_string(failed_rank_));
      if (cv_.wait_until(lock, deadline) == std::cv_status::timeout && barrier_generation_ == generation) {
        throw ProtocolError("rank " + std::to_string(self) + " timed out in barrier with " +
                            std::to_string(barrier_arrived_) + " of " + std::to_string(world_) +
                            " ranks arrived");
      }
    }
  }

  void record_step(int rank, Phase phase) {
    std::lock_guard lock(mu_);
    auto& s = ledger_.steps[static_cast<std::size_t>(rank)];
    if (phase == Phase::kReduce) ++s.reduce_steps;
    if (phase == Phase::kGather) ++s.gather_steps;
  }

  void record_qdq(int rank) {
    std::lock_guard lock(mu_);
    ++ledger_.steps[static_cast<std::size_t>(rank)].qdq_passes;
  }

  // Returns true if this is the first failure.
  bool abort(int rank) {
    std::lock_guard lock(mu_);
    const bool first = !aborted_;
    if (first) {
      aborted_ = true;
      failed_rank_ = rank;
    }
    cv_.notify_all();
    return first;
  }

  // Throws if any message was sent but never received.
  void check_drained() const {
    for (int f = 0; f < world_; ++f) {
      for (int t = 0; t < world_; ++t) {
        const auto& q = queues_[static_cast<std::size_t>(f) * world_ + t];
        if (!q.empty()) {
          throw ProtocolError(std::to_string(q.size()) + " message(s) from rank " + std::to_string(f) +
                              " to rank " + std::to_string(t) + " were never received");
        }
      }
    }
  }

  TrafficLedger take_ledger() { return std::move(ledger_); }
  int world_size() const { return world_; }

 private:
  void check_peer(int self, int peer, const char* verb) const {
    if (peer < 0 || peer >= world_) {
      throw DomainError("rank " + std::to_string(self) + " cannot " + verb + " invalid rank " + std::to_string(peer));
    }
    if (peer == self) {
      throw DomainError("rank " + std::to_string(self) + " cannot " + verb + " itself; self copies bypass the fabric");
    }
  }

  std::deque<std::vector<std::uint8_t>>& queue(int from, int to) {
    return queues_[static_cast<std::size_t>(from) * world_ + to];
  }

  int world_;
  RunOptions opts_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::deque<std::vector<std::uint8_t>>> queues_;
  TrafficLedger ledger_;
  int barrier_arrived_ = 0;
  std::uint64_t barrier_generation_ = 0;
  bool aborted_ = false;
  int failed_rank_ = -1;
};

}  // namespace detail

// Per-rank handle into the fabric. Messages between a pair of ranks are
// delivered in FIFO order; payloads are copied on send.
class Communicator {
 public:
  Communicator(detail::Fabric& fabric, int rank) : fabric_(&fabric), rank_(rank) {}

  int rank() const { return rank_; }
  int world_size() const { return fabric_->world_size(); }

  void send(int to, std::span<const std::uint8_t> payload) { fabric_->send(rank_, to, phase_, payload); }
  std::vector<std::uint8_t> recv(int from) { return fabric_->recv(rank_, from); }
  void barrier() { fabric_->barrier(rank_); }

  // Opens a new communication round; later sends are attributed to `phase`.
  void begin_step(Phase phase) {
    phase_ = phase;
    fabric_->record_step(rank_, phase);
  }
  void record_qdq() { fabric_->record_qdq(rank_); }
  Phase phase() const { return phase_; }

 private:
  detail::Fabric* fabric_;
  int rank_;
  Phase phase_ = Phase::kOther;
};

template <class T>
struct RunResult {
  std::vector<T> outputs;
  TrafficLedger ledger;
};

// Runs `program(Communicator&)` on topology.world_size concurrent ranks and
// returns every rank's result plus the merged ledger. The first failing rank's
// exception is rethrown after all ranks stop.
template <class Program>
auto run_ranks(const FabricTopology& topology, Program&& program, RunOptions opts = {})
    -> RunResult<std::invoke_result_t<Program&, Communicator&>> {
  using T = std::invoke_result_t<Program&, Communicator&>;
  static_assert(!std::is_void_v<T>, "rank programs must return a value");
  topology.validate();
  const int n = topology.world_size;
  detail::Fabric fabric(n, opts);
  std::vector<std::optional<T>> results(static_cast<std::size_t>(n));
  std::exception_ptr first_error;
  std::mutex error_mu;

  auto body = [&](int r) {
    Communicator comm(fabric, r);
    try {
      results[static_cast<std::size_t>(r)].emplace(program(comm));
    } catch (const detail::FabricAborted&) {
      fabric.abort(r);
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (fabric.abort(r) || !first_error) first_error = std::current_exception();
    }
  };

  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) workers.emplace_back(body, r);
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
  fabric.check_drained();

  RunResult<T> out;
  out.outputs.reserve(static_cast<std::size_t>(n));
  for (auto& r : results) out.outputs.push_back(std::move(*r));
  out.ledger = fabric.take_ledger();
  return out;
}

}  // namespace flashcomm
