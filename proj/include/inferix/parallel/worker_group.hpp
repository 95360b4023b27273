// Copyright 2026 The Inferix Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "inferix/attn/tensor.hpp"

namespace inferix::parallel {

using attn::Tensor;

class ChannelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Message {
  std::vector<Tensor> parts;
  std::string tag;

  std::size_t payload_bytes() const noexcept;
};

struct TraceRecord {
  std::size_t step = 0;
  std::size_t sender = 0;
  std::size_t receiver = 0;
  std::size_t payload_bytes = 0;
  std::string tag;
  std::uint64_t seq = 0;  // per (sender, receiver) send order

  bool remote() const noexcept { return sender != receiver; }
  bool operator==(const TraceRecord&) const = default;
};

struct TraceTotals {
  std::size_t messages = 0;
  std::size_t bytes_sent = 0;
  std::size_t remote_messages = 0;
  std::size_t remote_bytes = 0;
};

enum class ExecutionMode {
  Sequential,  // one thread steps the workers in rank order
  Threaded,    // one OS thread per worker per phase
};

// In-process stand-in for world_size ranks. Channels are FIFO per ordered
// (sender, receiver) pair and are the only state the workers share.
//
// Algorithms proceed in phases: run_phase(fn) calls fn(rank) for every
// worker (sequentially or concurrently) and returns once all have finished.
// A receive only ever needs messages sent in an earlier phase, so the
// sequential and threaded modes compute the same results.
class WorkerGroup {
 public:
  explicit WorkerGroup(std::size_t world_size, ExecutionMode mode = ExecutionMode::Sequential);

  std::size_t world_size() const noexcept { return world_size_; }
  ExecutionMode mode() const noexcept { return mode_; }

  void send(std::size_t sender, std::size_t receiver, Message msg);
  // Pops the oldest message on (sender -> receiver). Throws ChannelError if
  // the channel is empty.
  Message receive(std::size_t sender, std::size_t receiver);

  void run_phase(const std::function<void(std::size_t rank)>& fn);
  // Communication rounds are numbered; trace records carry the current one.
  void next_step() noexcept { ++step_; }
  std::size_t step() const noexcept { return step_; }

  // Trace sorted by (step, sender, receiver, seq), independent of thread
  // interleaving.
  std::vector<TraceRecord> trace() const;
  TraceTotals totals() const;
  std::size_t bytes_received() const;
  std::size_t pending_messages() const;
  void clear_trace();

  // One record per line: step \t sender \t receiver \t bytes \t tag
  void export_trace(std::ostream& os) const;

 private:
  struct Channel {
    std::deque<Message> queue;
    std::uint64_t next_seq = 0;
  };

  Channel& channel(std::size_t sender, std::size_t receiver);
  void check_rank(std::size_t rank) const;

  std::size_t world_size_;
  ExecutionMode mode_;
  std::size_t step_ = 0;

  mutable std::mutex mu_;
  std::vector<Channel> channels_;
  std::vector<TraceRecord> trace_;
  std::size_t bytes_received_ = 0;
};

// Ulysses-style repartition: recv[j][i] == send[i][j]. One step; world_size^2
// messages including the self-sends.
std::vector<std::vector<Tensor>> all_to_all(WorkerGroup& group,
                                            const std::vector<std::vector<Tensor>>& send,
                                            const std::string& tag = "all_to_all");

}  // namespace inferix::parallel
