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

#include "inferix/parallel/worker_group.hpp"

#include <algorithm>
#include <exception>
#include <ostream>
#include <thread>
#include <tuple>

namespace inferix::parallel {

std::size_t Message::payload_bytes() const noexcept {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size() * sizeof(float);
  return n;
}

WorkerGroup::WorkerGroup(std::size_t world_size, ExecutionMode mode)
    : world_size_(world_size), mode_(mode) {
  if (world_size == 0) throw std::invalid_argument("worker group: world_size must be >= 1");
  channels_.resize(world_size * world_size);
}

void WorkerGroup::check_rank(std::size_t rank) const {
  if (rank >= world_size_) {
    throw std::out_of_range("worker group: rank " + std::to_string(rank) + " out of range");
  }
}

WorkerGroup::Channel& WorkerGroup::channel(std::size_t sender, std::size_t receiver) {
  check_rank(sender);
  check_rank(receiver);
  return channels_[sender * world_size_ + receiver];
}

void WorkerGroup::send(std::size_t sender, std::size_t receiver, Message msg) {
  std::lock_guard lock(mu_);
  Channel& ch = channel(sender, receiver);
  trace_.push_back({step_, sender, receiver, msg.payload_bytes(), msg.tag, ch.next_seq++});
  ch.queue.push_back(std::move(msg));
}

Message WorkerGroup::receive(std::size_t sender, std::size_t receiver) {
  std::lock_guard lock(mu_);
  Channel& ch = channel(sender, receiver);
  if (ch.queue.empty()) {
    throw ChannelError("worker group: nothing to receive on " + std::to_string(sender) + " -> " +
                       std::to_string(receiver));
  }
  Message m = std::move(ch.queue.front());
  ch.queue.pop_front();
  bytes_received_ += m.payload_bytes();
  return m;
}

void WorkerGroup::run_phase(const std::function<void(std::size_t)>& fn) {
  if (mode_ == ExecutionMode::Sequential || world_size_ == 1) {
    for (std::size_t r = 0; r < world_size_; ++r) fn(r);
    return;
  }
  std::vector<std::exception_ptr> errors(world_size_);
  std::vector<std::thread> threads;
  threads.reserve(world_size_);
  // Launch in reverse rank order so threaded runs do not simply replay the
  // sequential schedule.
  for (std::size_t i = world_size_; i-- > 0;) {
    threads.emplace_back([&, i] {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<TraceRecord> WorkerGroup::trace() const {
  std::vector<TraceRecord> out;
  {
    std::lock_guard lock(mu_);
    out = trace_;
  }
  std::sort(out.begin(), out.end(), [](const TraceRecord& a, const TraceRecord& b) {
    return std::tie(a.step, a.sender, a.receiver, a.seq) < std::tie(b.step, b.sender, b.receiver, b.seq);
  });
  return out;
}

TraceTotals WorkerGroup::totals() const {
  std::lock_guard lock(mu_);
  TraceTotals t;
  for (const auto& r : trace_) {
    ++t.messages;
    t.bytes_sent += r.payload_bytes;
    if (r.remote()) {
      ++t.remote_messages;
      t.remote_bytes += r.payload_bytes;
    }
  }
  return t;
}

std::size_t WorkerGroup::bytes_received() const {
  std::lock_guard lock(mu_);
  return bytes_received_;
}

std::size_t WorkerGroup::pending_messages() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& c : channels_) n += c.queue.size();
  return n;
}

void WorkerGroup::clear_trace() {
  std::lock_guard lock(mu_);
  trace_.clear();
  bytes_received_ = 0;
  step_ = 0;
}

void WorkerGroup::export_trace(std::ostream& os) const {
  for (const auto& r : trace()) {
    os << r.step << '\t' << r.sender << '\t' << r.receiver << '\t' << r.payload_bytes << '\t'
       << r.tag << '\n';
  }
}

std::vector<std::vector<Tensor>> all_to_all(WorkerGroup& group,
                                            const std::vector<std::vector<Tensor>>& send,
                                            const std::string& tag) {
  const std::size_t w = group.world_size();
  if (send.size() != w) throw attn::DimensionError("all_to_all: send matrix needs world_size rows");
  for (const auto& row : send) {
    if (row.size() != w) throw attn::DimensionError("all_to_all: send matrix must be square");
  }
  group.run_phase([&](std::size_t i) {
    for (std::size_t j = 0; j < w; ++j) group.send(i, j, Message{{send[i][j]}, tag});
  });
  std::vector<std::vector<Tensor>> recv(w, std::vector<Tensor>(w));
  group.run_phase([&](std::size_t j) {
    for (std::size_t i = 0; i < w; ++i) recv[j][i] = std::move(group.receive(i, j).parts.at(0));
  });
  group.next_step();
  return recv;
}

}  // namespace inferix::parallel
