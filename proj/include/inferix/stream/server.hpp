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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "inferix/engine/generator.hpp"
#include "inferix/stream/codec.hpp"
#include "inferix/stream/net.hpp"

namespace inferix::prof {
class Profiler;
}

namespace inferix::stream {

struct ServerOptions {
  Endpoint listen{"127.0.0.1", 0};
  std::optional<Endpoint> web_listen;  // WebSocket bridge + static console
  std::size_t client_queue = 256;      // per-client bound, in messages
  // Generation starts once this many clients are connected, or after
  // client_wait_timeout, whichever comes first.
  std::size_t wait_for_clients = 0;
  std::chrono::milliseconds client_wait_timeout{10000};
  // Pause after each block; gives remote operators time to steer.
  std::chrono::milliseconds block_interval{0};
  std::filesystem::path console_dir;  // served under /console/ when set
  std::chrono::milliseconds drain_timeout{5000};
};

struct ServerStats {
  std::size_t clients_accepted = 0;
  std::size_t frames_broadcast = 0;
  std::size_t messages_dropped = 0;  // summed over all clients
  std::size_t prompt_updates_accepted = 0;
  std::size_t prompt_updates_rejected = 0;
};

// HELLO body for a given engine.
nlohmann::json hello_body(const engine::Engine& engine, std::size_t client_queue);

// Streams an engine's output to any number of clients. Clients connect over
// raw TCP (stream protocol messages back to back) or, when web_listen is set,
// over a WebSocket where each binary message carries exactly one encoded
// protocol message. Generation runs on a dedicated thread; client I/O never
// happens on it.
class StreamServer {
 public:
  // Binds immediately; throws NetError on bind failure.
  StreamServer(std::shared_ptr<engine::Engine> engine, ServerOptions options,
               prof::Profiler* profiler = nullptr);
  ~StreamServer();
  StreamServer(const StreamServer&) = delete;
  StreamServer& operator=(const StreamServer&) = delete;

  std::uint16_t port() const noexcept;
  std::optional<std::uint16_t> web_port() const noexcept;

  // Starts accepting clients and the generation thread. Call once.
  void start();
  // Blocks until generation ends, END has been queued to every client and
  // client queues have drained (bounded by drain_timeout). Rethrows an engine
  // failure after clients have been sent ERROR and END.
  std::vector<engine::GeneratedBlock> wait();
  // Cancels generation and disconnects everyone. Idempotent.
  void stop();

  std::size_t client_count() const;
  ServerStats stats() const;
  engine::Engine& engine() noexcept { return *engine_; }

 private:
  struct Client;
  class BroadcastSink;

  void accept_loop(TcpListener& listener, bool web);
  void handle_web_connection(TcpStream stream);
  void add_client(std::shared_ptr<Client> client);
  void broadcast(const StreamMessage& msg);
  void on_client_message(Client& client, const StreamMessage& msg);
  void generation_main();
  bool join_generation();

  std::shared_ptr<engine::Engine> engine_;
  ServerOptions options_;
  prof::Profiler* profiler_;

  std::unique_ptr<TcpListener> listener_;
  std::unique_ptr<TcpListener> web_listener_;
  std::atomic<bool> stopping_{false};
  bool started_ = false;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::shared_ptr<Client>> clients_;
  std::vector<std::thread> helpers_;  // accept loops + HTTP handlers
  bool ended_ = false;
  bool generation_done_ = false;
  ServerStats stats_;

  std::thread generation_;
  std::mutex join_mu_;
  bool generation_joined_ = false;
  std::vector<engine::GeneratedBlock> blocks_;
  std::exception_ptr failure_;
  bool waited_ = false;
};

}  // namespace inferix::stream
