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

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace inferix::stream {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string to_string() const { return host + ":" + std::to_string(port); }
};

// "host:port" with a numeric port (0 = any free port). Throws
// std::invalid_argument.
Endpoint parse_endpoint(std::string_view text);

// Blocking IPv4 TCP socket. Move-only; closes on destruction.
class TcpStream {
 public:
  TcpStream() = default;
  explicit TcpStream(int fd) noexcept : fd_(fd) {}
  TcpStream(TcpStream&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  TcpStream& operator=(TcpStream&& o) noexcept;
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;
  ~TcpStream() { close(); }

  static TcpStream connect(const Endpoint& ep, std::chrono::milliseconds timeout = std::chrono::seconds(5));

  bool valid() const noexcept { return fd_ >= 0; }
  int fd() const noexcept { return fd_; }

  // Throws NetError on failure (including a peer that has gone away).
  void write_all(std::span<const std::uint8_t> bytes);
  void write_all(std::string_view s) {
    write_all({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  // Returns 0 on orderly shutdown by the peer; nullopt on timeout.
  std::optional<std::size_t> read_some(std::span<std::uint8_t> buf,
                                       std::optional<std::chrono::milliseconds> timeout = std::nullopt);

  // Unblocks pending reads on any thread; the descriptor stays open.
  void shutdown() noexcept;
  // Sends FIN after queued data; reads keep working.
  void shutdown_write() noexcept;
  void close() noexcept;

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  // Throws NetError on bind failure.
  explicit TcpListener(const Endpoint& ep);
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener();

  std::uint16_t port() const noexcept { return port_; }
  // Waits up to timeout for a connection.
  std::optional<TcpStream> accept(std::chrono::milliseconds timeout);
  void close() noexcept;

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace inferix::stream
