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

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "inferix/stream/net.hpp"

namespace inferix::stream {

// Minimal RFC 6455 support: enough for one binary stream-protocol message per
// WebSocket message in each direction.

enum class WsOpcode : std::uint8_t {
  Continuation = 0x0,
  Text = 0x1,
  Binary = 0x2,
  Close = 0x8,
  Ping = 0x9,
  Pong = 0xA,
};

struct WsFrame {
  bool fin = true;
  WsOpcode opcode = WsOpcode::Binary;
  std::vector<std::uint8_t> payload;  // unmasked
};

// base64(SHA-1(key + RFC 6455 GUID))
std::string websocket_accept_key(std::string_view client_key);

// Servers send unmasked frames; clients must pass a masking key.
std::vector<std::uint8_t> ws_encode_frame(WsOpcode opcode, std::span<const std::uint8_t> payload,
                                          std::optional<std::array<std::uint8_t, 4>> mask = std::nullopt,
                                          bool fin = true);

struct WsDecoded {
  WsFrame frame;
  std::size_t consumed = 0;
};

// nullopt when more bytes are needed. Throws ProtocolError on frames larger
// than max_payload or with reserved bits set.
std::optional<WsDecoded> ws_decode_frame(std::span<const std::uint8_t> bytes,
                                         std::size_t max_payload = std::size_t{32} << 20);

struct HttpRequest {
  std::string method;
  std::string target;
  std::map<std::string, std::string> headers;  // lower-cased names

  std::string header(const std::string& lower_name) const;
};

// Reads one request head (up to the blank line). Bytes read past the head are
// returned in `rest`. Throws ProtocolError on malformed or oversized heads.
HttpRequest read_http_request(TcpStream& s, std::vector<std::uint8_t>& rest,
                              std::chrono::milliseconds timeout = std::chrono::seconds(10));

bool is_websocket_upgrade(const HttpRequest& req);

// Reassembles fragmented WebSocket messages from a byte stream.
class WsMessageReader {
 public:
  void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  // Returns the next complete data message (opcode Text or Binary).
  // Control frames are returned as-is so the caller can respond.
  std::optional<WsFrame> next();

 private:
  std::vector<std::uint8_t> buf_;
  std::optional<WsFrame> partial_;
};

}  // namespace inferix::stream
