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

#include "inferix/stream/websocket.hpp"

#include <algorithm>
#include <cctype>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "inferix/stream/codec.hpp"

namespace inferix::stream {

namespace {

constexpr std::string_view kWsGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
constexpr std::size_t kMaxHeadBytes = 16 * 1024;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

std::string websocket_accept_key(std::string_view client_key) {
  const std::string input = std::string(client_key) + std::string(kWsGuid);
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(input.data()), input.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<const char*>(out), static_cast<std::size_t>(n));
}

std::vector<std::uint8_t> ws_encode_frame(WsOpcode opcode, std::span<const std::uint8_t> payload,
                                          std::optional<std::array<std::uint8_t, 4>> mask, bool fin) {
  std::vector<std::uint8_t> out;
  out.reserve(payload.size() + 14);
  out.push_back(static_cast<std::uint8_t>((fin ? 0x80 : 0x00) | static_cast<std::uint8_t>(opcode)));
  const std::uint8_t mask_bit = mask ? 0x80 : 0x00;
  const std::size_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<std::uint8_t>(mask_bit | n));
  } else if (n <= 0xFFFF) {
    out.push_back(mask_bit | 126);
    out.push_back(static_cast<std::uint8_t>(n >> 8));
    out.push_back(static_cast<std::uint8_t>(n));
  } else {
    out.push_back(mask_bit | 127);
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(std::uint64_t{n} >> (8 * i)));
  }
  if (mask) {
    out.insert(out.end(), mask->begin(), mask->end());
    for (std::size_t i = 0; i < n; ++i) out.push_back(payload[i] ^ (*mask)[i % 4]);
  } else {
    out.insert(out.end(), payload.begin(), payload.end());
  }
  return out;
}

std::optional<WsDecoded> ws_decode_frame(std::span<const std::uint8_t> b, std::size_t max_payload) {
  if (b.size() < 2) return std::nullopt;
  if (b[0] & 0x70) throw ProtocolError("websocket: reserved bits set");
  WsDecoded d;
  d.frame.fin = (b[0] & 0x80) != 0;
  d.frame.opcode = static_cast<WsOpcode>(b[0] & 0x0F);
  const bool masked = (b[1] & 0x80) != 0;
  std::uint64_t len = b[1] & 0x7F;
  std::size_t pos = 2;
  if (len == 126) {
    if (b.size() < 4) return std::nullopt;
    len = (std::uint64_t{b[2]} << 8) | b[3];
    pos = 4;
  } else if (len == 127) {
    if (b.size() < 10) return std::nullopt;
    len = 0;
    for (int i = 0; i < 8; ++i) len = (len << 8) | b[2 + i];
    pos = 10;
  }
  if (len > max_payload) throw ProtocolError("websocket: frame too large");
  std::array<std::uint8_t, 4> key{};
  if (masked) {
    if (b.size() < pos + 4) return std::nullopt;
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(pos), 4, key.begin());
    pos += 4;
  }
  if (b.size() < pos + len) return std::nullopt;
  d.frame.payload.assign(b.begin() + static_cast<std::ptrdiff_t>(pos),
                         b.begin() + static_cast<std::ptrdiff_t>(pos + len));
  if (masked) {
    for (std::size_t i = 0; i < d.frame.payload.size(); ++i) d.frame.payload[i] ^= key[i % 4];
  }
  d.consumed = pos + static_cast<std::size_t>(len);
  return d;
}

std::string HttpRequest::header(const std::string& lower_name) const {
  auto it = headers.find(lower_name);
  return it == headers.end() ? std::string{} : it->second;
}

HttpRequest read_http_request(TcpStream& s, std::vector<std::uint8_t>& rest, std::chrono::milliseconds timeout) {
  std::string head;
  std::uint8_t buf[2048];
  std::size_t end = std::string::npos;
  while ((end = head.find("\r\n\r\n")) == std::string::npos) {
    if (head.size() > kMaxHeadBytes) throw ProtocolError("http: request head too large");
    const auto n = s.read_some(buf, timeout);
    if (!n) throw ProtocolError("http: timed out reading request");
    if (*n == 0) throw ProtocolError("http: connection closed before request completed");
    head.append(reinterpret_cast<const char*>(buf), *n);
  }
  rest.assign(head.begin() + static_cast<std::ptrdiff_t>(end + 4), head.end());
  head.resize(end);

  HttpRequest req;
  std::size_t line_end = head.find("\r\n");
  const std::string request_line = head.substr(0, line_end);
  const auto sp1 = request_line.find(' ');
  const auto sp2 = request_line.find(' ', sp1 == std::string::npos ? 0 : sp1 + 1);
  if (sp1 == std::string::npos || sp2 == std::string::npos) throw ProtocolError("http: malformed request line");
  req.method = request_line.substr(0, sp1);
  req.target = request_line.substr(sp1 + 1, sp2 - sp1 - 1);
  while (line_end != std::string::npos) {
    const std::size_t start = line_end + 2;
    line_end = head.find("\r\n", start);
    const std::string line = head.substr(start, line_end == std::string::npos ? std::string::npos : line_end - start);
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    req.headers[lower(trim(line.substr(0, colon)))] = trim(line.substr(colon + 1));
  }
  return req;
}

bool is_websocket_upgrade(const HttpRequest& req) {
  return req.method == "GET" && lower(req.header("upgrade")) == "websocket" &&
         lower(req.header("connection")).find("upgrade") != std::string::npos &&
         !req.header("sec-websocket-key").empty();
}

std::optional<WsFrame> WsMessageReader::next() {
  for (;;) {
    auto d = ws_decode_frame(buf_);
    if (!d) return std::nullopt;
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(d->consumed));
    WsFrame& f = d->frame;
    const auto op = static_cast<std::uint8_t>(f.opcode);
    if (op >= 0x8) return std::move(f);  // control frames are never fragmented
    if (f.opcode == WsOpcode::Continuation) {
      if (!partial_) throw ProtocolError("websocket: continuation without a started message");
      partial_->payload.insert(partial_->payload.end(), f.payload.begin(), f.payload.end());
      if (!f.fin) continue;
      WsFrame done = std::move(*partial_);
      partial_.reset();
      done.fin = true;
      return done;
    }
    if (partial_) throw ProtocolError("websocket: new message before previous finished");
    if (f.fin) return std::move(f);
    partial_ = std::move(f);
  }
}

}  // namespace inferix::stream
