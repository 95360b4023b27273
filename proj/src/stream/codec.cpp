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

#include "inferix/stream/codec.hpp"

#include <algorithm>
#include <array>
#include <cstring>

namespace inferix::stream {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'I', 'N', 'F', 'X'};

constexpr std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

constexpr auto kCrcTable = make_crc_table();

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

bool known_kind(std::uint8_t k) { return k >= 1 && k <= 6; }

}  // namespace

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::Hello: return "HELLO";
    case MessageKind::Frame: return "FRAME";
    case MessageKind::PromptUpdate: return "PROMPT_UPDATE";
    case MessageKind::Metrics: return "METRICS";
    case MessageKind::End: return "END";
    case MessageKind::Error: return "ERROR";
  }
  return "?";
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t crc) {
  crc = ~crc;
  for (std::uint8_t b : bytes) crc = kCrcTable[(crc ^ b) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

std::vector<std::uint8_t> encode_message(const StreamMessage& msg) {
  if (!known_kind(static_cast<std::uint8_t>(msg.kind))) {
    throw ProtocolError("encode: unknown message kind " + std::to_string(static_cast<int>(msg.kind)));
  }
  if (msg.payload.size() > kMaxPayloadBytes) throw ProtocolError("encode: payload exceeds 16 MiB");
  const std::size_t n = msg.payload.size();
  std::vector<std::uint8_t> out(kHeaderBytes + n + kTrailerBytes);
  std::copy(kMagic.begin(), kMagic.end(), out.begin());
  out[4] = kProtocolVersion;
  out[5] = static_cast<std::uint8_t>(msg.kind);
  const auto put = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  put(6, static_cast<std::uint32_t>(n));
  std::copy(msg.payload.begin(), msg.payload.end(), out.begin() + kHeaderBytes);
  put(kHeaderBytes + n, crc32(msg.payload));
  return out;
}

std::optional<Decoded> decode_message(std::span<const std::uint8_t> bytes) {
  // Validate as much of the header as is present so garbage is rejected
  // early instead of waiting for a length that will never arrive.
  for (std::size_t i = 0; i < kMagic.size() && i < bytes.size(); ++i) {
    if (bytes[i] != kMagic[i]) throw ProtocolError("decode: bad magic");
  }
  if (bytes.size() > 4 && bytes[4] != kProtocolVersion) {
    throw ProtocolError("decode: unsupported version " + std::to_string(bytes[4]));
  }
  if (bytes.size() > 5 && !known_kind(bytes[5])) {
    throw ProtocolError("decode: unknown message kind " + std::to_string(bytes[5]));
  }
  if (bytes.size() < kHeaderBytes) return std::nullopt;
  const std::uint32_t len = get_u32(bytes, 6);
  if (len > kMaxPayloadBytes) throw ProtocolError("decode: declared payload exceeds 16 MiB");
  const std::size_t total = kHeaderBytes + len + kTrailerBytes;
  if (bytes.size() < total) return std::nullopt;
  const auto payload = bytes.subspan(kHeaderBytes, len);
  if (crc32(payload) != get_u32(bytes, kHeaderBytes + len)) throw ProtocolError("decode: crc mismatch");
  Decoded d;
  d.message.kind = static_cast<MessageKind>(bytes[5]);
  d.message.payload.assign(payload.begin(), payload.end());
  d.consumed = total;
  return d;
}

void MessageReader::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  } else if (pos_ > (1u << 16) && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<StreamMessage> MessageReader::next() {
  auto d = decode_message(std::span<const std::uint8_t>(buf_).subspan(pos_));
  if (!d) return std::nullopt;
  pos_ += d->consumed;
  return std::move(d->message);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_frame_payload(const FramePayload& f) {
  const std::size_t n = std::size_t{f.frame.width} * f.frame.height;
  if (f.frame.pixels.size() != n) {
    throw ProtocolError("frame payload: pixel count " + std::to_string(f.frame.pixels.size()) +
                        " does not match " + std::to_string(f.frame.width) + "x" +
                        std::to_string(f.frame.height));
  }
  std::vector<std::uint8_t> out;
  out.reserve(14 + n);
  put_u32(out, f.chunk_index);
  put_u16(out, f.frame_index);
  put_u16(out, f.frame.width);
  put_u16(out, f.frame.height);
  out.insert(out.end(), f.frame.pixels.begin(), f.frame.pixels.end());
  put_u32(out, crc32(f.frame.pixels));
  return out;
}

FramePayload decode_frame_payload(std::span<const std::uint8_t> p) {
  if (p.size() < 14) throw ProtocolError("frame payload: too short");
  FramePayload f;
  f.chunk_index = get_u32(p, 0);
  f.frame_index = get_u16(p, 4);
  f.frame.width = get_u16(p, 6);
  f.frame.height = get_u16(p, 8);
  const std::size_t n = std::size_t{f.frame.width} * f.frame.height;
  if (p.size() != 14 + n) throw ProtocolError("frame payload: length does not match dimensions");
  const auto pixels = p.subspan(10, n);
  if (crc32(pixels) != get_u32(p, 10 + n)) throw ProtocolError("frame payload: pixel crc mismatch");
  f.frame.pixels.assign(pixels.begin(), pixels.end());
  return f;
}

bool valid_utf8(std::string_view s) noexcept {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Reject overlong forms, surrogates and values past U+10FFFF.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

std::vector<std::uint8_t> encode_prompt_update(const PromptUpdatePayload& p) {
  if (p.text.size() > kMaxPromptBytes) throw ProtocolError("prompt update: text exceeds 4096 bytes");
  if (!valid_utf8(p.text)) throw ProtocolError("prompt update: text is not valid UTF-8");
  std::vector<std::uint8_t> out;
  put_u32(out, p.effective_chunk);
  put_u32(out, static_cast<std::uint32_t>(p.text.size()));
  out.insert(out.end(), p.text.begin(), p.text.end());
  return out;
}

PromptUpdatePayload decode_prompt_update(std::span<const std::uint8_t> payload) {
  if (payload.size() < 8) throw ProtocolError("prompt update: too short");
  PromptUpdatePayload p;
  p.effective_chunk = get_u32(payload, 0);
  const std::uint32_t len = get_u32(payload, 4);
  if (len > kMaxPromptBytes) throw ProtocolError("prompt update: text exceeds 4096 bytes");
  if (payload.size() != 8 + std::size_t{len}) throw ProtocolError("prompt update: length mismatch");
  p.text.assign(reinterpret_cast<const char*>(payload.data() + 8), len);
  if (!valid_utf8(p.text)) throw ProtocolError("prompt update: text is not valid UTF-8");
  return p;
}

StreamMessage json_message(MessageKind kind, const nlohmann::json& body) {
  const std::string s = body.dump();
  return {kind, std::vector<std::uint8_t>(s.begin(), s.end())};
}

nlohmann::json json_payload(const StreamMessage& msg) {
  try {
    return nlohmann::json::parse(msg.payload.begin(), msg.payload.end());
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string(to_string(msg.kind)) + " payload is not JSON: " + e.what());
  }
}

StreamMessage make_frame(const FramePayload& f) { return {MessageKind::Frame, encode_frame_payload(f)}; }

StreamMessage make_prompt_update(const PromptUpdatePayload& p) {
  return {MessageKind::PromptUpdate, encode_prompt_update(p)};
}

StreamMessage make_error(std::string_view code, std::string_view message, std::optional<std::uint32_t> chunk) {
  nlohmann::json j{{"code", code}, {"message", message}};
  if (chunk) j["effective_chunk"] = *chunk;
  return json_message(MessageKind::Error, j);
}

StreamMessage make_end() { return {MessageKind::End, {}}; }

}  // namespace inferix::stream
