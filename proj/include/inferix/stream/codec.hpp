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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "inferix/common/frame.hpp"

namespace inferix::stream {

// Wire layout of one message:
//   "INFX" | version u8 (=1) | kind u8 | payload length u32 LE | payload | crc32(payload) u32 LE
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderBytes = 10;
inline constexpr std::size_t kTrailerBytes = 4;
inline constexpr std::size_t kMaxPayloadBytes = std::size_t{16} << 20;
inline constexpr std::size_t kMaxPromptBytes = 4096;

// Kinds 7-15 are reserved for future control signals.
enum class MessageKind : std::uint8_t {
  Hello = 1,
  Frame = 2,
  PromptUpdate = 3,
  Metrics = 4,
  End = 5,
  Error = 6,
};

const char* to_string(MessageKind kind);

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Standard CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t crc = 0);
inline std::uint32_t crc32(std::string_view s) {
  return crc32({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

struct StreamMessage {
  MessageKind kind = MessageKind::End;
  std::vector<std::uint8_t> payload;

  bool operator==(const StreamMessage&) const = default;
};

std::vector<std::uint8_t> encode_message(const StreamMessage& msg);

struct Decoded {
  StreamMessage message;
  std::size_t consumed = 0;
};

// nullopt means more bytes are needed (truncation is retriable). Throws
// ProtocolError on bad magic, version, kind, oversize length or crc mismatch.
// Never reads past the declared length.
std::optional<Decoded> decode_message(std::span<const std::uint8_t> bytes);

// Reassembles messages from an arbitrary byte stream.
class MessageReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  // Throws ProtocolError; the reader is unusable afterwards.
  std::optional<StreamMessage> next();
  std::size_t buffered() const noexcept { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

// --- kind-specific payloads -------------------------------------------------

struct FramePayload {
  std::uint32_t chunk_index = 0;
  std::uint16_t frame_index = 0;  // within the chunk
  GrayFrame frame;

  bool operator==(const FramePayload&) const = default;
};

// chunk u32 | frame u16 | width u16 | height u16 | pixels | crc32(pixels) u32, all LE.
std::vector<std::uint8_t> encode_frame_payload(const FramePayload& f);
FramePayload decode_frame_payload(std::span<const std::uint8_t> payload);

struct PromptUpdatePayload {
  std::uint32_t effective_chunk = 0;
  std::string text;

  bool operator==(const PromptUpdatePayload&) const = default;
};

// chunk u32 | text length u32 | UTF-8 text, all LE. Text must be valid UTF-8
// of at most kMaxPromptBytes bytes.
std::vector<std::uint8_t> encode_prompt_update(const PromptUpdatePayload& p);
PromptUpdatePayload decode_prompt_update(std::span<const std::uint8_t> payload);

bool valid_utf8(std::string_view s) noexcept;

// HELLO, METRICS and ERROR carry compact JSON objects.
StreamMessage json_message(MessageKind kind, const nlohmann::json& body);
nlohmann::json json_payload(const StreamMessage& msg);

StreamMessage make_frame(const FramePayload& f);
StreamMessage make_prompt_update(const PromptUpdatePayload& p);
StreamMessage make_error(std::string_view code, std::string_view message,
                         std::optional<std::uint32_t> chunk = std::nullopt);
StreamMessage make_end();

}  // namespace inferix::stream
