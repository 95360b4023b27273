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

#include "inferix/stream/vectors.hpp"

#include <string>
#include <vector>

#include "inferix/stream/codec.hpp"

namespace inferix::stream {

namespace {

std::string hex(std::span<const std::uint8_t> b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (std::uint8_t v : b) {
    out.push_back(kDigits[v >> 4]);
    out.push_back(kDigits[v & 0xF]);
  }
  return out;
}

nlohmann::json valid(const char* name, const StreamMessage& msg, nlohmann::json decoded) {
  const auto bytes = encode_message(msg);
  return {{"name", name},
          {"kind", static_cast<int>(msg.kind)},
          {"kind_name", to_string(msg.kind)},
          {"payload_hex", hex(msg.payload)},
          {"payload_crc32", crc32(msg.payload)},
          {"encoded_hex", hex(bytes)},
          {"encoded_len", bytes.size()},
          {"decoded", std::move(decoded)}};
}

nlohmann::json invalid(const char* name, std::vector<std::uint8_t> bytes, const char* expect) {
  return {{"name", name}, {"encoded_hex", hex(bytes)}, {"expect", expect}};
}

}  // namespace

nlohmann::json golden_wire_vectors() {
  nlohmann::json v;
  v["format"] = "inferix-wire-vectors";
  v["protocol"] = kProtocolVersion;
  v["crc32_check"] = {{"input", "123456789"}, {"crc32", crc32("123456789")}};

  nlohmann::json ok = nlohmann::json::array();
  ok.push_back(valid("end", make_end(), nlohmann::json::object()));

  const nlohmann::json hello = {{"protocol", 1}, {"pipeline", "toy"}, {"block_len", 2},
                                {"frame_width", 4}, {"frame_height", 3}, {"num_blocks", 2}};
  ok.push_back(valid("hello", json_message(MessageKind::Hello, hello), hello));

  FramePayload f{7, 1, GrayFrame{4, 3, {0, 16, 32, 48, 64, 80, 96, 112, 128, 160, 200, 255}}};
  ok.push_back(valid("frame_4x3", make_frame(f),
                     {{"chunk_index", f.chunk_index},
                      {"frame_index", f.frame_index},
                      {"width", f.frame.width},
                      {"height", f.frame.height},
                      {"pixels_hex", hex(f.frame.pixels)},
                      {"pixels_crc32", crc32(f.frame.pixels)}}));

  FramePayload one{0, 0, GrayFrame{1, 1, {42}}};
  ok.push_back(valid("frame_1x1", make_frame(one),
                     {{"chunk_index", 0}, {"frame_index", 0}, {"width", 1}, {"height", 1},
                      {"pixels_hex", "2a"}, {"pixels_crc32", crc32(one.frame.pixels)}}));

  const PromptUpdatePayload ascii{3, "a rainy harbour at dusk"};
  ok.push_back(valid("prompt_update_ascii", make_prompt_update(ascii),
                     {{"effective_chunk", ascii.effective_chunk}, {"text", ascii.text}}));
  const PromptUpdatePayload utf8{12, "caf\xC3\xA9 \xE2\x98\x95 \xF0\x9F\x8C\x8A"};
  ok.push_back(valid("prompt_update_utf8", make_prompt_update(utf8),
                     {{"effective_chunk", utf8.effective_chunk}, {"text", utf8.text}}));

  const nlohmann::json metrics = {{"chunk", 1}, {"frames_broadcast", 16}, {"messages_dropped", 0}};
  ok.push_back(valid("metrics", json_message(MessageKind::Metrics, metrics), metrics));

  const StreamMessage err = make_error("retroactive", "prompt update rejected", 0);
  ok.push_back(valid("error_retroactive", err, json_payload(err)));
  v["valid"] = std::move(ok);

  nlohmann::json bad = nlohmann::json::array();
  auto end = encode_message(make_end());
  auto bad_magic = end;
  bad_magic[0] = 'X';
  bad.push_back(invalid("bad_magic", bad_magic, "bad_magic"));
  auto bad_version = end;
  bad_version[4] = 2;
  bad.push_back(invalid("bad_version", bad_version, "bad_version"));
  auto reserved = end;
  reserved[5] = 7;
  bad.push_back(invalid("reserved_kind_7", reserved, "bad_kind"));
  auto frame = encode_message(make_frame(f));
  auto flipped = frame;
  flipped[kHeaderBytes + 3] ^= 0x10;
  bad.push_back(invalid("frame_bit_flip", flipped, "crc_mismatch"));
  auto truncated = frame;
  truncated.resize(truncated.size() - 1);
  bad.push_back(invalid("frame_truncated", truncated, "need_more"));
  std::vector<std::uint8_t> oversize = {'I', 'N', 'F', 'X', 1, 2, 0x01, 0x00, 0x00, 0x01};
  bad.push_back(invalid("oversize_length", oversize, "too_large"));
  v["invalid"] = std::move(bad);
  return v;
}

}  // namespace inferix::stream
