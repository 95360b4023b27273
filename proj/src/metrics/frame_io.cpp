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

#include "inferix/metrics/frame_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "inferix/stream/codec.hpp"

namespace inferix::metrics {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_gray(const fs::path& path, const GrayFrame& frame) {
  if (frame.pixels.size() != std::size_t{frame.width} * frame.height) {
    throw IoError("write_gray: pixel count does not match shape");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const char header[4] = {static_cast<char>(frame.width & 0xFF), static_cast<char>(frame.width >> 8),
                          static_cast<char>(frame.height & 0xFF), static_cast<char>(frame.height >> 8)};
  out.write(header, 4);
  out.write(reinterpret_cast<const char*>(frame.pixels.data()), static_cast<std::streamsize>(frame.pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

GrayFrame read_gray(const fs::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < 4) throw IoError(path.string() + ": too short for a frame header");
  GrayFrame f;
  f.width = static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
  f.height = static_cast<std::uint16_t>(bytes[2] | (bytes[3] << 8));
  const std::size_t n = std::size_t{f.width} * f.height;
  if (bytes.size() != 4 + n) {
    throw IoError(path.string() + ": expected " + std::to_string(4 + n) + " bytes for " +
                  std::to_string(f.width) + "x" + std::to_string(f.height) + ", got " + std::to_string(bytes.size()));
  }
  f.pixels.assign(bytes.begin() + 4, bytes.end());
  return f;
}

std::string frame_file_name(std::size_t chunk, std::size_t frame) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "frame_%05zu_%03zu.gray", chunk, frame);
  return buf;
}

std::vector<GrayFrame> load_frame_dir(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".gray") files.push_back(e.path());
  }
  if (files.empty()) throw IoError("no .gray frames in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<GrayFrame> out;
  out.reserve(files.size());
  for (const auto& p : files) out.push_back(read_gray(p));
  return out;
}

std::vector<GrayFrame> load_stream_capture(const fs::path& path) {
  const auto bytes = read_all(path);
  std::vector<GrayFrame> out;
  std::size_t pos = 0;
  try {
    while (pos < bytes.size()) {
      auto d = stream::decode_message(std::span(bytes).subspan(pos));
      if (!d) throw IoError(path.string() + ": truncated message at byte " + std::to_string(pos));
      pos += d->consumed;
      if (d->message.kind == stream::MessageKind::Frame) {
        out.push_back(stream::decode_frame_payload(d->message.payload).frame);
      }
    }
  } catch (const stream::ProtocolError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (out.empty()) throw IoError(path.string() + ": capture holds no frames");
  return out;
}

}  // namespace inferix::metrics
