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
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "inferix/common/frame.hpp"

namespace inferix::metrics {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw frame file: width u16 LE | height u16 LE | width*height grayscale bytes.
void write_gray(const std::filesystem::path& path, const GrayFrame& frame);
GrayFrame read_gray(const std::filesystem::path& path);

// "frame_00003_012.gray" for chunk 3, frame 12; names sort in generation order.
std::string frame_file_name(std::size_t chunk, std::size_t frame);

// Every *.gray file in dir, in file-name order. Throws IoError if dir is
// missing or holds no frames.
std::vector<GrayFrame> load_frame_dir(const std::filesystem::path& dir);

// FRAME messages from a file of back-to-back stream protocol messages (a
// capture of what a client received), in arrival order. Other kinds are
// skipped.
std::vector<GrayFrame> load_stream_capture(const std::filesystem::path& path);

}  // namespace inferix::metrics
