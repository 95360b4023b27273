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
#include <cstdint>
#include <stdexcept>
#include <string>

namespace inferix::prof {

class WorkloadTooShort : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OverheadMode {
  Disabled,   // spans opened on a disabled profiler
  Enabled,    // one span per work unit
  HeavyHook,  // Enabled plus a span-end hook that burns ~unit/2 of CPU
};

const char* to_string(OverheadMode mode);

// A fixed amount of deterministic integer work split into equal units.
// calibrate() picks the per-unit iteration count so one unit takes roughly
// unit_target on this machine, and the unit count so a full run takes at
// least run_target.
class CalibratedWorkload {
 public:
  CalibratedWorkload(std::uint64_t iterations_per_unit, std::size_t units)
      : iterations_per_unit_(iterations_per_unit), units_(units) {}

  static CalibratedWorkload calibrate(std::chrono::nanoseconds unit_target = std::chrono::microseconds(10),
                                      std::chrono::nanoseconds run_target = std::chrono::milliseconds(150));

  std::uint64_t iterations_per_unit() const noexcept { return iterations_per_unit_; }
  std::size_t units() const noexcept { return units_; }

  // One unit of work; the return value must be consumed by the caller.
  static std::uint64_t work_unit(std::uint64_t seed, std::uint64_t iterations) noexcept;

 private:
  std::uint64_t iterations_per_unit_;
  std::size_t units_;
};

struct OverheadResult {
  OverheadMode mode = OverheadMode::Enabled;
  double ratio = 0.0;  // instrumented / uninstrumented, best of `repeats`
  std::int64_t instrumented_ns = 0;
  std::int64_t baseline_ns = 0;
  std::size_t spans_per_run = 0;
  int repeats = 0;
};

struct OverheadOptions {
  int repeats = 5;
  std::chrono::nanoseconds min_runtime = std::chrono::milliseconds(100);
};

// Runs the workload with and without instrumentation, interleaved, and
// reports the ratio of the best times. Throws WorkloadTooShort if the best
// uninstrumented run is shorter than options.min_runtime.
OverheadResult measure_overhead(const CalibratedWorkload& workload, OverheadMode mode,
                                const OverheadOptions& options = {});

}  // namespace inferix::prof
