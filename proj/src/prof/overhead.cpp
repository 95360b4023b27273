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

#include "inferix/prof/overhead.hpp"

#include <algorithm>
#include <limits>

#include <time.h>

#include "inferix/prof/profiler.hpp"

namespace inferix::prof {

namespace {

volatile std::uint64_t g_sink = 0;

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ns(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
}

// Runs are timed in thread CPU time so that preemption by other processes
// is not charged to either side of the ratio.
std::int64_t thread_cpu_ns() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<std::int64_t>(ts.tv_sec) * 1'000'000'000 + ts.tv_nsec;
}

constexpr std::size_t kSliceUnits = 64;

std::uint64_t plain_slice(const CalibratedWorkload& w, std::size_t first, std::size_t last) {
  std::uint64_t acc = 0;
  for (std::size_t u = first; u < last; ++u) {
    acc += CalibratedWorkload::work_unit(u, w.iterations_per_unit());
  }
  return acc;
}

std::uint64_t instrumented_slice(const CalibratedWorkload& w, Profiler& p, std::size_t first,
                                 std::size_t last) {
  std::uint64_t acc = 0;
  for (std::size_t u = first; u < last; ++u) {
    auto span = p.scoped("overhead.unit");
    acc += CalibratedWorkload::work_unit(u, w.iterations_per_unit());
  }
  return acc;
}

struct RunTimes {
  std::int64_t plain_ns = 0;
  std::int64_t instrumented_ns = 0;
};

// One run executes the whole workload twice, once per side, alternating
// slices of kSliceUnits units so slow drift in machine speed hits both sides
// equally.
RunTimes run_interleaved(const CalibratedWorkload& w, Profiler& p) {
  RunTimes t;
  std::uint64_t acc = 0;
  for (std::size_t first = 0; first < w.units(); first += kSliceUnits) {
    const std::size_t last = std::min(first + kSliceUnits, w.units());
    auto t0 = thread_cpu_ns();
    acc += plain_slice(w, first, last);
    auto t1 = thread_cpu_ns();
    acc += instrumented_slice(w, p, first, last);
    auto t2 = thread_cpu_ns();
    t.plain_ns += t1 - t0;
    t.instrumented_ns += t2 - t1;
  }
  g_sink = g_sink + acc;
  return t;
}

}  // namespace

const char* to_string(OverheadMode mode) {
  switch (mode) {
    case OverheadMode::Disabled: return "disabled";
    case OverheadMode::Enabled: return "enabled";
    case OverheadMode::HeavyHook: return "heavy-hook";
  }
  return "?";
}

[[gnu::noinline]] std::uint64_t CalibratedWorkload::work_unit(std::uint64_t seed, std::uint64_t iterations) noexcept {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + 1;
  for (std::uint64_t i = 0; i < iterations; ++i) {
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
  }
  return x;
}

CalibratedWorkload CalibratedWorkload::calibrate(std::chrono::nanoseconds unit_target,
                                                 std::chrono::nanoseconds run_target) {
  constexpr std::uint64_t kProbe = 200'000;
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (int i = 0; i < 5; ++i) {
    const auto t0 = Clock::now();
    g_sink = g_sink + work_unit(static_cast<std::uint64_t>(i), kProbe);
    best = std::min(best, elapsed_ns(t0));
  }
  const double ns_per_iter = static_cast<double>(std::max<std::int64_t>(best, 1)) / kProbe;
  const auto iters = static_cast<std::uint64_t>(static_cast<double>(unit_target.count()) / ns_per_iter);
  const auto units = static_cast<std::size_t>(run_target.count() / std::max<std::int64_t>(unit_target.count(), 1)) + 1;
  return {std::max<std::uint64_t>(iters, 1), units};
}

OverheadResult measure_overhead(const CalibratedWorkload& workload, OverheadMode mode,
                                const OverheadOptions& options) {
  Profiler profiler(Profiler::Options{kDefaultSpanCapacity, mode != OverheadMode::Disabled});
  if (mode == OverheadMode::HeavyHook) {
    const std::uint64_t burn = std::max<std::uint64_t>(workload.iterations_per_unit() / 2, 1);
    profiler.register_hook(HookPoint::SpanEnd, [burn](const SpanEvent& e) {
      g_sink = g_sink + CalibratedWorkload::work_unit(static_cast<std::uint64_t>(e.id), burn);
    });
  }

  // Warm caches and let the span ring reach its steady-state allocation.
  run_interleaved(workload, profiler);

  std::int64_t best_plain = std::numeric_limits<std::int64_t>::max();
  std::int64_t best_instr = std::numeric_limits<std::int64_t>::max();
  for (int r = 0; r < options.repeats; ++r) {
    profiler.reset();
    const RunTimes t = run_interleaved(workload, profiler);
    best_plain = std::min(best_plain, t.plain_ns);
    best_instr = std::min(best_instr, t.instrumented_ns);
  }
  if (best_plain < options.min_runtime.count()) {
    throw WorkloadTooShort("measure_overhead: workload ran " + std::to_string(best_plain / 1000) +
                           " us, need at least " +
                           std::to_string(options.min_runtime.count() / 1000) + " us");
  }
  OverheadResult res;
  res.mode = mode;
  res.baseline_ns = best_plain;
  res.instrumented_ns = best_instr;
  res.ratio = static_cast<double>(best_instr) / static_cast<double>(best_plain);
  res.spans_per_run = mode == OverheadMode::Disabled ? 0 : workload.units();
  res.repeats = options.repeats;
  return res;
}

}  // namespace inferix::prof
