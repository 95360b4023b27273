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
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace inferix::prof {

using SpanId = std::uint64_t;
using HookId = std::uint64_t;

enum class HookPoint { SpanStart, SpanEnd };
enum class ReportFormat { Summary, Full };

constexpr std::size_t kMaxSpanAttrs = 4;
constexpr std::size_t kDefaultSpanCapacity = std::size_t{1} << 20;

struct SpanAttr {
  std::string_view key;
  double value = 0.0;
};

// Passed to hooks. Views are valid only for the duration of the callback.
struct SpanEvent {
  std::string_view name;
  SpanId id = 0;
  SpanId parent = 0;  // 0 = root
  std::int64_t start_ns = 0;
  std::int64_t end_ns = 0;  // equals start_ns at SpanStart
  std::span<const SpanAttr> attrs;
};

struct Span {
  std::string name;
  std::int64_t start_ns = 0;
  std::int64_t end_ns = 0;
  SpanId id = 0;
  std::optional<SpanId> parent;
  std::map<std::string, double> attrs;
};

struct SpanAggregate {
  std::string name;
  std::uint64_t count = 0;
  std::int64_t total_ns = 0;
  double mean_ns = 0.0;
  std::int64_t p50_ns = 0;
  std::int64_t p95_ns = 0;
  std::int64_t min_ns = 0;
  std::int64_t max_ns = 0;
  bool operator==(const SpanAggregate&) const = default;
};

struct MetricAggregate {
  std::string name;
  std::string scope;  // enclosing span name, empty for global
  std::uint64_t count = 0;
  double sum = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  bool operator==(const MetricAggregate&) const = default;
};

struct ProfileReport {
  ReportFormat format = ReportFormat::Summary;
  std::vector<SpanAggregate> spans;      // sorted by name
  std::vector<MetricAggregate> metrics;  // sorted by (scope, name); Full only
  std::int64_t wall_time_ns = 0;         // first span start to last span end
  std::uint64_t dropped_spans = 0;
  std::uint64_t hook_failures = 0;
  std::int64_t generated_unix_ms = 0;    // metadata, excluded from comparisons

  const SpanAggregate* span(std::string_view name) const;
  const MetricAggregate* metric(std::string_view name, std::string_view scope = {}) const;

  // Tab-separated text, version 1.
  std::string to_text() const;
  nlohmann::json to_json() const;

  bool same_data(const ProfileReport& other) const;
};

class Profiler {
 public:
  struct Options {
    std::size_t capacity = kDefaultSpanCapacity;
    bool enabled = true;
  };

  Profiler() : Profiler(Options{}) {}
  explicit Profiler(Options options);
  Profiler(const Profiler&) = delete;
  Profiler& operator=(const Profiler&) = delete;

  static Profiler& global();

  void set_enabled(bool on) noexcept { enabled_.store(on, std::memory_order_relaxed); }
  bool enabled() const noexcept { return enabled_.load(std::memory_order_relaxed); }

  // RAII span. A default-constructed or disabled-profiler scope is inert.
  // The name must outlive the scope.
  class Scope {
   public:
    Scope() = default;
    Scope(Scope&& other) noexcept;
    Scope& operator=(Scope&&) = delete;
    ~Scope();

    // At most kMaxSpanAttrs attributes are kept; the key must outlive the scope.
    Scope& attr(std::string_view key, double value) noexcept;
    SpanId id() const noexcept { return id_; }

   private:
    friend class Profiler;
    Profiler* owner_ = nullptr;
    std::string_view name_;
    SpanId id_ = 0;
    SpanId parent_ = 0;
    std::int64_t start_ns_ = 0;
    std::array<SpanAttr, kMaxSpanAttrs> attrs_{};
    std::uint8_t attr_count_ = 0;
  };

  [[nodiscard]] Scope scoped(std::string_view name);

  // Throws std::invalid_argument for non-finite values.
  void record_metric(std::string_view name, double value);

  HookId register_hook(HookPoint point, std::function<void(const SpanEvent&)> callback);
  bool unregister_hook(HookId id);

  ProfileReport report(ReportFormat format = ReportFormat::Summary) const;
  std::vector<Span> spans() const;

  std::uint64_t dropped_spans() const;
  std::uint64_t hook_failures() const noexcept { return hook_failures_.load(); }
  void reset();

  static std::int64_t now_ns() noexcept;

 private:
  struct Record {
    std::uint32_t name = 0;
    std::uint8_t attr_count = 0;
    std::array<std::uint32_t, kMaxSpanAttrs> attr_keys{};
    std::array<double, kMaxSpanAttrs> attr_values{};
    SpanId id = 0;
    SpanId parent = 0;
    std::int64_t start_ns = 0;
    std::int64_t end_ns = 0;
  };

  struct MetricSample {
    std::uint32_t name = 0;
    std::uint32_t scope = 0;  // 0 = global
    double value = 0.0;
  };

  void finish(Scope& scope) noexcept;
  void run_hooks(HookPoint point, const SpanEvent& event) noexcept;
  std::uint32_t intern_locked(std::string_view name);
  std::vector<Record> snapshot_locked() const;

  const std::size_t capacity_;
  std::atomic<bool> enabled_;
  std::atomic<SpanId> next_span_id_{1};

  mutable std::mutex mu_;
  std::vector<Record> ring_;
  std::size_t ring_head_ = 0;  // next slot to overwrite once full
  std::uint64_t dropped_ = 0;
  std::vector<MetricSample> metrics_;
  std::map<std::string, std::uint32_t, std::less<>> name_ids_;
  std::vector<std::string> names_{""};  // id 0 reserved

  mutable std::shared_mutex hooks_mu_;
  std::vector<std::pair<HookId, std::pair<HookPoint, std::function<void(const SpanEvent&)>>>> hooks_;
  std::atomic<std::size_t> hook_count_{0};
  HookId next_hook_id_ = 1;
  std::atomic<std::uint64_t> hook_failures_{0};
};

}  // namespace inferix::prof
