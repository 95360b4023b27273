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

#include "inferix/prof/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <tuple>

namespace inferix::prof {

namespace {

struct OpenSpan {
  const Profiler* owner;
  SpanId id;
  std::string_view name;
};

thread_local std::vector<OpenSpan> t_open_spans;

const OpenSpan* innermost(const Profiler* owner) {
  for (auto it = t_open_spans.rbegin(); it != t_open_spans.rend(); ++it) {
    if (it->owner == owner) return &*it;
  }
  return nullptr;
}

// Nearest-rank percentile over a sorted, nonempty sample.
std::int64_t nearest_rank(const std::vector<std::int64_t>& sorted, unsigned pct) {
  const std::size_t n = sorted.size();
  const std::size_t rank = (pct * n + 99) / 100;
  return sorted[std::max<std::size_t>(rank, 1) - 1];
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

const char* format_name(ReportFormat f) { return f == ReportFormat::Full ? "full" : "summary"; }

}  // namespace

std::int64_t Profiler::now_ns() noexcept {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Profiler::Profiler(Options options) : capacity_(std::max<std::size_t>(options.capacity, 1)),
                                      enabled_(options.enabled) {}

Profiler& Profiler::global() {
  static Profiler instance;
  return instance;
}

Profiler::Scope::Scope(Scope&& other) noexcept
    : owner_(std::exchange(other.owner_, nullptr)),
      name_(other.name_),
      id_(other.id_),
      parent_(other.parent_),
      start_ns_(other.start_ns_),
      attrs_(other.attrs_),
      attr_count_(other.attr_count_) {}

Profiler::Scope::~Scope() {
  if (owner_) owner_->finish(*this);
}

Profiler::Scope& Profiler::Scope::attr(std::string_view key, double value) noexcept {
  if (owner_ && attr_count_ < kMaxSpanAttrs) attrs_[attr_count_++] = {key, value};
  return *this;
}

Profiler::Scope Profiler::scoped(std::string_view name) {
  Scope s;
  if (!enabled_.load(std::memory_order_relaxed)) return s;
  s.owner_ = this;
  s.name_ = name;
  s.id_ = next_span_id_.fetch_add(1, std::memory_order_relaxed);
  const OpenSpan* parent = innermost(this);
  s.parent_ = parent ? parent->id : 0;
  t_open_spans.push_back({this, s.id_, name});
  s.start_ns_ = now_ns();
  if (hook_count_.load(std::memory_order_acquire) != 0) {
    run_hooks(HookPoint::SpanStart, {name, s.id_, s.parent_, s.start_ns_, s.start_ns_, {}});
  }
  return s;
}

void Profiler::finish(Scope& s) noexcept {
  const std::int64_t end = now_ns();
  if (hook_count_.load(std::memory_order_acquire) != 0) {
    run_hooks(HookPoint::SpanEnd, {s.name_, s.id_, s.parent_, s.start_ns_, end,
                                   std::span<const SpanAttr>(s.attrs_.data(), s.attr_count_)});
  }
  for (auto it = t_open_spans.rbegin(); it != t_open_spans.rend(); ++it) {
    if (it->owner == this && it->id == s.id_) {
      t_open_spans.erase(std::next(it).base());
      break;
    }
  }
  try {
    std::lock_guard lock(mu_);
    Record r;
    r.name = intern_locked(s.name_);
    r.attr_count = s.attr_count_;
    for (std::size_t i = 0; i < s.attr_count_; ++i) {
      r.attr_keys[i] = intern_locked(s.attrs_[i].key);
      r.attr_values[i] = s.attrs_[i].value;
    }
    r.id = s.id_;
    r.parent = s.parent_;
    r.start_ns = s.start_ns_;
    r.end_ns = end;
    if (ring_.size() < capacity_) {
      ring_.push_back(r);
    } else {
      ring_[ring_head_] = r;
      ring_head_ = (ring_head_ + 1) % capacity_;
      ++dropped_;
    }
  } catch (...) {
    // Allocation failure while interning: the span is lost, inference goes on.
  }
  s.owner_ = nullptr;
}

void Profiler::run_hooks(HookPoint point, const SpanEvent& event) noexcept {
  std::vector<std::function<void(const SpanEvent&)>> callbacks;
  try {
    std::shared_lock lock(hooks_mu_);
    for (const auto& [id, hook] : hooks_) {
      if (hook.first == point) callbacks.push_back(hook.second);
    }
  } catch (...) {
    hook_failures_.fetch_add(1);
    return;
  }
  for (const auto& cb : callbacks) {
    try {
      cb(event);
    } catch (...) {
      hook_failures_.fetch_add(1);
    }
  }
}

std::uint32_t Profiler::intern_locked(std::string_view name) {
  if (auto it = name_ids_.find(name); it != name_ids_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.emplace_back(name);
  name_ids_.emplace(names_.back(), id);
  return id;
}

void Profiler::record_metric(std::string_view name, double value) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument("record_metric: non-finite value for " + std::string(name));
  }
  const OpenSpan* open = innermost(this);
  std::lock_guard lock(mu_);
  MetricSample m;
  m.name = intern_locked(name);
  m.scope = open ? intern_locked(open->name) : 0;
  m.value = value;
  metrics_.push_back(m);
}

HookId Profiler::register_hook(HookPoint point, std::function<void(const SpanEvent&)> callback) {
  std::unique_lock lock(hooks_mu_);
  const HookId id = next_hook_id_++;
  hooks_.push_back({id, {point, std::move(callback)}});
  hook_count_.store(hooks_.size(), std::memory_order_release);
  return id;
}

bool Profiler::unregister_hook(HookId id) {
  std::unique_lock lock(hooks_mu_);
  const auto n = std::erase_if(hooks_, [id](const auto& h) { return h.first == id; });
  hook_count_.store(hooks_.size(), std::memory_order_release);
  return n > 0;
}

std::vector<Profiler::Record> Profiler::snapshot_locked() const {
  // Oldest first.
  std::vector<Record> out;
  out.reserve(ring_.size());
  out.insert(out.end(), ring_.begin() + static_cast<std::ptrdiff_t>(ring_head_), ring_.end());
  out.insert(out.end(), ring_.begin(), ring_.begin() + static_cast<std::ptrdiff_t>(ring_head_));
  return out;
}

std::vector<Span> Profiler::spans() const {
  std::lock_guard lock(mu_);
  std::vector<Span> out;
  for (const Record& r : snapshot_locked()) {
    Span s;
    s.name = names_[r.name];
    s.start_ns = r.start_ns;
    s.end_ns = r.end_ns;
    s.id = r.id;
    if (r.parent) s.parent = r.parent;
    for (std::size_t i = 0; i < r.attr_count; ++i) s.attrs[names_[r.attr_keys[i]]] = r.attr_values[i];
    out.push_back(std::move(s));
  }
  return out;
}

std::uint64_t Profiler::dropped_spans() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

void Profiler::reset() {
  std::lock_guard lock(mu_);
  ring_.clear();
  ring_head_ = 0;
  dropped_ = 0;
  metrics_.clear();
  hook_failures_.store(0);
}

ProfileReport Profiler::report(ReportFormat format) const {
  std::vector<Record> records;
  std::vector<MetricSample> metrics;
  std::vector<std::string> names;
  ProfileReport rep;
  rep.format = format;
  {
    std::lock_guard lock(mu_);
    records = snapshot_locked();
    if (format == ReportFormat::Full) metrics = metrics_;
    names = names_;
    rep.dropped_spans = dropped_;
  }
  rep.hook_failures = hook_failures_.load();
  rep.generated_unix_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();

  std::map<std::string, std::vector<std::int64_t>> durations;
  std::int64_t first = 0, last = 0;
  for (const Record& r : records) {
    durations[names[r.name]].push_back(r.end_ns - r.start_ns);
    if (first == 0 || r.start_ns < first) first = r.start_ns;
    last = std::max(last, r.end_ns);
  }
  rep.wall_time_ns = records.empty() ? 0 : last - first;
  for (auto& [name, d] : durations) {
    std::sort(d.begin(), d.end());
    SpanAggregate a;
    a.name = name;
    a.count = d.size();
    for (auto x : d) a.total_ns += x;
    a.mean_ns = static_cast<double>(a.total_ns) / static_cast<double>(a.count);
    a.p50_ns = nearest_rank(d, 50);
    a.p95_ns = nearest_rank(d, 95);
    a.min_ns = d.front();
    a.max_ns = d.back();
    rep.spans.push_back(std::move(a));
  }

  std::map<std::pair<std::string, std::string>, MetricAggregate> by_key;
  for (const MetricSample& m : metrics) {
    auto& a = by_key[{names[m.scope], names[m.name]}];
    if (a.count == 0) {
      a.name = names[m.name];
      a.scope = names[m.scope];
      a.min = a.max = m.value;
    }
    ++a.count;
    a.sum += m.value;
    a.min = std::min(a.min, m.value);
    a.max = std::max(a.max, m.value);
  }
  for (auto& [key, a] : by_key) {
    a.mean = a.sum / static_cast<double>(a.count);
    rep.metrics.push_back(std::move(a));
  }
  return rep;
}

const SpanAggregate* ProfileReport::span(std::string_view name) const {
  for (const auto& s : spans) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const MetricAggregate* ProfileReport::metric(std::string_view name, std::string_view scope) const {
  for (const auto& m : metrics) {
    if (m.name == name && m.scope == scope) return &m;
  }
  return nullptr;
}

std::string ProfileReport::to_text() const {
  std::ostringstream os;
  os << "inferix-profile\t1\t" << format_name(format) << '\n';
  os << "name\tcount\ttotal_ns\tmean_ns\tp50_ns\tp95_ns\tmax_ns\n";
  for (const auto& s : spans) {
    os << s.name << '\t' << s.count << '\t' << s.total_ns << '\t' << fmt_double(s.mean_ns) << '\t'
       << s.p50_ns << '\t' << s.p95_ns << '\t' << s.max_ns << '\n';
  }
  if (format == ReportFormat::Full) {
    os << "[metrics]\n";
    os << "name\tscope\tcount\tsum\tmean\tmin\tmax\n";
    for (const auto& m : metrics) {
      os << m.name << '\t' << m.scope << '\t' << m.count << '\t' << fmt_double(m.sum) << '\t'
         << fmt_double(m.mean) << '\t' << fmt_double(m.min) << '\t' << fmt_double(m.max) << '\n';
    }
    os << "[totals]\n";
    os << "wall_time_ns\t" << wall_time_ns << '\n';
    os << "dropped_spans\t" << dropped_spans << '\n';
    os << "hook_failures\t" << hook_failures << '\n';
  }
  return os.str();
}

nlohmann::json ProfileReport::to_json() const {
  nlohmann::json j;
  j["format"] = "inferix-profile";
  j["version"] = 1;
  j["kind"] = format_name(format);
  j["spans"] = nlohmann::json::array();
  for (const auto& s : spans) {
    j["spans"].push_back({{"name", s.name},
                          {"count", s.count},
                          {"total_ns", s.total_ns},
                          {"mean_ns", s.mean_ns},
                          {"p50_ns", s.p50_ns},
                          {"p95_ns", s.p95_ns},
                          {"min_ns", s.min_ns},
                          {"max_ns", s.max_ns}});
  }
  j["metrics"] = nlohmann::json::array();
  for (const auto& m : metrics) {
    j["metrics"].push_back({{"name", m.name},
                            {"scope", m.scope},
                            {"count", m.count},
                            {"sum", m.sum},
                            {"mean", m.mean},
                            {"min", m.min},
                            {"max", m.max}});
  }
  j["wall_time_ns"] = wall_time_ns;
  j["dropped_spans"] = dropped_spans;
  j["hook_failures"] = hook_failures;
  j["metadata"] = {{"generated_unix_ms", generated_unix_ms}};
  return j;
}

bool ProfileReport::same_data(const ProfileReport& o) const {
  return std::tie(format, spans, metrics, wall_time_ns, dropped_spans, hook_failures) ==
         std::tie(o.format, o.spans, o.metrics, o.wall_time_ns, o.dropped_spans, o.hook_failures);
}

}  // namespace inferix::prof
