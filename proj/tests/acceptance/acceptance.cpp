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

// Acceptance suite: one PASS/FAIL line per criterion, each with its tolerance
// and wall-clock budget pinned below. Exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "inferix/attn/attention.hpp"
#include "inferix/common/rng.hpp"
#include "inferix/engine/generator.hpp"
#include "inferix/engine/model.hpp"
#include "inferix/engine/pipeline.hpp"
#include "inferix/metrics/manifest.hpp"
#include "inferix/metrics/vde.hpp"
#include "inferix/parallel/strategies.hpp"
#include "inferix/parallel/worker_group.hpp"
#include "inferix/prof/overhead.hpp"
#include "inferix/stream/codec.hpp"
#include "inferix/stream/server.hpp"
#include "kv_reference.hpp"
#include "stream_clients.hpp"
#include "test_util.hpp"

namespace {

using namespace inferix;
using namespace std::chrono_literals;
using attn::Tensor;

// ---- pinned tolerances and budgets -----------------------------------------
constexpr float kCacheTolerance = 1e-4f;
constexpr double kCacheBudgetS = 60;
constexpr std::size_t kCacheConfigs = 12;

constexpr float kParallelTolerance = 1e-5f;
constexpr double kParallelBudgetS = 30;

constexpr std::size_t kKvSequences = 10'000;
constexpr std::size_t kKvOpsPerSequence = 60;
constexpr double kKvBudgetS = 60;

constexpr double kOverheadLimit = 1.05;
constexpr int kOverheadRepeats = 5;
constexpr double kOverheadBudgetS = 30;

constexpr double kPromptBudgetS = 30;

constexpr std::size_t kFuzzMessages = 100'000;
constexpr std::uint32_t kCrcCheck = 0xCBF43926u;
constexpr double kProtocolBudgetS = 60;

constexpr double kScaleInvarianceRel = 1e-9;
constexpr double kVdeBudgetS = 30;

struct Outcome {
  bool ok = true;
  std::string detail;
};

class Checker {
 public:
  void require(bool cond, const std::string& what) {
    if (!cond && failures_++ == 0) first_ = what;
  }
  Outcome outcome(const std::string& summary) const {
    if (failures_) return {false, first_ + " (" + std::to_string(failures_) + " failures)"};
    return {true, summary};
  }

 private:
  std::size_t failures_ = 0;
  std::string first_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- cache correctness -----------------------------------------------------

Outcome cache_correctness() {
  SplitMix64 rng(0x1f2e3d4cULL);
  Checker check;
  float worst = 0.0f;
  std::size_t windowed = 0, prompt_changes = 0;
  for (std::size_t i = 0; i < kCacheConfigs; ++i) {
    engine::ModelConfig c;
    // The first config sits at every upper bound.
    c.layers = i == 0 ? 4 : 1 + rng.next() % 4;
    c.heads = 1 + rng.next() % 3;
    c.head_dim = 2 + rng.next() % 7;
    c.block_len = i == 0 ? 32 : 1 + rng.next() % 32;
    c.frame_height = 2 + rng.next() % 7;
    c.frame_width = 2 + rng.next() % 7;
    c.prompt_dim = 4 + rng.next() % 13;
    c.prompt_tokens = 1 + rng.next() % 4;
    c.weight_seed = rng.next();
    engine::GenerationRequest req;
    req.num_blocks = i == 0 ? 4 : 1 + rng.next() % 4;
    req.schedule = engine::DenoiseSchedule::uniform(1 + rng.next() % 4);
    req.seed = rng.next();
    req.prompt_schedule = {{0, "config " + std::to_string(i)}};
    if (req.num_blocks > 1 && rng.next() % 2) {
      req.prompt_schedule.push_back({1 + rng.next() % (req.num_blocks - 1), "changed " + std::to_string(i)});
      ++prompt_changes;
    }
    if (rng.next() % 3 == 0) {
      req.kv_window = 1 + rng.next() % (2 * c.block_len);
      ++windowed;
    }
    const engine::Model model(c);
    const auto cached = engine::generate_sequence(model, req);
    const auto reference = engine::recompute_reference(model, req);
    check.require(cached.size() == req.num_blocks && reference.size() == req.num_blocks,
                  "config " + std::to_string(i) + ": wrong block count");
    for (std::size_t b = 0; b < std::min(cached.size(), reference.size()); ++b) {
      const float d = attn::max_abs_diff(cached[b].latent, reference[b].latent);
      worst = std::max(worst, d);
      check.require(d <= kCacheTolerance, "config " + std::to_string(i) + " block " + std::to_string(b) +
                                              ": diff " + fmt("%.3g", d));
    }
  }
  return check.outcome(std::to_string(kCacheConfigs) + " configs (" + std::to_string(windowed) + " windowed, " +
                       std::to_string(prompt_changes) + " with prompt changes), max diff " + fmt("%.3g", worst) +
                       " <= " + fmt("%.0e", kCacheTolerance));
}

// ---- parallel equivalence --------------------------------------------------

attn::AttentionMask grid_mask(int kind, std::size_t n, std::size_t m, SplitMix64& rng) {
  if (kind == 1 && n == m && n % 4 == 0) return attn::block_causal_mask(4, n / 4);
  attn::AttentionMask mask(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) mask.set(i, j, kind == 0 || rng.uniform() < 0.4);
    mask.set(i, static_cast<std::size_t>(rng.next() % m), true);
  }
  return mask;
}

Outcome parallel_equivalence() {
  using namespace inferix::parallel;
  SplitMix64 rng(0x5eed);
  Checker check;
  float worst = 0.0f;
  std::size_t runs = 0, infeasible = 0, choices = 0;
  const std::size_t seqs[] = {1, 3, 8, 13, 32, 64};
  for (std::size_t n : seqs) {
    for (std::size_t heads : {1, 2, 4}) {
      for (std::size_t world : {1, 2, 4}) {
        for (int mask_kind = 0; mask_kind < 3; ++mask_kind) {
          const std::size_t m = mask_kind == 2 ? 1 + rng.next() % 64 : n;
          const std::size_t d = 1 + rng.next() % 6;
          const auto seed = rng.next();
          const Tensor q = testing::random_tensor(n, heads * d, seed);
          const Tensor k = testing::random_tensor(m, heads * d, seed + 1);
          const Tensor v = testing::random_tensor(m, heads * d, seed + 2);
          const auto mask = grid_mask(mask_kind, n, m, rng);
          const Tensor dense = attn::multi_head_attention(q, k, v, heads, mask);
          const ProblemShape shape{n, m, heads, d, world};
          const std::string where = "n=" + std::to_string(n) + " m=" + std::to_string(m) +
                                    " H=" + std::to_string(heads) + " W=" + std::to_string(world);

          std::map<Strategy, std::size_t> traced;
          for (Strategy s : kAllStrategies) {
            const auto est = predict_comm(s, shape, {});
            WorkerGroup group(world);
            const auto qs = shard_rows(q, ShardSpec::even(n, world));
            const auto ks = shard_rows(k, ShardSpec::even(m, world));
            const auto vs = shard_rows(v, ShardSpec::even(m, world));
            if (!est.feasible) {
              bool threw = false;
              try {
                run_strategy(s, group, qs, ks, vs, heads, mask);
              } catch (const DivisibilityError&) {
                threw = true;
              }
              check.require(threw, std::string(to_string(s)) + " infeasible but ran: " + where);
              ++infeasible;
              continue;
            }
            const auto out = gather_rows(run_strategy(s, group, qs, ks, vs, heads, mask), q.cols());
            const float diff = attn::max_abs_diff(out, dense);
            worst = std::max(worst, diff);
            check.require(diff <= kParallelTolerance, std::string(to_string(s)) + " diff " + fmt("%.3g", diff) +
                                                          " at " + where);
            check.require(group.totals().remote_bytes == est.bytes,
                          std::string(to_string(s)) + " traced bytes != predicted at " + where);
            check.require(group.totals().remote_messages == est.messages,
                          std::string(to_string(s)) + " traced messages != predicted at " + where);
            traced[s] = group.totals().remote_bytes;
            ++runs;
          }
          const auto choice = choose_strategy(shape, {});
          const auto& chosen = choice.candidates.at(static_cast<std::size_t>(choice.strategy));
          check.require(traced.count(choice.strategy) && traced[choice.strategy] == chosen.bytes,
                        "choose_strategy bytes != traced at " + where);
          ++choices;
        }
      }
    }
  }
  return check.outcome(std::to_string(runs) + " strategy runs + " + std::to_string(infeasible) +
                       " infeasible rejections, max diff " + fmt("%.3g", worst) + " <= " +
                       fmt("%.0e", kParallelTolerance) + "; " + std::to_string(choices) +
                       " choose_strategy predictions == traced bytes");
}

// ---- KV differential -------------------------------------------------------

Outcome kv_differential() {
  std::size_t mismatches = 0, ops = 0, offloads = 0, evictions = 0, host_fetches = 0;
  std::string first;
  for (std::uint64_t seed = 0; seed < kKvSequences; ++seed) {
    const auto r = testing::run_kv_differential(1'000'000 + seed, kKvOpsPerSequence);
    ops += r.ops;
    offloads += r.offloads;
    evictions += r.evictions;
    host_fetches += r.host_fetches;
    if (r.mismatches && mismatches++ == 0) first = r.first_failure;
  }
  if (mismatches) return {false, std::to_string(mismatches) + " mismatching sequences; first: " + first};
  if (!offloads || !evictions || !host_fetches) return {false, "op mix missed offload, eviction or host fetches"};
  return {true, std::to_string(kKvSequences) + " sequences, " + std::to_string(ops) + " ops, 0 mismatches (" +
                    std::to_string(offloads) + " offloads, " + std::to_string(host_fetches) +
                    " fetches with host pages, " + std::to_string(evictions) + " window evictions)"};
}

// ---- profiler overhead -----------------------------------------------------

Outcome profiler_overhead() {
  const auto workload = prof::CalibratedWorkload::calibrate();
  prof::OverheadOptions opts;
  opts.repeats = kOverheadRepeats;
  const auto r = prof::measure_overhead(workload, prof::OverheadMode::Enabled, opts);
  return {r.ratio < kOverheadLimit, "ratio " + fmt("%.4f", r.ratio) + " < " + fmt("%.2f", kOverheadLimit) +
                                        ", best of " + std::to_string(r.repeats) + ", " +
                                        std::to_string(r.spans_per_run) + " spans/run"};
}

// ---- prompt isolation ------------------------------------------------------

class UpdateAt final : public engine::Sink {
 public:
  UpdateAt(engine::Engine& e, std::size_t at_chunk, engine::PromptUpdate u)
      : engine_(e), at_(at_chunk), update_(std::move(u)) {}
  void on_event(const engine::EngineEvent& e) override {
    if (e.kind == engine::EventKind::BlockStarted && e.chunk == at_) result = engine_.apply_prompt_update(update_);
  }
  std::optional<engine::PromptUpdateResult> result;

 private:
  engine::Engine& engine_;
  std::size_t at_;
  engine::PromptUpdate update_;
};

Outcome prompt_isolation() {
  struct Scenario {
    std::size_t blocks, issued_at, effective;
  };
  const Scenario scenarios[] = {{6, 1, 3}, {5, 0, 1}, {6, 2, 3}, {4, 0, 3}};
  Checker check;
  std::size_t compared = 0;
  for (std::size_t si = 0; si < std::size(scenarios); ++si) {
    const auto& sc = scenarios[si];
    engine::ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.head_dim = 4;
    c.block_len = 4;
    c.frame_height = 5;
    c.frame_width = 6;
    c.prompt_dim = 8;
    c.prompt_tokens = 3;
    c.weight_seed = 40 + si;
    engine::GenerationRequest base;
    base.num_blocks = sc.blocks;
    base.schedule = engine::DenoiseSchedule::uniform(3);
    base.seed = 7 + si;
    base.prompt_schedule = {{0, "a harbour at dawn"}};
    const std::string tag = "scenario " + std::to_string(si) + ": ";

    const engine::Model model(c);
    const auto unchanged = engine::generate_sequence(model, base);

    engine::Engine live_engine(std::make_shared<engine::ToyPipeline>(c), base);
    UpdateAt upd(live_engine, sc.issued_at, {sc.effective, "a storm over the harbour"});
    engine::Sink* sinks[] = {&upd};
    const auto live = live_engine.run(sinks);
    check.require(upd.result && upd.result->accepted, tag + "update was not accepted");

    auto static_req = base;
    static_req.prompt_schedule.push_back({sc.effective, "a storm over the harbour"});
    const auto fixed = engine::generate_sequence(model, static_req);

    check.require(live.size() == sc.blocks && fixed.size() == sc.blocks, tag + "block count");
    for (std::size_t b = 0; b < std::min(live.size(), fixed.size()); ++b) {
      const bool same_as_unchanged = live[b].latent == unchanged[b].latent && live[b].frames == unchanged[b].frames;
      // (a) chunks before the effective chunk are untouched, all later ones change
      if (b < sc.effective) {
        check.require(same_as_unchanged, tag + "chunk " + std::to_string(b) + " changed before effective chunk");
      } else {
        check.require(!(live[b].latent == unchanged[b].latent),
                      tag + "chunk " + std::to_string(b) + " unaffected by accepted update");
      }
      // (b) bit-identical to the equivalent static schedule
      check.require(live[b].latent == fixed[b].latent && live[b].frames == fixed[b].frames,
                    tag + "chunk " + std::to_string(b) + " differs from static-schedule run");
      ++compared;
    }
  }
  return check.outcome(std::to_string(std::size(scenarios)) + " mid-run updates accepted; " +
                       std::to_string(compared) +
                       " chunks: pre-change untouched, post-change all changed and bit-identical to static schedule");
}

// ---- protocol --------------------------------------------------------------

stream::StreamMessage random_message(SplitMix64& rng) {
  stream::StreamMessage m;
  m.kind = static_cast<stream::MessageKind>(1 + rng.next() % 6);
  std::size_t len;
  switch (rng.next() % 8) {
    case 0: len = 0; break;
    case 1: len = rng.next() % 8192; break;
    default: len = rng.next() % 96; break;
  }
  if (m.kind == stream::MessageKind::Frame && rng.next() % 2) {
    stream::FramePayload f;
    f.chunk_index = static_cast<std::uint32_t>(rng.next());
    f.frame_index = static_cast<std::uint16_t>(rng.next());
    f.frame.width = static_cast<std::uint16_t>(1 + rng.next() % 24);
    f.frame.height = static_cast<std::uint16_t>(1 + rng.next() % 24);
    f.frame.pixels.resize(std::size_t{f.frame.width} * f.frame.height);
    for (auto& p : f.frame.pixels) p = static_cast<std::uint8_t>(rng.next());
    m.payload = stream::encode_frame_payload(f);
    return m;
  }
  m.payload.resize(len);
  for (auto& b : m.payload) b = static_cast<std::uint8_t>(rng.next());
  return m;
}

Outcome protocol() {
  Checker check;
  check.require(stream::crc32("123456789") == kCrcCheck, "crc32 check value");

  SplitMix64 rng(0xc0dec);
  std::size_t round_trips = 0, streamed = 0;
  stream::MessageReader reader;
  std::vector<stream::StreamMessage> pending;
  for (std::size_t i = 0; i < kFuzzMessages; ++i) {
    const auto msg = random_message(rng);
    const auto bytes = stream::encode_message(msg);
    const auto d = stream::decode_message(bytes);
    const bool ok = d && d->consumed == bytes.size() && d->message == msg;
    check.require(ok, "round trip " + std::to_string(i));
    if (ok) ++round_trips;
    // Also push every message through the incremental reader in random slices.
    pending.push_back(msg);
    for (std::size_t pos = 0; pos < bytes.size();) {
      const std::size_t take = std::min<std::size_t>(bytes.size() - pos, 1 + rng.next() % 64);
      reader.feed(std::span(bytes).subspan(pos, take));
      pos += take;
      while (auto got = reader.next()) {
        check.require(!pending.empty() && *got == pending.front(), "reader order at " + std::to_string(i));
        if (!pending.empty()) pending.erase(pending.begin());
        ++streamed;
      }
    }
  }
  check.require(pending.empty(), "reader left messages undelivered");

  // Loopback serve: one raw client sees HELLO, every frame in order, END.
  engine::ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.head_dim = 4;
  c.block_len = 4;
  c.frame_height = 5;
  c.frame_width = 6;
  c.prompt_dim = 8;
  c.prompt_tokens = 3;
  c.weight_seed = 17;
  engine::GenerationRequest req;
  req.num_blocks = 5;
  req.schedule = engine::DenoiseSchedule::uniform(3);
  req.seed = 99;
  req.prompt_schedule = {{0, "a lighthouse in fog"}};
  auto eng = std::make_shared<engine::Engine>(std::make_shared<engine::ToyPipeline>(c), req);
  stream::ServerOptions so;
  so.wait_for_clients = 1;
  stream::StreamServer server(eng, so);
  server.start();
  testing::RawClient client(server.port());
  const auto msgs = client.until_end(20s);
  server.wait();
  const auto expected = engine::generate_sequence(engine::Model(c), req);
  const auto frames = testing::frames_of(msgs);
  check.require(!msgs.empty() && msgs.front().kind == stream::MessageKind::Hello, "loopback: first message");
  check.require(!msgs.empty() && msgs.back().kind == stream::MessageKind::End, "loopback: END missing");
  check.require(frames.size() == req.num_blocks * c.block_len, "loopback: frame count");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::size_t chunk = i / c.block_len, idx = i % c.block_len;
    check.require(frames[i].chunk_index == chunk && frames[i].frame_index == idx, "loopback: frame order at " + std::to_string(i));
    check.require(chunk < expected.size() && frames[i].frame == expected[chunk].frames[idx],
                  "loopback: frame content at " + std::to_string(i));
  }
  return check.outcome(std::to_string(round_trips) + " fuzzed round trips + " + std::to_string(streamed) +
                       " via sliced reader, crc32(\"123456789\") = 0xCBF43926, loopback delivered " +
                       std::to_string(frames.size()) + " ordered frames then END");
}

// ---- VDE analytic cases ----------------------------------------------------

GrayFrame blurred(GrayFrame f, int passes) {
  for (int p = 0; p < passes; ++p) {
    GrayFrame out = f;
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) {
        int sum = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            sum += f.at(std::clamp(x + dx, 0, f.width - 1), std::clamp(y + dy, 0, f.height - 1));
          }
        }
        out.pixels[y * f.width + x] = static_cast<std::uint8_t>((sum + 4) / 9);
      }
    }
    f = std::move(out);
  }
  return f;
}

Outcome vde_analytic() {
  Checker check;
  const std::vector<double> constant = {4.2, 4.2, 4.2, 4.2};
  check.require(metrics::vde(constant) == 0.0, "constant series is not 0");
  const std::vector<double> example = {1.0, 1.1, 0.9};
  const double ex = metrics::vde(example);
  check.require(ex == 10.0, "[1.0, 1.1, 0.9] gave " + fmt("%.17g", ex));

  SplitMix64 rng(77);
  double worst_rel = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> q(2 + rng.next() % 10);
    for (auto& x : q) x = 0.1 + rng.uniform() * 10.0;
    const double base = metrics::vde(q);
    for (double alpha : {3.7, 1e-3, 2.5e4}) {
      std::vector<double> scaled = q;
      for (auto& x : scaled) x *= alpha;
      const double rel = std::abs(metrics::vde(scaled) - base) / std::max(std::abs(base), 1e-300);
      worst_rel = std::max(worst_rel, rel);
    }
  }
  check.require(worst_rel <= kScaleInvarianceRel, "scale invariance rel error " + fmt("%.3g", worst_rel));

  // Clarity under progressive blur: per-frame scores fall with each pass and
  // drift grows with blur strength.
  std::vector<GrayFrame> base;
  for (std::uint64_t s = 0; s < 3; ++s) {
    GrayFrame f{24, 24, std::vector<std::uint8_t>(24 * 24)};
    SplitMix64 px(100 + s);
    for (auto& p : f.pixels) p = static_cast<std::uint8_t>(px.next());
    base.push_back(std::move(f));
  }
  double previous = metrics::score_clarity(base);
  for (int strength = 1; strength <= 3; ++strength) {
    std::vector<GrayFrame> b;
    for (const auto& f : base) b.push_back(blurred(f, strength));
    const double score = metrics::score_clarity(b);
    check.require(score < previous, "clarity not decreasing at blur strength " + std::to_string(strength));
    previous = score;
  }
  double previous_vde = 0.0;
  for (int strength = 1; strength <= 3; ++strength) {
    metrics::ChunkedVideo v;
    v.chunk_len = base.size();
    for (int t = 0; t < 4; ++t) {
      for (const auto& f : base) v.frames.push_back(blurred(f, strength * t));
    }
    const double d = metrics::evaluate(v).vde_clarity;
    check.require(d > previous_vde, "clarity drift not increasing at strength " + std::to_string(strength));
    previous_vde = d;
  }

  const auto manifest = metrics::split_manifest(
      metrics::synthetic_manifest({{"humans", 671}, {"animals", 171}, {"environment", 158}}, 11), 2026);
  const auto train = manifest.count(metrics::Split::Train), eval = manifest.count(metrics::Split::Eval);
  check.require(manifest.entries.size() == 1000 && train == 800 && eval == 200,
                "split gave " + std::to_string(train) + "/" + std::to_string(eval));

  return check.outcome("constant -> 0, [1.0,1.1,0.9] -> 10.0 exactly, scale invariance rel err " +
                       fmt("%.2g", worst_rel) + " <= 1e-9, clarity monotone over 3 blur strengths, split " +
                       std::to_string(train) + "/" + std::to_string(eval));
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"cache_correctness", kCacheBudgetS, cache_correctness},
      {"parallel_equivalence", kParallelBudgetS, parallel_equivalence},
      {"kv_differential", kKvBudgetS, kv_differential},
      {"profiler_overhead", kOverheadBudgetS, profiler_overhead},
      {"prompt_isolation", kPromptBudgetS, prompt_isolation},
      {"protocol", kProtocolBudgetS, protocol},
      {"vde_analytic", kVdeBudgetS, vde_analytic},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = s < c.budget_s;
    const bool ok = o.ok && in_time;
    failed += !ok;
    std::printf("%s %s: %s; %.2f s %s %.0f s\n", ok ? "PASS" : "FAIL", c.name, o.detail.c_str(), s,
                in_time ? "<" : ">=", c.budget_s);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed ? 1 : 0;
}
