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

#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "inferix/engine/generator.hpp"
#include "inferix/parallel/strategies.hpp"
#include "inferix/parallel/worker_group.hpp"
#include "test_util.hpp"

namespace inferix::parallel {
namespace {

using attn::AttentionMask;
using testing::random_tensor;

struct Problem {
  Tensor q, k, v;
  std::size_t heads;
  AttentionMask mask;
};

Problem make_problem(std::size_t n, std::size_t m, std::size_t heads, std::size_t d, std::uint64_t seed,
                     AttentionMask mask) {
  return {random_tensor(n, heads * d, seed), random_tensor(m, heads * d, seed + 1),
          random_tensor(m, heads * d, seed + 2), heads, std::move(mask)};
}

struct Run {
  Tensor out;
  TraceTotals totals;
  std::vector<TraceRecord> trace;
  std::size_t bytes_received = 0;
  std::size_t pending = 0;
};

Run run(Strategy s, const Problem& p, std::size_t world, ExecutionMode mode = ExecutionMode::Sequential,
        std::optional<ShardSpec> q_spec = std::nullopt) {
  WorkerGroup g(world, mode);
  const auto qs = shard_rows(p.q, q_spec ? *q_spec : ShardSpec::even(p.q.rows(), world));
  const auto ks = shard_rows(p.k, ShardSpec::even(p.k.rows(), world));
  const auto vs = shard_rows(p.v, ShardSpec::even(p.v.rows(), world));
  const auto out = run_strategy(s, g, qs, ks, vs, p.heads, p.mask);
  return {gather_rows(out, p.q.cols()), g.totals(), g.trace(), g.bytes_received(), g.pending_messages()};
}

Tensor dense(const Problem& p) { return attn::multi_head_attention(p.q, p.k, p.v, p.heads, p.mask); }

// ---------------------------------------------------------------------------

TEST(AllToAll, SingleWorkerIsIdentity) {
  WorkerGroup g(1);
  const Tensor t = random_tensor(3, 2, 1);
  const auto recv = all_to_all(g, {{t}});
  EXPECT_EQ(recv[0][0], t);
  EXPECT_EQ(g.trace().size(), 1u);
}

TEST(AllToAll, TransposesTaggedPayloads) {
  WorkerGroup g(2);
  auto tag = [](float x) { return Tensor({1, 1}, {x}); };
  const auto recv = all_to_all(g, {{tag(0), tag(1)}, {tag(10), tag(11)}});
  EXPECT_EQ(recv[0][0].at(0, 0), 0.0f);
  EXPECT_EQ(recv[0][1].at(0, 0), 10.0f);
  EXPECT_EQ(recv[1][0].at(0, 0), 1.0f);
  EXPECT_EQ(recv[1][1].at(0, 0), 11.0f);
  EXPECT_EQ(g.trace().size(), 4u);
}

TEST(AllToAll, BytesConserved) {
  WorkerGroup g(3);
  std::vector<std::vector<Tensor>> send(3, std::vector<Tensor>(3));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) send[i][j] = random_tensor(i + j + 1, 2, i * 3 + j);
  }
  all_to_all(g, send);
  std::size_t sent = 0;
  for (const auto& r : g.trace()) sent += r.payload_bytes;
  EXPECT_EQ(sent, g.bytes_received());
  EXPECT_EQ(sent, 4u * 2 * (1 + 2 + 3 + 2 + 3 + 4 + 3 + 4 + 5));
  EXPECT_EQ(g.pending_messages(), 0u);
}

TEST(AllToAll, RejectsNonSquare) {
  WorkerGroup g(2);
  EXPECT_THROW(all_to_all(g, {{Tensor::zeros(1, 1)}}), attn::DimensionError);
}

TEST(WorkerGroup, FifoPerPair) {
  WorkerGroup g(2);
  for (int i = 0; i < 5; ++i) g.send(0, 1, Message{{Tensor({1, 1}, {float(i)})}, "x"});
  for (int i = 0; i < 5; ++i) EXPECT_EQ(g.receive(0, 1).parts[0].at(0, 0), float(i));
  EXPECT_THROW(g.receive(0, 1), ChannelError);
  EXPECT_THROW(g.send(0, 2, {}), std::out_of_range);
}

TEST(WorkerGroup, ExportsOneLinePerMessage) {
  WorkerGroup g(2);
  g.send(0, 1, Message{{Tensor::zeros(2, 3)}, "ring.kv"});
  g.next_step();
  g.send(1, 0, Message{{}, "empty"});
  std::ostringstream os;
  g.export_trace(os);
  EXPECT_EQ(os.str(), "0\t0\t1\t24\tring.kv\n1\t1\t0\t0\tempty\n");
}

// ---------------------------------------------------------------------------

TEST(Ulysses, SingleWorkerExact) {
  const auto p = make_problem(10, 10, 2, 4, 3, AttentionMask::full(10, 10));
  EXPECT_EQ(run(Strategy::Ulysses, p, 1).out, dense(p));
}

TEST(Ulysses, FourWorkersMatchDense) {
  const auto p = make_problem(32, 32, 4, 8, 11, AttentionMask::full(32, 32));
  EXPECT_LE(attn::max_abs_diff(run(Strategy::Ulysses, p, 4).out, dense(p)), 1e-5f);
}

TEST(Ulysses, RequiresDivisibleHeads) {
  const auto p = make_problem(8, 8, 3, 2, 1, AttentionMask::full(8, 8));
  EXPECT_THROW(run(Strategy::Ulysses, p, 2), DivisibilityError);
}

TEST(RingPassKv, SingleWorkerNoMessages) {
  const auto p = make_problem(6, 6, 1, 4, 5, attn::block_causal_mask(3, 2));
  const auto r = run(Strategy::RingPassKv, p, 1);
  EXPECT_EQ(r.totals.messages, 0u);
  EXPECT_LE(attn::max_abs_diff(r.out, dense(p)), 1e-6f);
}

TEST(RingPassKv, BlockCausalThreeWorkers) {
  const auto p = make_problem(24, 24, 2, 4, 21, attn::block_causal_mask(4, 6));
  const auto r = run(Strategy::RingPassKv, p, 3);
  EXPECT_LE(attn::max_abs_diff(r.out, dense(p)), 1e-5f);
  EXPECT_EQ(r.totals.messages, 6u);
  std::map<std::size_t, std::size_t> per_sender;
  for (const auto& t : r.trace) {
    EXPECT_EQ(t.receiver, (t.sender + 1) % 3);
    EXPECT_EQ(t.tag, "ring.kv");
    ++per_sender[t.sender];
  }
  for (std::size_t w = 0; w < 3; ++w) EXPECT_EQ(per_sender[w], 2u);
}

TEST(RingPassQ, SingleWorkerMatchesDense) {
  const auto p = make_problem(6, 6, 2, 2, 5, attn::block_causal_mask(2, 3));
  EXPECT_LE(attn::max_abs_diff(run(Strategy::RingPassQ, p, 1).out, dense(p)), 1e-6f);
}

TEST(RingPassQ, AgreesWithPassKv) {
  const auto p = make_problem(24, 24, 2, 4, 21, attn::block_causal_mask(4, 6));
  const auto a = run(Strategy::RingPassQ, p, 3);
  const auto b = run(Strategy::RingPassKv, p, 3);
  EXPECT_LE(attn::max_abs_diff(a.out, b.out), 1e-5f);
  EXPECT_LE(attn::max_abs_diff(a.out, dense(p)), 1e-5f);
}

TEST(RingPassQ, PerRotationBytesFollowFormula) {
  // Equal shards of n_s = 8 tokens, one head of width d.
  const std::size_t d = 4, ns = 8, w = 3;
  const auto p = make_problem(ns * w, ns * w, 1, d, 2, attn::block_causal_mask(4, 6));
  const auto q = run(Strategy::RingPassQ, p, w);
  const auto kv = run(Strategy::RingPassKv, p, w);
  std::map<std::string, std::size_t> bytes_by_tag;
  for (const auto& t : q.trace) bytes_by_tag[t.tag] += t.payload_bytes;
  for (const auto& t : kv.trace) bytes_by_tag[t.tag] += t.payload_bytes;
  const std::size_t rotations = w - 1;
  // Per worker and rotation: pass-q moves n_s*d (query) + n_s*(d+2) (partial)
  // floats, pass-kv moves 2*n_s*d.
  EXPECT_EQ((bytes_by_tag["ring.q"] + bytes_by_tag["ring.partial"]) / (w * rotations), 4 * (ns * d + ns * (d + 2)));
  EXPECT_EQ(bytes_by_tag["ring.kv"] / (w * rotations), 4 * (2 * ns * d));
}

// ---------------------------------------------------------------------------

AttentionMask random_mask(std::size_t n, std::size_t m, SplitMix64& rng) {
  AttentionMask mask(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) mask.set(i, j, rng.uniform() < 0.4);
    mask.set(i, static_cast<std::size_t>(rng.next() % m), true);
  }
  return mask;
}

TEST(Property, AllStrategiesMatchDense) {
  SplitMix64 rng(2026);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t n = 1 + rng.next() % 64;
    const std::size_t m = (trial % 3 == 0) ? 1 + rng.next() % 64 : n;
    const std::size_t heads = std::size_t{1} << (rng.next() % 3);
    const std::size_t world = std::size_t{1} << (rng.next() % 3);
    const std::size_t d = 1 + rng.next() % 6;
    AttentionMask mask = (trial % 2 == 0 && n == m && n % 4 == 0) ? attn::block_causal_mask(4, n / 4)
                                                                  : random_mask(n, m, rng);
    const auto p = make_problem(n, m, heads, d, 1000 + trial, std::move(mask));
    const Tensor ref = dense(p);
    const ProblemShape shape{n, m, heads, d, world};
    for (Strategy s : kAllStrategies) {
      const auto est = predict_comm(s, shape, {});
      if (!est.feasible) {
        EXPECT_THROW(run(s, p, world), DivisibilityError);
        continue;
      }
      const auto r = run(s, p, world);
      ASSERT_LE(attn::max_abs_diff(r.out, ref), 1e-5f)
          << to_string(s) << " n=" << n << " m=" << m << " H=" << heads << " W=" << world;
      EXPECT_EQ(r.totals.bytes_sent, r.bytes_received);
      EXPECT_EQ(r.pending, 0u);
      EXPECT_EQ(r.totals.remote_bytes, est.bytes) << to_string(s);
      EXPECT_EQ(r.totals.remote_messages, est.messages) << to_string(s);
      ++checked;
    }
  }
  EXPECT_GT(checked, 250);
}

TEST(Property, UnevenShardsKeepByteFormula) {
  const auto p = make_problem(13, 13, 2, 3, 9, attn::block_causal_mask(1, 13));
  const ShardSpec spec{ShardAxis::Sequence, 4, {0, 7, 1, 5}};
  for (Strategy s : kAllStrategies) {
    if (s == Strategy::Ulysses) continue;  // 2 heads over 4 workers is infeasible
    const auto r = run(s, p, 4, ExecutionMode::Sequential, spec);
    EXPECT_LE(attn::max_abs_diff(r.out, dense(p)), 1e-5f);
    EXPECT_EQ(r.totals.remote_bytes, predict_comm(s, {13, 13, 2, 3, 4}, {}).bytes);
  }
}

TEST(Scheduling, ThreadedEqualsSequential) {
  const auto p = make_problem(37, 37, 4, 4, 77, attn::block_causal_mask(1, 37));
  for (Strategy s : kAllStrategies) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto a = run(s, p, 4, ExecutionMode::Sequential);
      const auto b = run(s, p, 4, ExecutionMode::Threaded);
      EXPECT_EQ(a.out, b.out) << to_string(s);
      EXPECT_EQ(a.trace, b.trace) << to_string(s);
    }
  }
}

// ---------------------------------------------------------------------------

TEST(ChooseStrategy, SingleWorkerPrefersUlysses) {
  const auto c = choose_strategy({64, 0, 4, 8, 1}, {});
  EXPECT_EQ(c.strategy, Strategy::Ulysses);
  EXPECT_EQ(c.predicted_cost, 0.0);
  for (const auto& e : c.candidates) EXPECT_EQ(e.cost, 0.0);
}

TEST(ChooseStrategy, FewHeadsExcludesUlysses) {
  const auto c = choose_strategy({64, 0, 2, 8, 4}, {});
  EXPECT_NE(c.strategy, Strategy::Ulysses);
  EXPECT_FALSE(c.candidates[0].feasible);
}

TEST(ChooseStrategy, TieBreakFollowsListedOrder) {
  // Zero link costs make every strategy tie.
  EXPECT_EQ(choose_strategy({16, 0, 4, 4, 4}, {0.0, 0.0}).strategy, Strategy::Ulysses);
  EXPECT_EQ(choose_strategy({16, 0, 2, 4, 4}, {0.0, 0.0}).strategy, Strategy::RingPassKv);
}

TEST(ChooseStrategy, WinnerMovesFewestMeasuredBytes) {
  const LinkCostModel bytes_only{0.0, 1.0};
  for (const ProblemShape shape : {ProblemShape{32, 0, 4, 8, 4}, ProblemShape{8, 48, 2, 4, 2},
                                   ProblemShape{40, 8, 1, 2, 4}}) {
    const auto choice = choose_strategy(shape, bytes_only);
    const auto p = make_problem(shape.seq_len, shape.keys(), shape.heads, shape.head_dim, 5,
                                AttentionMask::full(shape.seq_len, shape.keys()));
    std::map<Strategy, std::size_t> measured;
    for (Strategy s : kAllStrategies) {
      if (!predict_comm(s, shape, bytes_only).feasible) continue;
      measured[s] = run(s, p, shape.world_size).totals.remote_bytes;
    }
    for (const auto& [s, b] : measured) EXPECT_LE(measured.at(choice.strategy), b) << to_string(s);
  }
}

TEST(ChooseStrategy, MessageCostCanFlipTheChoice) {
  const ProblemShape shape{64, 0, 4, 2, 4};
  EXPECT_EQ(choose_strategy(shape, {0.0, 1.0}).strategy, Strategy::Ulysses);
  EXPECT_EQ(choose_strategy(shape, {1e9, 1.0}).strategy, Strategy::RingPassKv);
}

// ---------------------------------------------------------------------------

TEST(ParallelBackend, DropsIntoEngine) {
  engine::ModelConfig c;
  c.layers = 2;
  c.heads = 4;
  c.head_dim = 4;
  c.block_len = 6;
  c.frame_height = c.frame_width = 4;
  const auto model = engine::build_model(c);
  engine::GenerationRequest req;
  req.num_blocks = 3;
  req.schedule = engine::DenoiseSchedule::uniform(2);
  const auto ref = engine::generate_sequence(model, req);
  for (Strategy s : kAllStrategies) {
    ParallelBackend backend(2, s);
    engine::EngineOptions opts;
    opts.backend = &backend;
    const auto out = engine::generate_sequence(model, req, {}, opts);
    for (std::size_t b = 0; b < out.size(); ++b) {
      EXPECT_LE(attn::max_abs_diff(out[b].latent, ref[b].latent), 1e-4f) << to_string(s);
    }
    EXPECT_GT(backend.cumulative().remote_messages, 0u);
  }
}

TEST(ParallelBackend, AutoPicksCheapest) {
  ParallelBackend backend(4);
  const auto p = make_problem(16, 16, 4, 4, 3, AttentionMask::full(16, 16));
  EXPECT_LE(attn::max_abs_diff(backend.attend(p.q, p.k, p.v, 4, p.mask), dense(p)), 1e-5f);
  EXPECT_EQ(backend.last_strategy(), choose_strategy({16, 16, 4, 4, 4}, {}).strategy);
}

TEST(StrategyNames, RoundTrip) {
  for (Strategy s : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_FALSE(parse_strategy("tree").has_value());
}

}  // namespace
}  // namespace inferix::parallel
