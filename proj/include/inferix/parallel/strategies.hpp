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
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inferix/attn/attention.hpp"
#include "inferix/parallel/worker_group.hpp"

namespace inferix::parallel {

class DivisibilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ShardAxis { Sequence, Head };

struct ShardSpec {
  ShardAxis axis = ShardAxis::Sequence;
  std::size_t world_size = 1;
  std::vector<std::size_t> shard_lens;

  // Near-equal split; the first (extent % world_size) workers get one extra.
  static ShardSpec even(std::size_t extent, std::size_t world_size,
                        ShardAxis axis = ShardAxis::Sequence);
  std::size_t extent() const noexcept;
  std::size_t offset(std::size_t rank) const;
  void validate(std::size_t expected_extent) const;
};

std::vector<Tensor> shard_rows(const Tensor& t, const ShardSpec& spec);
Tensor gather_rows(std::span<const Tensor> shards, std::size_t cols);

// All three take sequence-sharded packed [tokens, heads * head_dim] inputs
// and a global [n, m] mask, and return the output sharded like q.

// Requires heads % world_size == 0 (DivisibilityError otherwise).
std::vector<Tensor> ulysses_attention(WorkerGroup& group, std::span<const Tensor> q,
                                      std::span<const Tensor> k, std::span<const Tensor> v,
                                      std::size_t heads, const attn::AttentionMask& mask);

// Q stays; K/V shards travel world_size - 1 hops around the ring.
std::vector<Tensor> ring_attention_pass_kv(WorkerGroup& group, std::span<const Tensor> q,
                                           std::span<const Tensor> k, std::span<const Tensor> v,
                                           std::size_t heads, const attn::AttentionMask& mask);

// K/V stay; Q shards travel the ring. Each worker keeps the partial it
// computes for a foreign Q shard and returns it to the owner in a final
// gather step.
std::vector<Tensor> ring_attention_pass_q(WorkerGroup& group, std::span<const Tensor> q,
                                          std::span<const Tensor> k, std::span<const Tensor> v,
                                          std::size_t heads, const attn::AttentionMask& mask);

enum class Strategy { Ulysses, RingPassKv, RingPassQ };
inline constexpr std::array<Strategy, 3> kAllStrategies{Strategy::Ulysses, Strategy::RingPassKv,
                                                        Strategy::RingPassQ};
const char* to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

// Affine link model: cost = per_message * messages + per_byte * bytes.
struct LinkCostModel {
  double per_message = 1.0;
  double per_byte = 1.0e-3;
};

struct ProblemShape {
  std::size_t seq_len = 0;   // query tokens
  std::size_t kv_len = 0;    // key tokens; 0 means seq_len
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  std::size_t world_size = 1;

  std::size_t keys() const noexcept { return kv_len ? kv_len : seq_len; }
};

// Remote (sender != receiver) traffic of one strategy; float32 payloads.
//   ulysses:      4 W(W-1) messages, 4 (H/W) d (W-1) (2n + 2m) bytes
//   ring_pass_kv: W(W-1) messages,   4 (W-1) 2 m H d bytes
//   ring_pass_q:  2 W(W-1) messages, 4 (W-1) n H (2d + 2) bytes
struct CommEstimate {
  Strategy strategy = Strategy::Ulysses;
  bool feasible = true;
  std::size_t messages = 0;
  std::size_t bytes = 0;
  double cost = 0.0;
};

CommEstimate predict_comm(Strategy s, const ProblemShape& shape, const LinkCostModel& link);

struct StrategyChoice {
  Strategy strategy = Strategy::Ulysses;
  double predicted_cost = 0.0;
  std::vector<CommEstimate> candidates;  // in kAllStrategies order
};

// argmin over feasible strategies; ties go to the earlier one in
// kAllStrategies order.
StrategyChoice choose_strategy(const ProblemShape& shape, const LinkCostModel& link);

std::vector<Tensor> run_strategy(Strategy s, WorkerGroup& group, std::span<const Tensor> q,
                                 std::span<const Tensor> k, std::span<const Tensor> v,
                                 std::size_t heads, const attn::AttentionMask& mask);

// attn::Backend that shards evenly over a simulated group and runs a fixed
// strategy, or the cheapest feasible one when none is given.
class ParallelBackend final : public attn::Backend {
 public:
  ParallelBackend(std::size_t world_size, std::optional<Strategy> strategy = std::nullopt,
                  LinkCostModel link = {}, ExecutionMode mode = ExecutionMode::Sequential);

  Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                const attn::AttentionMask& mask) override;

  std::size_t world_size() const noexcept { return world_size_; }
  const TraceTotals& cumulative() const noexcept { return totals_; }
  std::optional<Strategy> last_strategy() const noexcept { return last_; }

 private:
  std::size_t world_size_;
  std::optional<Strategy> strategy_;
  LinkCostModel link_;
  ExecutionMode mode_;
  TraceTotals totals_;
  std::optional<Strategy> last_;
};

}  // namespace inferix::parallel
