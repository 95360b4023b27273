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

#include "inferix/parallel/strategies.hpp"

#include <limits>
#include <numeric>

namespace inferix::parallel {

namespace {

using attn::AttentionMask;
using attn::AttentionPartial;

struct Layout {
  std::size_t world = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  std::vector<std::size_t> q_off;  // world + 1 prefix offsets
  std::vector<std::size_t> k_off;

  std::size_t q_rows(std::size_t r) const { return q_off[r + 1] - q_off[r]; }
  AttentionMask mask_for(const AttentionMask& m, std::size_t q_rank, std::size_t k_rank) const {
    return m.slice(q_off[q_rank], q_off[q_rank + 1], k_off[k_rank], k_off[k_rank + 1]);
  }
};

std::vector<std::size_t> prefix(std::span<const Tensor> shards) {
  std::vector<std::size_t> off{0};
  for (const auto& s : shards) off.push_back(off.back() + s.rows());
  return off;
}

Layout check_inputs(const WorkerGroup& group, std::span<const Tensor> q, std::span<const Tensor> k,
                    std::span<const Tensor> v, std::size_t heads, const AttentionMask& mask) {
  const std::size_t w = group.world_size();
  if (q.size() != w || k.size() != w || v.size() != w) {
    throw attn::DimensionError("parallel attention: need one q/k/v shard per worker");
  }
  if (heads == 0) throw attn::DimensionError("parallel attention: heads must be >= 1");
  const std::size_t width = q[0].cols();
  if (width == 0 || width % heads != 0) {
    throw attn::DimensionError("parallel attention: width " + std::to_string(width) +
                               " not divisible by heads " + std::to_string(heads));
  }
  for (std::size_t r = 0; r < w; ++r) {
    if (q[r].rank() != 2 || k[r].rank() != 2 || v[r].rank() != 2 || q[r].cols() != width ||
        k[r].cols() != width || v[r].cols() != width || k[r].rows() != v[r].rows()) {
      throw attn::DimensionError("parallel attention: inconsistent shard shapes on worker " +
                                 std::to_string(r));
    }
  }
  Layout l;
  l.world = w;
  l.heads = heads;
  l.head_dim = width / heads;
  l.q_off = prefix(q);
  l.k_off = prefix(k);
  if (mask.rows() != l.q_off.back() || mask.cols() != l.k_off.back()) {
    throw attn::DimensionError("parallel attention: mask does not match global q/k lengths");
  }
  return l;
}

// Online-softmax state for every head of one query shard.
struct HeadPartials {
  std::vector<AttentionPartial> heads;

  static HeadPartials empty(std::size_t n, const Layout& l) {
    HeadPartials p;
    for (std::size_t h = 0; h < l.heads; ++h) p.heads.push_back(AttentionPartial::empty(n, l.head_dim));
    return p;
  }

  static HeadPartials compute(const Tensor& q, const Tensor& k, const Tensor& v,
                              const AttentionMask& mask, const Layout& l) {
    HeadPartials p;
    const std::size_t d = l.head_dim;
    for (std::size_t h = 0; h < l.heads; ++h) {
      p.heads.push_back(attn::attention_partial(slice_cols(q, h * d, (h + 1) * d),
                                                slice_cols(k, h * d, (h + 1) * d),
                                                slice_cols(v, h * d, (h + 1) * d), mask));
    }
    return p;
  }

  void merge(const HeadPartials& other) {
    for (std::size_t h = 0; h < heads.size(); ++h) heads[h] = merge_partials(heads[h], other.heads[h]);
  }

  Tensor finalize(std::size_t rows) const {
    std::vector<Tensor> outs;
    for (const auto& p : heads) outs.push_back(p.finalize());
    return concat_cols(outs, rows);
  }

  // acc [n, H*d], row_max [n, H], denom [n, H]: n * H * (d + 2) floats.
  Message pack(std::string tag) const {
    const std::size_t n = heads.front().queries();
    const std::size_t hn = heads.size();
    std::vector<Tensor> accs;
    Tensor row_max = Tensor::zeros(n, hn);
    Tensor denom = Tensor::zeros(n, hn);
    for (std::size_t h = 0; h < hn; ++h) {
      accs.push_back(heads[h].acc);
      for (std::size_t i = 0; i < n; ++i) {
        row_max.at(i, h) = heads[h].row_max[i];
        denom.at(i, h) = heads[h].denom[i];
      }
    }
    return Message{{concat_cols(accs, n), std::move(row_max), std::move(denom)}, std::move(tag)};
  }

  static HeadPartials unpack(const Message& m, const Layout& l) {
    const Tensor& acc = m.parts.at(0);
    const std::size_t n = acc.rows();
    HeadPartials p;
    for (std::size_t h = 0; h < l.heads; ++h) {
      AttentionPartial a;
      a.acc = slice_cols(acc, h * l.head_dim, (h + 1) * l.head_dim);
      a.row_max.resize(n);
      a.denom.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        a.row_max[i] = m.parts.at(1).at(i, h);
        a.denom[i] = m.parts.at(2).at(i, h);
      }
      p.heads.push_back(std::move(a));
    }
    return p;
  }
};

std::size_t next_rank(std::size_t r, std::size_t w) { return (r + 1) % w; }
std::size_t prev_rank(std::size_t r, std::size_t w) { return (r + w - 1) % w; }

}  // namespace

ShardSpec ShardSpec::even(std::size_t extent, std::size_t world_size, ShardAxis axis) {
  if (world_size == 0) throw std::invalid_argument("shard spec: world_size must be >= 1");
  ShardSpec s;
  s.axis = axis;
  s.world_size = world_size;
  for (std::size_t r = 0; r < world_size; ++r) {
    s.shard_lens.push_back(extent / world_size + (r < extent % world_size ? 1 : 0));
  }
  return s;
}

std::size_t ShardSpec::extent() const noexcept {
  return std::accumulate(shard_lens.begin(), shard_lens.end(), std::size_t{0});
}

std::size_t ShardSpec::offset(std::size_t rank) const {
  if (rank > shard_lens.size()) throw std::out_of_range("shard spec: rank out of range");
  return std::accumulate(shard_lens.begin(), shard_lens.begin() + static_cast<std::ptrdiff_t>(rank),
                         std::size_t{0});
}

void ShardSpec::validate(std::size_t expected_extent) const {
  if (shard_lens.size() != world_size) throw std::invalid_argument("shard spec: need one length per worker");
  if (extent() != expected_extent) {
    throw std::invalid_argument("shard spec: lengths sum to " + std::to_string(extent()) + ", expected " +
                                std::to_string(expected_extent));
  }
}

std::vector<Tensor> shard_rows(const Tensor& t, const ShardSpec& spec) {
  spec.validate(t.rows());
  std::vector<Tensor> out;
  std::size_t off = 0;
  for (std::size_t len : spec.shard_lens) {
    out.push_back(slice_rows(t, off, off + len));
    off += len;
  }
  return out;
}

Tensor gather_rows(std::span<const Tensor> shards, std::size_t cols) { return concat_rows(shards, cols); }

// ---------------------------------------------------------------------------

std::vector<Tensor> ulysses_attention(WorkerGroup& group, std::span<const Tensor> q,
                                      std::span<const Tensor> k, std::span<const Tensor> v,
                                      std::size_t heads, const AttentionMask& mask) {
  const std::size_t w = group.world_size();
  if (heads % w != 0) {
    throw DivisibilityError("ulysses: heads (" + std::to_string(heads) + ") not divisible by world_size (" +
                            std::to_string(w) + ")");
  }
  const Layout l = check_inputs(group, q, k, v, heads, mask);
  const std::size_t local_heads = heads / w;
  const std::size_t span_cols = local_heads * l.head_dim;

  // Sequence-sharded -> head-sharded: worker i sends worker j the columns of
  // j's head group for its own rows.
  auto to_heads = [&](std::span<const Tensor> x, const std::string& tag) {
    std::vector<std::vector<Tensor>> send(w, std::vector<Tensor>(w));
    for (std::size_t i = 0; i < w; ++i) {
      for (std::size_t j = 0; j < w; ++j) send[i][j] = slice_cols(x[i], j * span_cols, (j + 1) * span_cols);
    }
    auto recv = all_to_all(group, send, tag);
    std::vector<Tensor> out(w);
    for (std::size_t j = 0; j < w; ++j) out[j] = concat_rows(recv[j], span_cols);
    return out;
  };
  const auto qh = to_heads(q, "ulysses.q");
  const auto kh = to_heads(k, "ulysses.k");
  const auto vh = to_heads(v, "ulysses.v");

  std::vector<Tensor> oh(w);
  group.run_phase([&](std::size_t j) {
    oh[j] = attn::multi_head_attention(qh[j], kh[j], vh[j], local_heads, mask);
  });

  std::vector<std::vector<Tensor>> send(w, std::vector<Tensor>(w));
  for (std::size_t j = 0; j < w; ++j) {
    for (std::size_t i = 0; i < w; ++i) send[j][i] = slice_rows(oh[j], l.q_off[i], l.q_off[i + 1]);
  }
  auto recv = all_to_all(group, send, "ulysses.out");
  std::vector<Tensor> out(w);
  for (std::size_t i = 0; i < w; ++i) out[i] = concat_cols(recv[i], l.q_rows(i));
  return out;
}

std::vector<Tensor> ring_attention_pass_kv(WorkerGroup& group, std::span<const Tensor> q,
                                           std::span<const Tensor> k, std::span<const Tensor> v,
                                           std::size_t heads, const AttentionMask& mask) {
  const Layout l = check_inputs(group, q, k, v, heads, mask);
  const std::size_t w = l.world;
  std::vector<HeadPartials> acc;
  for (std::size_t r = 0; r < w; ++r) acc.push_back(HeadPartials::empty(l.q_rows(r), l));
  std::vector<Tensor> cur_k(k.begin(), k.end());
  std::vector<Tensor> cur_v(v.begin(), v.end());

  for (std::size_t s = 0; s < w; ++s) {
    const bool pass = s + 1 < w;
    group.run_phase([&](std::size_t r) {
      const std::size_t src = (r + w - s) % w;
      acc[r].merge(HeadPartials::compute(q[r], cur_k[r], cur_v[r], l.mask_for(mask, r, src), l));
      if (pass) group.send(r, next_rank(r, w), Message{{cur_k[r], cur_v[r]}, "ring.kv"});
    });
    if (!pass) break;
    group.run_phase([&](std::size_t r) {
      Message m = group.receive(prev_rank(r, w), r);
      cur_k[r] = std::move(m.parts.at(0));
      cur_v[r] = std::move(m.parts.at(1));
    });
    group.next_step();
  }

  std::vector<Tensor> out(w);
  group.run_phase([&](std::size_t r) { out[r] = acc[r].finalize(l.q_rows(r)); });
  return out;
}

std::vector<Tensor> ring_attention_pass_q(WorkerGroup& group, std::span<const Tensor> q,
                                          std::span<const Tensor> k, std::span<const Tensor> v,
                                          std::size_t heads, const AttentionMask& mask) {
  const Layout l = check_inputs(group, q, k, v, heads, mask);
  const std::size_t w = l.world;
  // kept[r][o]: partial computed on worker r for the Q shard owned by o.
  std::vector<std::vector<HeadPartials>> kept(w, std::vector<HeadPartials>(w));
  std::vector<Tensor> cur_q(q.begin(), q.end());

  for (std::size_t s = 0; s < w; ++s) {
    const bool pass = s + 1 < w;
    group.run_phase([&](std::size_t r) {
      const std::size_t owner = (r + w - s) % w;
      kept[r][owner] = HeadPartials::compute(cur_q[r], k[r], v[r], l.mask_for(mask, owner, r), l);
      if (pass) group.send(r, next_rank(r, w), Message{{cur_q[r]}, "ring.q"});
    });
    if (!pass) break;
    group.run_phase([&](std::size_t r) { cur_q[r] = std::move(group.receive(prev_rank(r, w), r).parts.at(0)); });
    group.next_step();
  }

  // Final gather: partials go home and are merged in key-shard order.
  group.run_phase([&](std::size_t r) {
    for (std::size_t o = 0; o < w; ++o) {
      if (o != r) group.send(r, o, kept[r][o].pack("ring.partial"));
    }
  });
  std::vector<Tensor> out(w);
  group.run_phase([&](std::size_t o) {
    HeadPartials total = HeadPartials::empty(l.q_rows(o), l);
    for (std::size_t r = 0; r < w; ++r) {
      total.merge(r == o ? kept[o][o] : HeadPartials::unpack(group.receive(r, o), l));
    }
    out[o] = total.finalize(l.q_rows(o));
  });
  if (w > 1) group.next_step();
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Ulysses: return "ulysses";
    case Strategy::RingPassKv: return "ring_pass_kv";
    case Strategy::RingPassQ: return "ring_pass_q";
  }
  return "?";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

CommEstimate predict_comm(Strategy s, const ProblemShape& shape, const LinkCostModel& link) {
  if (shape.world_size == 0 || shape.heads == 0 || shape.head_dim == 0) {
    throw std::invalid_argument("predict_comm: sizes must be positive");
  }
  const std::size_t w = shape.world_size, h = shape.heads, d = shape.head_dim;
  const std::size_t n = shape.seq_len, m = shape.keys();
  constexpr std::size_t f = sizeof(float);
  CommEstimate e;
  e.strategy = s;
  switch (s) {
    case Strategy::Ulysses:
      if (h % w != 0) {
        e.feasible = false;
        e.cost = std::numeric_limits<double>::infinity();
        return e;
      }
      e.messages = 4 * w * (w - 1);
      e.bytes = f * (h / w) * d * (w - 1) * (2 * n + 2 * m);
      break;
    case Strategy::RingPassKv:
      e.messages = w * (w - 1);
      e.bytes = f * (w - 1) * 2 * m * h * d;
      break;
    case Strategy::RingPassQ:
      e.messages = 2 * w * (w - 1);
      e.bytes = f * (w - 1) * n * h * (2 * d + 2);
      break;
  }
  e.cost = link.per_message * static_cast<double>(e.messages) + link.per_byte * static_cast<double>(e.bytes);
  return e;
}

StrategyChoice choose_strategy(const ProblemShape& shape, const LinkCostModel& link) {
  StrategyChoice c;
  bool have = false;
  for (Strategy s : kAllStrategies) {
    c.candidates.push_back(predict_comm(s, shape, link));
    const auto& e = c.candidates.back();
    if (e.feasible && (!have || e.cost < c.predicted_cost)) {
      c.strategy = s;
      c.predicted_cost = e.cost;
      have = true;
    }
  }
  return c;
}

std::vector<Tensor> run_strategy(Strategy s, WorkerGroup& group, std::span<const Tensor> q,
                                 std::span<const Tensor> k, std::span<const Tensor> v,
                                 std::size_t heads, const AttentionMask& mask) {
  switch (s) {
    case Strategy::Ulysses: return ulysses_attention(group, q, k, v, heads, mask);
    case Strategy::RingPassKv: return ring_attention_pass_kv(group, q, k, v, heads, mask);
    case Strategy::RingPassQ: return ring_attention_pass_q(group, q, k, v, heads, mask);
  }
  throw std::invalid_argument("run_strategy: unknown strategy");
}

ParallelBackend::ParallelBackend(std::size_t world_size, std::optional<Strategy> strategy,
                                 LinkCostModel link, ExecutionMode mode)
    : world_size_(world_size), strategy_(strategy), link_(link), mode_(mode) {
  if (world_size == 0) throw std::invalid_argument("parallel backend: world_size must be >= 1");
}

Tensor ParallelBackend::attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                               const AttentionMask& mask) {
  if (heads == 0 || q.cols() % heads != 0) {
    throw attn::DimensionError("parallel backend: width not divisible by heads");
  }
  mask.require_no_empty_rows();
  ProblemShape shape{q.rows(), k.rows(), heads, q.cols() / heads, world_size_};
  const Strategy s = strategy_ ? *strategy_ : choose_strategy(shape, link_).strategy;
  WorkerGroup group(world_size_, mode_);
  const auto qs = shard_rows(q, ShardSpec::even(q.rows(), world_size_));
  const auto ks = shard_rows(k, ShardSpec::even(k.rows(), world_size_));
  const auto vs = shard_rows(v, ShardSpec::even(v.rows(), world_size_));
  const auto out = run_strategy(s, group, qs, ks, vs, heads, mask);
  const auto t = group.totals();
  totals_.messages += t.messages;
  totals_.bytes_sent += t.bytes_sent;
  totals_.remote_messages += t.remote_messages;
  totals_.remote_bytes += t.remote_bytes;
  last_ = s;
  return gather_rows(out, q.cols());
}

}  // namespace inferix::parallel
