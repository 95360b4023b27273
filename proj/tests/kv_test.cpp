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

#include <cmath>
#include <filesystem>

#include "inferix/kv/kv_cache.hpp"
#include "kv_reference.hpp"
#include "test_util.hpp"

namespace inferix::kv {
namespace {

using testing::random_tensor;

KvConfig small_config(std::size_t head_dim = 4, std::size_t page_len = 16) {
  KvConfig cfg;
  cfg.num_layers = 1;
  cfg.head_dim = head_dim;
  cfg.page_len = page_len;
  cfg.capacity_pages_device = 8;
  cfg.capacity_pages_host = 8;
  return cfg;
}

TEST(CreateCache, DefaultConfigIsEmpty) {
  const auto cache = create_cache(KvConfig{});
  const auto st = cache->memory_stats();
  EXPECT_EQ(st.total_tokens, 0u);
  EXPECT_EQ(st.device_pages_used, 0u);
  EXPECT_EQ(st.host_pages_used, 0u);
  EXPECT_EQ(st.bytes_logical, 0u);
  for (auto n : st.blocks_per_layer) EXPECT_EQ(n, 0u);
}

TEST(CreateCache, RejectsInvalidConfig) {
  KvConfig cfg;
  cfg.page_len = 0;
  EXPECT_THROW(KvCache{cfg}, ConfigError);
  cfg = KvConfig{};
  cfg.latent = LatentProjection{32, Tensor::zeros(32, 16), Tensor::zeros(16, 32)};
  EXPECT_THROW(KvCache{cfg}, ConfigError);
}

TEST(CreateCache, ZeroDeviceCapacityFailsOnAppend) {
  KvConfig cfg = small_config();
  cfg.capacity_pages_device = 0;
  KvCache cache(cfg);
  EXPECT_THROW(cache.append_block(0, random_tensor(2, 4, 1), random_tensor(2, 4, 2),
                                  EntryKind::SelfAttn, 0),
               CapacityError);
  EXPECT_EQ(cache.memory_stats().total_tokens, 0u);
}

TEST(CreateCache, LatentPagesUseLatentWidth) {
  KvConfig cfg = small_config(16);
  cfg.latent = LatentProjection{8, random_tensor(8, 16, 1), random_tensor(16, 8, 2)};
  KvCache cache(cfg);
  const auto e = cache.append_block(0, random_tensor(3, 16, 3), random_tensor(3, 16, 4),
                                    EntryKind::SelfAttn, 0);
  ASSERT_EQ(e.page_list.size(), 1u);
  EXPECT_EQ(cache.page_width(e.page_list[0]), 8u);
}

TEST(AppendBlock, FortyTokensSpanThreePages) {
  KvCache cache(small_config());
  const auto e = cache.append_block(0, random_tensor(40, 4, 1), random_tensor(40, 4, 2),
                                    EntryKind::SelfAttn, 0);
  EXPECT_EQ(e.page_list.size(), 3u);
  EXPECT_EQ(e.token_range, (TokenRange{0, 40}));
  const auto st = cache.memory_stats();
  EXPECT_EQ(st.total_tokens, 40u);
  EXPECT_EQ(st.device_pages_used, 3u);
  EXPECT_EQ(st.bytes_logical, 40u * 4u * 2u * sizeof(float));
}

TEST(AppendBlock, SecondAppendPacksIntoPartialPage) {
  KvCache cache(small_config());
  const auto a = cache.append_block(0, random_tensor(8, 4, 1), random_tensor(8, 4, 2),
                                    EntryKind::SelfAttn, 0);
  const auto b = cache.append_block(0, random_tensor(8, 4, 3), random_tensor(8, 4, 4),
                                    EntryKind::SelfAttn, 1);
  EXPECT_EQ(cache.memory_stats().device_pages_used, 1u);
  EXPECT_EQ(a.page_list, b.page_list);
  EXPECT_EQ(b.token_range, (TokenRange{8, 16}));
  cache.check_invariants();
}

TEST(AppendBlock, RejectsWrongWidthAndUnknownLayer) {
  KvCache cache(small_config());
  EXPECT_THROW(cache.append_block(0, random_tensor(2, 5, 1), random_tensor(2, 5, 2),
                                  EntryKind::SelfAttn, 0),
               attn::DimensionError);
  EXPECT_THROW(cache.append_block(3, random_tensor(2, 4, 1), random_tensor(2, 4, 2),
                                  EntryKind::SelfAttn, 0),
               RangeError);
}

TEST(AppendBlock, LatentRoundTripMatchesMatrixOracle) {
  KvConfig cfg = small_config(16);
  const Tensor down = random_tensor(4, 16, 11);
  const Tensor up = random_tensor(16, 4, 12);
  cfg.latent = LatentProjection{4, down, up};
  KvCache cache(cfg);
  const Tensor k = random_tensor(5, 16, 13);
  cache.append_block(0, k, k, EntryKind::SelfAttn, 0);
  const auto got = cache.fetch_range(0, {0, 5});
  // up * (down * k_row), written out element by element.
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t j = 0; j < 16; ++j) {
      double want = 0.0;
      for (std::size_t i = 0; i < 4; ++i) {
        double z = 0.0;
        for (std::size_t c = 0; c < 16; ++c) z += double(down.at(i, c)) * double(k.at(r, c));
        want += double(up.at(j, i)) * z;
      }
      EXPECT_NEAR(got.k.at(r, j), want, 1e-4);
    }
  }
}

TEST(AppendBlock, LatentOrthonormalFixtureIsExactRoundTrip) {
  // Rotation in the (0,1) plane plus a permutation of the rest: up = down^T.
  const std::size_t d = 6;
  Tensor down = Tensor::zeros(d, d);
  const float c = std::cos(0.3f), s = std::sin(0.3f);
  down.at(0, 0) = c;
  down.at(0, 1) = -s;
  down.at(1, 0) = s;
  down.at(1, 1) = c;
  for (std::size_t i = 2; i < d; ++i) down.at(i, 2 + (i - 2 + 1) % (d - 2)) = 1.0f;
  Tensor up = Tensor::zeros(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) up.at(i, j) = down.at(j, i);
  }
  KvConfig cfg = small_config(d);
  cfg.latent = LatentProjection{d, down, up};
  KvCache cache(cfg);
  const Tensor k = random_tensor(7, d, 5);
  cache.append_block(0, k, k, EntryKind::SelfAttn, 0);
  EXPECT_LE(attn::max_abs_diff(cache.fetch_range(0, {0, 7}).k, k), 1e-6f);
}

TEST(FetchRange, ExactBlockRoundTrip) {
  KvCache cache(small_config());
  const Tensor k = random_tensor(10, 4, 1), v = random_tensor(10, 4, 2);
  const auto e = cache.append_block(0, k, v, EntryKind::SelfAttn, 0);
  const auto got = cache.fetch_range(0, e.token_range);
  EXPECT_EQ(got.k, k);
  EXPECT_EQ(got.v, v);
}

TEST(FetchRange, SpansPageBoundary) {
  KvCache cache(small_config());
  const Tensor k = random_tensor(24, 4, 1), v = random_tensor(24, 4, 2);
  cache.append_block(0, slice_rows(k, 0, 10), slice_rows(v, 0, 10), EntryKind::SelfAttn, 0);
  cache.append_block(0, slice_rows(k, 10, 24), slice_rows(v, 10, 24), EntryKind::SelfAttn, 1);
  const auto got = cache.fetch_range(0, {12, 20});
  EXPECT_EQ(got.k, slice_rows(k, 12, 20));
  EXPECT_EQ(got.v, slice_rows(v, 12, 20));
}

TEST(FetchRange, RestoresOffloadedPages) {
  KvCache cache(small_config());
  const Tensor k = random_tensor(40, 4, 1), v = random_tensor(40, 4, 2);
  const auto e = cache.append_block(0, k, v, EntryKind::SelfAttn, 0);
  const BlockId ids[] = {e.block_id};
  ASSERT_EQ(cache.offload_blocks(ids), 3u);
  EXPECT_EQ(cache.memory_stats().host_pages_used, 3u);
  const auto got = cache.fetch_range(0, {0, 40});
  EXPECT_EQ(got.k, k);
  EXPECT_EQ(got.v, v);
  const auto st = cache.memory_stats();
  EXPECT_EQ(st.host_pages_used, 0u);
  EXPECT_EQ(st.device_pages_used, 3u);
  EXPECT_EQ(cache.blocks(0).front().token_range, (TokenRange{0, 40}));
}

TEST(FetchRange, RejectsOutOfBounds) {
  KvCache cache(small_config());
  cache.append_block(0, random_tensor(4, 4, 1), random_tensor(4, 4, 2), EntryKind::SelfAttn, 0);
  EXPECT_THROW(cache.fetch_range(0, {2, 5}), RangeError);
  EXPECT_THROW(cache.fetch_range(0, {3, 2}), RangeError);
}

TEST(FetchIndices, OrderAndDuplicates) {
  KvCache cache(small_config());
  const Tensor k = random_tensor(8, 4, 1), v = random_tensor(8, 4, 2);
  cache.append_block(0, k, v, EntryKind::SelfAttn, 0);
  const std::size_t first[] = {0};
  EXPECT_EQ(cache.fetch_indices(0, first).k, slice_rows(k, 0, 1));
  const std::size_t idx[] = {5, 2, 5};
  const auto got = cache.fetch_indices(0, idx);
  const Tensor parts[] = {slice_rows(k, 5, 6), slice_rows(k, 2, 3), slice_rows(k, 5, 6)};
  EXPECT_EQ(got.k, attn::concat_rows(parts, 4));
}

TEST(FetchIndices, EmptyListGivesEmptyTensors) {
  KvConfig cfg = small_config(16);
  cfg.latent = LatentProjection{4, random_tensor(4, 16, 1), random_tensor(16, 4, 2)};
  KvCache cache(cfg);
  const auto got = cache.fetch_indices(0, {});
  EXPECT_EQ(got.k.shape(), (std::vector<std::size_t>{0, 16}));
  EXPECT_EQ(got.v.shape(), (std::vector<std::size_t>{0, 16}));
}

TEST(FetchIndices, RejectsMissingIndex) {
  KvCache cache(small_config());
  cache.append_block(0, random_tensor(4, 4, 1), random_tensor(4, 4, 2), EntryKind::SelfAttn, 0);
  const std::size_t idx[] = {1, 4};
  EXPECT_THROW(cache.fetch_indices(0, idx), RangeError);
}

TEST(OffloadBlocks, MovesPagesAndIsIdempotent) {
  KvCache cache(small_config());
  const auto e = cache.append_block(0, random_tensor(40, 4, 1), random_tensor(40, 4, 2),
                                    EntryKind::SelfAttn, 0);
  const BlockId ids[] = {e.block_id};
  EXPECT_EQ(cache.offload_blocks(ids), 3u);
  auto st = cache.memory_stats();
  EXPECT_EQ(st.device_pages_used, 0u);
  EXPECT_EQ(st.host_pages_used, 3u);
  EXPECT_EQ(cache.offload_blocks(ids), 0u);
  for (PageId p : e.page_list) EXPECT_EQ(cache.page_tier(p), Tier::Host);
}

TEST(OffloadBlocks, UnknownBlockLeavesCacheUntouched) {
  KvCache cache(small_config());
  const auto e = cache.append_block(0, random_tensor(4, 4, 1), random_tensor(4, 4, 2),
                                    EntryKind::SelfAttn, 0);
  const BlockId ids[] = {e.block_id, 99};
  EXPECT_THROW(cache.offload_blocks(ids), UnknownBlockError);
  EXPECT_EQ(cache.memory_stats().host_pages_used, 0u);
}

TEST(Capacity, SpillsToHostThenFails) {
  KvConfig cfg = small_config(2, 4);
  cfg.capacity_pages_device = 2;
  cfg.capacity_pages_host = 2;
  KvCache cache(cfg);
  const Tensor k = random_tensor(16, 2, 1), v = random_tensor(16, 2, 2);
  cache.append_block(0, k, v, EntryKind::SelfAttn, 0);
  auto st = cache.memory_stats();
  EXPECT_EQ(st.device_pages_used, 2u);
  EXPECT_EQ(st.host_pages_used, 2u);
  EXPECT_THROW(cache.append_block(0, random_tensor(1, 2, 3), random_tensor(1, 2, 4),
                                  EntryKind::SelfAttn, 1),
               CapacityError);
  // The failed append changed nothing and all data is still readable.
  EXPECT_EQ(cache.memory_stats().total_tokens, 16u);
  EXPECT_EQ(cache.fetch_range(0, {0, 16}).k, k);
  cache.check_invariants();
}

TEST(Capacity, LeastRecentlyUsedPageIsDemoted) {
  KvConfig cfg = small_config(2, 4);
  cfg.capacity_pages_device = 2;
  cfg.capacity_pages_host = 4;
  KvCache cache(cfg);
  const auto a = cache.append_block(0, random_tensor(4, 2, 1), random_tensor(4, 2, 2), EntryKind::SelfAttn, 0);
  const auto b = cache.append_block(0, random_tensor(4, 2, 3), random_tensor(4, 2, 4), EntryKind::SelfAttn, 1);
  cache.fetch_range(0, a.token_range);  // a is now more recent than b
  const auto c = cache.append_block(0, random_tensor(4, 2, 5), random_tensor(4, 2, 6), EntryKind::SelfAttn, 2);
  EXPECT_EQ(cache.page_tier(b.page_list[0]), Tier::Host);
  EXPECT_EQ(cache.page_tier(a.page_list[0]), Tier::Device);
  EXPECT_EQ(cache.page_tier(c.page_list[0]), Tier::Device);
}

TEST(EvictWindow, KeepAllFreesNothing) {
  KvCache cache(small_config());
  cache.append_block(0, random_tensor(20, 4, 1), random_tensor(20, 4, 2), EntryKind::SelfAttn, 0);
  EXPECT_EQ(cache.evict_window(20), 0u);
  EXPECT_EQ(cache.evict_window(100), 0u);
}

TEST(EvictWindow, KeepSixteenOfSixtyFour) {
  KvCache cache(small_config());
  const Tensor k = random_tensor(64, 4, 1), v = random_tensor(64, 4, 2);
  cache.append_block(0, k, v, EntryKind::SelfAttn, 0);
  EXPECT_EQ(cache.evict_window(16), 48u);
  EXPECT_THROW(cache.fetch_range(0, {0, 1}), RangeError);
  EXPECT_EQ(cache.fetch_range(0, {48, 64}).k, slice_rows(k, 48, 64));
  const auto st = cache.memory_stats();
  EXPECT_EQ(st.total_tokens, 16u);
  EXPECT_EQ(st.device_pages_used, 1u);
  cache.check_invariants();
}

TEST(EvictWindow, PartiallyRetainedPageStaysAllocated) {
  KvCache cache(small_config());
  cache.append_block(0, random_tensor(32, 4, 1), random_tensor(32, 4, 2), EntryKind::SelfAttn, 0);
  EXPECT_EQ(cache.evict_window(20), 12u);
  EXPECT_EQ(cache.memory_stats().device_pages_used, 2u);
  EXPECT_EQ(cache.stored_range(0), (TokenRange{12, 32}));
}

TEST(EvictWindow, KeepZeroSparesCrossAttention) {
  KvCache cache(small_config());
  cache.append_block(0, random_tensor(20, 4, 1), random_tensor(20, 4, 2), EntryKind::SelfAttn, 0);
  const Tensor ck = random_tensor(3, 4, 3);
  cache.append_block(0, ck, ck, EntryKind::CrossAttn, 0);
  EXPECT_EQ(cache.evict_window(0), 20u);
  EXPECT_EQ(cache.stored_range(0).size(), 0u);
  EXPECT_EQ(cache.fetch_range(0, {0, 3}, EntryKind::CrossAttn).k, ck);
  cache.check_invariants();
}

TEST(ClearCrossAttention, RemovesOnlyCrossBlocks) {
  KvConfig cfg = small_config();
  cfg.num_layers = 2;
  KvCache cache(cfg);
  for (int i = 0; i < 3; ++i) {
    cache.append_block(i % 2, random_tensor(5, 4, i), random_tensor(5, 4, i + 10), EntryKind::SelfAttn, i);
  }
  cache.append_block(0, random_tensor(2, 4, 20), random_tensor(2, 4, 21), EntryKind::CrossAttn, 0);
  cache.append_block(1, random_tensor(2, 4, 22), random_tensor(2, 4, 23), EntryKind::CrossAttn, 0);
  EXPECT_EQ(cache.clear_cross_attention(), 2u);
  EXPECT_EQ(cache.stored_range(0), (TokenRange{0, 10}));
  EXPECT_EQ(cache.stored_range(1), (TokenRange{0, 5}));
  EXPECT_EQ(cache.stored_range(0, EntryKind::CrossAttn).size(), 0u);
  EXPECT_EQ(cache.clear_cross_attention(), 0u);
  cache.check_invariants();
}

TEST(ClearCrossAttention, EmptyCache) {
  KvCache cache(small_config());
  EXPECT_EQ(cache.clear_cross_attention(), 0u);
}

TEST(MemoryStats, AfterOffload) {
  KvCache cache(small_config());
  const auto e = cache.append_block(0, random_tensor(40, 4, 1), random_tensor(40, 4, 2),
                                    EntryKind::SelfAttn, 0);
  const BlockId ids[] = {e.block_id};
  cache.offload_blocks(ids);
  const auto st = cache.memory_stats();
  EXPECT_EQ(st.device_pages_used, 0u);
  EXPECT_EQ(st.host_pages_used, 3u);
  EXPECT_EQ(st.total_tokens, 40u);
}

TEST(Dump, SnapshotRoundTrip) {
  KvCache cache(small_config());
  const Tensor k = random_tensor(20, 4, 1), v = random_tensor(20, 4, 2);
  const auto e = cache.append_block(0, k, v, EntryKind::SelfAttn, 0);
  const BlockId ids[] = {e.block_id};
  cache.offload_blocks(ids);
  const auto path = std::filesystem::temp_directory_path() / "inferix_kv_dump_test.bin";
  cache.dump(path);
  const auto snap = read_snapshot(path);
  std::filesystem::remove(path);
  EXPECT_EQ(snap.head_dim, 4u);
  EXPECT_EQ(snap.page_len, 16u);
  EXPECT_EQ(snap.latent_dim, 0u);
  ASSERT_EQ(snap.pages.size(), 2u);
  EXPECT_EQ(snap.pages[0].tier, Tier::Host);
  EXPECT_EQ(snap.pages[0].filled, 16u);
  EXPECT_EQ(snap.pages[1].filled, 4u);
  for (std::size_t i = 0; i < 16 * 4; ++i) EXPECT_EQ(snap.pages[0].k[i], k.data()[i]);
  for (std::size_t i = 0; i < 4 * 4; ++i) EXPECT_EQ(snap.pages[1].v[i], v.data()[64 + i]);
}

TEST(Differential, RandomSequencesMatchReference) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto res = testing::run_kv_differential(seed, 60);
    ASSERT_EQ(res.mismatches, 0u) << res.first_failure;
  }
}

}  // namespace
}  // namespace inferix::kv
