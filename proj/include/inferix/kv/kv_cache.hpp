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
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "inferix/attn/tensor.hpp"

namespace inferix::kv {

using attn::Tensor;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Both tiers are exhausted, or the device tier has zero capacity.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class UnknownBlockError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Tier : std::uint8_t { Device = 0, Host = 1 };
enum class EntryKind : std::uint8_t { SelfAttn = 0, CrossAttn = 1 };

using PageId = std::uint32_t;
using BlockId = std::uint64_t;

// Shared down/up projection pair for latent storage. Rows are stored as
// down_proj * x and read back as up_proj * (down_proj * x).
struct LatentProjection {
  std::size_t latent_dim = 0;
  Tensor down_proj;  // [latent_dim, head_dim]
  Tensor up_proj;    // [head_dim, latent_dim]
};

struct KvConfig {
  std::size_t num_layers = 1;
  std::size_t head_dim = 16;
  std::size_t page_len = 16;
  std::optional<LatentProjection> latent;
  std::size_t capacity_pages_device = 1024;
  std::size_t capacity_pages_host = 4096;

  void validate() const;
  // Row width actually held in pages.
  std::size_t stored_width() const { return latent ? latent->latent_dim : head_dim; }
};

struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const TokenRange&) const = default;
};

struct BlockEntry {
  BlockId block_id = 0;
  std::size_t layer = 0;
  TokenRange token_range;
  std::vector<PageId> page_list;
  EntryKind kind = EntryKind::SelfAttn;
  std::size_t chunk_index = 0;
};

struct KvStats {
  std::size_t device_pages_used = 0;
  std::size_t host_pages_used = 0;
  std::size_t total_tokens = 0;
  std::vector<std::size_t> blocks_per_layer;
  std::size_t bytes_logical = 0;
};

struct KvPair {
  Tensor k;
  Tensor v;
};

// Paged, tiered, block-wise key/value store.
//
// Each (layer, kind) pair owns an independent token stream. Positions are
// monotone per stream and never reused; evict_window and
// clear_cross_attention advance the first addressable position. Pages are
// packed: every page of a stream is full except possibly the last one.
//
// Writes and restores land on the device tier. When the device tier is full
// the least-recently-used device page is demoted to host; when both tiers
// are full an append fails with CapacityError and leaves the cache untouched.
//
// All public members take the cache mutex, so any method may be called from
// any thread.
class KvCache {
 public:
  explicit KvCache(KvConfig config);
  KvCache(const KvCache&) = delete;
  KvCache& operator=(const KvCache&) = delete;

  const KvConfig& config() const noexcept { return config_; }

  BlockEntry append_block(std::size_t layer, const Tensor& k, const Tensor& v, EntryKind kind,
                          std::size_t chunk_index);

  KvPair fetch_range(std::size_t layer, TokenRange range,
                     EntryKind kind = EntryKind::SelfAttn);
  // Rows in the given order; duplicates repeat. Empty list -> [0, head_dim].
  KvPair fetch_indices(std::size_t layer, std::span<const std::size_t> indices,
                       EntryKind kind = EntryKind::SelfAttn);

  // Returns the number of pages that moved from device to host.
  std::size_t offload_blocks(std::span<const BlockId> block_ids);
  // Keeps the trailing keep_last_n self-attention tokens of every layer.
  // Returns the number of tokens that stopped being addressable.
  std::size_t evict_window(std::size_t keep_last_n);
  std::size_t clear_cross_attention();

  KvStats memory_stats() const;
  TokenRange stored_range(std::size_t layer, EntryKind kind = EntryKind::SelfAttn) const;
  std::vector<BlockEntry> blocks(std::size_t layer) const;
  Tier page_tier(PageId id) const;
  std::size_t page_width(PageId id) const;

  // Allocator and bookkeeping audit; throws std::logic_error on violation.
  void check_invariants() const;

  // Versioned binary snapshot ("INFKV1"); see read_snapshot.
  void dump(const std::filesystem::path& path) const;

 private:
  struct Page {
    bool in_use = false;
    Tier tier = Tier::Device;
    std::size_t filled = 0;
    std::uint64_t last_use = 0;
    std::vector<float> k;
    std::vector<float> v;
  };

  struct Stream {
    std::size_t begin = 0;      // first addressable position
    std::size_t end = 0;        // one past the last stored position
    std::size_t page_base = 0;  // position held in slot 0 of pages.front()
    std::deque<PageId> pages;
  };

  Stream& stream(std::size_t layer, EntryKind kind);
  const Stream& stream(std::size_t layer, EntryKind kind) const;
  void require_layer(std::size_t layer) const;

  PageId allocate_device_page(PageId pinned);
  void make_device_resident(PageId id);
  PageId least_recently_used_device_page(PageId excluded) const;
  void move_to_host(PageId id);
  void release_page(PageId id);
  void touch(PageId id) { pages_[id].last_use = ++clock_; }

  Tensor project_in(const Tensor& x) const;
  Tensor project_out(const Tensor& stored) const;
  void copy_row(const Stream& s, std::size_t pos, std::span<float> k_out, std::span<float> v_out);
  void drop_pages_from_blocks(std::size_t layer, EntryKind kind, std::size_t new_begin,
                              const std::vector<PageId>& freed);

  KvConfig config_;
  Tensor down_t_;  // [head_dim, latent_dim]
  Tensor up_t_;    // [latent_dim, head_dim]

  mutable std::mutex mu_;
  std::vector<Page> pages_;
  std::vector<PageId> free_list_;
  std::size_t device_used_ = 0;
  std::size_t host_used_ = 0;
  std::uint64_t clock_ = 0;
  std::vector<Stream> streams_;  // index = layer * 2 + kind
  std::map<BlockId, BlockEntry> blocks_;
  BlockId next_block_id_ = 0;
};

using CacheHandle = std::unique_ptr<KvCache>;

inline CacheHandle create_cache(KvConfig config) {
  return std::make_unique<KvCache>(std::move(config));
}

struct PageSnapshot {
  PageId id = 0;
  Tier tier = Tier::Device;
  std::size_t filled = 0;
  std::vector<float> k;  // filled * stored_width
  std::vector<float> v;
};

struct KvSnapshot {
  std::size_t num_layers = 0;
  std::size_t head_dim = 0;
  std::size_t page_len = 0;
  std::size_t latent_dim = 0;  // 0 when latent storage is off
  std::size_t capacity_pages_device = 0;
  std::size_t capacity_pages_host = 0;
  std::vector<PageSnapshot> pages;
};

KvSnapshot read_snapshot(const std::filesystem::path& path);

}  // namespace inferix::kv
