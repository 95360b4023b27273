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

#include "inferix/kv/kv_cache.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <string>

namespace inferix::kv {

namespace {

constexpr PageId kNoPage = std::numeric_limits<PageId>::max();
constexpr char kDumpMagic[6] = {'I', 'N', 'F', 'K', 'V', '1'};

std::size_t kind_index(EntryKind kind) { return static_cast<std::size_t>(kind); }

Tensor transpose(const Tensor& t) {
  Tensor out = Tensor::zeros(t.cols(), t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) out.at(c, r) = t.at(r, c);
  }
  return out;
}

template <class T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("kv snapshot truncated");
  return value;
}

}  // namespace

void KvConfig::validate() const {
  if (num_layers == 0) throw ConfigError("kv config: num_layers must be >= 1");
  if (head_dim == 0) throw ConfigError("kv config: head_dim must be >= 1");
  if (page_len == 0) throw ConfigError("kv config: page_len must be >= 1");
  if (latent) {
    const auto& l = *latent;
    if (l.latent_dim == 0 || l.latent_dim > head_dim) {
      throw ConfigError("kv config: latent_dim must be in [1, head_dim]");
    }
    if (l.down_proj.rank() != 2 || l.down_proj.rows() != l.latent_dim ||
        l.down_proj.cols() != head_dim) {
      throw ConfigError("kv config: down_proj must be [latent_dim, head_dim]");
    }
    if (l.up_proj.rank() != 2 || l.up_proj.rows() != head_dim ||
        l.up_proj.cols() != l.latent_dim) {
      throw ConfigError("kv config: up_proj must be [head_dim, latent_dim]");
    }
  }
}

KvCache::KvCache(KvConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.latent) {
    down_t_ = transpose(config_.latent->down_proj);
    up_t_ = transpose(config_.latent->up_proj);
  }
  streams_.resize(config_.num_layers * 2);
}

void KvCache::require_layer(std::size_t layer) const {
  if (layer >= config_.num_layers) {
    throw RangeError("kv cache: layer " + std::to_string(layer) + " out of range");
  }
}

KvCache::Stream& KvCache::stream(std::size_t layer, EntryKind kind) {
  require_layer(layer);
  return streams_[layer * 2 + kind_index(kind)];
}

const KvCache::Stream& KvCache::stream(std::size_t layer, EntryKind kind) const {
  require_layer(layer);
  return streams_[layer * 2 + kind_index(kind)];
}

Tensor KvCache::project_in(const Tensor& x) const {
  return config_.latent ? attn::matmul(x, down_t_) : x;
}

Tensor KvCache::project_out(const Tensor& stored) const {
  return config_.latent ? attn::matmul(stored, up_t_) : stored;
}

PageId KvCache::least_recently_used_device_page(PageId excluded) const {
  PageId best = kNoPage;
  std::uint64_t best_use = std::numeric_limits<std::uint64_t>::max();
  for (PageId id = 0; id < pages_.size(); ++id) {
    const Page& p = pages_[id];
    if (!p.in_use || p.tier != Tier::Device || id == excluded) continue;
    if (p.last_use < best_use) {
      best_use = p.last_use;
      best = id;
    }
  }
  return best;
}

void KvCache::move_to_host(PageId id) {
  Page& p = pages_[id];
  if (p.tier == Tier::Host) return;
  p.tier = Tier::Host;
  --device_used_;
  ++host_used_;
}

PageId KvCache::allocate_device_page(PageId pinned) {
  if (config_.capacity_pages_device == 0) {
    throw CapacityError("kv cache: device tier has zero capacity");
  }
  if (device_used_ == config_.capacity_pages_device) {
    if (host_used_ >= config_.capacity_pages_host) {
      throw CapacityError("kv cache: device and host tiers are full");
    }
    const PageId victim = least_recently_used_device_page(pinned);
    if (victim == kNoPage) throw CapacityError("kv cache: no device page can be demoted");
    move_to_host(victim);
  }
  PageId id;
  if (!free_list_.empty()) {
    id = free_list_.back();
    free_list_.pop_back();
  } else {
    id = static_cast<PageId>(pages_.size());
    pages_.emplace_back();
  }
  Page& p = pages_[id];
  const std::size_t cells = config_.page_len * config_.stored_width();
  p.in_use = true;
  p.tier = Tier::Device;
  p.filled = 0;
  p.k.assign(cells, 0.0f);
  p.v.assign(cells, 0.0f);
  ++device_used_;
  touch(id);
  return id;
}

void KvCache::make_device_resident(PageId id) {
  Page& p = pages_[id];
  if (p.tier == Tier::Device) return;
  if (config_.capacity_pages_device == 0) {
    throw CapacityError("kv cache: device tier has zero capacity");
  }
  if (device_used_ == config_.capacity_pages_device) {
    // Swap with the LRU device page; tier counts are unchanged.
    const PageId victim = least_recently_used_device_page(id);
    move_to_host(victim);
  }
  p.tier = Tier::Device;
  --host_used_;
  ++device_used_;
}

void KvCache::release_page(PageId id) {
  Page& p = pages_[id];
  if (p.tier == Tier::Device) {
    --device_used_;
  } else {
    --host_used_;
  }
  p = Page{};
  free_list_.push_back(id);
}

BlockEntry KvCache::append_block(std::size_t layer, const Tensor& k, const Tensor& v,
                                 EntryKind kind, std::size_t chunk_index) {
  if (k.rank() != 2 || v.rank() != 2 || k.shape() != v.shape()) {
    throw attn::DimensionError("append_block: k and v must be equal rank-2 tensors");
  }
  if (k.rows() == 0) throw attn::DimensionError("append_block: empty block");
  if (k.cols() != config_.head_dim) {
    throw attn::DimensionError("append_block: width " + std::to_string(k.cols()) +
                               " != head_dim " + std::to_string(config_.head_dim));
  }
  const Tensor sk = project_in(k);
  const Tensor sv = project_in(v);
  const std::size_t width = config_.stored_width();
  const std::size_t t = k.rows();

  std::lock_guard lock(mu_);
  Stream& s = stream(layer, kind);

  std::size_t room = 0;
  if (!s.pages.empty()) room = config_.page_len - pages_[s.pages.back()].filled;
  const std::size_t new_pages = t > room ? (t - room + config_.page_len - 1) / config_.page_len : 0;
  if (config_.capacity_pages_device == 0) {
    throw CapacityError("kv cache: device tier has zero capacity");
  }
  if (device_used_ + host_used_ + new_pages >
      config_.capacity_pages_device + config_.capacity_pages_host) {
    throw CapacityError("kv cache: out of memory appending " + std::to_string(t) + " tokens");
  }

  const std::size_t start = s.end;
  if (room > 0) make_device_resident(s.pages.back());
  for (std::size_t r = 0; r < t; ++r) {
    if (s.pages.empty() || pages_[s.pages.back()].filled == config_.page_len) {
      s.pages.push_back(allocate_device_page(kNoPage));
    }
    Page& p = pages_[s.pages.back()];
    std::copy(sk.row(r).begin(), sk.row(r).end(), p.k.begin() + static_cast<std::ptrdiff_t>(p.filled * width));
    std::copy(sv.row(r).begin(), sv.row(r).end(), p.v.begin() + static_cast<std::ptrdiff_t>(p.filled * width));
    ++p.filled;
    touch(s.pages.back());
    ++s.end;
  }

  BlockEntry entry;
  entry.block_id = next_block_id_++;
  entry.layer = layer;
  entry.token_range = {start, s.end};
  entry.kind = kind;
  entry.chunk_index = chunk_index;
  const std::size_t first_page = (start - s.page_base) / config_.page_len;
  const std::size_t last_page = (s.end - 1 - s.page_base) / config_.page_len;
  for (std::size_t i = first_page; i <= last_page; ++i) entry.page_list.push_back(s.pages[i]);
  blocks_.emplace(entry.block_id, entry);
  return entry;
}

void KvCache::copy_row(const Stream& s, std::size_t pos, std::span<float> k_out,
                       std::span<float> v_out) {
  const std::size_t width = config_.stored_width();
  const std::size_t offset = pos - s.page_base;
  const PageId id = s.pages[offset / config_.page_len];
  make_device_resident(id);
  touch(id);
  const Page& p = pages_[id];
  const auto at = static_cast<std::ptrdiff_t>((offset % config_.page_len) * width);
  std::copy(p.k.begin() + at, p.k.begin() + at + static_cast<std::ptrdiff_t>(width), k_out.begin());
  std::copy(p.v.begin() + at, p.v.begin() + at + static_cast<std::ptrdiff_t>(width), v_out.begin());
}

KvPair KvCache::fetch_range(std::size_t layer, TokenRange range, EntryKind kind) {
  const std::size_t width = config_.stored_width();
  Tensor k, v;
  {
    std::lock_guard lock(mu_);
    const Stream& s = stream(layer, kind);
    if (range.begin > range.end || range.begin < s.begin || range.end > s.end) {
      throw RangeError("fetch_range: [" + std::to_string(range.begin) + "," +
                       std::to_string(range.end) + ") outside stored [" +
                       std::to_string(s.begin) + "," + std::to_string(s.end) + ")");
    }
    k = Tensor::zeros(range.size(), width);
    v = Tensor::zeros(range.size(), width);
    for (std::size_t pos = range.begin; pos < range.end; ++pos) {
      copy_row(s, pos, k.row(pos - range.begin), v.row(pos - range.begin));
    }
  }
  return {project_out(k), project_out(v)};
}

KvPair KvCache::fetch_indices(std::size_t layer, std::span<const std::size_t> indices,
                              EntryKind kind) {
  const std::size_t width = config_.stored_width();
  Tensor k, v;
  {
    std::lock_guard lock(mu_);
    const Stream& s = stream(layer, kind);
    for (std::size_t pos : indices) {
      if (pos < s.begin || pos >= s.end) {
        throw RangeError("fetch_indices: position " + std::to_string(pos) + " not stored");
      }
    }
    k = Tensor::zeros(indices.size(), width);
    v = Tensor::zeros(indices.size(), width);
    for (std::size_t i = 0; i < indices.size(); ++i) copy_row(s, indices[i], k.row(i), v.row(i));
  }
  if (indices.empty()) {
    return {Tensor::zeros(0, config_.head_dim), Tensor::zeros(0, config_.head_dim)};
  }
  return {project_out(k), project_out(v)};
}

std::size_t KvCache::offload_blocks(std::span<const BlockId> block_ids) {
  std::lock_guard lock(mu_);
  std::vector<PageId> targets;
  for (BlockId id : block_ids) {
    const auto it = blocks_.find(id);
    if (it == blocks_.end()) {
      throw UnknownBlockError("offload_blocks: unknown block " + std::to_string(id));
    }
    for (PageId p : it->second.page_list) {
      if (pages_[p].tier == Tier::Device &&
          std::find(targets.begin(), targets.end(), p) == targets.end()) {
        targets.push_back(p);
      }
    }
  }
  if (host_used_ + targets.size() > config_.capacity_pages_host) {
    throw CapacityError("offload_blocks: host tier cannot hold " +
                        std::to_string(targets.size()) + " more pages");
  }
  for (PageId p : targets) move_to_host(p);
  return targets.size();
}

void KvCache::drop_pages_from_blocks(std::size_t layer, EntryKind kind, std::size_t new_begin,
                                     const std::vector<PageId>& freed) {
  for (auto it = blocks_.begin(); it != blocks_.end();) {
    BlockEntry& b = it->second;
    if (b.layer != layer || b.kind != kind) {
      ++it;
      continue;
    }
    if (b.token_range.end <= new_begin) {
      it = blocks_.erase(it);
      continue;
    }
    b.token_range.begin = std::max(b.token_range.begin, new_begin);
    std::erase_if(b.page_list, [&](PageId p) {
      return std::find(freed.begin(), freed.end(), p) != freed.end();
    });
    ++it;
  }
}

std::size_t KvCache::evict_window(std::size_t keep_last_n) {
  std::lock_guard lock(mu_);
  std::size_t freed_tokens = 0;
  for (std::size_t layer = 0; layer < config_.num_layers; ++layer) {
    Stream& s = stream(layer, EntryKind::SelfAttn);
    const std::size_t new_begin = s.end - std::min(keep_last_n, s.end - s.begin);
    if (new_begin == s.begin) continue;
    freed_tokens += new_begin - s.begin;
    s.begin = new_begin;
    std::vector<PageId> freed;
    while (!s.pages.empty()) {
      const PageId front = s.pages.front();
      const std::size_t filled = pages_[front].filled;
      if (s.page_base + filled > new_begin) break;
      s.page_base += filled;
      s.pages.pop_front();
      freed.push_back(front);
      release_page(front);
    }
    drop_pages_from_blocks(layer, EntryKind::SelfAttn, new_begin, freed);
  }
  return freed_tokens;
}

std::size_t KvCache::clear_cross_attention() {
  std::lock_guard lock(mu_);
  std::size_t cleared = 0;
  for (auto it = blocks_.begin(); it != blocks_.end();) {
    if (it->second.kind == EntryKind::CrossAttn) {
      it = blocks_.erase(it);
      ++cleared;
    } else {
      ++it;
    }
  }
  for (std::size_t layer = 0; layer < config_.num_layers; ++layer) {
    Stream& s = stream(layer, EntryKind::CrossAttn);
    for (PageId p : s.pages) release_page(p);
    s.pages.clear();
    s.begin = s.end;
    s.page_base = s.end;
  }
  return cleared;
}

KvStats KvCache::memory_stats() const {
  std::lock_guard lock(mu_);
  KvStats st;
  st.device_pages_used = device_used_;
  st.host_pages_used = host_used_;
  st.blocks_per_layer.assign(config_.num_layers, 0);
  for (const auto& s : streams_) st.total_tokens += s.end - s.begin;
  for (const auto& [id, b] : blocks_) ++st.blocks_per_layer[b.layer];
  st.bytes_logical = st.total_tokens * config_.stored_width() * 2 * sizeof(float);
  return st;
}

TokenRange KvCache::stored_range(std::size_t layer, EntryKind kind) const {
  std::lock_guard lock(mu_);
  const Stream& s = stream(layer, kind);
  return {s.begin, s.end};
}

std::vector<BlockEntry> KvCache::blocks(std::size_t layer) const {
  std::lock_guard lock(mu_);
  require_layer(layer);
  std::vector<BlockEntry> out;
  for (const auto& [id, b] : blocks_) {
    if (b.layer == layer) out.push_back(b);
  }
  return out;
}

Tier KvCache::page_tier(PageId id) const {
  std::lock_guard lock(mu_);
  if (id >= pages_.size() || !pages_[id].in_use) {
    throw RangeError("page_tier: page " + std::to_string(id) + " not allocated");
  }
  return pages_[id].tier;
}

std::size_t KvCache::page_width(PageId id) const {
  std::lock_guard lock(mu_);
  if (id >= pages_.size() || !pages_[id].in_use) {
    throw RangeError("page_width: page " + std::to_string(id) + " not allocated");
  }
  return pages_[id].k.size() / config_.page_len;
}

void KvCache::check_invariants() const {
  std::lock_guard lock(mu_);
  auto fail = [](const std::string& what) { throw std::logic_error("kv invariant: " + what); };

  std::size_t device = 0, host = 0;
  for (const Page& p : pages_) {
    if (!p.in_use) continue;
    (p.tier == Tier::Device ? device : host)++;
    if (p.filled > config_.page_len) fail("page overfilled");
  }
  if (device != device_used_ || host != host_used_) fail("tier counters drifted");
  if (device_used_ > config_.capacity_pages_device) fail("device capacity exceeded");
  if (host_used_ > config_.capacity_pages_host) fail("host capacity exceeded");

  std::set<PageId> free(free_list_.begin(), free_list_.end());
  if (free.size() != free_list_.size()) fail("duplicate free page");
  for (PageId id : free) {
    if (pages_[id].in_use) fail("free page marked in use");
  }

  std::set<PageId> owned;
  for (const Stream& s : streams_) {
    std::size_t stored = 0;
    for (std::size_t i = 0; i < s.pages.size(); ++i) {
      const PageId id = s.pages[i];
      if (!owned.insert(id).second) fail("page owned by two streams");
      if (!pages_[id].in_use) fail("stream references a free page");
      if (i + 1 < s.pages.size() && pages_[id].filled != config_.page_len) {
        fail("non-tail page not full");
      }
      stored += pages_[id].filled;
    }
    if (s.page_base + stored != s.end) fail("stream token count mismatch");
    if (s.begin < s.page_base && !s.pages.empty()) fail("addressable token not backed");
    if (s.begin > s.end) fail("stream range inverted");
  }
  if (owned.size() != device_used_ + host_used_) fail("in-use page not owned by any stream");

  for (const auto& [id, b] : blocks_) {
    const Stream& s = streams_[b.layer * 2 + kind_index(b.kind)];
    if (b.token_range.begin < s.begin || b.token_range.end > s.end) fail("block range stale");
    for (PageId p : b.page_list) {
      if (!owned.count(p)) fail("block references unowned page");
    }
  }
}

void KvCache::dump(const std::filesystem::path& path) const {
  std::lock_guard lock(mu_);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("kv dump: cannot open " + path.string());
  os.write(kDumpMagic, sizeof(kDumpMagic));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(config_.num_layers));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(config_.head_dim));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(config_.page_len));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(config_.latent ? config_.latent->latent_dim : 0));
  put<std::uint64_t>(os, config_.capacity_pages_device);
  put<std::uint64_t>(os, config_.capacity_pages_host);
  const std::size_t width = config_.stored_width();
  std::uint32_t count = 0;
  for (const Page& p : pages_) count += p.in_use ? 1 : 0;
  put<std::uint32_t>(os, count);
  for (PageId id = 0; id < pages_.size(); ++id) {
    const Page& p = pages_[id];
    if (!p.in_use) continue;
    put<std::uint32_t>(os, id);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(p.tier));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.filled));
    const auto bytes = static_cast<std::streamsize>(p.filled * width * sizeof(float));
    os.write(reinterpret_cast<const char*>(p.k.data()), bytes);
    os.write(reinterpret_cast<const char*>(p.v.data()), bytes);
  }
  if (!os) throw std::runtime_error("kv dump: write failed for " + path.string());
}

KvSnapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("kv snapshot: cannot open " + path.string());
  char magic[sizeof(kDumpMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kDumpMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("kv snapshot: bad magic");
  }
  KvSnapshot snap;
  snap.num_layers = get<std::uint32_t>(is);
  snap.head_dim = get<std::uint32_t>(is);
  snap.page_len = get<std::uint32_t>(is);
  snap.latent_dim = get<std::uint32_t>(is);
  snap.capacity_pages_device = get<std::uint64_t>(is);
  snap.capacity_pages_host = get<std::uint64_t>(is);
  const std::size_t width = snap.latent_dim ? snap.latent_dim : snap.head_dim;
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    PageSnapshot p;
    p.id = get<std::uint32_t>(is);
    p.tier = static_cast<Tier>(get<std::uint8_t>(is));
    p.filled = get<std::uint32_t>(is);
    p.k.resize(p.filled * width);
    p.v.resize(p.filled * width);
    const auto bytes = static_cast<std::streamsize>(p.k.size() * sizeof(float));
    is.read(reinterpret_cast<char*>(p.k.data()), bytes);
    is.read(reinterpret_cast<char*>(p.v.data()), bytes);
    if (!is) throw std::runtime_error("kv snapshot truncated");
    snap.pages.push_back(std::move(p));
  }
  return snap;
}

}  // namespace inferix::kv
