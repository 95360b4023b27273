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

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inferix/engine/pipeline.hpp"
#include "inferix/kv/kv_cache.hpp"

namespace inferix::prof {
class Profiler;
}

namespace inferix::engine {

struct DenoiseSchedule {
  std::vector<float> steps;  // strictly decreasing, all > 0
  float step_scale = 0.5f;

  void validate() const;
  bool contains(float t) const;
  // steps = {S/S, (S-1)/S, ..., 1/S}
  static DenoiseSchedule uniform(std::size_t num_steps, float step_scale = 0.5f);
};

struct PromptChange {
  std::size_t from_chunk = 0;
  std::string text;

  bool operator==(const PromptChange&) const = default;
};

struct GenerationRequest {
  std::size_t num_blocks = 1;
  DenoiseSchedule schedule = DenoiseSchedule::uniform(4);
  std::uint64_t seed = 0;
  std::vector<PromptChange> prompt_schedule = {{0, "a quiet street"}};
  std::optional<std::size_t> kv_window;

  void validate() const;
  const std::string& prompt_for(std::size_t chunk) const;
};

struct GeneratedBlock {
  std::size_t chunk_index = 0;
  Tensor latent;  // [block_len, heads * head_dim]
  std::vector<GrayFrame> frames;
  std::string prompt_in_effect;
};

enum class EventKind {
  BlockStarted,
  CrossAttentionCleared,  // value = cross entries removed
  PromptApplied,          // detail = prompt text
  WindowEvicted,          // value = tokens evicted
  BlockCompleted,
  Cancelled,
};

const char* to_string(EventKind kind);

struct EngineEvent {
  EventKind kind = EventKind::BlockStarted;
  std::size_t chunk = 0;
  std::size_t value = 0;
  std::string detail;
};

// Receives engine output synchronously, in order, on the generation thread.
class Sink {
 public:
  virtual ~Sink() = default;
  virtual void on_event(const EngineEvent&) {}
  virtual void on_block(const GeneratedBlock&) {}
};

class RecordingSink final : public Sink {
 public:
  void on_event(const EngineEvent& e) override { events.push_back(e); }
  void on_block(const GeneratedBlock& b) override { blocks.push_back(b); }
  std::size_t count(EventKind kind) const;

  std::vector<EngineEvent> events;
  std::vector<GeneratedBlock> blocks;
};

struct EngineOptions {
  attn::Backend* backend = nullptr;    // null -> dense
  prof::Profiler* profiler = nullptr;  // null -> no spans
  std::size_t page_len = 16;
  // 0 -> sized so the request fits on device.
  std::size_t capacity_pages_device = 0;
  std::size_t capacity_pages_host = 0;
};

// One denoising update: latent - step_scale * eps_hat, with the cache used
// read-only as self-attention context and prompt_ctx as cross context.
Tensor denoise_step(const Model& model, const Tensor& latent, float t,
                    const DenoiseSchedule& schedule, kv::KvCache& cache,
                    const CrossContext& prompt_ctx, attn::Backend* backend = nullptr);

// Noise -> clean block; appends the block's per-layer K/V to the cache.
// prompt_in_effect is left empty.
GeneratedBlock generate_block(const Pipeline& pipeline, kv::KvCache& cache,
                              const DenoiseSchedule& schedule, const CrossContext& prompt_ctx,
                              std::size_t chunk_index, std::uint64_t seed,
                              attn::Backend* backend = nullptr);
GeneratedBlock generate_block(const Model& model, kv::KvCache& cache,
                              const DenoiseSchedule& schedule, const CrossContext& prompt_ctx,
                              std::size_t chunk_index, std::uint64_t seed,
                              attn::Backend* backend = nullptr);

// Unit-normal starting latent for a chunk.
Tensor initial_noise(const ModelConfig& config, std::uint64_t seed, std::size_t chunk_index);

// A cache sized for the whole request with the given page geometry.
kv::KvConfig cache_config_for(const ModelConfig& model, const GenerationRequest& request,
                              const EngineOptions& options = {});

struct PromptUpdate {
  std::size_t effective_chunk = 0;
  std::string text;
};

struct PromptUpdateResult {
  bool accepted = false;
  std::string reason;  // "retroactive", "beyond_end", "empty_prompt" when rejected
};

// The generate-and-cache loop. run() executes on the caller's thread;
// apply_prompt_update, current_chunk, request and cancel may be called
// concurrently from other threads. Prompt updates take effect at block
// boundaries only.
class Engine {
 public:
  Engine(std::shared_ptr<const Pipeline> pipeline, GenerationRequest request,
         EngineOptions options = {});

  std::vector<GeneratedBlock> run(std::span<Sink* const> sinks = {});

  PromptUpdateResult apply_prompt_update(const PromptUpdate& update);
  std::optional<std::size_t> current_chunk() const;
  GenerationRequest request() const;
  void cancel() noexcept { cancelled_ = true; }
  bool finished() const;

  const Pipeline& pipeline() const noexcept { return *pipeline_; }
  kv::KvCache& cache() noexcept { return *cache_; }

 private:
  std::string prompt_at_boundary(std::size_t chunk);

  std::shared_ptr<const Pipeline> pipeline_;
  EngineOptions options_;
  kv::CacheHandle cache_;
  std::atomic<bool> cancelled_{false};

  mutable std::mutex mu_;
  GenerationRequest request_;
  std::optional<std::size_t> current_;
  bool finished_ = false;
};

std::vector<GeneratedBlock> generate_sequence(const Model& model, const GenerationRequest& request,
                                              std::span<Sink* const> sinks = {},
                                              const EngineOptions& options = {});

// Cache-free oracle for one denoising update of the block following
// clean_blocks. Every layer recomputes K/V for all raw context tokens under a
// block-causal mask (optionally windowed); block_prompts holds the prompt of
// each context block followed by the prompt of the current block.
Tensor reference_denoise_step(const Model& model, std::span<const Tensor> clean_blocks,
                              std::span<const std::string> block_prompts, const Tensor& latent,
                              float t, const DenoiseSchedule& schedule,
                              std::optional<std::size_t> kv_window = std::nullopt);

// Same output as generate_sequence, computed without any KV cache.
std::vector<GeneratedBlock> recompute_reference(const Model& model,
                                                const GenerationRequest& request);

}  // namespace inferix::engine
