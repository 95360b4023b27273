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

#include "inferix/engine/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "inferix/common/rng.hpp"
#include "inferix/prof/profiler.hpp"

namespace inferix::engine {

namespace {

prof::Profiler::Scope span(prof::Profiler* p, std::string_view name) {
  return p ? p->scoped(name) : prof::Profiler::Scope{};
}

void euler_update(Tensor& latent, const Tensor& eps, float step_scale) {
  auto x = latent.data();
  auto e = eps.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= step_scale * e[i];
}

void check_cache_matches(const ModelConfig& c, const kv::KvCache& cache) {
  if (cache.config().num_layers != c.layers || cache.config().head_dim != c.hidden()) {
    throw ConfigError("cache geometry (" + std::to_string(cache.config().num_layers) + " layers, width " +
                      std::to_string(cache.config().head_dim) + ") does not match model (" +
                      std::to_string(c.layers) + " layers, width " + std::to_string(c.hidden()) + ")");
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

GeneratedBlock run_block(const Pipeline& pipeline, kv::KvCache& cache,
                         const DenoiseSchedule& schedule, const CrossContext& cross,
                         std::size_t chunk, std::uint64_t seed, attn::Backend& backend,
                         prof::Profiler* profiler) {
  const ModelConfig& c = pipeline.config();
  check_cache_matches(c, cache);
  schedule.validate();

  GeneratedBlock out;
  out.chunk_index = chunk;
  out.latent = initial_noise(c, seed, chunk);
  const SelfContext self = self_context_from_cache(cache);
  for (float t : schedule.steps) {
    auto s = span(profiler, "engine.denoise_step");
    s.attr("t", t);
    euler_update(out.latent, pipeline.predict_noise(out.latent, t, self, cross, backend),
                 schedule.step_scale);
  }
  if (!out.latent.all_finite()) {
    throw std::runtime_error("generate_block: non-finite latent in chunk " + std::to_string(chunk));
  }
  {
    auto s = span(profiler, "engine.cache_update");
    const auto kv = pipeline.clean_kv(out.latent, self, cross, backend);
    for (std::size_t l = 0; l < kv.size(); ++l) {
      cache.append_block(l, kv[l].k, kv[l].v, kv::EntryKind::SelfAttn, chunk);
    }
  }
  {
    auto s = span(profiler, "engine.decode");
    out.frames = pipeline.decode(out.latent);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void DenoiseSchedule::validate() const {
  if (steps.empty()) throw ConfigError("schedule: need at least one step");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!std::isfinite(steps[i]) || steps[i] <= 0.0f) {
      throw ConfigError("schedule: noise levels must be finite and > 0");
    }
    if (i > 0 && !(steps[i] < steps[i - 1])) {
      throw ConfigError("schedule: noise levels must be strictly decreasing");
    }
  }
  if (!std::isfinite(step_scale)) throw ConfigError("schedule: step_scale must be finite");
}

bool DenoiseSchedule::contains(float t) const {
  return std::find(steps.begin(), steps.end(), t) != steps.end();
}

DenoiseSchedule DenoiseSchedule::uniform(std::size_t num_steps, float step_scale) {
  DenoiseSchedule s;
  s.step_scale = step_scale;
  for (std::size_t i = num_steps; i >= 1; --i) {
    s.steps.push_back(static_cast<float>(i) / static_cast<float>(num_steps));
  }
  return s;
}

void GenerationRequest::validate() const {
  if (num_blocks == 0) throw ConfigError("request: num_blocks must be >= 1");
  schedule.validate();
  if (prompt_schedule.empty() || prompt_schedule.front().from_chunk != 0) {
    throw ConfigError("request: prompt schedule must start at chunk 0");
  }
  for (std::size_t i = 0; i < prompt_schedule.size(); ++i) {
    if (prompt_schedule[i].text.empty()) throw ConfigError("request: empty prompt text");
    if (i > 0 && prompt_schedule[i].from_chunk <= prompt_schedule[i - 1].from_chunk) {
      throw ConfigError("request: prompt schedule chunks must be strictly increasing");
    }
  }
  if (kv_window && *kv_window == 0) throw ConfigError("request: kv_window must be >= 1");
}

const std::string& GenerationRequest::prompt_for(std::size_t chunk) const {
  const PromptChange* hit = nullptr;
  for (const auto& p : prompt_schedule) {
    if (p.from_chunk > chunk) break;
    hit = &p;
  }
  if (!hit) throw ConfigError("request: no prompt in effect for chunk " + std::to_string(chunk));
  return hit->text;
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::BlockStarted: return "block_started";
    case EventKind::CrossAttentionCleared: return "cross_attention_cleared";
    case EventKind::PromptApplied: return "prompt_applied";
    case EventKind::WindowEvicted: return "window_evicted";
    case EventKind::BlockCompleted: return "block_completed";
    case EventKind::Cancelled: return "cancelled";
  }
  return "?";
}

std::size_t RecordingSink::count(EventKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(events.begin(), events.end(), [kind](const EngineEvent& e) { return e.kind == kind; }));
}

Tensor initial_noise(const ModelConfig& config, std::uint64_t seed, std::size_t chunk_index) {
  SplitMix64 rng(mix64(seed, 0x6E6F697365ULL + chunk_index));
  Tensor x = Tensor::zeros(config.block_len, config.hidden());
  for (float& v : x.data()) v = static_cast<float>(rng.normal());
  return x;
}

kv::KvConfig cache_config_for(const ModelConfig& model, const GenerationRequest& request,
                              const EngineOptions& options) {
  kv::KvConfig c;
  c.num_layers = model.layers;
  c.head_dim = model.hidden();
  c.page_len = options.page_len;
  if (c.page_len == 0) throw ConfigError("engine: page_len must be >= 1");
  std::size_t self_tokens = request.num_blocks * model.block_len;
  if (request.kv_window) self_tokens = std::min(self_tokens, *request.kv_window + model.block_len);
  const std::size_t per_layer =
      ceil_div(self_tokens, c.page_len) + 1 + ceil_div(model.prompt_tokens, c.page_len) + 1;
  c.capacity_pages_device =
      options.capacity_pages_device ? options.capacity_pages_device : model.layers * per_layer;
  c.capacity_pages_host =
      options.capacity_pages_host ? options.capacity_pages_host : model.layers * per_layer;
  return c;
}

Tensor denoise_step(const Model& model, const Tensor& latent, float t,
                    const DenoiseSchedule& schedule, kv::KvCache& cache,
                    const CrossContext& prompt_ctx, attn::Backend* backend) {
  schedule.validate();
  if (!schedule.contains(t)) throw std::invalid_argument("denoise_step: t is not in the schedule");
  check_cache_matches(model.config(), cache);
  attn::DenseBackend dense;
  const SelfContext self = self_context_from_cache(cache);
  Tensor out = latent;
  euler_update(out, forward(model, latent, t, self, prompt_ctx, backend ? *backend : dense),
               schedule.step_scale);
  return out;
}

GeneratedBlock generate_block(const Pipeline& pipeline, kv::KvCache& cache,
                              const DenoiseSchedule& schedule, const CrossContext& prompt_ctx,
                              std::size_t chunk_index, std::uint64_t seed,
                              attn::Backend* backend) {
  attn::DenseBackend dense;
  return run_block(pipeline, cache, schedule, prompt_ctx, chunk_index, seed,
                   backend ? *backend : dense, nullptr);
}

GeneratedBlock generate_block(const Model& model, kv::KvCache& cache,
                              const DenoiseSchedule& schedule, const CrossContext& prompt_ctx,
                              std::size_t chunk_index, std::uint64_t seed,
                              attn::Backend* backend) {
  const ToyPipeline pipeline(std::shared_ptr<const Model>(std::shared_ptr<const Model>{}, &model));
  return generate_block(pipeline, cache, schedule, prompt_ctx, chunk_index, seed, backend);
}

// ---------------------------------------------------------------------------

Engine::Engine(std::shared_ptr<const Pipeline> pipeline, GenerationRequest request,
               EngineOptions options)
    : pipeline_(std::move(pipeline)), options_(options), request_(std::move(request)) {
  if (!pipeline_) throw std::invalid_argument("engine: null pipeline");
  pipeline_->config().validate();
  request_.validate();
  cache_ = kv::create_cache(cache_config_for(pipeline_->config(), request_, options_));
}

std::string Engine::prompt_at_boundary(std::size_t chunk) {
  std::lock_guard lock(mu_);
  current_ = chunk;
  return request_.prompt_for(chunk);
}

std::vector<GeneratedBlock> Engine::run(std::span<Sink* const> sinks) {
  std::size_t num_blocks = 0;
  std::optional<std::size_t> window;
  {
    std::lock_guard lock(mu_);
    if (current_ || finished_) throw std::logic_error("engine: run() may only be called once");
    num_blocks = request_.num_blocks;
    window = request_.kv_window;
  }
  const ModelConfig& c = pipeline_->config();
  attn::DenseBackend dense;
  attn::Backend& backend = options_.backend ? *options_.backend : dense;
  prof::Profiler* profiler = options_.profiler;

  auto emit = [&](EngineEvent e) {
    for (Sink* s : sinks) s->on_event(e);
  };

  std::vector<GeneratedBlock> out;
  std::optional<std::string> cross_prompt;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    if (cancelled_) {
      emit({EventKind::Cancelled, b, 0, {}});
      break;
    }
    const std::string prompt = prompt_at_boundary(b);
    auto block_span = span(profiler, "engine.block");
    block_span.attr("chunk", static_cast<double>(b)).attr("tokens", static_cast<double>(c.block_len));
    emit({EventKind::BlockStarted, b, 0, {}});

    if (!cross_prompt || *cross_prompt != prompt) {
      if (cross_prompt) {
        const std::size_t n = cache_->clear_cross_attention();
        emit({EventKind::CrossAttentionCleared, b, n, *cross_prompt});
      }
      const CrossContext fresh = pipeline_->encode_prompt(prompt);
      for (std::size_t l = 0; l < fresh.per_layer.size(); ++l) {
        cache_->append_block(l, fresh.per_layer[l].k, fresh.per_layer[l].v,
                             kv::EntryKind::CrossAttn, b);
      }
      cross_prompt = prompt;
      emit({EventKind::PromptApplied, b, 0, prompt});
    }
    const CrossContext cross = cross_context_from_cache(*cache_);
    const std::uint64_t seed = request().seed;
    GeneratedBlock blk = run_block(*pipeline_, *cache_, request().schedule, cross, b, seed,
                                   backend, profiler);
    blk.prompt_in_effect = prompt;
    if (window) {
      const std::size_t n = cache_->evict_window(*window);
      emit({EventKind::WindowEvicted, b, n, {}});
    }
    for (Sink* s : sinks) s->on_block(blk);
    emit({EventKind::BlockCompleted, b, 0, {}});
    out.push_back(std::move(blk));
  }
  std::lock_guard lock(mu_);
  finished_ = true;
  return out;
}

PromptUpdateResult Engine::apply_prompt_update(const PromptUpdate& update) {
  std::lock_guard lock(mu_);
  if (update.text.empty()) return {false, "empty_prompt"};
  if (update.effective_chunk >= request_.num_blocks) return {false, "beyond_end"};
  if (finished_ || (current_ && update.effective_chunk <= *current_)) return {false, "retroactive"};
  auto& sched = request_.prompt_schedule;
  auto it = std::lower_bound(sched.begin(), sched.end(), update.effective_chunk,
                             [](const PromptChange& p, std::size_t c) { return p.from_chunk < c; });
  if (it != sched.end() && it->from_chunk == update.effective_chunk) {
    it->text = update.text;
  } else {
    sched.insert(it, PromptChange{update.effective_chunk, update.text});
  }
  return {true, {}};
}

std::optional<std::size_t> Engine::current_chunk() const {
  std::lock_guard lock(mu_);
  return current_;
}

GenerationRequest Engine::request() const {
  std::lock_guard lock(mu_);
  return request_;
}

bool Engine::finished() const {
  std::lock_guard lock(mu_);
  return finished_;
}

std::vector<GeneratedBlock> generate_sequence(const Model& model, const GenerationRequest& request,
                                              std::span<Sink* const> sinks,
                                              const EngineOptions& options) {
  auto pipeline = std::make_shared<const ToyPipeline>(
      std::shared_ptr<const Model>(std::shared_ptr<const Model>{}, &model));
  Engine engine(pipeline, request, options);
  return engine.run(sinks);
}

// ---------------------------------------------------------------------------

Tensor reference_denoise_step(const Model& model, std::span<const Tensor> clean_blocks,
                              std::span<const std::string> block_prompts, const Tensor& latent,
                              float t, const DenoiseSchedule& schedule,
                              std::optional<std::size_t> kv_window) {
  schedule.validate();
  if (!schedule.contains(t)) throw std::invalid_argument("reference step: t is not in the schedule");
  if (block_prompts.size() != clean_blocks.size() + 1) {
    throw std::invalid_argument("reference step: need one prompt per block");
  }
  const ModelConfig& c = model.config();
  const std::size_t d = c.hidden();

  // Block boundaries over the raw token sequence [clean_0, ..., latent].
  std::vector<std::size_t> start{0};
  std::vector<Tensor> parts;
  for (const Tensor& blk : clean_blocks) {
    if (blk.rank() != 2 || blk.cols() != d) throw attn::DimensionError("reference step: bad context block");
    parts.push_back(blk);
    start.push_back(start.back() + blk.rows());
  }
  parts.push_back(latent);
  const std::size_t n_ctx = start.back();
  start.push_back(n_ctx + latent.rows());
  const std::size_t n = start.back();
  const std::size_t num_blocks = start.size() - 1;

  std::vector<std::size_t> block_of(n);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    for (std::size_t i = start[b]; i < start[b + 1]; ++i) block_of[i] = b;
  }
  attn::AttentionMask mask(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t bi = block_of[i];
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t bj = block_of[j];
      const bool in_window = !kv_window || j + *kv_window >= start[bi];
      mask.set(i, j, bj == bi || (bj < bi && in_window));
    }
  }

  std::map<std::string, CrossContext, std::less<>> cross_by_prompt;
  for (const auto& p : block_prompts) {
    if (!cross_by_prompt.count(p)) {
      cross_by_prompt.emplace(p, cross_context_from_embedding(model, embed_prompt(model, p)));
    }
  }

  Tensor h = concat_rows(parts, d);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const LayerWeights& w = model.layers()[l];
    for (std::size_t r = 0; r < n; ++r) {
      const float tr = r >= n_ctx ? t : 0.0f;
      auto row = h.row(r);
      for (std::size_t j = 0; j < d; ++j) row[j] += tr * w.time.at(0, j);
    }
    const Tensor a = attn::multi_head_attention(matmul(h, w.wq), matmul(h, w.wk), matmul(h, w.wv),
                                                c.heads, mask);
    const Tensor ao = matmul(a, w.wo);
    for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] += ao.data()[i];

    const Tensor cq = matmul(h, w.cq);
    std::vector<Tensor> ca_parts;
    for (std::size_t b = 0; b < num_blocks; ++b) {
      const kv::KvPair& x = cross_by_prompt.at(block_prompts[b]).per_layer[l];
      const std::size_t rows = start[b + 1] - start[b];
      ca_parts.push_back(attn::multi_head_attention(slice_rows(cq, start[b], start[b + 1]), x.k, x.v,
                                                    c.heads, attn::AttentionMask::full(rows, x.k.rows())));
    }
    const Tensor co = matmul(concat_rows(ca_parts, d), w.co);
    for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] += co.data()[i];

    Tensor u = matmul(h, w.w1);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = u.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::tanh(row[j] + w.b1.at(0, j));
    }
    Tensor f = matmul(u, w.w2);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = f.row(r);
      for (std::size_t j = 0; j < d; ++j) row[j] += w.b2.at(0, j);
    }
    for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] += f.data()[i];
  }
  const Tensor eps = matmul(slice_rows(h, n_ctx, n), model.out_proj());
  Tensor out = latent;
  euler_update(out, eps, schedule.step_scale);
  return out;
}

std::vector<GeneratedBlock> recompute_reference(const Model& model,
                                                const GenerationRequest& request) {
  request.validate();
  std::vector<Tensor> clean;
  std::vector<std::string> prompts;
  std::vector<GeneratedBlock> out;
  for (std::size_t b = 0; b < request.num_blocks; ++b) {
    prompts.push_back(request.prompt_for(b));
    Tensor latent = initial_noise(model.config(), request.seed, b);
    for (float t : request.schedule.steps) {
      latent = reference_denoise_step(model, clean, prompts, latent, t, request.schedule,
                                      request.kv_window);
    }
    GeneratedBlock blk;
    blk.chunk_index = b;
    blk.latent = latent;
    blk.frames = decode_frames(model, latent);
    blk.prompt_in_effect = prompts.back();
    clean.push_back(std::move(latent));
    out.push_back(std::move(blk));
  }
  return out;
}

}  // namespace inferix::engine
