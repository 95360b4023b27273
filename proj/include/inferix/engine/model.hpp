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
#include <stdexcept>
#include <string_view>
#include <vector>

#include "inferix/attn/attention.hpp"
#include "inferix/common/frame.hpp"
#include "inferix/kv/kv_cache.hpp"

namespace inferix::engine {

using attn::Tensor;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t head_dim = 8;
  std::size_t block_len = 8;
  std::size_t frame_height = 8;
  std::size_t frame_width = 8;
  std::size_t prompt_dim = 16;
  std::size_t prompt_tokens = 4;
  std::uint64_t weight_seed = 0;

  void validate() const;
  std::size_t hidden() const noexcept { return heads * head_dim; }
  std::size_t ffn_dim() const noexcept { return 2 * hidden(); }
};

struct LayerWeights {
  Tensor time;                        // [1, D] noise-level embedding
  Tensor wq, wk, wv, wo;              // [D, D] self-attention
  Tensor cq, co;                      // [D, D] cross-attention query/output
  Tensor ck, cv;                      // [P, D] cross-attention key/value
  Tensor w1, b1, w2, b2;              // [D, F], [1, F], [F, D], [1, D]
};

// The toy denoiser. With D = heads * head_dim, F = 2D, P = prompt_dim and
// HW = frame_height * frame_width the parameter count is
//   layers * (10 D^2 + 2 P D + 4 D) + D^2 + HW * D + HW.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<LayerWeights>& layers() const noexcept { return layers_; }
  const Tensor& out_proj() const noexcept { return out_proj_; }        // [D, D]
  const Tensor& decoder_weight() const noexcept { return decoder_w_; }  // [D, HW]
  const Tensor& decoder_bias() const noexcept { return decoder_b_; }    // [1, HW]

  std::size_t parameter_count() const;
  static std::size_t expected_parameter_count(const ModelConfig& config);
  // FNV-1a over the raw bytes of one layer's weights.
  std::uint64_t layer_checksum(std::size_t layer) const;

 private:
  ModelConfig config_;
  std::vector<LayerWeights> layers_;
  Tensor out_proj_;
  Tensor decoder_w_;
  Tensor decoder_b_;
};

Model build_model(const ModelConfig& config);

// Deterministic stand-in for a text encoder: each of prompt_tokens rows is a
// unit vector drawn from SplitMix64 seeded by FNV-1a(text) and the row index.
Tensor embed_prompt(const Model& model, std::string_view prompt_text);

// Projected cross-attention keys/values, one pair per layer.
struct CrossContext {
  std::vector<kv::KvPair> per_layer;
};

CrossContext cross_context_from_embedding(const Model& model, const Tensor& embedding);
// Reads every addressable cross_attn entry of each layer.
CrossContext cross_context_from_cache(kv::KvCache& cache);

// Per-layer self-attention context (keys/values of earlier tokens).
struct SelfContext {
  std::vector<kv::KvPair> per_layer;
  static SelfContext empty(const ModelConfig& config);
};

SelfContext self_context_from_cache(kv::KvCache& cache);

// One transformer pass producing the noise estimate for `latent` at noise
// level t. Self-attention runs over [context ∥ latent] with the current block
// fully visible to itself. When `captured` is non-null it receives the
// per-layer K/V of the latent rows.
Tensor forward(const Model& model, const Tensor& latent, float t, const SelfContext& context,
               const CrossContext& cross, attn::Backend& backend,
               std::vector<kv::KvPair>* captured = nullptr);

// Affine latent-to-pixel map, one frame per latent row, clamped to [0, 255].
std::vector<GrayFrame> decode_frames(const Model& model, const Tensor& latent);

}  // namespace inferix::engine
