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

#include "inferix/engine/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "inferix/common/rng.hpp"

namespace inferix::engine {

namespace {

// Every weight tensor gets its own SplitMix64 stream keyed by
// (weight_seed, tensor_index) so adding a tensor never perturbs the others.
Tensor gaussian(std::uint64_t seed, std::uint64_t index, std::size_t rows, std::size_t cols,
                double scale) {
  SplitMix64 rng(mix64(seed, index));
  Tensor t = Tensor::zeros(rows, cols);
  for (float& x : t.data()) x = static_cast<float>(rng.normal() * scale);
  return t;
}

std::uint64_t tensor_checksum(const Tensor& t, std::uint64_t h) {
  const auto d = t.data();
  return fnv1a64({reinterpret_cast<const char*>(d.data()), d.size() * sizeof(float)}, h);
}

void add_row_vector(Tensor& x, const Tensor& row, float scale = 1.0f) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto dst = x.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += scale * row.at(0, c);
  }
}

void add_into(Tensor& x, const Tensor& y) {
  auto dst = x.data();
  auto src = y.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

void ModelConfig::validate() const {
  auto need = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string("model config: ") + what + " must be >= 1");
  };
  need(layers, "layers");
  need(heads, "heads");
  need(head_dim, "head_dim");
  need(block_len, "block_len");
  need(frame_height, "frame height");
  need(frame_width, "frame width");
  need(prompt_dim, "prompt_dim");
  need(prompt_tokens, "prompt_tokens");
  if (frame_height > 0xFFFF || frame_width > 0xFFFF) {
    throw ConfigError("model config: frame dimensions must fit in 16 bits");
  }
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.hidden();
  const std::size_t f = config_.ffn_dim();
  const std::size_t p = config_.prompt_dim;
  const std::size_t hw = config_.frame_height * config_.frame_width;
  const std::uint64_t seed = config_.weight_seed;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  const double sp = 1.0 / std::sqrt(static_cast<double>(p));

  std::uint64_t idx = 0;
  layers_.reserve(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    LayerWeights w;
    w.time = gaussian(seed, idx++, 1, d, 0.5);
    w.wq = gaussian(seed, idx++, d, d, sd);
    w.wk = gaussian(seed, idx++, d, d, sd);
    w.wv = gaussian(seed, idx++, d, d, sd);
    w.wo = gaussian(seed, idx++, d, d, 0.5 * sd);
    w.cq = gaussian(seed, idx++, d, d, sd);
    w.co = gaussian(seed, idx++, d, d, 0.5 * sd);
    w.ck = gaussian(seed, idx++, p, d, sp);
    w.cv = gaussian(seed, idx++, p, d, sp);
    w.w1 = gaussian(seed, idx++, d, f, sd);
    w.b1 = gaussian(seed, idx++, 1, f, 0.1);
    w.w2 = gaussian(seed, idx++, f, d, 0.5 * sf);
    w.b2 = gaussian(seed, idx++, 1, d, 0.1);
    layers_.push_back(std::move(w));
  }
  out_proj_ = gaussian(seed, idx++, d, d, sd);
  decoder_w_ = gaussian(seed, idx++, d, hw, sd);
  decoder_b_ = gaussian(seed, idx++, 1, hw, 0.1);
}

std::size_t Model::parameter_count() const {
  std::size_t n = out_proj_.size() + decoder_w_.size() + decoder_b_.size();
  for (const auto& w : layers_) {
    for (const Tensor* t : {&w.time, &w.wq, &w.wk, &w.wv, &w.wo, &w.cq, &w.co, &w.ck, &w.cv,
                            &w.w1, &w.b1, &w.w2, &w.b2}) {
      n += t->size();
    }
  }
  return n;
}

std::size_t Model::expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.hidden();
  const std::size_t p = c.prompt_dim;
  const std::size_t hw = c.frame_height * c.frame_width;
  return c.layers * (10 * d * d + 2 * p * d + 4 * d) + d * d + hw * d + hw;
}

std::uint64_t Model::layer_checksum(std::size_t layer) const {
  const LayerWeights& w = layers_.at(layer);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const Tensor* t : {&w.time, &w.wq, &w.wk, &w.wv, &w.wo, &w.cq, &w.co, &w.ck, &w.cv,
                          &w.w1, &w.b1, &w.w2, &w.b2}) {
    h = tensor_checksum(*t, h);
  }
  return h;
}

Model build_model(const ModelConfig& config) { return Model(config); }

Tensor embed_prompt(const Model& model, std::string_view prompt_text) {
  if (prompt_text.empty()) throw std::invalid_argument("embed_prompt: empty prompt");
  const auto& c = model.config();
  const std::uint64_t h = fnv1a64(prompt_text);
  Tensor e = Tensor::zeros(c.prompt_tokens, c.prompt_dim);
  for (std::size_t r = 0; r < c.prompt_tokens; ++r) {
    SplitMix64 rng(mix64(h, r));
    double norm2 = 0.0;
    std::vector<double> v(c.prompt_dim);
    for (auto& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-300));
    for (std::size_t j = 0; j < c.prompt_dim; ++j) e.at(r, j) = static_cast<float>(v[j] * inv);
  }
  return e;
}

CrossContext cross_context_from_embedding(const Model& model, const Tensor& embedding) {
  const auto& c = model.config();
  if (embedding.rank() != 2 || embedding.cols() != c.prompt_dim || embedding.rows() == 0) {
    throw attn::DimensionError("cross context: embedding must be [tokens, prompt_dim], got " +
                               shape_string(embedding));
  }
  CrossContext ctx;
  for (const auto& w : model.layers()) {
    ctx.per_layer.push_back({matmul(embedding, w.ck), matmul(embedding, w.cv)});
  }
  return ctx;
}

CrossContext cross_context_from_cache(kv::KvCache& cache) {
  CrossContext ctx;
  for (std::size_t l = 0; l < cache.config().num_layers; ++l) {
    ctx.per_layer.push_back(
        cache.fetch_range(l, cache.stored_range(l, kv::EntryKind::CrossAttn), kv::EntryKind::CrossAttn));
  }
  return ctx;
}

SelfContext SelfContext::empty(const ModelConfig& config) {
  SelfContext ctx;
  for (std::size_t l = 0; l < config.layers; ++l) {
    ctx.per_layer.push_back({Tensor::zeros(0, config.hidden()), Tensor::zeros(0, config.hidden())});
  }
  return ctx;
}

SelfContext self_context_from_cache(kv::KvCache& cache) {
  SelfContext ctx;
  for (std::size_t l = 0; l < cache.config().num_layers; ++l) {
    ctx.per_layer.push_back(cache.fetch_range(l, cache.stored_range(l)));
  }
  return ctx;
}

Tensor forward(const Model& model, const Tensor& latent, float t, const SelfContext& context,
               const CrossContext& cross, attn::Backend& backend,
               std::vector<kv::KvPair>* captured) {
  const auto& c = model.config();
  const std::size_t d = c.hidden();
  if (latent.rank() != 2 || latent.cols() != d || latent.rows() == 0) {
    throw attn::DimensionError("forward: latent must be [tokens, " + std::to_string(d) + "], got " +
                               shape_string(latent));
  }
  if (context.per_layer.size() != c.layers || cross.per_layer.size() != c.layers) {
    throw attn::DimensionError("forward: context must have one entry per layer");
  }
  if (!std::isfinite(t)) throw std::invalid_argument("forward: non-finite noise level");
  if (captured) captured->clear();

  const std::size_t n = latent.rows();
  Tensor h = latent;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const LayerWeights& w = model.layers()[l];
    add_row_vector(h, w.time, t);

    Tensor q = matmul(h, w.wq);
    Tensor k = matmul(h, w.wk);
    Tensor v = matmul(h, w.wv);
    const kv::KvPair& ctx = context.per_layer[l];
    if (ctx.k.cols() != d || ctx.v.cols() != d || ctx.k.rows() != ctx.v.rows()) {
      throw attn::DimensionError("forward: self context shape mismatch at layer " + std::to_string(l));
    }
    const std::size_t m = ctx.k.rows();
    Tensor keys = m == 0 ? k : concat_rows(std::vector<Tensor>{ctx.k, k}, d);
    Tensor vals = m == 0 ? v : concat_rows(std::vector<Tensor>{ctx.v, v}, d);
    if (captured) captured->push_back({std::move(k), std::move(v)});
    Tensor a = backend.attend(q, keys, vals, c.heads, attn::AttentionMask::full(n, m + n));
    add_into(h, matmul(a, w.wo));

    const kv::KvPair& x = cross.per_layer[l];
    if (x.k.rows() == 0) throw std::invalid_argument("forward: empty cross-attention context");
    Tensor cq = matmul(h, w.cq);
    Tensor ca = attn::multi_head_attention(cq, x.k, x.v, c.heads,
                                           attn::AttentionMask::full(n, x.k.rows()));
    add_into(h, matmul(ca, w.co));

    Tensor u = matmul(h, w.w1);
    add_row_vector(u, w.b1);
    for (float& z : u.data()) z = std::tanh(z);
    Tensor f = matmul(u, w.w2);
    add_row_vector(f, w.b2);
    add_into(h, f);
  }
  return matmul(h, model.out_proj());
}

std::vector<GrayFrame> decode_frames(const Model& model, const Tensor& latent) {
  const auto& c = model.config();
  if (latent.rank() != 2 || latent.cols() != c.hidden()) {
    throw attn::DimensionError("decode: latent shape " + shape_string(latent));
  }
  const Tensor px = matmul(latent, model.decoder_weight());
  std::vector<GrayFrame> frames;
  frames.reserve(latent.rows());
  for (std::size_t r = 0; r < px.rows(); ++r) {
    GrayFrame f;
    f.width = static_cast<std::uint16_t>(c.frame_width);
    f.height = static_cast<std::uint16_t>(c.frame_height);
    f.pixels.resize(px.cols());
    for (std::size_t i = 0; i < px.cols(); ++i) {
      const float y = 128.0f + 64.0f * (px.at(r, i) + model.decoder_bias().at(0, i));
      f.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace inferix::engine
