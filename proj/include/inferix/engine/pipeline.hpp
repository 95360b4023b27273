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

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "inferix/engine/model.hpp"

namespace inferix::engine {

class UnknownPipelineError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The model-specific hooks behind the common generate-and-cache loop.
// Implementations must be deterministic and safe to call from one thread
// at a time.
class Pipeline {
 public:
  virtual ~Pipeline() = default;

  virtual std::string_view name() const = 0;
  virtual const ModelConfig& config() const = 0;

  // Prompt text -> projected per-layer cross-attention K/V.
  virtual CrossContext encode_prompt(std::string_view text) const = 0;

  // Noise estimate for one block at noise level t.
  virtual Tensor predict_noise(const Tensor& latent, float t, const SelfContext& self,
                               const CrossContext& cross, attn::Backend& backend) const = 0;

  // Per-layer K/V of a finished block, to be appended to the cache.
  virtual std::vector<kv::KvPair> clean_kv(const Tensor& clean, const SelfContext& self,
                                           const CrossContext& cross,
                                           attn::Backend& backend) const = 0;

  virtual std::vector<GrayFrame> decode(const Tensor& latent) const = 0;
};

// The built-in toy transformer. Cached K/V are taken from a noise-free
// (t = 0) pass over the clean block.
class ToyPipeline final : public Pipeline {
 public:
  explicit ToyPipeline(const ModelConfig& config);
  explicit ToyPipeline(std::shared_ptr<const Model> model);

  std::string_view name() const override { return "toy"; }
  const ModelConfig& config() const override { return model_->config(); }
  const Model& model() const noexcept { return *model_; }

  CrossContext encode_prompt(std::string_view text) const override;
  Tensor predict_noise(const Tensor& latent, float t, const SelfContext& self,
                       const CrossContext& cross, attn::Backend& backend) const override;
  std::vector<kv::KvPair> clean_kv(const Tensor& clean, const SelfContext& self,
                                   const CrossContext& cross,
                                   attn::Backend& backend) const override;
  std::vector<GrayFrame> decode(const Tensor& latent) const override;

 private:
  std::shared_ptr<const Model> model_;
};

using PipelineFactory = std::function<std::unique_ptr<Pipeline>(const ModelConfig&)>;

// Name -> factory. "toy" is always present.
class PipelineRegistry {
 public:
  PipelineRegistry();

  static PipelineRegistry& global();

  // Throws std::invalid_argument if the name is empty or already taken.
  void add(std::string name, PipelineFactory factory);
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;
  // Throws UnknownPipelineError.
  std::unique_ptr<Pipeline> create(std::string_view name, const ModelConfig& config) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, PipelineFactory, std::less<>> factories_;
};

}  // namespace inferix::engine
