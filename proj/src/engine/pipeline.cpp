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

#include "inferix/engine/pipeline.hpp"

namespace inferix::engine {

ToyPipeline::ToyPipeline(const ModelConfig& config)
    : model_(std::make_shared<const Model>(config)) {}

ToyPipeline::ToyPipeline(std::shared_ptr<const Model> model) : model_(std::move(model)) {
  if (!model_) throw std::invalid_argument("ToyPipeline: null model");
}

CrossContext ToyPipeline::encode_prompt(std::string_view text) const {
  return cross_context_from_embedding(*model_, embed_prompt(*model_, text));
}

Tensor ToyPipeline::predict_noise(const Tensor& latent, float t, const SelfContext& self,
                                  const CrossContext& cross, attn::Backend& backend) const {
  return forward(*model_, latent, t, self, cross, backend);
}

std::vector<kv::KvPair> ToyPipeline::clean_kv(const Tensor& clean, const SelfContext& self,
                                              const CrossContext& cross,
                                              attn::Backend& backend) const {
  std::vector<kv::KvPair> kv;
  forward(*model_, clean, 0.0f, self, cross, backend, &kv);
  return kv;
}

std::vector<GrayFrame> ToyPipeline::decode(const Tensor& latent) const {
  return decode_frames(*model_, latent);
}

PipelineRegistry::PipelineRegistry() {
  factories_.emplace("toy", [](const ModelConfig& c) { return std::make_unique<ToyPipeline>(c); });
}

PipelineRegistry& PipelineRegistry::global() {
  static PipelineRegistry registry;
  return registry;
}

void PipelineRegistry::add(std::string name, PipelineFactory factory) {
  if (name.empty()) throw std::invalid_argument("pipeline name must be nonempty");
  if (!factory) throw std::invalid_argument("pipeline factory must be callable");
  std::lock_guard lock(mu_);
  if (!factories_.emplace(name, std::move(factory)).second) {
    throw std::invalid_argument("pipeline already registered: " + name);
  }
}

bool PipelineRegistry::contains(std::string_view name) const {
  std::lock_guard lock(mu_);
  return factories_.find(name) != factories_.end();
}

std::vector<std::string> PipelineRegistry::names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, f] : factories_) out.push_back(name);
  return out;
}

std::unique_ptr<Pipeline> PipelineRegistry::create(std::string_view name,
                                                   const ModelConfig& config) const {
  PipelineFactory f;
  {
    std::lock_guard lock(mu_);
    auto it = factories_.find(name);
    if (it == factories_.end()) {
      throw UnknownPipelineError("unknown pipeline: " + std::string(name));
    }
    f = it->second;
  }
  auto p = f(config);
  if (!p) throw std::runtime_error("pipeline factory returned null: " + std::string(name));
  return p;
}

}  // namespace inferix::engine
