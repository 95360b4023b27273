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
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "inferix/engine/generator.hpp"
#include "inferix/parallel/strategies.hpp"
#include "inferix/stream/net.hpp"

namespace inferix::cli {

// Everything a run needs, resolved from defaults < config file < INFERIX_*
// environment < command-line flags.
struct RunConfig {
  // [model]
  std::string pipeline = "toy";
  engine::ModelConfig model;

  // [generate]
  std::size_t num_blocks = 2;
  std::size_t steps = 4;                  // uniform schedule when `schedule` is empty
  std::vector<float> schedule;            // explicit noise levels, strictly decreasing
  float step_scale = 0.5f;
  std::uint64_t seed = 0;
  std::vector<engine::PromptChange> prompts = {{0, "a quiet street"}};
  std::optional<std::size_t> kv_window;

  // [kv]
  std::size_t page_len = 16;
  std::size_t capacity_pages_device = 0;  // 0 = sized to fit the request
  std::size_t capacity_pages_host = 0;

  // [parallel]
  std::size_t world_size = 1;
  std::optional<parallel::Strategy> strategy;  // nullopt = auto
  parallel::LinkCostModel link;

  // [profiler]
  bool profile = true;
  std::string profile_report = "profile.json";

  // [stream]
  stream::Endpoint listen{"127.0.0.1", 7860};
  std::optional<stream::Endpoint> web_listen;
  std::size_t client_queue = 256;
  std::size_t wait_for_clients = 0;
  std::size_t block_interval_ms = 0;
  std::filesystem::path console_dir;

  // [output]
  std::filesystem::path out_dir = "inferix_out";

  engine::GenerationRequest request() const;
  // Throws engine::ConfigError describing the first problem found.
  void validate() const;

  // Flat sectioned key = value text; apply_ini_text on a default config with to_ini() reproduces the config.
  std::string to_ini() const;
};

// Applies a config file on top of `config`. Unknown sections or keys and
// malformed values throw engine::ConfigError.
void apply_ini_file(RunConfig& config, const std::filesystem::path& path);
void apply_ini_text(RunConfig& config, const std::string& text);

// Applies INFERIX_* variables looked up through `getenv` (defaults to
// std::getenv): INFERIX_SEED, INFERIX_OUT, INFERIX_LISTEN, INFERIX_WEB_LISTEN,
// INFERIX_CLIENT_QUEUE, INFERIX_WORLD_SIZE, INFERIX_STRATEGY, INFERIX_PROFILE.
void apply_env(RunConfig& config,
               const std::function<const char*(const char*)>& getenv = nullptr);

// "0:a quiet street | 2:a forest at dusk"
std::vector<engine::PromptChange> parse_prompt_schedule(const std::string& text);
std::string format_prompt_schedule(const std::vector<engine::PromptChange>& prompts);
// "auto" -> nullopt
std::optional<parallel::Strategy> parse_strategy_option(const std::string& text);

}  // namespace inferix::cli
