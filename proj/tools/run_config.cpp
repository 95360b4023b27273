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

#include "inferix/cli/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace inferix::cli {

namespace pt = boost::property_tree;
using engine::ConfigError;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  try {
    std::size_t used = 0;
    if constexpr (std::is_same_v<T, float>) {
      const float v = std::stof(s, &used);
      if (used == s.size()) return v;
    } else if constexpr (std::is_same_v<T, double>) {
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } else {
      if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
      const unsigned long long v = std::stoull(s, &used, 10);
      if (used == s.size()) return static_cast<T>(v);
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + raw + "'");
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + raw + "'");
}

stream::Endpoint parse_ep(const std::string& key, const std::string& raw) {
  try {
    return stream::parse_endpoint(trim(raw));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::vector<float> parse_float_list(const std::string& key, const std::string& raw) {
  std::vector<float> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(parse_number<float>(key, item));
  }
  return out;
}

std::string float_list(const std::vector<float>& v) {
  std::ostringstream out;
  out.precision(9);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.pipeline", [](RunConfig& c, auto&, auto& v) { c.pipeline = trim(v); }},
      {"model.layers", [](RunConfig& c, auto& k, auto& v) { c.model.layers = parse_number<std::size_t>(k, v); }},
      {"model.heads", [](RunConfig& c, auto& k, auto& v) { c.model.heads = parse_number<std::size_t>(k, v); }},
      {"model.head_dim", [](RunConfig& c, auto& k, auto& v) { c.model.head_dim = parse_number<std::size_t>(k, v); }},
      {"model.block_len", [](RunConfig& c, auto& k, auto& v) { c.model.block_len = parse_number<std::size_t>(k, v); }},
      {"model.frame_height",
       [](RunConfig& c, auto& k, auto& v) { c.model.frame_height = parse_number<std::size_t>(k, v); }},
      {"model.frame_width",
       [](RunConfig& c, auto& k, auto& v) { c.model.frame_width = parse_number<std::size_t>(k, v); }},
      {"model.prompt_dim",
       [](RunConfig& c, auto& k, auto& v) { c.model.prompt_dim = parse_number<std::size_t>(k, v); }},
      {"model.prompt_tokens",
       [](RunConfig& c, auto& k, auto& v) { c.model.prompt_tokens = parse_number<std::size_t>(k, v); }},
      {"model.weight_seed",
       [](RunConfig& c, auto& k, auto& v) { c.model.weight_seed = parse_number<std::uint64_t>(k, v); }},
      {"generate.num_blocks", [](RunConfig& c, auto& k, auto& v) { c.num_blocks = parse_number<std::size_t>(k, v); }},
      {"generate.steps", [](RunConfig& c, auto& k, auto& v) { c.steps = parse_number<std::size_t>(k, v); }},
      {"generate.schedule", [](RunConfig& c, auto& k, auto& v) { c.schedule = parse_float_list(k, v); }},
      {"generate.step_scale", [](RunConfig& c, auto& k, auto& v) { c.step_scale = parse_number<float>(k, v); }},
      {"generate.seed", [](RunConfig& c, auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"generate.prompts", [](RunConfig& c, auto&, auto& v) { c.prompts = parse_prompt_schedule(v); }},
      {"generate.kv_window",
       [](RunConfig& c, auto& k, auto& v) {
         const auto w = parse_number<std::size_t>(k, v);
         c.kv_window = w ? std::optional<std::size_t>(w) : std::nullopt;
       }},
      {"kv.page_len", [](RunConfig& c, auto& k, auto& v) { c.page_len = parse_number<std::size_t>(k, v); }},
      {"kv.capacity_pages_device",
       [](RunConfig& c, auto& k, auto& v) { c.capacity_pages_device = parse_number<std::size_t>(k, v); }},
      {"kv.capacity_pages_host",
       [](RunConfig& c, auto& k, auto& v) { c.capacity_pages_host = parse_number<std::size_t>(k, v); }},
      {"parallel.world_size", [](RunConfig& c, auto& k, auto& v) { c.world_size = parse_number<std::size_t>(k, v); }},
      {"parallel.strategy", [](RunConfig& c, auto&, auto& v) { c.strategy = parse_strategy_option(v); }},
      {"parallel.per_message_cost",
       [](RunConfig& c, auto& k, auto& v) { c.link.per_message = parse_number<double>(k, v); }},
      {"parallel.per_byte_cost", [](RunConfig& c, auto& k, auto& v) { c.link.per_byte = parse_number<double>(k, v); }},
      {"profiler.enabled", [](RunConfig& c, auto& k, auto& v) { c.profile = parse_bool(k, v); }},
      {"profiler.report", [](RunConfig& c, auto&, auto& v) { c.profile_report = trim(v); }},
      {"stream.listen", [](RunConfig& c, auto& k, auto& v) { c.listen = parse_ep(k, v); }},
      {"stream.web_listen",
       [](RunConfig& c, auto& k, auto& v) {
         c.web_listen = trim(v).empty() ? std::nullopt : std::optional(parse_ep(k, v));
       }},
      {"stream.client_queue",
       [](RunConfig& c, auto& k, auto& v) { c.client_queue = parse_number<std::size_t>(k, v); }},
      {"stream.wait_for_clients",
       [](RunConfig& c, auto& k, auto& v) { c.wait_for_clients = parse_number<std::size_t>(k, v); }},
      {"stream.block_interval_ms",
       [](RunConfig& c, auto& k, auto& v) { c.block_interval_ms = parse_number<std::size_t>(k, v); }},
      {"stream.console_dir", [](RunConfig& c, auto&, auto& v) { c.console_dir = trim(v); }},
      {"output.dir", [](RunConfig& c, auto&, auto& v) { c.out_dir = trim(v); }},
  };
  return table;
}

void apply_tree(RunConfig& config, const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = setters().find(full);
      if (it == setters().end()) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
      it->second(config, full, value.data());
    }
  }
}

}  // namespace

std::vector<engine::PromptChange> parse_prompt_schedule(const std::string& text) {
  std::vector<engine::PromptChange> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '|')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      if (!out.empty()) throw ConfigError("prompts: expected 'chunk:text', got '" + item + "'");
      out.push_back({0, item});  // a bare prompt applies from the start
      continue;
    }
    out.push_back({parse_number<std::size_t>("prompts", item.substr(0, colon)), trim(item.substr(colon + 1))});
  }
  if (out.empty()) throw ConfigError("prompts: at least one prompt is required");
  return out;
}

std::string format_prompt_schedule(const std::vector<engine::PromptChange>& prompts) {
  std::string out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (i) out += " | ";
    out += std::to_string(prompts[i].from_chunk) + ":" + prompts[i].text;
  }
  return out;
}

std::optional<parallel::Strategy> parse_strategy_option(const std::string& text) {
  const std::string s = trim(text);
  if (s.empty() || s == "auto") return std::nullopt;
  if (const auto parsed = parallel::parse_strategy(s)) return parsed;
  throw ConfigError("strategy: expected auto, ulysses, ring_pass_kv or ring_pass_q, got '" + s + "'");
}

engine::GenerationRequest RunConfig::request() const {
  engine::GenerationRequest r;
  r.num_blocks = num_blocks;
  if (schedule.empty()) {
    if (steps == 0) throw ConfigError("generate.steps must be >= 1");
    r.schedule = engine::DenoiseSchedule::uniform(steps, step_scale);
  } else {
    r.schedule.steps = schedule;
    r.schedule.step_scale = step_scale;
  }
  r.seed = seed;
  r.prompt_schedule = prompts;
  r.kv_window = kv_window;
  return r;
}

void RunConfig::validate() const {
  model.validate();
  request().validate();
  for (const auto& p : prompts) {
    if (p.text.find('|') != std::string::npos) throw ConfigError("prompts may not contain '|'");
  }
  if (page_len == 0) throw ConfigError("kv.page_len must be >= 1");
  if (world_size == 0) throw ConfigError("parallel.world_size must be >= 1");
  if (!(link.per_message >= 0.0) || !(link.per_byte >= 0.0)) {
    throw ConfigError("parallel: link costs must be non-negative");
  }
  if (client_queue == 0) throw ConfigError("stream.client_queue must be >= 1");
  if (profile_report.empty()) throw ConfigError("profiler.report must name a file");
  if (out_dir.empty()) throw ConfigError("output.dir must not be empty");
}

std::string RunConfig::to_ini() const {
  pt::ptree t;
  t.put("model.pipeline", pipeline);
  t.put("model.layers", model.layers);
  t.put("model.heads", model.heads);
  t.put("model.head_dim", model.head_dim);
  t.put("model.block_len", model.block_len);
  t.put("model.frame_height", model.frame_height);
  t.put("model.frame_width", model.frame_width);
  t.put("model.prompt_dim", model.prompt_dim);
  t.put("model.prompt_tokens", model.prompt_tokens);
  t.put("model.weight_seed", model.weight_seed);
  t.put("generate.num_blocks", num_blocks);
  t.put("generate.steps", steps);
  t.put("generate.schedule", float_list(schedule));
  t.put("generate.step_scale", float_list({step_scale}));
  t.put("generate.seed", seed);
  t.put("generate.prompts", format_prompt_schedule(prompts));
  t.put("generate.kv_window", kv_window.value_or(0));
  t.put("kv.page_len", page_len);
  t.put("kv.capacity_pages_device", capacity_pages_device);
  t.put("kv.capacity_pages_host", capacity_pages_host);
  t.put("parallel.world_size", world_size);
  t.put("parallel.strategy", strategy ? parallel::to_string(*strategy) : "auto");
  std::ostringstream cost;
  cost.precision(17);
  cost << link.per_message;
  t.put("parallel.per_message_cost", cost.str());
  cost.str("");
  cost << link.per_byte;
  t.put("parallel.per_byte_cost", cost.str());
  t.put("profiler.enabled", profile ? "true" : "false");
  t.put("profiler.report", profile_report);
  t.put("stream.listen", listen.to_string());
  t.put("stream.web_listen", web_listen ? web_listen->to_string() : "");
  t.put("stream.client_queue", client_queue);
  t.put("stream.wait_for_clients", wait_for_clients);
  t.put("stream.block_interval_ms", block_interval_ms);
  t.put("stream.console_dir", console_dir.string());
  t.put("output.dir", out_dir.string());
  std::ostringstream out;
  pt::write_ini(out, t);
  return out.str();
}

void apply_ini_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  apply_tree(config, tree);
}

void apply_ini_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  apply_ini_text(config, buf.str());
}

void apply_env(RunConfig& config, const std::function<const char*(const char*)>& getenv) {
  const auto get = [&](const char* name) -> const char* { return getenv ? getenv(name) : std::getenv(name); };
  const std::pair<const char*, const char*> vars[] = {
      {"INFERIX_SEED", "generate.seed"},         {"INFERIX_OUT", "output.dir"},
      {"INFERIX_LISTEN", "stream.listen"},       {"INFERIX_WEB_LISTEN", "stream.web_listen"},
      {"INFERIX_CLIENT_QUEUE", "stream.client_queue"}, {"INFERIX_WORLD_SIZE", "parallel.world_size"},
      {"INFERIX_STRATEGY", "parallel.strategy"}, {"INFERIX_PROFILE", "profiler.enabled"},
  };
  for (const auto& [env, key] : vars) {
    if (const char* v = get(env)) setters().at(key)(config, env, v);
  }
}

}  // namespace inferix::cli
