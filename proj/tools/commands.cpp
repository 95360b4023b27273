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

#include "inferix/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "inferix/cli/run_config.hpp"
#include "inferix/engine/pipeline.hpp"
#include "inferix/metrics/frame_io.hpp"
#include "inferix/metrics/vde.hpp"
#include "inferix/parallel/strategies.hpp"
#include "inferix/prof/overhead.hpp"
#include "inferix/prof/profiler.hpp"
#include "inferix/stream/codec.hpp"
#include "inferix/stream/server.hpp"

#ifndef INFERIX_CONSOLE_DIR
#define INFERIX_CONSOLE_DIR ""
#endif

namespace inferix::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_shutdown{false};
static_assert(std::atomic<bool>::is_always_lock_free);

constexpr float kVerifyTolerance = 1e-4f;
constexpr double kOverheadBudget = 1.05;

// Flags shared by generate and serve. Unset flags leave the config alone.
struct GenerationFlags {
  std::optional<std::size_t> blocks;
  std::optional<std::size_t> steps;
  std::optional<std::string> schedule;
  std::optional<std::string> prompt;
  std::vector<std::string> prompt_at;
  std::optional<std::size_t> kv_window;
  std::optional<std::size_t> world_size;
  std::optional<std::string> strategy;
  bool no_profile = false;

  void attach(CLI::App& cmd) {
    cmd.add_option("--blocks", blocks, "Number of blocks (chunks) to generate");
    cmd.add_option("--steps", steps, "Uniform denoising schedule with this many steps");
    cmd.add_option("--schedule", schedule, "Explicit noise levels, comma separated, decreasing");
    cmd.add_option("--prompt", prompt, "Prompt from chunk 0");
    cmd.add_option("--prompt-at", prompt_at, "Prompt change as CHUNK:TEXT (repeatable)");
    cmd.add_option("--kv-window", kv_window, "Self-attention window in tokens (0 = unlimited)");
    cmd.add_option("--world-size", world_size, "Simulated sequence-parallel workers");
    cmd.add_option("--strategy", strategy, "auto, ulysses, ring_pass_kv or ring_pass_q");
    cmd.add_flag("--no-profile", no_profile, "Disable span collection");
  }

  void apply(RunConfig& c) const {
    if (blocks) c.num_blocks = *blocks;
    if (steps) {
      c.steps = *steps;
      c.schedule.clear();
    }
    if (schedule) apply_ini_text(c, "[generate]\nschedule = " + *schedule + "\n");
    // --prompt replaces the chunk-0 prompt; --prompt-at adds or replaces
    // the change at its chunk. Other configured changes are kept.
    auto set_at = [&](engine::PromptChange change) {
      std::erase_if(c.prompts, [&](const auto& p) { return p.from_chunk == change.from_chunk; });
      c.prompts.push_back(std::move(change));
    };
    if (prompt) set_at({0, *prompt});
    for (const auto& item : prompt_at) {
      for (auto& change : parse_prompt_schedule(item)) set_at(std::move(change));
    }
    std::stable_sort(c.prompts.begin(), c.prompts.end(),
                     [](const auto& a, const auto& b) { return a.from_chunk < b.from_chunk; });
    if (kv_window) c.kv_window = *kv_window ? kv_window : std::nullopt;
    if (world_size) c.world_size = *world_size;
    if (strategy) c.strategy = parse_strategy_option(*strategy);
    if (no_profile) c.profile = false;
  }
};

struct GlobalFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

RunConfig resolve(const GlobalFlags& g) {
  RunConfig c;
  std::optional<std::string> path = g.config;
  if (!path) {
    if (const char* env = std::getenv("INFERIX_CONFIG"); env && *env) path = env;
  }
  if (path) apply_ini_file(c, *path);
  apply_env(c);
  if (g.seed) c.seed = *g.seed;
  if (g.out) c.out_dir = *g.out;
  return c;
}

std::shared_ptr<engine::Pipeline> make_pipeline(const RunConfig& c) {
  return engine::PipelineRegistry::global().create(c.pipeline, c.model);
}

std::unique_ptr<parallel::ParallelBackend> make_backend(const RunConfig& c) {
  if (c.world_size <= 1) return nullptr;
  return std::make_unique<parallel::ParallelBackend>(c.world_size, c.strategy, c.link);
}

engine::EngineOptions engine_options(const RunConfig& c, attn::Backend* backend, prof::Profiler* profiler) {
  engine::EngineOptions o;
  o.backend = backend;
  o.profiler = profiler;
  o.page_len = c.page_len;
  o.capacity_pages_device = c.capacity_pages_device;
  o.capacity_pages_host = c.capacity_pages_host;
  return o;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

class FrameWriter final : public engine::Sink {
 public:
  explicit FrameWriter(fs::path dir) : dir_(std::move(dir)) {}
  void on_block(const engine::GeneratedBlock& b) override {
    for (std::size_t i = 0; i < b.frames.size(); ++i) {
      metrics::write_gray(dir_ / metrics::frame_file_name(b.chunk_index, i), b.frames[i]);
      ++written;
    }
  }
  std::size_t written = 0;

 private:
  fs::path dir_;
};

void write_profile(const RunConfig& c, const prof::Profiler& profiler) {
  const auto report = profiler.report(prof::ReportFormat::Full);
  write_text(c.out_dir / c.profile_report, report.to_json().dump(2) + "\n");
  write_text(c.out_dir / "profile.txt", report.to_text());
}

// ---------------------------------------------------------------- generate

int cmd_generate(const RunConfig& c, bool verify, std::ostream& out, std::ostream& err) {
  c.validate();
  const auto frames_dir = c.out_dir / "frames";
  fs::create_directories(frames_dir);
  for (const auto& e : fs::directory_iterator(frames_dir)) {
    if (e.path().extension() == ".gray") fs::remove(e.path());
  }

  std::shared_ptr<engine::Pipeline> pipeline = make_pipeline(c);
  auto backend = make_backend(c);
  prof::Profiler::Options popts;
  popts.enabled = c.profile;
  prof::Profiler profiler(popts);
  const auto request = c.request();
  engine::Engine engine(pipeline, request, engine_options(c, backend.get(), c.profile ? &profiler : nullptr));

  FrameWriter writer(frames_dir);
  engine::Sink* sinks[] = {&writer};
  const auto t0 = std::chrono::steady_clock::now();
  const auto blocks = engine.run(sinks);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_text(c.out_dir / "config.ini", c.to_ini());
  if (c.profile) write_profile(c, profiler);

  json summary = {
      {"pipeline", c.pipeline},
      {"blocks", blocks.size()},
      {"frames", writer.written},
      {"frame_width", c.model.frame_width},
      {"frame_height", c.model.frame_height},
      {"seed", c.seed},
      {"world_size", c.world_size},
      {"elapsed_s", seconds},
  };
  if (backend) {
    const auto& t = backend->cumulative();
    summary["strategy"] = backend->last_strategy() ? parallel::to_string(*backend->last_strategy()) : "none";
    summary["comm"] = {{"messages", t.messages},
                       {"bytes", t.bytes_sent},
                       {"remote_messages", t.remote_messages},
                       {"remote_bytes", t.remote_bytes}};
  }

  out << "generated " << blocks.size() << " blocks, " << writer.written << " frames in " << std::fixed
      << std::setprecision(3) << seconds << " s -> " << frames_dir.string() << "\n";
  out.unsetf(std::ios::floatfield);

  int code = kExitOk;
  if (verify) {
    const auto* toy = dynamic_cast<const engine::ToyPipeline*>(pipeline.get());
    if (!toy) {
      err << "error: --verify needs the toy pipeline\n";
      return kExitUsage;
    }
    const auto reference = engine::recompute_reference(toy->model(), request);
    float worst = 0.0f;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      worst = std::max(worst, attn::max_abs_diff(blocks[i].latent, reference[i].latent));
    }
    const bool ok = worst <= kVerifyTolerance;
    summary["verify"] = {{"max_abs_diff", worst}, {"tolerance", kVerifyTolerance}, {"ok", ok}};
    out << "verify: max |cached - recomputed| = " << worst << (ok ? " (ok)" : " (FAILED)") << "\n";
    if (!ok) code = kExitFailure;
  }
  write_text(c.out_dir / "summary.json", summary.dump(2) + "\n");
  return code;
}

// ------------------------------------------------------------------- serve

int cmd_serve(RunConfig c, std::ostream& out, std::ostream& err) {
  if (c.console_dir.empty() && fs::is_directory(INFERIX_CONSOLE_DIR)) c.console_dir = INFERIX_CONSOLE_DIR;
  c.validate();

  std::shared_ptr<engine::Pipeline> pipeline = make_pipeline(c);
  auto backend = make_backend(c);
  prof::Profiler::Options popts;
  popts.enabled = c.profile;
  prof::Profiler profiler(popts);
  auto engine = std::make_shared<engine::Engine>(pipeline, c.request(),
                                                 engine_options(c, backend.get(), c.profile ? &profiler : nullptr));

  stream::ServerOptions so;
  so.listen = c.listen;
  so.web_listen = c.web_listen;
  so.client_queue = c.client_queue;
  so.wait_for_clients = c.wait_for_clients;
  so.block_interval = std::chrono::milliseconds(c.block_interval_ms);
  so.console_dir = c.console_dir;

  std::unique_ptr<stream::StreamServer> server;
  try {
    server = std::make_unique<stream::StreamServer>(engine, so, c.profile ? &profiler : nullptr);
  } catch (const stream::NetError& e) {
    err << "error: cannot listen: " << e.what() << "\n";
    return kExitFailure;
  }

  out << "stream: " << c.listen.host << ":" << server->port() << "\n";
  if (const auto wp = server->web_port()) {
    out << "web:    http://" << c.web_listen->host << ":" << *wp << "/console/\n";
  }
  out.flush();

  g_shutdown = false;
  std::atomic<bool> done{false};
  server->start();
  std::thread watcher([&] {
    while (!done) {
      if (g_shutdown) {
        server->stop();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  std::vector<engine::GeneratedBlock> blocks;
  try {
    blocks = server->wait();
  } catch (...) {
    done = true;
    watcher.join();
    throw;
  }
  done = true;
  watcher.join();

  const auto s = server->stats();
  out << "served " << blocks.size() << " blocks to " << s.clients_accepted << " clients: " << s.frames_broadcast
      << " frames, " << s.messages_dropped << " dropped, " << s.prompt_updates_accepted << " prompt updates\n";
  if (c.profile) {
    fs::create_directories(c.out_dir);
    write_profile(c, profiler);
  }
  return kExitOk;
}

// -------------------------------------------------------------------- eval

// frames_per_chunk from a capture's HELLO, if it starts with one.
std::optional<std::size_t> capture_chunk_len(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::vector<std::uint8_t> head(64 * 1024);
  f.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(f.gcount()));
  try {
    const auto d = stream::decode_message(head);
    if (d && d->message.kind == stream::MessageKind::Hello) {
      return stream::json_payload(d->message).at("frames_per_chunk").get<std::size_t>();
    }
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

std::optional<std::size_t> config_chunk_len(const fs::path& ini) {
  if (!fs::is_regular_file(ini)) return std::nullopt;
  RunConfig saved;
  apply_ini_file(saved, ini);
  return saved.model.block_len;
}

int cmd_eval(const RunConfig& c, const std::string& input, std::optional<std::size_t> chunk_len,
             const std::string& weighting, std::ostream& out, std::ostream& err) {
  metrics::EvaluateOptions opts;
  if (weighting == "uniform") {
    opts.weighting = metrics::Weighting::Uniform;
  } else if (weighting == "wmape") {
    opts.weighting = metrics::Weighting::ReferenceNormalized;
  } else {
    err << "error: --weighting must be uniform or wmape\n";
    return kExitUsage;
  }

  const fs::path in(input);
  metrics::ChunkedVideo video;
  try {
    if (fs::is_directory(in)) {
      const bool nested = fs::is_directory(in / "frames");
      video.frames = metrics::load_frame_dir(nested ? in / "frames" : in);
      if (!chunk_len) chunk_len = config_chunk_len(nested ? in / "config.ini" : in.parent_path() / "config.ini");
    } else if (fs::is_regular_file(in)) {
      video.frames = metrics::load_stream_capture(in);
      if (!chunk_len) chunk_len = capture_chunk_len(in);
    } else {
      err << "error: no such input: " << input << "\n";
      return kExitUsage;
    }
  } catch (const metrics::IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  video.chunk_len = chunk_len.value_or(8);

  const auto report = metrics::evaluate(video, opts);
  fs::create_directories(c.out_dir);
  write_text(c.out_dir / "vde_report.txt", report.to_text());
  write_text(c.out_dir / "vde_report.json", report.to_json().dump(2) + "\n");
  out << report.to_text();
  return kExitOk;
}

// -------------------------------------------------------- profile-overhead

int cmd_profile_overhead(const std::string& mode_name, int repeats, std::ostream& out, std::ostream& err) {
  prof::OverheadMode mode;
  if (mode_name == "disabled") {
    mode = prof::OverheadMode::Disabled;
  } else if (mode_name == "enabled") {
    mode = prof::OverheadMode::Enabled;
  } else if (mode_name == "heavy-hook") {
    mode = prof::OverheadMode::HeavyHook;
  } else {
    err << "error: --mode must be disabled, enabled or heavy-hook\n";
    return kExitUsage;
  }
  if (repeats < 1) {
    err << "error: --repeats must be >= 1\n";
    return kExitUsage;
  }
  const auto workload = prof::CalibratedWorkload::calibrate();
  prof::OverheadOptions opts;
  opts.repeats = repeats;
  prof::OverheadResult r;
  try {
    r = prof::measure_overhead(workload, mode, opts);
  } catch (const prof::WorkloadTooShort& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  const bool ok = r.ratio < kOverheadBudget;
  out << "mode " << prof::to_string(mode) << ": ratio " << std::fixed << std::setprecision(4) << r.ratio
      << " (best of " << r.repeats << ", " << r.spans_per_run << " spans/run, budget < " << kOverheadBudget << ")"
      << (ok ? " ok" : " OVER BUDGET") << "\n";
  out.unsetf(std::ios::floatfield);
  if (!ok && mode == prof::OverheadMode::HeavyHook) {
    out << "heavy-hook runs a deliberately expensive span-end hook; exceeding the budget is expected\n";
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

void request_shutdown() noexcept { g_shutdown = true; }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block-causal video generation with KV caching, streaming and evaluation", "inferix"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "INI config file (also INFERIX_CONFIG)");
  app.add_option("--seed", g.seed, "Generation seed");
  app.add_option("--out", g.out, "Output directory");

  GenerationFlags gen_flags;
  bool verify = false;
  auto* generate = app.add_subcommand("generate", "Generate frames to <out>/frames");
  gen_flags.attach(*generate);
  generate->add_flag("--verify", verify, "Check cached output against a cache-free recomputation");

  auto* serve = app.add_subcommand("serve", "Generate while streaming frames to connected clients");
  gen_flags.attach(*serve);
  std::optional<std::string> listen, web_listen, console_dir;
  std::optional<std::size_t> client_queue, wait_clients, block_interval;
  serve->add_option("--listen", listen, "Raw stream endpoint HOST:PORT");
  serve->add_option("--web-listen", web_listen, "WebSocket and console endpoint HOST:PORT");
  serve->add_option("--client-queue", client_queue, "Per-client queue bound in messages");
  serve->add_option("--wait-for-clients", wait_clients, "Start generating once this many clients connect");
  serve->add_option("--block-interval-ms", block_interval, "Pause after each block");
  serve->add_option("--console-dir", console_dir, "Static files served under /console/");

  std::string input, weighting = "uniform";
  std::optional<std::size_t> chunk_len;
  auto* eval = app.add_subcommand("eval", "Score a frame directory or stream capture");
  eval->add_option("input", input, "Output directory, frame directory or .infx capture")->required();
  eval->add_option("--chunk-len", chunk_len, "Frames per chunk (default: from config.ini or HELLO, else 8)");
  eval->add_option("--weighting", weighting, "uniform or wmape");

  std::string mode = "enabled";
  int repeats = 5;
  auto* overhead = app.add_subcommand("profile-overhead", "Measure profiler overhead on a calibrated workload");
  overhead->add_option("--mode", mode, "disabled, enabled or heavy-hook");
  overhead->add_option("--repeats", repeats, "Interleaved repetitions; the best run counts");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*overhead) return cmd_profile_overhead(mode, repeats, out, err);
    RunConfig c = resolve(g);
    if (*eval) return cmd_eval(c, input, chunk_len, weighting, out, err);
    gen_flags.apply(c);
    if (*generate) return cmd_generate(c, verify, out, err);
    if (listen) c.listen = stream::parse_endpoint(*listen);
    if (web_listen) c.web_listen = stream::parse_endpoint(*web_listen);
    if (client_queue) c.client_queue = *client_queue;
    if (wait_clients) c.wait_for_clients = *wait_clients;
    if (block_interval) c.block_interval_ms = *block_interval;
    if (console_dir) c.console_dir = *console_dir;
    return cmd_serve(c, out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace inferix::cli
