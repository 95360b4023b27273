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

#include "inferix/stream/server.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>

#include "inferix/prof/profiler.hpp"
#include "inferix/stream/websocket.hpp"

namespace inferix::stream {

namespace {

using Bytes = std::shared_ptr<const std::vector<std::uint8_t>>;

bool droppable(MessageKind kind) { return kind == MessageKind::Frame || kind == MessageKind::Metrics; }

std::string content_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

std::string http_response(int status, std::string_view reason, std::string_view type, std::string_view body,
                          std::string_view extra_headers = {}, bool include_body = true) {
  std::ostringstream out;
  out << "HTTP/1.1 " << status << ' ' << reason << "\r\n"
      << "Content-Type: " << type << "\r\n"
      << "Content-Length: " << body.size() << "\r\n"
      << "Cache-Control: no-store\r\n"
      << "Connection: close\r\n"
      << extra_headers << "\r\n";
  if (include_body) out << body;
  return out.str();
}

// Maps a request target to a file inside root, or nullopt if it escapes root
// or does not exist.
std::optional<std::filesystem::path> resolve_console_path(const std::filesystem::path& root,
                                                          std::string_view rel) {
  namespace fs = std::filesystem;
  if (rel.empty() || rel == "/") rel = "index.html";
  while (!rel.empty() && rel.front() == '/') rel.remove_prefix(1);
  if (rel.find('\0') != std::string_view::npos || rel.find('\\') != std::string_view::npos) return std::nullopt;
  const fs::path candidate = fs::path(std::string(rel)).lexically_normal();
  for (const auto& part : candidate) {
    if (part == "..") return std::nullopt;
  }
  std::error_code ec;
  const fs::path base = fs::weakly_canonical(root, ec);
  if (ec) return std::nullopt;
  fs::path full = fs::weakly_canonical(base / candidate, ec);
  if (ec) return std::nullopt;
  if (fs::is_directory(full, ec)) full /= "index.html";
  const auto [b, f] = std::mismatch(base.begin(), base.end(), full.begin(), full.end());
  if (b != base.end()) return std::nullopt;
  if (!fs::is_regular_file(full, ec)) return std::nullopt;
  return full;
}

}  // namespace

// One connected peer: a bounded outgoing queue drained by its own writer
// thread, and a reader thread for control messages.
struct StreamServer::Client {
  enum class ItemType { Message, WsPong, WsClose };
  struct Item {
    Bytes bytes;
    ItemType type = ItemType::Message;
    bool droppable = false;
    bool last = false;  // writer half-closes after sending this
  };

  Client(TcpStream s, bool ws, std::size_t cap) : stream(std::move(s)), websocket(ws), capacity(cap) {}

  // Never blocks. FRAME/METRICS make room by evicting the oldest droppable
  // entry; other kinds are always queued.
  void push(Item item) {
    {
      std::lock_guard lk(mu);
      if (closed || dead) return;
      while (queue.size() >= capacity) {
        auto it = std::find_if(queue.begin(), queue.end(), [](const Item& i) { return i.droppable; });
        if (it == queue.end()) break;
        queue.erase(it);
        ++dropped;
      }
      if (item.droppable && queue.size() >= capacity) {
        ++dropped;
        return;
      }
      if (item.last) closed = true;
      queue.push_back(std::move(item));
    }
    cv.notify_all();
  }

  void push_message(const StreamMessage& msg, bool last = false) {
    push({std::make_shared<const std::vector<std::uint8_t>>(encode_message(msg)), ItemType::Message,
          droppable(msg.kind) && !last, last});
  }

  void writer_main() {
    try {
      for (;;) {
        Item item;
        {
          std::unique_lock lk(mu);
          cv.wait(lk, [&] { return dead || !queue.empty(); });
          if (dead) break;
          item = std::move(queue.front());
          queue.pop_front();
        }
        write_item(item);
        if (item.last) {
          if (websocket && item.type != ItemType::WsClose) {
            const std::uint8_t normal[2] = {0x03, 0xE8};
            stream.write_all(ws_encode_frame(WsOpcode::Close, normal));
          }
          stream.shutdown_write();
          break;
        }
      }
    } catch (const NetError&) {
      std::lock_guard lk(mu);
      dead = true;
    }
    {
      std::lock_guard lk(mu);
      done = true;
    }
    cv.notify_all();
  }

  void write_item(const Item& item) {
    if (!websocket) {
      stream.write_all(*item.bytes);
      return;
    }
    switch (item.type) {
      case ItemType::Message:
        stream.write_all(ws_encode_frame(WsOpcode::Binary, *item.bytes));
        break;
      case ItemType::WsPong:
        stream.write_all(ws_encode_frame(WsOpcode::Pong, *item.bytes));
        break;
      case ItemType::WsClose:
        stream.write_all(ws_encode_frame(WsOpcode::Close, *item.bytes));
        break;
    }
  }

  void reader_main(StreamServer& server) {
    std::uint8_t buf[16 * 1024];
    MessageReader raw;
    WsMessageReader ws;
    auto handle = [&](std::span<const std::uint8_t> bytes) {
      if (!websocket) {
        raw.feed(bytes);
        while (auto msg = raw.next()) server.on_client_message(*this, *msg);
        return;
      }
      ws.feed(bytes);
      while (auto frame = ws.next()) {
        switch (frame->opcode) {
          case WsOpcode::Binary: {
            auto d = decode_message(frame->payload);
            if (!d || d->consumed != frame->payload.size()) {
              throw ProtocolError("websocket message must carry exactly one protocol message");
            }
            server.on_client_message(*this, d->message);
            break;
          }
          case WsOpcode::Ping:
            push({std::make_shared<const std::vector<std::uint8_t>>(std::move(frame->payload)), ItemType::WsPong});
            break;
          case WsOpcode::Close:
            push({std::make_shared<const std::vector<std::uint8_t>>(), ItemType::WsClose, false, true});
            return;
          case WsOpcode::Pong:
            break;
          default:
            throw ProtocolError("websocket: only binary messages are accepted");
        }
      }
    };
    try {
      if (!pending_input.empty()) handle(pending_input);
      pending_input.clear();
      for (;;) {
        const auto n = stream.read_some(buf);
        if (!n || *n == 0) break;
        handle({buf, *n});
      }
    } catch (const ProtocolError& e) {
      push_message(make_error("protocol_error", e.what()), /*last=*/true);
    } catch (const NetError&) {
      // Peer went away; the writer notices on its next send.
    }
  }

  void kill() {
    {
      std::lock_guard lk(mu);
      dead = true;
    }
    cv.notify_all();
    stream.shutdown();
  }

  bool wait_done(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock lk(mu);
    return cv.wait_until(lk, deadline, [&] { return done; });
  }

  std::size_t dropped_count() {
    std::lock_guard lk(mu);
    return dropped;
  }

  TcpStream stream;
  const bool websocket;
  const std::size_t capacity;
  std::vector<std::uint8_t> pending_input;  // bytes read past the HTTP head

  std::mutex mu;
  std::condition_variable cv;
  std::deque<Item> queue;
  std::size_t dropped = 0;
  bool closed = false;
  bool dead = false;
  bool done = false;

  std::thread writer;
  std::thread reader;
};

class StreamServer::BroadcastSink final : public engine::Sink {
 public:
  explicit BroadcastSink(StreamServer& server) : server_(server) {}

  void on_event(const engine::EngineEvent& e) override {
    if (e.kind == engine::EventKind::PromptApplied) prompt_ = e.detail;
    if (e.kind != engine::EventKind::BlockCompleted) return;
    nlohmann::json body = {{"chunk", e.chunk}, {"prompt", prompt_}};
    const ServerStats s = server_.stats();
    body["frames_broadcast"] = s.frames_broadcast;
    body["messages_dropped"] = s.messages_dropped;
    body["clients"] = server_.client_count();
    if (server_.profiler_) body["profile"] = server_.profiler_->report(prof::ReportFormat::Summary).to_json();
    server_.broadcast(json_message(MessageKind::Metrics, body));
    if (server_.options_.block_interval.count() > 0) {
      std::unique_lock lk(server_.mu_);
      server_.cv_.wait_for(lk, server_.options_.block_interval, [&] { return server_.stopping_.load(); });
    }
  }

  void on_block(const engine::GeneratedBlock& b) override {
    for (std::size_t i = 0; i < b.frames.size(); ++i) {
      server_.broadcast(make_frame({static_cast<std::uint32_t>(b.chunk_index), static_cast<std::uint16_t>(i),
                                    b.frames[i]}));
    }
    std::lock_guard lk(server_.mu_);
    server_.stats_.frames_broadcast += b.frames.size();
  }

 private:
  StreamServer& server_;
  std::string prompt_;
};

nlohmann::json hello_body(const engine::Engine& engine, std::size_t client_queue) {
  const engine::ModelConfig& c = engine.pipeline().config();
  const engine::GenerationRequest req = engine.request();
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& p : req.prompt_schedule) prompts.push_back({{"from_chunk", p.from_chunk}, {"text", p.text}});
  return {
      {"protocol", kProtocolVersion},
      {"pipeline", engine.pipeline().name()},
      {"layers", c.layers},
      {"heads", c.heads},
      {"head_dim", c.head_dim},
      {"block_len", c.block_len},
      {"frame_width", c.frame_width},
      {"frame_height", c.frame_height},
      {"frames_per_chunk", c.block_len},
      {"num_blocks", req.num_blocks},
      {"steps", req.schedule.steps.size()},
      {"kv_window", req.kv_window ? nlohmann::json(*req.kv_window) : nlohmann::json(nullptr)},
      {"prompt_schedule", prompts},
      {"client_queue", client_queue},
  };
}

StreamServer::StreamServer(std::shared_ptr<engine::Engine> engine, ServerOptions options,
                           prof::Profiler* profiler)
    : engine_(std::move(engine)), options_(std::move(options)), profiler_(profiler) {
  if (!engine_) throw std::invalid_argument("StreamServer: engine is null");
  if (options_.client_queue == 0) throw std::invalid_argument("StreamServer: client_queue must be positive");
  listener_ = std::make_unique<TcpListener>(options_.listen);
  if (options_.web_listen) web_listener_ = std::make_unique<TcpListener>(*options_.web_listen);
}

StreamServer::~StreamServer() { stop(); }

std::uint16_t StreamServer::port() const noexcept { return listener_->port(); }

std::optional<std::uint16_t> StreamServer::web_port() const noexcept {
  if (!web_listener_) return std::nullopt;
  return web_listener_->port();
}

void StreamServer::start() {
  std::lock_guard lk(mu_);
  if (started_) throw std::logic_error("StreamServer::start called twice");
  started_ = true;
  helpers_.emplace_back([this] { accept_loop(*listener_, false); });
  if (web_listener_) helpers_.emplace_back([this] { accept_loop(*web_listener_, true); });
  generation_ = std::thread([this] { generation_main(); });
}

void StreamServer::accept_loop(TcpListener& listener, bool web) {
  while (!stopping_) {
    std::optional<TcpStream> s;
    try {
      s = listener.accept(std::chrono::milliseconds(50));
    } catch (const NetError&) {
      continue;
    }
    if (!s) continue;
    if (!web) {
      add_client(std::make_shared<Client>(std::move(*s), false, options_.client_queue));
      continue;
    }
    std::lock_guard lk(mu_);
    if (stopping_) break;
    helpers_.emplace_back([this, st = std::make_shared<TcpStream>(std::move(*s))]() mutable {
      handle_web_connection(std::move(*st));
    });
  }
}

void StreamServer::handle_web_connection(TcpStream stream) {
  std::vector<std::uint8_t> rest;
  HttpRequest req;
  try {
    req = read_http_request(stream, rest, std::chrono::seconds(10));
  } catch (const std::exception&) {
    return;
  }
  try {
    if (is_websocket_upgrade(req)) {
      stream.write_all("HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                       "Sec-WebSocket-Accept: " +
                       websocket_accept_key(req.header("sec-websocket-key")) + "\r\n\r\n");
      auto client = std::make_shared<Client>(std::move(stream), true, options_.client_queue);
      client->pending_input = std::move(rest);
      add_client(std::move(client));
      return;
    }
    std::string target = req.target.substr(0, req.target.find('?'));
    std::string response;
    const bool head = req.method == "HEAD";
    if (req.method != "GET" && !head) {
      response = http_response(405, "Method Not Allowed", "text/plain", "method not allowed\n", "Allow: GET, HEAD\r\n");
    } else if (target == "/" || target == "/console") {
      response = http_response(302, "Found", "text/plain", "", "Location: /console/\r\n");
    } else if (target.rfind("/console/", 0) == 0 && !options_.console_dir.empty()) {
      if (auto path = resolve_console_path(options_.console_dir, std::string_view(target).substr(9))) {
        std::ifstream in(*path, std::ios::binary);
        const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        response = http_response(200, "OK", content_type(*path), body, {}, !head);
      } else {
        response = http_response(404, "Not Found", "text/plain", "not found\n", {}, !head);
      }
    } else {
      response = http_response(404, "Not Found", "text/plain", "not found\n", {}, !head);
    }
    stream.write_all(response);
    stream.shutdown_write();
    // Let the peer read the response before the socket goes away.
    std::uint8_t sink[512];
    for (int i = 0; i < 20; ++i) {
      const auto n = stream.read_some(sink, std::chrono::milliseconds(50));
      if (!n || *n == 0) break;
    }
  } catch (const NetError&) {
  }
}

void StreamServer::add_client(std::shared_ptr<Client> client) {
  const StreamMessage hello = json_message(MessageKind::Hello, hello_body(*engine_, options_.client_queue));
  {
    std::lock_guard lk(mu_);
    if (stopping_) {
      client->stream.shutdown();
      return;
    }
    client->push_message(hello);
    if (ended_) client->push_message(make_end(), /*last=*/true);
    client->writer = std::thread([c = client.get()] { c->writer_main(); });
    client->reader = std::thread([this, c = client.get()] { c->reader_main(*this); });
    clients_.push_back(std::move(client));
    ++stats_.clients_accepted;
  }
  cv_.notify_all();
}

void StreamServer::broadcast(const StreamMessage& msg) {
  const bool end = msg.kind == MessageKind::End;
  Client::Item item{std::make_shared<const std::vector<std::uint8_t>>(encode_message(msg)),
                    Client::ItemType::Message, droppable(msg.kind), end};
  std::lock_guard lk(mu_);
  if (end) ended_ = true;
  for (auto& c : clients_) c->push(item);
}

void StreamServer::on_client_message(Client& client, const StreamMessage& msg) {
  if (msg.kind != MessageKind::PromptUpdate) {
    client.push_message(make_error("unexpected_kind", std::string("clients may only send PROMPT_UPDATE, got ") +
                                                          to_string(msg.kind)));
    return;
  }
  PromptUpdatePayload p;
  try {
    p = decode_prompt_update(msg.payload);
  } catch (const ProtocolError& e) {
    client.push_message(make_error("bad_payload", e.what()));
    return;
  }
  const engine::PromptUpdateResult r = engine_->apply_prompt_update({p.effective_chunk, p.text});
  {
    std::lock_guard lk(mu_);
    ++(r.accepted ? stats_.prompt_updates_accepted : stats_.prompt_updates_rejected);
  }
  if (!r.accepted) client.push_message(make_error(r.reason, "prompt update rejected", p.effective_chunk));
}

void StreamServer::generation_main() {
  try {
    if (options_.wait_for_clients > 0) {
      std::unique_lock lk(mu_);
      cv_.wait_for(lk, options_.client_wait_timeout,
                   [&] { return stopping_ || clients_.size() >= options_.wait_for_clients; });
    }
    BroadcastSink sink(*this);
    engine::Sink* sinks[] = {&sink};
    auto blocks = engine_->run(sinks);
    std::lock_guard lk(mu_);
    blocks_ = std::move(blocks);
  } catch (const std::exception& e) {
    failure_ = std::current_exception();
    broadcast(make_error("engine_failure", e.what()));
  } catch (...) {
    failure_ = std::current_exception();
    broadcast(make_error("engine_failure", "unknown error"));
  }
  broadcast(make_end());
  {
    std::lock_guard lk(mu_);
    generation_done_ = true;
  }
  cv_.notify_all();
}

std::vector<engine::GeneratedBlock> StreamServer::wait() {
  {
    std::lock_guard lk(mu_);
    if (!started_) throw std::logic_error("StreamServer::wait before start");
  }
  join_generation();
  const auto deadline = std::chrono::steady_clock::now() + options_.drain_timeout;
  std::vector<std::shared_ptr<Client>> clients;
  {
    std::lock_guard lk(mu_);
    clients = clients_;
  }
  for (auto& c : clients) c->wait_done(deadline);
  std::lock_guard lk(mu_);
  if (failure_ && !waited_) {
    waited_ = true;
    std::rethrow_exception(failure_);
  }
  waited_ = true;
  return blocks_;
}

bool StreamServer::join_generation() {
  // wait() and stop() may race from different threads.
  std::lock_guard lk(join_mu_);
  if (!generation_.joinable()) return generation_joined_;
  generation_.join();
  generation_joined_ = true;
  return true;
}

void StreamServer::stop() {
  if (stopping_.exchange(true)) return;
  engine_->cancel();
  cv_.notify_all();
  // Graceful: generation emits END; give writers a moment to flush it.
  if (join_generation()) {
    const auto deadline = std::chrono::steady_clock::now() + std::min(options_.drain_timeout,
                                                                      std::chrono::milliseconds(1000));
    std::vector<std::shared_ptr<Client>> clients;
    {
      std::lock_guard lk(mu_);
      clients = clients_;
    }
    for (auto& c : clients) c->wait_done(deadline);
  }
  for (;;) {
    std::vector<std::thread> helpers;
    {
      std::lock_guard lk(mu_);
      helpers.swap(helpers_);
    }
    if (helpers.empty()) break;
    for (auto& t : helpers) t.join();
  }
  std::vector<std::shared_ptr<Client>> clients;
  {
    std::lock_guard lk(mu_);
    clients = clients_;
  }
  for (auto& c : clients) c->kill();
  for (auto& c : clients) {
    if (c->writer.joinable()) c->writer.join();
    if (c->reader.joinable()) c->reader.join();
  }
}

std::size_t StreamServer::client_count() const {
  std::lock_guard lk(mu_);
  return static_cast<std::size_t>(std::count_if(clients_.begin(), clients_.end(), [](const auto& c) {
    std::lock_guard clk(c->mu);
    return !c->dead && !c->done;
  }));
}

ServerStats StreamServer::stats() const {
  std::lock_guard lk(mu_);
  ServerStats s = stats_;
  for (const auto& c : clients_) s.messages_dropped += c->dropped_count();
  return s;
}

}  // namespace inferix::stream
