// Copyright 2026 The psyframe Authors
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

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "psyframe/pipeline.hpp"

namespace psyframe {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::string_view kProtocolName = "psyframe-telemetry";

namespace net {

inline bool send_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

/// Splits a byte stream into '\n'-terminated lines ('\r' stripped).
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}

  /// Next line, or nullopt on EOF/error/timeout (timeout_ms < 0 blocks).
  std::optional<std::string> next(int timeout_ms = -1) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (buf_.size() > kMaxLine) return std::nullopt;
      int wait = -1;
      if (timeout_ms >= 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        wait = static_cast<int>(left.count());
      }
      pollfd p{fd_, POLLIN, 0};
      const int pr = ::poll(&p, 1, wait);
      if (pr < 0 && errno == EINTR) continue;
      if (pr <= 0) return std::nullopt;
      char tmp[4096];
      const ssize_t n = ::recv(fd_, tmp, sizeof tmp, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return std::nullopt;
      buf_.append(tmp, static_cast<std::size_t>(n));
    }
  }

 private:
  static constexpr std::size_t kMaxLine = 1 << 20;
  int fd_;
  std::string buf_;
};

}  // namespace net

/// Minimal blocking client for the line protocol.
class LineClient {
 public:
  /// `recv_buffer_bytes` > 0 pins SO_RCVBUF (used to emulate a slow consumer).
  LineClient(const std::string& host, int port, int recv_buffer_bytes = 0) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    require(fd_ >= 0, "client: socket() failed");
    if (recv_buffer_bytes > 0) ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &recv_buffer_bytes, sizeof recv_buffer_bytes);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    require(::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1, "client: bad address '" + host + "'");
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd_);
      throw Error("client: cannot connect to " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    }
    reader_.emplace(fd_);
  }
  ~LineClient() {
    if (fd_ >= 0) ::close(fd_);
  }
  LineClient(const LineClient&) = delete;
  LineClient& operator=(const LineClient&) = delete;

  void send_line(const std::string& line) { require(net::send_all(fd_, line + "\n"), "client: send failed"); }
  void send(const nlohmann::json& j) { send_line(j.dump()); }
  std::optional<std::string> read_line(int timeout_ms = 2000) { return reader_->next(timeout_ms); }
  std::optional<nlohmann::json> read(int timeout_ms = 2000) {
    auto line = read_line(timeout_ms);
    if (!line) return std::nullopt;
    return nlohmann::json::parse(*line);
  }

 private:
  int fd_ = -1;
  std::optional<net::LineReader> reader_;
};

/// Telemetry/control service. A decode thread produces one tick per interval
/// and fans it out to every client; inbound control messages are queued and
/// applied between ticks, then acknowledged. Each client has a bounded tick
/// queue (oldest dropped) and an unbounded control-reply queue.
class TelemetryService {
 public:
  TelemetryService(PipelineConfig cfg, ModelFile model)
      : cfg_(std::move(cfg)), model_hash_(weights_hash(model.weights)), engine_(cfg_, std::move(model)), sched_(cfg_) {
    require(cfg_.source.kind == "synth", "serve: only the synth source can be served live");
  }
  ~TelemetryService() { stop(); }
  TelemetryService(const TelemetryService&) = delete;
  TelemetryService& operator=(const TelemetryService&) = delete;

  /// Binds 127.0.0.1:service_port (0 picks a free port) and starts serving.
  void start(const std::string& bind_host = "127.0.0.1") {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    require(listen_fd_ >= 0, "serve: socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(cfg_.service_port));
    require(::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) == 1, "serve: bad bind address");
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
      const std::string why = std::strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error("serve: cannot listen on port " + std::to_string(cfg_.service_port) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    if (!cfg_.log_path.empty()) {
      log_file_.open(cfg_.log_path);
      require(static_cast<bool>(log_file_), "serve: cannot open log '" + cfg_.log_path + "'");
      log_.emplace(log_file_, cfg_, model_hash_);
    }
    running_ = true;
    decode_thread_ = std::thread([this] { decode_loop(); });
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  int port() const { return port_; }
  std::int64_t ticks_emitted() const { return ticks_.load(); }

  /// Ticks discarded from full client queues, summed over connected clients.
  std::uint64_t dropped_ticks() {
    std::lock_guard lk(clients_mu_);
    std::uint64_t n = 0;
    for (auto& c : clients_) {
      std::lock_guard cl(c->mu);
      n += c->dropped_ticks;
    }
    return n;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    {
      std::lock_guard lk(ctl_mu_);
      ctl_cv_.notify_all();
    }
    ::shutdown(listen_fd_, SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    ::close(listen_fd_);
    listen_fd_ = -1;
    if (decode_thread_.joinable()) decode_thread_.join();
    std::lock_guard lk(clients_mu_);
    for (auto& c : clients_) close_client(*c);
    for (auto& c : clients_) join_client(*c);
    clients_.clear();
  }

  /// Blocks until stop() is called from another thread or a signal handler flag flips.
  template <typename Pred>
  void run_until(Pred&& should_stop) {
    while (running_ && !should_stop()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    stop();
  }

 private:
  struct Client {
    int fd = -1;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> ticks;
    std::deque<std::string> replies;
    bool closed = false;
    std::uint64_t dropped_ticks = 0;
    std::thread reader, writer;
    std::atomic<int> live_threads{2};
  };

  struct Control {
    std::shared_ptr<Client> from;
    nlohmann::json msg;
  };

  static ojson base_msg(std::string_view type) { return ojson{{"v", kProtocolVersion}, {"type", type}}; }

  static void push_reply(Client& c, const std::string& line) {
    std::lock_guard lk(c.mu);
    c.replies.push_back(line);
    c.cv.notify_all();
  }

  void push_tick(Client& c, const std::string& line) {
    std::lock_guard lk(c.mu);
    c.ticks.push_back(line);
    while (c.ticks.size() > cfg_.tick_queue_capacity) {
      c.ticks.pop_front();
      ++c.dropped_ticks;
    }
    c.cv.notify_all();
  }

  static void send_err(Client& c, const nlohmann::json& seq, const std::string& reason) {
    auto m = base_msg("err");
    m["seq"] = seq;
    m["reason"] = reason;
    push_reply(c, m.dump());
  }

  static void close_client(Client& c) {
    std::lock_guard lk(c.mu);
    if (!c.closed) {
      c.closed = true;
      ::shutdown(c.fd, SHUT_RDWR);
    }
    c.cv.notify_all();
  }

  static void join_client(Client& c) {
    if (c.reader.joinable()) c.reader.join();
    if (c.writer.joinable()) c.writer.join();
    if (c.fd >= 0) {
      ::close(c.fd);
      c.fd = -1;
    }
  }

  ojson hello() {
    std::lock_guard lk(state_mu_);
    auto m = base_msg("hello");
    m["protocol"] = kProtocolName;
    m["hop_ms"] = cfg_.hop_ms;
    m["paused"] = paused_;
    m["params"] = params_to_json(sched_.params());
    m["last_tick"] = engine_.last_tick();
    m["classes"] = kClassNames;
    m["moves"] = kMoveIds;
    m["joints"] = kJointNames;
    return m;
  }

  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        break;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      // A small kernel buffer keeps backlog in the per-client queue, where the drop policy applies.
      int sndbuf = kSendBufferBytes;
      ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &sndbuf, sizeof sndbuf);
      auto c = std::make_shared<Client>();
      c->fd = fd;
      push_reply(*c, hello().dump());
      c->reader = std::thread([this, c] { reader_loop(c); });
      c->writer = std::thread([this, c] { writer_loop(c); });
      std::lock_guard lk(clients_mu_);
      reap_clients();
      clients_.push_back(std::move(c));
    }
  }

  // Joins clients whose threads have both finished. Caller holds clients_mu_.
  void reap_clients() {
    for (auto it = clients_.begin(); it != clients_.end();) {
      if ((*it)->live_threads.load() == 0) {
        join_client(**it);
        it = clients_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void reader_loop(std::shared_ptr<Client> c) {
    net::LineReader rd(c->fd);
    while (running_) {
      auto line = rd.next();
      if (!line) break;
      if (line->empty()) continue;
      nlohmann::json msg;
      try {
        msg = nlohmann::json::parse(*line);
      } catch (const nlohmann::json::exception& e) {
        send_err(*c, nullptr, std::string("malformed message: ") + e.what());
        continue;
      }
      const nlohmann::json seq = msg.is_object() && msg.contains("seq") ? msg["seq"] : nlohmann::json(nullptr);
      if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
        send_err(*c, seq, "message must be an object with a string 'type'");
        continue;
      }
      if (msg.contains("v") && msg["v"] != kProtocolVersion) {
        send_err(*c, seq, "unsupported protocol version");
        continue;
      }
      std::lock_guard lk(ctl_mu_);
      controls_.push_back({c, std::move(msg)});
      ctl_cv_.notify_all();
    }
    close_client(*c);
    --c->live_threads;
  }

  void writer_loop(std::shared_ptr<Client> c) {
    for (;;) {
      std::string out;
      {
        std::unique_lock lk(c->mu);
        c->cv.wait(lk, [&] { return c->closed || !c->replies.empty() || !c->ticks.empty(); });
        if (c->closed) break;
        // Replies first: they are never dropped and should not queue behind ticks.
        auto& q = !c->replies.empty() ? c->replies : c->ticks;
        out = std::move(q.front());
        q.pop_front();
      }
      if (!net::send_all(c->fd, out + "\n")) break;
    }
    close_client(*c);
    --c->live_threads;
  }

  // Applies one control message; returns an error reason or empty on success.
  std::string apply(const nlohmann::json& m) {
    const auto type = m["type"].get<std::string>();
    try {
      if (type == "pause") {
        paused_ = true;
      } else if (type == "resume") {
        paused_ = false;
      } else if (type == "set_params") {
        nlohmann::json patch = nlohmann::json::object();
        for (const auto& [k, v] : m.items())
          if (k != "v" && k != "type" && k != "seq") patch[k] = v;
        require(!patch.empty(), "set_params needs at least one of lambda, theta, refractory, combo_window");
        sched_.set_params(params_patch(sched_.params(), patch, "set_params"));
      } else if (type == "inject") {
        require(m.contains("class_id") && m["class_id"].is_number_integer(), "inject needs integer class_id");
        const int hold = m.contains("hold_hops") ? m["hold_hops"].get<int>() : 1;
        sched_.inject(m["class_id"].get<int>(), hold);
      } else if (type == "set_source") {
        nlohmann::json src = m.contains("source") ? m["source"] : nlohmann::json::object();
        for (const auto& k : {"kind", "seed", "schedule"})
          if (m.contains(k)) src[k] = m[k];
        SourceConfig s = source_from_json(src, sched_.source());
        for (const auto& seg : s.schedule)
          require(seg.class_id >= -1 && seg.class_id < static_cast<int>(kNumClasses) && seg.hops >= 0,
                  "set_source: bad schedule segment");
        sched_.set_source(s);
      } else {
        return "unknown message type '" + type + "'";
      }
    } catch (const nlohmann::json::exception& e) {
      return std::string("bad field: ") + e.what();
    } catch (const Error& e) {
      return e.what();
    }
    return {};
  }

  void drain_controls() {
    std::deque<Control> batch;
    {
      std::lock_guard lk(ctl_mu_);
      batch.swap(controls_);
    }
    for (auto& c : batch) {
      const nlohmann::json seq = c.msg.contains("seq") ? c.msg["seq"] : nlohmann::json(nullptr);
      const auto err = apply(c.msg);
      if (err.empty()) {
        auto a = base_msg("ack");
        a["seq"] = seq;
        push_reply(*c.from, a.dump());
      } else {
        send_err(*c.from, seq, err);
      }
    }
  }

  void broadcast_tick(const TickReport& r) {
    auto m = base_msg("tick");
    const auto body = report_to_json(r);
    for (const auto& [k, v] : body.items()) m[k] = v;
    const std::string line = m.dump();
    std::lock_guard lk(clients_mu_);
    for (auto& c : clients_) push_tick(*c, line);
  }

  void decode_loop() {
    const int interval = cfg_.tick_interval_ms >= 0 ? cfg_.tick_interval_ms : cfg_.hop_ms;
    auto next = std::chrono::steady_clock::now();
    while (running_) {
      {
        std::lock_guard st(state_mu_);
        drain_controls();
        if (!paused_) {
          const auto in = sched_.next();
          const auto r = engine_.step(in);
          if (log_) log_->write(in, r);
          broadcast_tick(r);
          ++ticks_;
        }
      }
      next += std::chrono::milliseconds(interval);
      std::unique_lock lk(ctl_mu_);
      // Wakes early only to stop; controls wait for the tick boundary.
      ctl_cv_.wait_until(lk, next, [&] { return !running_; });
      if (std::chrono::steady_clock::now() > next + std::chrono::milliseconds(10L * interval + 100))
        next = std::chrono::steady_clock::now();
    }
  }

  static constexpr int kSendBufferBytes = 64 * 1024;

  PipelineConfig cfg_;
  std::uint64_t model_hash_;
  DecodeEngine engine_;
  InputScheduler sched_;
  std::mutex state_mu_;  // guards engine_, sched_, paused_
  bool paused_ = false;

  std::atomic<bool> running_{false};
  std::atomic<std::int64_t> ticks_{0};
  int listen_fd_ = -1;
  int port_ = 0;
  std::thread accept_thread_, decode_thread_;

  std::mutex ctl_mu_;
  std::condition_variable ctl_cv_;
  std::deque<Control> controls_;

  std::mutex clients_mu_;
  std::list<std::shared_ptr<Client>> clients_;

  std::ofstream log_file_;
  std::optional<SessionWriter> log_;
};

}  // namespace psyframe
