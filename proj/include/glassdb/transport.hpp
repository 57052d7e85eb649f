#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "glassdb/protocol.hpp"

namespace glassdb {

class ShardService;

/// Request/reply link to one shard. call() returns the raw reply payload
/// (status byte first) and throws Error(transport_error) when the shard
/// cannot be reached within the timeout.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual ByteString call(MsgKind kind, std::string_view payload) = 0;

  /// call() followed by unwrap_reply().
  ByteString request(MsgKind kind, std::string_view payload) {
    auto reply = call(kind, payload);
    return ByteString(unwrap_reply(reply));
  }
};

class InProcessChannel : public Channel {
 public:
  InProcessChannel(ShardService& service, std::uint64_t conn) : service_(service), conn_(conn) {}
  ByteString call(MsgKind kind, std::string_view payload) override;

  /// Drops the next `n` calls as if the network lost them.
  void drop_next(int n) { drops_ = n; }
  /// Calls made, dropped ones included.
  std::uint64_t calls() const { return calls_; }

 private:
  ShardService& service_;
  std::uint64_t conn_;
  std::atomic<int> drops_{0};
  std::atomic<std::uint64_t> calls_{0};
};

class TcpChannel : public Channel {
 public:
  TcpChannel(std::string host, std::uint16_t port,
             std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
  ~TcpChannel() override;
  ByteString call(MsgKind kind, std::string_view payload) override;

 private:
  void connect_locked();
  void close_locked();

  std::string host_;
  std::uint16_t port_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  int fd_ = -1;
  std::uint64_t next_correlation_ = 1;
  ByteString inbox_;
};

/// "host:port" -> (host, port). Errors: malformed -> invalid_input.
std::pair<std::string, std::uint16_t> parse_endpoint(std::string_view endpoint);

/// Request handler behind a TcpServer: (connection id, kind byte, payload)
/// -> reply payload. Must not throw.
using RequestHandler =
    std::function<ByteString(std::uint64_t conn, std::uint8_t kind, std::string_view payload)>;

/// Serves requests over TCP: one reader thread per connection and a fixed
/// worker pool executing requests.
class TcpServer {
 public:
  TcpServer(RequestHandler handler, const std::string& host, std::uint16_t port,
            std::size_t workers = 4);
  TcpServer(ShardService& service, const std::string& host, std::uint16_t port,
            std::size_t workers = 4);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();

 private:
  struct Connection;
  struct Task {
    std::shared_ptr<Connection> conn;
    Frame frame;
  };

  void accept_loop();
  void read_loop(std::shared_ptr<Connection> conn);
  void worker_loop();

  RequestHandler handler_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> next_conn_{0};
  std::thread acceptor_;
  std::vector<std::thread> workers_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Task> tasks_;
  std::vector<std::shared_ptr<Connection>> conns_;
  std::vector<std::thread> readers_;
};

}  // namespace glassdb
