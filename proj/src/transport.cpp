#include "glassdb/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include "glassdb/shardserver.hpp"

namespace glassdb {

namespace {

[[noreturn]] void transport_fail(const std::string& what) {
  fail(ErrorCode::transport_error, what + ": " + std::strerror(errno));
}

bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace

ByteString InProcessChannel::call(MsgKind kind, std::string_view payload) {
  ++calls_;
  if (drops_ > 0) {
    --drops_;
    fail(ErrorCode::transport_error, "message dropped");
  }
  return service_.handle(conn_, kind, payload);
}

std::pair<std::string, std::uint16_t> parse_endpoint(std::string_view endpoint) {
  auto colon = endpoint.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    fail(ErrorCode::invalid_input, "endpoint must be host:port");
  }
  unsigned port = 0;
  auto digits = endpoint.substr(colon + 1);
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || p != digits.data() + digits.size() || port == 0 || port > 65535) {
    fail(ErrorCode::invalid_input, "bad port in endpoint");
  }
  return {std::string(endpoint.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

TcpChannel::TcpChannel(std::string host, std::uint16_t port, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), timeout_(timeout) {}

TcpChannel::~TcpChannel() {
  std::lock_guard lock(mu_);
  close_locked();
}

void TcpChannel::close_locked() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  inbox_.clear();
}

void TcpChannel::connect_locked() {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  auto port = std::to_string(port_);
  if (::getaddrinfo(host_.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
    fail(ErrorCode::transport_error, "cannot resolve " + host_);
  }
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    transport_fail("socket");
  }
  if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
    ::freeaddrinfo(res);
    ::close(fd);
    transport_fail("connect to " + host_ + ":" + port);
  }
  ::freeaddrinfo(res);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  fd_ = fd;
}

ByteString TcpChannel::call(MsgKind kind, std::string_view payload) {
  std::lock_guard lock(mu_);
  if (fd_ < 0) connect_locked();
  Frame req{static_cast<std::uint8_t>(kind), next_correlation_++, ByteString(payload)};
  if (!send_all(fd_, req.encode())) {
    close_locked();
    transport_fail("send");
  }
  auto deadline = std::chrono::steady_clock::now() + timeout_;
  char buf[64 * 1024];
  while (true) {
    Frame reply;
    std::size_t used = 0;
    try {
      used = Frame::decode(inbox_, reply);
    } catch (const Error&) {
      close_locked();
      throw;
    }
    if (used > 0) {
      inbox_.erase(0, used);
      if (reply.correlation == req.correlation) {
        if (reply.kind != (req.kind | kReplyBit)) {
          close_locked();
          fail(ErrorCode::corrupt_data, "reply kind mismatch");
        }
        return std::move(reply.payload);
      }
      continue;  // stale reply to an abandoned request
    }
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      close_locked();
      fail(ErrorCode::transport_error, "request timed out");
    }
    pollfd p{fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) continue;
    auto n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      close_locked();
      fail(ErrorCode::transport_error, "connection closed");
    }
    inbox_.append(buf, static_cast<std::size_t>(n));
  }
}

struct TcpServer::Connection {
  int fd = -1;
  std::uint64_t id = 0;
  std::mutex write_mu;
};

TcpServer::TcpServer(ShardService& service, const std::string& host, std::uint16_t port,
                     std::size_t workers)
    : TcpServer(
          [&service](std::uint64_t conn, std::uint8_t kind, std::string_view payload) {
            return service.handle_raw(conn, kind, payload);
          },
          host, port, workers) {}

TcpServer::TcpServer(RequestHandler handler, const std::string& host, std::uint16_t port,
                     std::size_t workers)
    : handler_(std::move(handler)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) transport_fail("socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    fail(ErrorCode::invalid_input, "listen address must be an IPv4 literal");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 128) != 0) {
    ::close(listen_fd_);
    transport_fail("bind " + host + ":" + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  for (std::size_t i = 0; i < std::max<std::size_t>(1, workers); ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::stop() {
  if (stopping_.exchange(true)) return;
  cv_.notify_all();
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> readers;
  {
    std::lock_guard lock(mu_);
    for (auto& c : conns_) ::shutdown(c->fd, SHUT_RDWR);
    readers.swap(readers_);
  }
  for (auto& t : readers) t.join();
  for (auto& t : workers_) t.join();
  std::lock_guard lock(mu_);
  for (auto& c : conns_) ::close(c->fd);
  conns_.clear();
  ::close(listen_fd_);
}

void TcpServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    conn->id = next_conn_++;
    std::lock_guard lock(mu_);
    conns_.push_back(conn);
    readers_.emplace_back([this, conn] { read_loop(conn); });
  }
}

void TcpServer::read_loop(std::shared_ptr<Connection> conn) {
  ByteString inbox;
  char buf[64 * 1024];
  while (!stopping_) {
    pollfd p{conn->fd, POLLIN, 0};
    int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    auto n = ::recv(conn->fd, buf, sizeof(buf), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    inbox.append(buf, static_cast<std::size_t>(n));
    try {
      while (true) {
        Frame f;
        auto used = Frame::decode(inbox, f);
        if (used == 0) break;
        inbox.erase(0, used);
        {
          std::lock_guard lock(mu_);
          tasks_.push_back(Task{conn, std::move(f)});
        }
        cv_.notify_one();
      }
    } catch (const Error&) {
      break;  // unframeable input: drop the connection
    }
  }
  ::shutdown(conn->fd, SHUT_RDWR);
}

void TcpServer::worker_loop() {
  while (true) {
    Task task;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !tasks_.empty(); });
      if (tasks_.empty()) return;
      task = std::move(tasks_.front());
      tasks_.pop_front();
    }
    auto kind = task.frame.kind;
    auto body = handler_(task.conn->id, kind, task.frame.payload);
    Frame reply{static_cast<std::uint8_t>(kind | kReplyBit), task.frame.correlation,
                std::move(body)};
    std::lock_guard lock(task.conn->write_mu);
    send_all(task.conn->fd, reply.encode());
  }
}

}  // namespace glassdb
