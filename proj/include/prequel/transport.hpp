#pragma once

// Line-delimited JSON request/response transport shared by every external
// client (MT systems, learned metrics, pretrained encoders, parsers).
//
// Endpoints:
//   exec:<shell command>   spawn a subprocess, talk over its stdin/stdout
//   unix:<socket path>     connect to a Unix-domain stream socket
//
// Each request is one JSON object carrying an "id"; each response is one JSON
// object echoing that id. Responses may arrive in any order.

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "prequel/error.hpp"
#include "prequel/io.hpp"

namespace prequel::transport {

using json = nlohmann::json;

class Channel {
 public:
  virtual ~Channel() = default;
  // Sends every line and collects exactly as many response lines.
  virtual std::vector<std::string> exchange(const std::vector<std::string>& lines) = 0;
};

namespace detail {

inline void ignore_sigpipe() {
  static const bool once = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)once;
}

// Pipelined write/read over a pair of descriptors, multiplexed with poll() so
// neither side can deadlock on a full pipe buffer.
inline std::vector<std::string> exchange_fds(int write_fd, int read_fd, std::string& pending,
                                             const std::vector<std::string>& lines, int timeout_ms) {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out.push_back('\n');
  }
  std::size_t written = 0;
  std::vector<std::string> responses;
  char buf[65536];
  while (responses.size() < lines.size()) {
    for (std::size_t nl; (nl = pending.find('\n')) != std::string::npos && responses.size() < lines.size();) {
      responses.push_back(pending.substr(0, nl));
      pending.erase(0, nl + 1);
    }
    if (responses.size() == lines.size()) break;
    pollfd fds[2];
    int nfds = 0;
    fds[nfds++] = {read_fd, POLLIN, 0};
    if (written < out.size()) fds[nfds++] = {write_fd, POLLOUT, 0};
    const int rc = ::poll(fds, static_cast<nfds_t>(nfds), timeout_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) throw TransportError("timed out waiting for client response");
    if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t n = ::write(write_fd, out.data() + written, out.size() - written);
      if (n < 0 && errno != EAGAIN && errno != EINTR)
        throw TransportError(std::string("write to client failed: ") + std::strerror(errno));
      if (n > 0) written += static_cast<std::size_t>(n);
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t n = ::read(read_fd, buf, sizeof buf);
      if (n < 0 && errno != EAGAIN && errno != EINTR)
        throw TransportError(std::string("read from client failed: ") + std::strerror(errno));
      if (n == 0) throw TransportError("client closed the connection");
      if (n > 0) pending.append(buf, static_cast<std::size_t>(n));
    }
  }
  return responses;
}

}  // namespace detail

class SubprocessChannel : public Channel {
 public:
  explicit SubprocessChannel(std::string command, int timeout_ms = 120000)
      : command_(std::move(command)), timeout_ms_(timeout_ms) {
    detail::ignore_sigpipe();
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0)
      throw TransportError("cannot create pipes for '" + command_ + "'");
    pid_ = ::fork();
    if (pid_ < 0) throw TransportError("fork failed for '" + command_ + "'");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  SubprocessChannel(const SubprocessChannel&) = delete;
  SubprocessChannel& operator=(const SubprocessChannel&) = delete;

  ~SubprocessChannel() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      // Give the child a moment to exit on EOF before killing it.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
        ::usleep(2000);
      }
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, &status, 0);
    }
  }

  std::vector<std::string> exchange(const std::vector<std::string>& lines) override {
    return detail::exchange_fds(write_fd_, read_fd_, pending_, lines, timeout_ms_);
  }

 private:
  std::string command_;
  int timeout_ms_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string pending_;
};

class UnixSocketChannel : public Channel {
 public:
  explicit UnixSocketChannel(const std::string& path, int timeout_ms = 120000) : timeout_ms_(timeout_ms) {
    detail::ignore_sigpipe();
    fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) throw TransportError("cannot create socket");
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof addr.sun_path) throw TransportError("socket path too long: " + path);
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw TransportError("cannot connect to unix:" + path + ": " + std::strerror(errno));
    }
  }

  UnixSocketChannel(const UnixSocketChannel&) = delete;
  UnixSocketChannel& operator=(const UnixSocketChannel&) = delete;
  ~UnixSocketChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }

  std::vector<std::string> exchange(const std::vector<std::string>& lines) override {
    return detail::exchange_fds(fd_, fd_, pending_, lines, timeout_ms_);
  }

 private:
  int timeout_ms_;
  int fd_ = -1;
  std::string pending_;
};

inline std::unique_ptr<Channel> open_channel(const std::string& endpoint) {
  if (endpoint.rfind("exec:", 0) == 0) return std::make_unique<SubprocessChannel>(endpoint.substr(5));
  if (endpoint.rfind("unix:", 0) == 0) return std::make_unique<UnixSocketChannel>(endpoint.substr(5));
  throw PreconditionError("unsupported endpoint '" + endpoint + "' (expected exec:CMD or unix:PATH)");
}

// Optional on-disk response cache keyed by endpoint + request body. Enabled
// when PREQUEL_CACHE_DIR is set.
class ResponseCache {
 public:
  static std::optional<ResponseCache> from_environment() {
    const char* dir = std::getenv("PREQUEL_CACHE_DIR");
    if (!dir || !*dir) return std::nullopt;
    return ResponseCache(dir);
  }

  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<json> get(const std::string& key) const {
    const auto path = dir_ / (io::content_hash(key) + ".json");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
      const json entry = json::parse(io::read_file(path));
      if (entry.value("key", std::string()) != key) return std::nullopt;
      return entry.at("response");
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  void put(const std::string& key, const json& response) const {
    io::write_atomically(dir_ / (io::content_hash(key) + ".json"),
                         json{{"key", key}, {"response", response}}.dump());
  }

 private:
  std::filesystem::path dir_;
};

// Request/response client over a Channel with reconnect-and-retry on
// transport failure. Calls are serialized; the client is safe to share.
class JsonClient {
 public:
  explicit JsonClient(std::string endpoint, int max_retries = 2)
      : endpoint_(std::move(endpoint)), max_retries_(max_retries), cache_(ResponseCache::from_environment()) {}

  const std::string& endpoint() const { return endpoint_; }

  // Responses are returned in request order. Every request must carry a
  // string "id"; a response with an unknown id is a contract violation.
  std::vector<json> call(const std::vector<json>& requests) {
    std::lock_guard lock(mutex_);
    std::vector<json> results(requests.size());
    std::vector<std::size_t> todo;
    std::vector<std::string> keys(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
      keys[i] = endpoint_ + "\n" + requests[i].dump();
      if (cache_) {
        if (auto hit = cache_->get(keys[i])) {
          results[i] = *hit;
          continue;
        }
      }
      todo.push_back(i);
    }
    if (todo.empty()) return results;

    std::vector<std::string> lines;
    std::map<std::string, std::size_t> by_id;
    for (auto i : todo) {
      lines.push_back(requests[i].dump());
      by_id[requests[i].at("id").get<std::string>()] = i;
    }
    std::vector<std::string> raw;
    for (int attempt = 0;; ++attempt) {
      try {
        if (!channel_) channel_ = open_channel(endpoint_);
        raw = channel_->exchange(lines);
        break;
      } catch (const TransportError&) {
        channel_.reset();
        if (attempt >= max_retries_) throw;
      }
    }
    for (const auto& line : raw) {
      json resp;
      try {
        resp = json::parse(line);
      } catch (const json::exception& e) {
        channel_.reset();
        throw TransportError("malformed response from " + endpoint_ + ": " + e.what());
      }
      auto id_it = resp.find("id");
      if (id_it == resp.end() || !id_it->is_string() || !by_id.count(id_it->get<std::string>())) {
        channel_.reset();
        throw TransportError("response with unknown id from " + endpoint_);
      }
      const auto i = by_id[id_it->get<std::string>()];
      results[i] = resp;
      if (cache_ && !resp.contains("error")) cache_->put(keys[i], resp);
    }
    return results;
  }

  json call(const json& request) { return call(std::vector<json>{request}).front(); }

 private:
  std::string endpoint_;
  int max_retries_;
  std::optional<ResponseCache> cache_;
  std::unique_ptr<Channel> channel_;
  std::mutex mutex_;
};

}  // namespace prequel::transport
