// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include <fmt/format.h>
#include <json.hpp>

#include "caora/error.hpp"
#include "caora/resource_env.hpp"
#include "caora/workload.hpp"

namespace caora {

inline constexpr int kY1SchemaVersion = 1;

/// Radio-analytics message sent by the monitoring xApp to the Y1 consumer.
///
/// `latency_proxy` is the demand contention and `throughput_proxy` the completion
/// mass (c_ran + c_ai) served in the previous step; neither is a measured latency
/// or throughput.
struct Y1Report {
  int t = 0;
  double d_ran = 0.0;
  double d_ai = 0.0;
  int active_users = 0;
  double latency_proxy = 0.0;
  double throughput_proxy = 0.0;
  double network_load = 0.0;
  int schema_version = kY1SchemaVersion;

  friend bool operator==(const Y1Report&, const Y1Report&) = default;

  void validate() const {
    for (double v : {d_ran, d_ai, latency_proxy, throughput_proxy, network_load})
      detail::require(std::isfinite(v), "Y1 report fields must be finite");
    detail::require(t >= 0, "Y1 report timestep must be non-negative");
    detail::require(d_ran >= 0.0 && d_ai >= 0.0, "Y1 report demands must be non-negative");
    detail::require(active_users >= 0, "Y1 report active_users must be non-negative");
    detail::require(network_load >= 0.0, "Y1 report network_load must be non-negative");
    detail::require(schema_version == kY1SchemaVersion, "Y1 report schema_version must be 1");
  }
};

/// Report describing demand `sample` at step t, carrying the outcome of step t-1
/// in `previous` (absent at the start of an episode, when t must be 0).
inline Y1Report build_report(const StepInfo* previous, const DemandSample& sample, const ResourcePool& pool) {
  if (previous ? previous->t + 1 != sample.t : sample.t != 0)
    throw InvalidArgument(fmt::format("report timestep mismatch: previous step {} and sample step {}",
                                      previous ? std::to_string(previous->t) : "none", sample.t));
  Y1Report r;
  r.t = sample.t;
  r.d_ran = sample.d_ran;
  r.d_ai = sample.d_ai;
  r.active_users = sample.active_users;
  r.latency_proxy = contention(sample.d_ran + sample.d_ai, pool.r_max);
  r.throughput_proxy = previous ? previous->c_ran + previous->c_ai : 0.0;
  r.network_load = (sample.d_ran + sample.d_ai) / pool.r_max;
  return r;
}

// -----------------------------------------------------------------------------
// Wire format: one JSON object per line, fields in the order below.

inline std::string serialize_report(const Y1Report& r) {
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["d_ran"] = r.d_ran;
  j["d_ai"] = r.d_ai;
  j["active_users"] = r.active_users;
  j["latency_proxy"] = r.latency_proxy;
  j["throughput_proxy"] = r.throughput_proxy;
  j["network_load"] = r.network_load;
  j["schema_version"] = r.schema_version;
  return j.dump() + '\n';
}

namespace detail {

inline std::size_t key_offset(std::string_view line, std::string_view key) {
  const auto pos = line.find(fmt::format("\"{}\"", key));
  return pos == std::string_view::npos ? 0 : pos;
}

}  // namespace detail

/// Strict parse of one line (a trailing newline is allowed). Unknown, missing or
/// mistyped fields and invariant violations raise ParseError.
inline Y1Report parse_report(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line.begin(), line.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed Y1 report: ") + e.what(), e.byte == 0 ? 0 : e.byte - 1);
  }
  if (!j.is_object()) throw ParseError("Y1 report must be a JSON object", 0);

  static constexpr std::string_view kFields[] = {"t",          "d_ran",           "d_ai",
                                                 "active_users", "latency_proxy", "throughput_proxy",
                                                 "network_load", "schema_version"};
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto f : kFields) known = known || f == key;
    if (!known) throw ParseError("unknown Y1 report field '" + key + "'", detail::key_offset(line, key));
  }
  auto integer = [&](std::string_view key) -> int {
    const auto it = j.find(std::string(key));
    if (it == j.end()) throw ParseError(fmt::format("missing Y1 report field '{}'", key), line.size());
    if (!it->is_number_integer()) throw ParseError(fmt::format("field '{}' must be an integer", key), detail::key_offset(line, key));
    return it->get<int>();
  };
  auto real = [&](std::string_view key) -> double {
    const auto it = j.find(std::string(key));
    if (it == j.end()) throw ParseError(fmt::format("missing Y1 report field '{}'", key), line.size());
    if (!it->is_number()) throw ParseError(fmt::format("field '{}' must be a number", key), detail::key_offset(line, key));
    return it->get<double>();
  };

  Y1Report r;
  r.schema_version = integer("schema_version");
  if (r.schema_version != kY1SchemaVersion)
    throw ParseError(fmt::format("unsupported schema_version {}", r.schema_version),
                     detail::key_offset(line, "schema_version"));
  r.t = integer("t");
  r.d_ran = real("d_ran");
  r.d_ai = real("d_ai");
  r.active_users = integer("active_users");
  r.latency_proxy = real("latency_proxy");
  r.throughput_proxy = real("throughput_proxy");
  r.network_load = real("network_load");
  try {
    r.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("invalid Y1 report: ") + e.what(), 0);
  }
  return r;
}

// -----------------------------------------------------------------------------
// Delivery

enum class Delivery { InProcess, LocalSocket };

inline std::string_view to_string(Delivery d) { return d == Delivery::InProcess ? "in_process" : "local_socket"; }

inline Delivery delivery_from_string(std::string_view s) {
  if (s == "in_process") return Delivery::InProcess;
  if (s == "local_socket") return Delivery::LocalSocket;
  throw InvalidArgument("unknown delivery '" + std::string(s) + "'");
}

struct ConsumerRegistration {
  std::string consumer_id;
  Delivery delivery = Delivery::InProcess;
  std::optional<std::string> endpoint;  // Unix-domain socket path for LocalSocket

  void validate() const {
    detail::require(!consumer_id.empty(), "consumer_id must not be empty");
    if (delivery == Delivery::LocalSocket)
      detail::require(endpoint && !endpoint->empty(), "local socket delivery requires an endpoint");
  }
};

struct DeliveryAck {
  std::string consumer_id;
  std::uint64_t sequence = 0;  // 1-based count of reports delivered to this consumer
  std::size_t bytes = 0;
};

class UnknownConsumerError : public Error {
 public:
  using Error::Error;
};

/// Delivery failed; the report that could not be delivered is kept for the caller.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, Y1Report undelivered) : Error(what), undelivered_(undelivered) {}
  const Y1Report& undelivered() const noexcept { return undelivered_; }

 private:
  Y1Report undelivered_;
};

namespace detail {

/// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline sockaddr_un unix_address(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) throw InvalidArgument("socket path too long: " + path);
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  return addr;
}

inline std::string errno_text() { return std::strerror(errno); }

}  // namespace detail

/// Consumer end of the local-socket transport: binds a Unix-domain socket, accepts
/// one publisher connection and yields reports in arrival order.
class Y1SocketListener {
 public:
  explicit Y1SocketListener(std::string path) : path_(std::move(path)) {
    ::unlink(path_.c_str());
    listen_ = detail::Fd(::socket(AF_UNIX, SOCK_STREAM, 0));
    if (!listen_) throw Error("socket(): " + detail::errno_text());
    const sockaddr_un addr = detail::unix_address(path_);
    if (::bind(listen_.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
      throw Error("bind(" + path_ + "): " + detail::errno_text());
    if (::listen(listen_.get(), 4) != 0) throw Error("listen(): " + detail::errno_text());
  }

  Y1SocketListener(const Y1SocketListener&) = delete;
  Y1SocketListener& operator=(const Y1SocketListener&) = delete;
  ~Y1SocketListener() {
    conn_.reset();
    listen_.reset();
    ::unlink(path_.c_str());
  }

  const std::string& path() const { return path_; }

  /// Blocks until a publisher connects.
  void accept() {
    int fd = -1;
    do fd = ::accept(listen_.get(), nullptr, nullptr);
    while (fd < 0 && errno == EINTR);
    if (fd < 0) throw Error("accept(): " + detail::errno_text());
    conn_ = detail::Fd(fd);
  }

  /// Next complete line without its newline, or nullopt once the publisher hung up.
  std::optional<std::string> next_line() {
    if (!conn_) accept();
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::read(conn_.get(), chunk, sizeof(chunk));
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw Error("read(): " + detail::errno_text());
      if (n == 0) {
        if (!buffer_.empty()) throw ParseError("connection closed inside a Y1 report", buffer_.size());
        return std::nullopt;
      }
      buffer_.append(chunk, std::size_t(n));
    }
  }

  std::optional<Y1Report> next() {
    auto line = next_line();
    if (!line) return std::nullopt;
    return parse_report(*line);
  }

  /// Drains the connection, handing each report to `handler` in order.
  void serve(const std::function<void(const Y1Report&)>& handler) {
    while (auto r = next()) handler(*r);
  }

 private:
  std::string path_;
  detail::Fd listen_;
  detail::Fd conn_;
  std::string buffer_;
};

/// Delivers reports to registered consumers, preserving per-consumer order.
/// In-process consumers are called synchronously; socket consumers receive one
/// JSON line per report.
class Y1Publisher {
 public:
  using Handler = std::function<void(const Y1Report&)>;

  void register_consumer(const ConsumerRegistration& reg, Handler handler = {}) {
    reg.validate();
    if (consumers_.contains(reg.consumer_id))
      throw InvalidArgument("consumer '" + reg.consumer_id + "' is already registered");
    Consumer c;
    c.registration = reg;
    if (reg.delivery == Delivery::InProcess) {
      detail::require(static_cast<bool>(handler), "in-process consumers need a handler");
      c.handler = std::move(handler);
    } else {
      c.socket = detail::Fd(::socket(AF_UNIX, SOCK_STREAM, 0));
      if (!c.socket) throw Error("socket(): " + detail::errno_text());
      const sockaddr_un addr = detail::unix_address(*reg.endpoint);
      if (::connect(c.socket.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
        throw Error("connect(" + *reg.endpoint + "): " + detail::errno_text());
    }
    consumers_.emplace(reg.consumer_id, std::move(c));
  }

  void unregister_consumer(const std::string& consumer_id) { consumers_.erase(consumer_id); }

  bool is_registered(const std::string& consumer_id) const { return consumers_.contains(consumer_id); }

  DeliveryAck publish(const Y1Report& report, const std::string& consumer_id) {
    const auto it = consumers_.find(consumer_id);
    if (it == consumers_.end()) throw UnknownConsumerError("no Y1 consumer registered as '" + consumer_id + "'");
    Consumer& c = it->second;
    DeliveryAck ack{consumer_id, 0, 0};
    if (c.registration.delivery == Delivery::InProcess) {
      c.handler(report);
    } else {
      const std::string line = serialize_report(report);
      std::size_t sent = 0;
      while (sent < line.size()) {
        const ssize_t n = ::send(c.socket.get(), line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw TransportError("Y1 socket delivery failed: " + detail::errno_text(), report);
        sent += std::size_t(n);
      }
      ack.bytes = line.size();
    }
    ack.sequence = ++c.delivered;
    return ack;
  }

  DeliveryAck publish(const Y1Report& report, const ConsumerRegistration& reg) {
    return publish(report, reg.consumer_id);
  }

  /// Closes a socket consumer's connection so its listener sees end-of-stream.
  void close(const std::string& consumer_id) { consumers_.erase(consumer_id); }

 private:
  struct Consumer {
    ConsumerRegistration registration;
    Handler handler;
    detail::Fd socket;
    std::uint64_t delivered = 0;
  };
  std::map<std::string, Consumer> consumers_;
};

}  // namespace caora
