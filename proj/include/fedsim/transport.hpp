#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <bit>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/meter.hpp"

namespace fedsim {

enum class MsgKind : std::uint8_t {
    register_client = 1,
    global_model = 2,
    client_update = 3,
    shutdown = 4,
};

struct WireMessage {
    MsgKind kind = MsgKind::register_client;
    std::uint32_t round = 0;
    std::uint32_t client_id = 0;
    std::uint64_t n_samples = 0;
    std::vector<double> params;

    bool operator==(const WireMessage&) const = default;
};

// Frame layout, little-endian throughout:
//   magic "FDB1" (4) | version=1 (1) | kind (1) | round u32 (4) |
//   client_id u32 (4) | n_samples u64 (8) | param_len u64 (8) |
//   param_len IEEE-754 doubles (8 each)
inline constexpr char kFrameMagic[4] = {'F', 'D', 'B', '1'};
inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kDefaultMaxParamLen = 1u << 24;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

} // namespace detail

inline std::vector<std::uint8_t> encode(const WireMessage& msg) {
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderBytes + 8 * msg.params.size());
    out.insert(out.end(), kFrameMagic, kFrameMagic + 4);
    out.push_back(kFrameVersion);
    out.push_back(static_cast<std::uint8_t>(msg.kind));
    detail::put_u32(out, msg.round);
    detail::put_u32(out, msg.client_id);
    detail::put_u64(out, msg.n_samples);
    detail::put_u64(out, msg.params.size());
    for (double d : msg.params) detail::put_u64(out, std::bit_cast<std::uint64_t>(d));
    return out;
}

// Streaming frame decoder: feed bytes in arbitrary chunks, pull complete
// messages with next(). No partial-frame state survives a completed frame.
class FrameDecoder {
public:
    explicit FrameDecoder(std::size_t max_param_len = kDefaultMaxParamLen)
        : max_param_len_(max_param_len) {}

    void feed(std::span<const std::uint8_t> bytes) {
        buf_.insert(buf_.end(), bytes.begin(), bytes.end());
    }

    std::optional<WireMessage> next() {
        const std::size_t avail = buf_.size() - consumed_;
        if (avail < kFrameHeaderBytes) return std::nullopt;
        const std::uint8_t* p = buf_.data() + consumed_;

        if (std::memcmp(p, kFrameMagic, 4) != 0)
            throw ProtocolError("bad frame magic at offset 0");
        if (p[4] != kFrameVersion)
            throw ProtocolError("unsupported frame version " + std::to_string(p[4]));
        const std::uint8_t kind = p[5];
        if (kind < 1 || kind > 4)
            throw ProtocolError("unknown message kind " + std::to_string(kind));
        const std::uint64_t param_len = detail::get_u64(p + 22);
        if (param_len > max_param_len_)
            throw ProtocolError("param_len " + std::to_string(param_len) +
                                " exceeds maximum " + std::to_string(max_param_len_));
        const std::size_t frame_size = kFrameHeaderBytes + 8 * param_len;
        if (avail < frame_size) return std::nullopt;

        WireMessage msg;
        msg.kind = static_cast<MsgKind>(kind);
        msg.round = detail::get_u32(p + 6);
        msg.client_id = detail::get_u32(p + 10);
        msg.n_samples = detail::get_u64(p + 14);
        msg.params.resize(param_len);
        for (std::uint64_t i = 0; i < param_len; ++i)
            msg.params[i] = std::bit_cast<double>(detail::get_u64(p + 30 + 8 * i));

        consumed_ += frame_size;
        if (consumed_ > buf_.size() / 2) {
            buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(consumed_));
            consumed_ = 0;
        }
        return msg;
    }

private:
    std::vector<std::uint8_t> buf_;
    std::size_t consumed_ = 0;
    std::size_t max_param_len_;
};

// One client's side of the exchange.
class ClientEndpoint {
public:
    virtual ~ClientEndpoint() = default;
    virtual void send(const WireMessage&) = 0;
    virtual WireMessage receive() = 0;
    virtual std::uint64_t bytes_sent() const = 0;
    virtual std::uint64_t bytes_received() const = 0;
};

// Aggregator's side: messages from all clients arrive through one queue and
// identify their sender; sends address one client.
class AggregatorEndpoint {
public:
    virtual ~AggregatorEndpoint() = default;
    virtual void start(std::size_t n_clients) = 0;
    virtual void send(std::uint32_t client_id, const WireMessage&) = 0;
    virtual WireMessage receive() = 0;
    virtual std::uint64_t bytes_sent() const = 0;
    virtual std::uint64_t bytes_received() const = 0;
};

class TransportFactory {
public:
    virtual ~TransportFactory() = default;
    virtual std::unique_ptr<AggregatorEndpoint> make_aggregator(std::size_t n_clients) = 0;
    virtual std::unique_ptr<ClientEndpoint> make_client(std::uint32_t client_id) = 0;
    virtual std::string name() const = 0;
};

namespace detail {

struct Disconnect {
    std::uint32_t client_id;
};

// Blocking queue of either encoded frames or disconnect markers.
class FrameQueue {
public:
    using Item = std::variant<std::vector<std::uint8_t>, Disconnect>;

    void push(Item item) {
        {
            std::lock_guard lock(m_);
            q_.push_back(std::move(item));
        }
        cv_.notify_one();
    }

    Item pop() {
        std::unique_lock lock(m_);
        cv_.wait(lock, [&] { return !q_.empty(); });
        Item item = std::move(q_.front());
        q_.pop_front();
        return item;
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    std::deque<Item> q_;
};

struct InProcHub {
    explicit InProcHub(std::size_t n) : to_client(n) {}
    FrameQueue to_server;
    std::vector<FrameQueue> to_client;
};

} // namespace detail

class InProcClientEndpoint final : public ClientEndpoint {
public:
    InProcClientEndpoint(std::shared_ptr<detail::InProcHub> hub, std::uint32_t id)
        : hub_(std::move(hub)), id_(id) {}

    ~InProcClientEndpoint() override {
        // Lets a blocked aggregator detect a client that died mid-protocol.
        hub_->to_server.push(detail::Disconnect{id_});
    }

    void send(const WireMessage& msg) override {
        auto bytes = encode(msg);
        sent_ += bytes.size();
        hub_->to_server.push(std::move(bytes));
    }

    WireMessage receive() override {
        auto item = hub_->to_client.at(id_).pop();
        if (std::holds_alternative<detail::Disconnect>(item))
            throw ProtocolError("aggregator closed the channel");
        auto& bytes = std::get<std::vector<std::uint8_t>>(item);
        received_ += bytes.size();
        FrameDecoder decoder;
        decoder.feed(bytes);
        auto msg = decoder.next();
        if (!msg) throw ProtocolError("truncated in-process frame");
        return *msg;
    }

    std::uint64_t bytes_sent() const override { return sent_; }
    std::uint64_t bytes_received() const override { return received_; }

private:
    std::shared_ptr<detail::InProcHub> hub_;
    std::uint32_t id_;
    std::uint64_t sent_ = 0;
    std::uint64_t received_ = 0;
};

class InProcAggregatorEndpoint final : public AggregatorEndpoint {
public:
    explicit InProcAggregatorEndpoint(std::shared_ptr<detail::InProcHub> hub)
        : hub_(std::move(hub)) {}

    ~InProcAggregatorEndpoint() override {
        // Wakes clients still blocked on their queue when a run aborts.
        for (auto& q : hub_->to_client) q.push(detail::Disconnect{0});
    }

    void start(std::size_t) override {}

    void send(std::uint32_t client_id, const WireMessage& msg) override {
        auto bytes = encode(msg);
        sent_ += bytes.size();
        hub_->to_client.at(client_id).push(std::move(bytes));
    }

    WireMessage receive() override {
        auto item = hub_->to_server.pop();
        if (std::holds_alternative<detail::Disconnect>(item))
            throw ProtocolError("client " +
                                std::to_string(std::get<detail::Disconnect>(item).client_id) +
                                " disconnected");
        auto& bytes = std::get<std::vector<std::uint8_t>>(item);
        received_ += bytes.size();
        FrameDecoder decoder;
        decoder.feed(bytes);
        auto msg = decoder.next();
        if (!msg) throw ProtocolError("truncated in-process frame");
        return *msg;
    }

    std::uint64_t bytes_sent() const override { return sent_; }
    std::uint64_t bytes_received() const override { return received_; }

private:
    std::shared_ptr<detail::InProcHub> hub_;
    std::uint64_t sent_ = 0;
    std::uint64_t received_ = 0;
};

// Shared-queue transport for single-process simulation. Frames are fully
// encoded and decoded so byte accounting matches the TCP transport exactly.
class InProcTransport final : public TransportFactory {
public:
    explicit InProcTransport(std::size_t n_clients)
        : hub_(std::make_shared<detail::InProcHub>(n_clients)) {}

    std::unique_ptr<AggregatorEndpoint> make_aggregator(std::size_t) override {
        return std::make_unique<InProcAggregatorEndpoint>(hub_);
    }

    std::unique_ptr<ClientEndpoint> make_client(std::uint32_t client_id) override {
        return std::make_unique<InProcClientEndpoint>(hub_, client_id);
    }

    std::string name() const override { return "inproc"; }

private:
    std::shared_ptr<detail::InProcHub> hub_;
};

namespace detail {

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
    Socket& operator=(Socket&& other) noexcept {
        if (this != &other) {
            close_fd();
            fd_ = other.fd_;
            other.fd_ = -1;
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close_fd(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }

    void close_fd() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

inline void write_all(int fd, const std::uint8_t* data, std::size_t len) {
    std::size_t done = 0;
    while (done < len) {
        const ssize_t n = ::send(fd, data + done, len - done, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError("socket write failed: " + std::string(std::strerror(errno)));
        }
        done += static_cast<std::size_t>(n);
    }
}

inline sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
        throw ProtocolError("cannot parse host address: " + host);
    return addr;
}

} // namespace detail

class TcpClientEndpoint final : public ClientEndpoint {
public:
    TcpClientEndpoint(const std::string& host, std::uint16_t port) {
        // The aggregator may still be between bind and accept; retry briefly.
        const auto addr = detail::make_addr(host, port);
        for (int attempt = 0;; ++attempt) {
            detail::Socket s(::socket(AF_INET, SOCK_STREAM, 0));
            if (!s.valid()) throw ProtocolError("cannot create socket");
            if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
                sock_ = std::move(s);
                break;
            }
            if (attempt >= 100)
                throw ProtocolError("cannot connect to " + host + ":" + std::to_string(port) +
                                    ": " + std::strerror(errno));
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        int flag = 1;
        ::setsockopt(sock_.fd(), IPPROTO_TCP, TCP_NODELAY, &flag, sizeof(flag));
    }

    void send(const WireMessage& msg) override {
        const auto bytes = encode(msg);
        detail::write_all(sock_.fd(), bytes.data(), bytes.size());
        sent_ += bytes.size();
    }

    WireMessage receive() override {
        while (true) {
            if (auto msg = decoder_.next()) {
                received_ += frame_bytes(msg->params.size());
                return *msg;
            }
            std::uint8_t buf[65536];
            const ssize_t n = ::recv(sock_.fd(), buf, sizeof(buf), 0);
            if (n == 0) throw ProtocolError("aggregator closed the connection");
            if (n < 0) {
                if (errno == EINTR) continue;
                throw ProtocolError("socket read failed: " + std::string(std::strerror(errno)));
            }
            decoder_.feed({buf, static_cast<std::size_t>(n)});
        }
    }

    std::uint64_t bytes_sent() const override { return sent_; }
    std::uint64_t bytes_received() const override { return received_; }

private:
    detail::Socket sock_;
    FrameDecoder decoder_;
    std::uint64_t sent_ = 0;
    std::uint64_t received_ = 0;
};

class TcpAggregatorEndpoint final : public AggregatorEndpoint {
public:
    TcpAggregatorEndpoint(const std::string& host, std::uint16_t port) {
        listen_ = detail::Socket(::socket(AF_INET, SOCK_STREAM, 0));
        if (!listen_.valid()) throw ProtocolError("cannot create listen socket");
        int opt = 1;
        ::setsockopt(listen_.fd(), SOL_SOCKET, SO_REUSEADDR, &opt, sizeof(opt));
        auto addr = detail::make_addr(host, port);
        if (::bind(listen_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
            throw ProtocolError("cannot bind " + host + ":" + std::to_string(port) + ": " +
                                std::strerror(errno));
        if (::listen(listen_.fd(), 128) != 0)
            throw ProtocolError("cannot listen: " + std::string(std::strerror(errno)));
        socklen_t len = sizeof(addr);
        ::getsockname(listen_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }

    ~TcpAggregatorEndpoint() override {
        // shutdown() (not close) wakes readers blocked in recv.
        for (auto& conn : conns_)
            if (conn.sock.valid()) ::shutdown(conn.sock.fd(), SHUT_RDWR);
        for (auto& conn : conns_)
            if (conn.reader.joinable()) conn.reader.join();
    }

    std::uint16_t port() const { return port_; }

    void start(std::size_t n_clients) override {
        conns_.reserve(n_clients);
        for (std::size_t i = 0; i < n_clients; ++i) {
            const int fd = ::accept(listen_.fd(), nullptr, nullptr);
            if (fd < 0) throw ProtocolError("accept failed: " + std::string(std::strerror(errno)));
            int flag = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &flag, sizeof(flag));
            conns_.emplace_back();
            conns_.back().sock = detail::Socket(fd);
        }
        for (auto& conn : conns_) {
            conn.reader = std::thread([this, &conn] { reader_loop(conn); });
        }
    }

    void send(std::uint32_t client_id, const WireMessage& msg) override {
        int fd = -1;
        {
            std::lock_guard lock(map_mutex_);
            auto it = client_fd_.find(client_id);
            if (it == client_fd_.end())
                throw ProtocolError("client " + std::to_string(client_id) + " never registered");
            fd = it->second;
        }
        const auto bytes = encode(msg);
        detail::write_all(fd, bytes.data(), bytes.size());
        sent_ += bytes.size();
    }

    WireMessage receive() override {
        auto item = incoming_.pop();
        if (std::holds_alternative<detail::Disconnect>(item))
            throw ProtocolError("client " +
                                std::to_string(std::get<detail::Disconnect>(item).client_id) +
                                " disconnected");
        auto& bytes = std::get<std::vector<std::uint8_t>>(item);
        FrameDecoder decoder;
        decoder.feed(bytes);
        auto msg = decoder.next();
        if (!msg) throw ProtocolError("truncated frame from reader");
        received_ += bytes.size();
        return *msg;
    }

    std::uint64_t bytes_sent() const override { return sent_; }
    std::uint64_t bytes_received() const override { return received_; }

private:
    struct Conn {
        detail::Socket sock;
        std::thread reader;
        std::uint32_t client_id = UINT32_MAX;
    };

    // Frames are re-encoded onto the queue so receive() sees exactly the
    // bytes that crossed the wire, one frame per item.
    void reader_loop(Conn& conn) {
        FrameDecoder decoder;
        std::uint8_t buf[65536];
        while (true) {
            const ssize_t n = ::recv(conn.sock.fd(), buf, sizeof(buf), 0);
            if (n <= 0) {
                if (n < 0 && errno == EINTR) continue;
                incoming_.push(detail::Disconnect{conn.client_id});
                return;
            }
            decoder.feed({buf, static_cast<std::size_t>(n)});
            try {
                while (auto msg = decoder.next()) {
                    if (msg->kind == MsgKind::register_client) {
                        conn.client_id = msg->client_id;
                        std::lock_guard lock(map_mutex_);
                        client_fd_[msg->client_id] = conn.sock.fd();
                    }
                    incoming_.push(encode(*msg));
                }
            } catch (const ProtocolError&) {
                incoming_.push(detail::Disconnect{conn.client_id});
                return;
            }
        }
    }

    detail::Socket listen_;
    std::uint16_t port_ = 0;
    std::vector<Conn> conns_;
    std::map<std::uint32_t, int> client_fd_;
    std::mutex map_mutex_;
    detail::FrameQueue incoming_;
    std::atomic<std::uint64_t> sent_{0};
    std::atomic<std::uint64_t> received_{0};
};

// Localhost (or LAN) TCP transport with the binary framing above. Byte
// counts are frame bytes, identical to the in-process transport.
class TcpTransport final : public TransportFactory {
public:
    TcpTransport(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {}

    std::unique_ptr<AggregatorEndpoint> make_aggregator(std::size_t) override {
        auto agg = std::make_unique<TcpAggregatorEndpoint>(host_, port_);
        port_ = agg->port(); // resolve an ephemeral request
        return agg;
    }

    std::unique_ptr<ClientEndpoint> make_client(std::uint32_t) override {
        return std::make_unique<TcpClientEndpoint>(host_, port_);
    }

    std::uint16_t port() const { return port_; }
    std::string name() const override { return "tcp"; }

private:
    std::string host_;
    std::uint16_t port_;
};

} // namespace fedsim
