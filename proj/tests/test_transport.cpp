#include <catch2/catch_amalgamated.hpp>

#include "fedsim/numerics.hpp"
#include "fedsim/transport.hpp"

#include <thread>

using namespace fedsim;

namespace {

WireMessage random_message(Rng& rng) {
    WireMessage msg;
    msg.kind = static_cast<MsgKind>(1 + rng.next_below(4));
    msg.round = static_cast<std::uint32_t>(rng.next_below(100));
    msg.client_id = static_cast<std::uint32_t>(rng.next_below(64));
    msg.n_samples = rng.next_below(100000);
    msg.params.resize(rng.next_below(40));
    for (double& p : msg.params) p = 1000.0 * (rng.next_double() - 0.5);
    return msg;
}

} // namespace

TEST_CASE("a parameterless message encodes to exactly 30 bytes", "[transport]") {
    WireMessage msg{MsgKind::register_client, 0, 7, 0, {}};
    CHECK(encode(msg).size() == 30);
}

TEST_CASE("a ten-parameter frame is 110 bytes", "[transport]") {
    WireMessage msg{MsgKind::global_model, 1, 0, 0, std::vector<double>(10, 1.5)};
    CHECK(encode(msg).size() == 110);
}

TEST_CASE("decode inverts encode on randomized messages", "[transport]") {
    Rng rng(2025);
    for (int i = 0; i < 200; ++i) {
        const auto msg = random_message(rng);
        FrameDecoder decoder;
        decoder.feed(encode(msg));
        auto back = decoder.next();
        REQUIRE(back.has_value());
        CHECK(*back == msg);
        CHECK(!decoder.next().has_value());
    }
}

TEST_CASE("frames split into 7-byte chunks reassemble", "[transport]") {
    Rng rng(4);
    const auto a = random_message(rng);
    const auto b = random_message(rng);
    auto bytes = encode(a);
    const auto more = encode(b);
    bytes.insert(bytes.end(), more.begin(), more.end());

    FrameDecoder decoder;
    std::vector<WireMessage> seen;
    for (std::size_t off = 0; off < bytes.size(); off += 7) {
        const std::size_t len = std::min<std::size_t>(7, bytes.size() - off);
        decoder.feed({bytes.data() + off, len});
        while (auto msg = decoder.next()) seen.push_back(*msg);
    }
    REQUIRE(seen.size() == 2);
    CHECK(seen[0] == a);
    CHECK(seen[1] == b);
}

TEST_CASE("wrong magic is rejected naming offset 0", "[transport]") {
    auto bytes = encode(WireMessage{MsgKind::shutdown, 0, 0, 0, {}});
    bytes[0] = 'X';
    FrameDecoder decoder;
    decoder.feed(bytes);
    CHECK_THROWS_MATCHES(decoder.next(), ProtocolError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("offset 0")));
}

TEST_CASE("unsupported version is rejected", "[transport]") {
    auto bytes = encode(WireMessage{MsgKind::shutdown, 0, 0, 0, {}});
    bytes[4] = 2;
    FrameDecoder decoder;
    decoder.feed(bytes);
    CHECK_THROWS_MATCHES(decoder.next(), ProtocolError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("version 2")));
}

TEST_CASE("oversized param_len trips the resource guard", "[transport]") {
    auto bytes = encode(WireMessage{MsgKind::global_model, 0, 0, 0, {1.0, 2.0}});
    FrameDecoder decoder(1);
    decoder.feed(bytes);
    CHECK_THROWS_MATCHES(decoder.next(), ProtocolError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("exceeds maximum")));
}

TEST_CASE("incomplete frames wait for more bytes", "[transport]") {
    const auto bytes = encode(WireMessage{MsgKind::client_update, 3, 1, 10, {1.0, 2.0, 3.0}});
    FrameDecoder decoder;
    decoder.feed({bytes.data(), bytes.size() - 1});
    CHECK(!decoder.next().has_value());
    decoder.feed({bytes.data() + bytes.size() - 1, 1});
    CHECK(decoder.next().has_value());
}

namespace {

// Drives one full protocol exchange over any transport: n clients register,
// each round the aggregator pushes a model and collects an update, then a
// shutdown broadcast. Returns (aggregator sent, aggregator received).
std::pair<std::uint64_t, std::uint64_t> exercise_transport(TransportFactory& factory,
                                                           std::size_t n_clients,
                                                           std::size_t n_rounds,
                                                           std::size_t n_params) {
    auto aggregator = factory.make_aggregator(n_clients);

    std::vector<std::thread> clients;
    std::vector<std::uint64_t> client_bytes(n_clients, 0);
    for (std::size_t i = 0; i < n_clients; ++i) {
        clients.emplace_back([&, i] {
            auto ep = factory.make_client(static_cast<std::uint32_t>(i));
            ep->send(WireMessage{MsgKind::register_client, 0,
                                 static_cast<std::uint32_t>(i), 0, {}});
            while (true) {
                auto msg = ep->receive();
                if (msg.kind == MsgKind::shutdown) break;
                WireMessage update{MsgKind::client_update, msg.round,
                                   static_cast<std::uint32_t>(i), 5, msg.params};
                for (double& p : update.params) p += 1.0;
                ep->send(update);
            }
            client_bytes[i] = ep->bytes_sent() + ep->bytes_received();
        });
    }

    aggregator->start(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) {
        auto msg = aggregator->receive();
        REQUIRE(msg.kind == MsgKind::register_client);
    }
    std::vector<double> params(n_params, 0.5);
    for (std::size_t r = 0; r < n_rounds; ++r) {
        for (std::size_t i = 0; i < n_clients; ++i)
            aggregator->send(static_cast<std::uint32_t>(i),
                             WireMessage{MsgKind::global_model, static_cast<std::uint32_t>(r),
                                         static_cast<std::uint32_t>(i), 0, params});
        for (std::size_t i = 0; i < n_clients; ++i) {
            auto update = aggregator->receive();
            REQUIRE(update.kind == MsgKind::client_update);
            REQUIRE(update.round == r);
            REQUIRE(update.params.size() == n_params);
        }
    }
    for (std::size_t i = 0; i < n_clients; ++i)
        aggregator->send(static_cast<std::uint32_t>(i),
                         WireMessage{MsgKind::shutdown, 0, 0, 0, {}});
    for (auto& t : clients) t.join();

    std::uint64_t total_client = 0;
    for (std::uint64_t b : client_bytes) total_client += b;
    CHECK(total_client == aggregator->bytes_sent() + aggregator->bytes_received());
    return {aggregator->bytes_sent(), aggregator->bytes_received()};
}

} // namespace

TEST_CASE("in-process exchange matches the traffic formula", "[transport]") {
    InProcTransport transport(3);
    auto [sent, received] = exercise_transport(transport, 3, 2, 17);
    CHECK(sent + received == predict_traffic(17, 3, 2));
    // 3*2 model frames down plus 3 shutdowns; 3*2 updates up plus 3 registrations.
    CHECK(sent == 6 * frame_bytes(17) + 3 * kFrameHeaderBytes);
    CHECK(received == 6 * frame_bytes(17) + 3 * kFrameHeaderBytes);
}

TEST_CASE("tcp exchange over localhost matches the traffic formula", "[transport]") {
    TcpTransport transport("127.0.0.1", 0);
    auto [sent, received] = exercise_transport(transport, 3, 2, 17);
    CHECK(sent + received == predict_traffic(17, 3, 2));
}

TEST_CASE("tcp and in-process byte counts are identical", "[transport]") {
    InProcTransport inproc(4);
    TcpTransport tcp("127.0.0.1", 0);
    auto a = exercise_transport(inproc, 4, 3, 33);
    auto b = exercise_transport(tcp, 4, 3, 33);
    CHECK(a == b);
}

TEST_CASE("a vanished client surfaces as a protocol error", "[transport]") {
    InProcTransport transport(1);
    auto aggregator = transport.make_aggregator(1);
    {
        auto ep = transport.make_client(0);
        ep->send(WireMessage{MsgKind::register_client, 0, 0, 0, {}});
        // Endpoint dropped without completing the protocol.
    }
    aggregator->start(1);
    auto msg = aggregator->receive();
    CHECK(msg.kind == MsgKind::register_client);
    CHECK_THROWS_MATCHES(aggregator->receive(), ProtocolError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("client 0")));
}
