#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>

#include "dti/dataset.hpp"
#include "dti/netserve.hpp"
#include "dti/train.hpp"
#include "testutil.hpp"

using namespace dti;

namespace {

Model make_served_model(std::uint64_t seed, int classes = 3) {
    Model m = init_parameters(build_study2_spec(classes), seed);
    for (int c = 0; c < classes; ++c) m.class_labels.push_back("class" + std::to_string(c));
    return m;
}

std::vector<QuantizedImage> make_frames(int count, std::uint64_t seed) {
    std::vector<QuantizedImage> frames;
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        ThermalFrame f = testutil::random_frame(80, 80, rng);
        frames.push_back(quantize(f, center_crop(f, 75), QuantizationRange{}));
    }
    return frames;
}

} // namespace

TEST_CASE("loopback: sequence echo, determinism, in-process equivalence") {
    Server server(make_served_model(5), "127.0.0.1", 0, 0.25f);
    server.start();
    const Model model = make_served_model(5);

    const auto frames = make_frames(6, 77);
    const PredictionLog log = client_stream(frames, "127.0.0.1", server.port());
    REQUIRE(log.entries.size() == frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        CHECK(log.entries[i].seq == i);
        CHECK(log.entries[i].threshold == 0.25f);
        const GatedPrediction direct = predict_gated(model, frames[i], 0.25f);
        CHECK(log.entries[i].score == direct.score); // bit-exact f32
        CHECK(log.entries[i].has_class == direct.has_class);
        if (direct.has_class)
            CHECK(log.entries[i].class_name == model.class_labels[direct.class_index]);
    }

    // the same frame twice yields identical payloads
    const std::vector<QuantizedImage> twice = {frames[0], frames[0]};
    const PredictionLog rep = client_stream(twice, "127.0.0.1", server.port());
    CHECK(rep.entries[0].score == rep.entries[1].score);
    CHECK(rep.entries[0].class_name == rep.entries[1].class_name);

    // empty source: HELLO/BYE only, empty log
    const PredictionLog none = client_stream({}, "127.0.0.1", server.port());
    CHECK(none.entries.empty());

    // log rendering
    const std::string text = log_to_text(log);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
    CHECK(text.find('\t') != std::string::npos);

    server.stop();
}

TEST_CASE("flat frames produce an abstain prediction") {
    Server server(make_served_model(9), "127.0.0.1", 0, 0.5f);
    server.start();

    QuantizedImage flat;
    flat.n = 75;
    flat.range = {0, 255};
    flat.pixels.assign(75 * 75, 0);
    flat.dynamics = 0.0;
    const PredictionLog log = client_stream({flat}, "127.0.0.1", server.port());
    REQUIRE(log.entries.size() == 1);
    CHECK_FALSE(log.entries[0].has_class);
    CHECK(log.entries[0].score == 0.0f);
    server.stop();
}

TEST_CASE("server down: ConnectionLost before any frame") {
    // bind a port, then close it so nothing listens there
    Server server(make_served_model(2, 2), "127.0.0.1", 0, 0.5f);
    server.start();
    const std::uint16_t dead_port = server.port();
    server.stop();
    CHECK_THROWS_AS(client_stream(make_frames(1, 3), "127.0.0.1", dead_port), ConnectionLost);
}

TEST_CASE("garbage after HELLO gets ERROR and a closed connection") {
    Server server(make_served_model(11), "127.0.0.1", 0, 0.5f);
    server.start();

    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(server.port());
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);

    const auto hello = wire::encode_message(wire::Hello{1, 75});
    REQUIRE(::write(fd, hello.data(), hello.size()) == static_cast<ssize_t>(hello.size()));
    std::uint8_t ack[13];
    REQUIRE(::read(fd, ack, sizeof(ack)) == 13);

    const char garbage[] = "XXXXXXXXXXXXXXXX";
    REQUIRE(::write(fd, garbage, sizeof(garbage)) > 0);

    // the reply is a framed ERROR mentioning the magic, then EOF
    std::vector<std::uint8_t> reply(4096);
    ssize_t got = 0, r;
    while ((r = ::read(fd, reply.data() + got, reply.size() - got)) > 0) got += r;
    reply.resize(got);
    const wire::Message msg = wire::decode_message(reply);
    const auto* err = std::get_if<wire::ErrorMsg>(&msg);
    REQUIRE(err != nullptr);
    CHECK(err->message.find("magic") != std::string::npos);
    ::close(fd);
    server.stop();
}

TEST_CASE("out-of-order sequence numbers are a protocol error") {
    Server server(make_served_model(13), "127.0.0.1", 0, 0.5f);
    server.start();

    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(server.port());
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    const auto hello = wire::encode_message(wire::Hello{1, 2});
    REQUIRE(::write(fd, hello.data(), hello.size()) > 0);
    std::uint8_t ack[13];
    REQUIRE(::read(fd, ack, sizeof(ack)) == 13);

    wire::Frame f;
    f.seq = 5;
    f.side = 2;
    f.dynamics = 1.0f;
    f.pixels = {0, 255, 128, 64};
    auto b1 = wire::encode_message(f);
    REQUIRE(::write(fd, b1.data(), b1.size()) > 0);
    std::vector<std::uint8_t> reply(4096);
    ssize_t n = ::read(fd, reply.data(), 9);
    REQUIRE(n == 9);
    std::uint32_t len;
    std::memcpy(&len, reply.data() + 5, 4);
    REQUIRE(::read(fd, reply.data() + 9, len) == static_cast<ssize_t>(len));
    reply.resize(9 + len);
    CHECK(std::holds_alternative<wire::Prediction>(wire::decode_message(reply)));

    f.seq = 5; // not strictly increasing
    auto b2 = wire::encode_message(f);
    REQUIRE(::write(fd, b2.data(), b2.size()) > 0);
    std::vector<std::uint8_t> reply2(4096);
    ssize_t got = 0, r;
    while ((r = ::read(fd, reply2.data() + got, reply2.size() - got)) > 0) got += r;
    reply2.resize(got);
    const wire::Message msg2 = wire::decode_message(reply2);
    const auto* err = std::get_if<wire::ErrorMsg>(&msg2);
    REQUIRE(err != nullptr);
    CHECK(err->message.find("sequence") != std::string::npos);
    ::close(fd);
    server.stop();
}
