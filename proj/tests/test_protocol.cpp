#include <doctest.h>

#include "dti/protocol.hpp"
#include "dti/rng.hpp"

using namespace dti;
using namespace dti::wire;

namespace {

Message random_message(Rng& rng) {
    switch (rng.below(6)) {
    case 0: return Hello{static_cast<std::uint16_t>(rng.below(8)),
                         static_cast<std::uint16_t>(1 + rng.below(128))};
    case 1: return HelloAck{kProtocolVersion, static_cast<std::uint16_t>(1 + rng.below(128))};
    case 2: {
        Frame f;
        f.seq = rng.next_u64();
        f.side = static_cast<std::uint16_t>(1 + rng.below(32));
        f.lo = 0;
        f.hi = static_cast<std::uint8_t>(1 + rng.below(255));
        f.dynamics = static_cast<float>(rng.uniform(0.0, 30.0));
        f.pixels.resize(static_cast<std::size_t>(f.side) * f.side);
        for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng.below(f.hi + 1));
        return f;
    }
    case 3: {
        Prediction p;
        p.seq = rng.next_u64();
        p.threshold = static_cast<float>(rng.uniform(0.0, 1.0));
        p.has_class = rng.uniform01() < 0.7;
        if (p.has_class) {
            p.score = p.threshold + static_cast<float>(rng.uniform(0.0, 1.0 - p.threshold)) +
                      1e-4f;
            const std::size_t len = 1 + rng.below(24);
            for (std::size_t i = 0; i < len; ++i)
                p.class_name.push_back(static_cast<char>('a' + rng.below(26)));
        } else {
            p.score = p.threshold * static_cast<float>(rng.uniform01());
        }
        return p;
    }
    case 4: {
        ErrorMsg e;
        const std::size_t len = rng.below(64);
        for (std::size_t i = 0; i < len; ++i)
            e.message.push_back(static_cast<char>(' ' + rng.below(94)));
        return e;
    }
    default: return Bye{};
    }
}

} // namespace

TEST_CASE("HELLO is exactly 13 bytes on the wire") {
    const auto bytes = encode_message(Hello{1, 75});
    CHECK(bytes.size() == 13); // 4 magic + 1 type + 4 length + 4 payload
    CHECK(bytes[0] == 'D');
    CHECK(bytes[1] == 'T');
    CHECK(bytes[2] == 'I');
    CHECK(bytes[3] == '1');
}

TEST_CASE("decode(encode(m)) is the identity over random messages") {
    Rng rng(2718);
    for (int i = 0; i < 10000; ++i) {
        const Message m = random_message(rng);
        const auto bytes = encode_message(m);
        const Message back = decode_message(bytes);
        CHECK(back == m);
        CHECK(encode_message(back) == bytes); // byte-stable both ways
    }
}

TEST_CASE("corrupt streams raise the specified errors") {
    auto bytes = encode_message(Hello{1, 75});

    auto flipped = bytes;
    flipped[0] ^= 0xFF;
    CHECK_THROWS_AS(decode_message(flipped), BadMagic);

    auto badtype = bytes;
    badtype[4] = 99;
    CHECK_THROWS_AS(decode_message(badtype), UnknownType);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 2);
    CHECK_THROWS_AS(decode_message(truncated), TruncatedPayload);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_message(trailing), LengthMismatch);

    // declared payload length longer than the body
    auto lying = bytes;
    lying[5] = 200;
    CHECK_THROWS_AS(decode_message(lying), TruncatedPayload);

    // frame whose pixel block disagrees with its side field
    Frame f;
    f.seq = 1;
    f.side = 4;
    f.pixels.assign(16, 7);
    auto fb = encode_message(f);
    fb[9 + 8] = 5; // patch side u16 (after seq u64) to 5, pixels still 16
    fb[5] = static_cast<std::uint8_t>(fb.size() - 9);
    CHECK_THROWS_AS(decode_message(fb), TruncatedPayload);

    CHECK_THROWS_AS(decode_message({'D', 'T', 'I', '1'}), TruncatedPayload);
}
