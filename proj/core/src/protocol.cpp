#include "dti/protocol.hpp"

#include <bit>
#include <cstring>

static_assert(std::endian::native == std::endian::little);

namespace dti::wire {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'I', '1'};
constexpr std::size_t kHeaderSize = 4 + 1 + 4;
constexpr std::uint32_t kMaxPayload = 1u << 24;

enum TypeCode : std::uint8_t {
    kHello = 1,
    kHelloAck = 2,
    kFrame = 3,
    kPrediction = 4,
    kError = 5,
    kBye = 6,
};

struct Writer {
    std::vector<std::uint8_t> buf;

    template <typename T>
    void raw(const T& v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf.insert(buf.end(), p, p + sizeof(T));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void str(const std::string& s) {
        raw(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;

    template <typename T>
    T raw() {
        if (p + sizeof(T) > end) throw TruncatedPayload("message payload ends early");
        T v;
        std::memcpy(&v, p, sizeof(T));
        p += sizeof(T);
        return v;
    }
    std::string str() {
        const std::uint32_t n = raw<std::uint32_t>();
        if (p + n > end) throw TruncatedPayload("string field ends early");
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        return s;
    }
    void expect_consumed() const {
        if (p != end) throw LengthMismatch("payload has trailing bytes");
    }
};

} // namespace

std::vector<std::uint8_t> encode_message(const Message& msg) {
    Writer payload;
    std::uint8_t type = 0;
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, Hello>) {
                type = kHello;
                payload.raw(m.version);
                payload.raw(m.side);
            } else if constexpr (std::is_same_v<M, HelloAck>) {
                type = kHelloAck;
                payload.raw(m.version);
                payload.raw(m.side);
            } else if constexpr (std::is_same_v<M, Frame>) {
                type = kFrame;
                if (m.pixels.size() != static_cast<std::size_t>(m.side) * m.side)
                    throw LengthMismatch("frame pixel count does not match side");
                payload.raw(m.seq);
                payload.raw(m.side);
                payload.raw(m.lo);
                payload.raw(m.hi);
                payload.raw(m.dynamics);
                payload.bytes(m.pixels.data(), m.pixels.size());
            } else if constexpr (std::is_same_v<M, Prediction>) {
                type = kPrediction;
                payload.raw(m.seq);
                payload.raw(m.score);
                payload.raw(m.threshold);
                payload.raw(static_cast<std::uint8_t>(m.has_class ? 1 : 0));
                if (m.has_class) payload.str(m.class_name);
            } else if constexpr (std::is_same_v<M, ErrorMsg>) {
                type = kError;
                payload.str(m.message);
            } else {
                type = kBye;
            }
        },
        msg);

    Writer out;
    out.bytes(kMagic, 4);
    out.raw(type);
    out.raw(static_cast<std::uint32_t>(payload.buf.size()));
    out.bytes(payload.buf.data(), payload.buf.size());
    return out.buf;
}

Message decode_message(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kHeaderSize) throw TruncatedPayload("message shorter than the header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagic("bad magic");
    const std::uint8_t type = bytes[4];
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + 5, 4);
    if (len > kMaxPayload) throw LengthMismatch("payload length out of range");
    if (bytes.size() < kHeaderSize + len) throw TruncatedPayload("payload ends early");
    if (bytes.size() > kHeaderSize + len) throw LengthMismatch("trailing bytes after payload");

    Reader r{bytes.data() + kHeaderSize, bytes.data() + kHeaderSize + len};
    switch (type) {
    case kHello: {
        Hello m;
        m.version = r.raw<std::uint16_t>();
        m.side = r.raw<std::uint16_t>();
        r.expect_consumed();
        return m;
    }
    case kHelloAck: {
        HelloAck m;
        m.version = r.raw<std::uint16_t>();
        m.side = r.raw<std::uint16_t>();
        r.expect_consumed();
        return m;
    }
    case kFrame: {
        Frame m;
        m.seq = r.raw<std::uint64_t>();
        m.side = r.raw<std::uint16_t>();
        m.lo = r.raw<std::uint8_t>();
        m.hi = r.raw<std::uint8_t>();
        m.dynamics = r.raw<float>();
        const std::size_t n = static_cast<std::size_t>(m.side) * m.side;
        if (static_cast<std::size_t>(r.end - r.p) < n)
            throw TruncatedPayload("frame pixels end early");
        if (static_cast<std::size_t>(r.end - r.p) > n)
            throw LengthMismatch("frame payload longer than side*side");
        m.pixels.assign(r.p, r.p + n);
        return m;
    }
    case kPrediction: {
        Prediction m;
        m.seq = r.raw<std::uint64_t>();
        m.score = r.raw<float>();
        m.threshold = r.raw<float>();
        m.has_class = r.raw<std::uint8_t>() != 0;
        if (m.has_class) m.class_name = r.str();
        r.expect_consumed();
        return m;
    }
    case kError: {
        ErrorMsg m;
        m.message = r.str();
        r.expect_consumed();
        return m;
    }
    case kBye:
        r.expect_consumed();
        return Bye{};
    default:
        throw UnknownType("type code " + std::to_string(type));
    }
}

const char* type_name(const Message& msg) {
    return std::visit(
        [](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, Hello>) return "HELLO";
            else if constexpr (std::is_same_v<M, HelloAck>) return "HELLO_ACK";
            else if constexpr (std::is_same_v<M, Frame>) return "FRAME";
            else if constexpr (std::is_same_v<M, Prediction>) return "PREDICTION";
            else if constexpr (std::is_same_v<M, ErrorMsg>) return "ERROR";
            else return "BYE";
        },
        msg);
}

} // namespace dti::wire
