#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "dti/errors.hpp"

// Framed little-endian wire protocol for the classification service.
// Every message is: magic "DTI1" (4 bytes), type u8, payload length u32,
// payload. Payloads:
//   HELLO       protocol version u16, expected frame side u16
//   HELLO_ACK   protocol version u16, server network input side u16
//   FRAME       seq u64, side u16, lo u8, hi u8, dynamics f32 (degrees C),
//               then side*side pixel bytes
//   PREDICTION  seq u64, score f32, threshold f32, flag u8 (1 = class
//               present), then u32 length + UTF-8 class name when present
//   ERROR       u32 length + UTF-8 message
//   BYE         empty

namespace dti::wire {

constexpr std::uint16_t kProtocolVersion = 1;

struct Hello {
    std::uint16_t version = kProtocolVersion;
    std::uint16_t side = 0;
    bool operator==(const Hello&) const = default;
};

struct HelloAck {
    std::uint16_t version = kProtocolVersion;
    std::uint16_t side = 0;
    bool operator==(const HelloAck&) const = default;
};

struct Frame {
    std::uint64_t seq = 0;
    std::uint16_t side = 0;
    std::uint8_t lo = 0;
    std::uint8_t hi = 255;
    float dynamics = 0.0f;
    std::vector<std::uint8_t> pixels; // side*side, row-major
    bool operator==(const Frame&) const = default;
};

struct Prediction {
    std::uint64_t seq = 0;
    float score = 0.0f;
    float threshold = 0.0f;
    bool has_class = false;
    std::string class_name; // meaningful iff has_class
    bool operator==(const Prediction&) const = default;
};

struct ErrorMsg {
    std::string message;
    bool operator==(const ErrorMsg&) const = default;
};

struct Bye {
    bool operator==(const Bye&) const = default;
};

using Message = std::variant<Hello, HelloAck, Frame, Prediction, ErrorMsg, Bye>;

std::vector<std::uint8_t> encode_message(const Message& msg);

// Decodes exactly one full message. Throws BadMagic, UnknownType,
// TruncatedPayload (buffer ends early) or LengthMismatch (declared lengths
// inconsistent with the payload).
Message decode_message(const std::vector<std::uint8_t>& bytes);

const char* type_name(const Message& msg);

} // namespace dti::wire
