#include "dti/netserve.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <charconv>
#include <cstring>
#include <filesystem>
#include <mutex>

#include "dti/dataset.hpp"
#include "dti/train.hpp"

namespace dti {

namespace {

// read / write exactly n bytes; false on orderly EOF at a message boundary
bool read_exact(int fd, void* buf, std::size_t n, bool eof_ok) {
    auto* p = static_cast<std::uint8_t*>(buf);
    std::size_t got = 0;
    while (got < n) {
        const ssize_t r = ::read(fd, p + got, n - got);
        if (r == 0) {
            if (eof_ok && got == 0) return false;
            throw ConnectionLost("peer closed mid-message");
        }
        if (r < 0) {
            if (errno == EINTR) continue;
            throw ConnectionLost(std::strerror(errno));
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

void write_all(int fd, const std::vector<std::uint8_t>& bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t w = ::write(fd, bytes.data() + sent, bytes.size() - sent);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw ConnectionLost(std::strerror(errno));
        }
        sent += static_cast<std::size_t>(w);
    }
}

// Reads one framed message off the stream. Returns false on clean EOF.
bool read_message(int fd, wire::Message& out) {
    std::vector<std::uint8_t> buf(9);
    if (!read_exact(fd, buf.data(), 9, true)) return false;
    if (std::memcmp(buf.data(), "DTI1", 4) != 0) throw BadMagic("bad magic on stream");
    std::uint32_t len = 0;
    std::memcpy(&len, buf.data() + 5, 4);
    if (len > (1u << 24)) throw LengthMismatch("declared payload too large");
    buf.resize(9 + len);
    if (len) read_exact(fd, buf.data() + 9, len, false);
    out = wire::decode_message(buf);
    return true;
}

void send_message(int fd, const wire::Message& msg) { write_all(fd, wire::encode_message(msg)); }

} // namespace

std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw InvalidConfig("address must be host:port");
    const std::string host = colon == 0 ? std::string("0.0.0.0") : addr.substr(0, colon);
    int port = -1;
    const auto* b = addr.data() + colon + 1;
    const auto* e = addr.data() + addr.size();
    if (std::from_chars(b, e, port).ptr != e || port < 0 || port > 65535)
        throw InvalidConfig("bad port in address " + addr);
    return {host, static_cast<std::uint16_t>(port)};
}

Server::Server(Model model, std::string bind_host, std::uint16_t port, float threshold)
    : model_(std::move(model)), host_(std::move(bind_host)), port_(port), threshold_(threshold) {}

Server::~Server() { stop(); }

void Server::start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw IoError("socket: " + std::string(std::strerror(errno)));
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1)
        throw InvalidConfig("bad bind address " + host_);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
        throw IoError("bind: " + std::string(std::strerror(errno)));
    if (::listen(listen_fd_, 16) < 0) throw IoError("listen: " + std::string(std::strerror(errno)));

    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    port_ = ntohs(bound.sin_port);

    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard<std::mutex> lk(workers_mu_);
    for (auto& w : workers_)
        if (w.joinable()) w.join();
    workers_.clear();
}

void Server::accept_loop() {
    while (running_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (!running_) break;
            continue;
        }
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        std::lock_guard<std::mutex> lk(workers_mu_);
        workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void Server::serve_connection(int fd) {
    auto fail = [&](const std::string& why) {
        try {
            send_message(fd, wire::ErrorMsg{why});
        } catch (const Error&) {
        }
    };

    try {
        wire::Message msg;
        if (!read_message(fd, msg)) {
            ::close(fd);
            return;
        }
        const auto* hello = std::get_if<wire::Hello>(&msg);
        if (!hello) {
            fail("expected HELLO");
            ::close(fd);
            return;
        }
        if (hello->version != wire::kProtocolVersion) {
            fail("unsupported protocol version");
            ::close(fd);
            return;
        }
        const std::uint16_t frame_side = hello->side;
        send_message(fd, wire::HelloAck{wire::kProtocolVersion,
                                        static_cast<std::uint16_t>(model_.spec.input_side)});

        std::uint64_t last_seq = 0;
        bool any_frame = false;
        while (running_) {
            if (!read_message(fd, msg)) break; // dropped without BYE; tolerate
            if (std::holds_alternative<wire::Bye>(msg)) break;
            const auto* frame = std::get_if<wire::Frame>(&msg);
            if (!frame) {
                fail(std::string("unexpected ") + wire::type_name(msg));
                break;
            }
            if (frame->side != frame_side) {
                fail("frame side differs from HELLO");
                break;
            }
            if (frame->lo >= frame->hi) {
                fail("frame range lo >= hi");
                break;
            }
            if (any_frame && frame->seq <= last_seq) {
                fail("sequence numbers must increase");
                break;
            }
            last_seq = frame->seq;
            any_frame = true;

            wire::Prediction pred;
            pred.seq = frame->seq;
            pred.threshold = threshold_;
            if (frame->dynamics <= 0.0f) {
                // flat frame: abstain rather than classify noise
                pred.score = 0.0f;
                pred.has_class = false;
            } else {
                QuantizedImage img;
                img.n = frame->side;
                img.range = {frame->lo, frame->hi};
                img.dynamics = frame->dynamics;
                img.pixels.assign(frame->pixels.begin(), frame->pixels.end());
                const GatedPrediction gp = predict_gated(model_, img, threshold_);
                pred.score = gp.score;
                pred.has_class = gp.has_class;
                if (gp.has_class) pred.class_name = model_.class_labels.at(gp.class_index);
            }
            send_message(fd, pred);
        }
    } catch (const BadMagic& e) {
        fail(std::string("bad magic: ") + e.what());
    } catch (const Error& e) {
        fail(e.what());
    }
    ::close(fd);
}

std::unique_ptr<Server> serve(const std::string& model_path, const std::string& bind_addr,
                              float threshold) {
    Model model = load_model(model_path); // load failures abort startup
    const auto [host, port] = parse_addr(bind_addr);
    auto server = std::make_unique<Server>(std::move(model), host, port, threshold);
    server->start();
    return server;
}

namespace {

class ClientSocket {
public:
    ClientSocket(const std::string& host, std::uint16_t port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw ConnectionLost("socket: " + std::string(std::strerror(errno)));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd_);
            throw InvalidConfig("bad host " + host);
        }
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
            const std::string why = std::strerror(errno);
            ::close(fd_);
            fd_ = -1;
            throw ConnectionLost("connect to " + host + ": " + why);
        }
        const int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    ~ClientSocket() {
        if (fd_ >= 0) ::close(fd_);
    }
    int fd() const { return fd_; }

private:
    int fd_ = -1;
};

} // namespace

PredictionLog client_stream(const std::vector<QuantizedImage>& frames, const std::string& host,
                            std::uint16_t port) {
    std::uint16_t side = 0;
    for (const auto& f : frames) {
        if (f.range.lo < 0 || f.range.hi > 255)
            throw InvalidConfig("wire frames need a [0,255]-compatible range");
        if (side == 0) side = static_cast<std::uint16_t>(f.n);
        if (f.n != side) throw MixedFrameSizes("streamed frames must share one side length");
    }
    if (side == 0) side = 75; // empty source still says HELLO

    ClientSocket sock(host, port);
    send_message(sock.fd(), wire::Hello{wire::kProtocolVersion, side});
    wire::Message reply;
    if (!read_message(sock.fd(), reply)) throw ConnectionLost("server closed during handshake");
    if (const auto* err = std::get_if<wire::ErrorMsg>(&reply))
        throw ProtocolError("server error: " + err->message);
    if (!std::holds_alternative<wire::HelloAck>(reply))
        throw ProtocolError(std::string("expected HELLO_ACK, got ") + wire::type_name(reply));

    PredictionLog log;
    std::uint64_t seq = 0;
    for (const auto& img : frames) {
        wire::Frame frame;
        frame.seq = seq++;
        frame.side = side;
        frame.lo = static_cast<std::uint8_t>(img.range.lo);
        frame.hi = static_cast<std::uint8_t>(img.range.hi);
        frame.dynamics = static_cast<float>(img.dynamics);
        frame.pixels.resize(img.pixels.size());
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            frame.pixels[i] = static_cast<std::uint8_t>(img.pixels[i]);
        send_message(sock.fd(), frame);

        if (!read_message(sock.fd(), reply)) throw ConnectionLost("server closed mid-stream");
        if (const auto* err = std::get_if<wire::ErrorMsg>(&reply))
            throw ProtocolError("server error: " + err->message);
        const auto* pred = std::get_if<wire::Prediction>(&reply);
        if (!pred) throw ProtocolError(std::string("expected PREDICTION, got ") + wire::type_name(reply));
        if (pred->seq != frame.seq) throw ProtocolError("prediction for the wrong sequence number");
        log.entries.push_back(*pred);
    }
    send_message(sock.fd(), wire::Bye{});
    return log;
}

PredictionLog client_stream(const std::string& frame_source, const std::string& host,
                            std::uint16_t port, int crop_n, const QuantizationRange& range) {
    std::vector<QuantizedImage> frames;
    if (std::filesystem::is_directory(frame_source)) {
        frames = load_corpus(frame_source, crop_n, range).samples;
    } else {
        const ThermalFrame f = read_dtif(frame_source);
        frames.push_back(quantize(f, center_crop(f, crop_n), range));
    }
    return client_stream(frames, host, port);
}

std::string log_to_text(const PredictionLog& log) {
    std::string out;
    char buf[64];
    for (const auto& p : log.entries) {
        std::snprintf(buf, sizeof(buf), "%llu\t%s\t%.9g\n",
                      static_cast<unsigned long long>(p.seq),
                      p.has_class ? p.class_name.c_str() : "-", static_cast<double>(p.score));
        out += buf;
    }
    return out;
}

} // namespace dti
