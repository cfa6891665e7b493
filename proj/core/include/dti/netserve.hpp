#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "dti/model.hpp"
#include "dti/protocol.hpp"
#include "dti/thermal.hpp"

namespace dti {

// TCP classification server: per connection it expects HELLO, replies
// HELLO_ACK, then answers each FRAME with one PREDICTION carrying the same
// sequence number, strictly in order. Flat frames (dynamics == 0) get an
// abstain prediction instead of a model pass. Protocol violations are
// answered with ERROR and the connection closed. The model is shared
// read-only across connections.
class Server {
public:
    // port 0 binds an ephemeral port; query the real one with port().
    Server(Model model, std::string bind_host, std::uint16_t port, float threshold);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    void start();
    void stop();
    std::uint16_t port() const { return port_; }

private:
    void accept_loop();
    void serve_connection(int fd);

    Model model_;
    std::string host_;
    std::uint16_t port_;
    float threshold_;
    int listen_fd_ = -1;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::vector<std::thread> workers_;
    std::mutex workers_mu_;
};

// Loads a model and serves until stop(); convenience for the CLI.
std::unique_ptr<Server> serve(const std::string& model_path, const std::string& bind_addr,
                              float threshold);

struct PredictionLog {
    std::vector<wire::Prediction> entries;
};

// Streams quantized frames to a server, one FRAME / one PREDICTION at a
// time with increasing sequence numbers, then says BYE. Throws
// ConnectionLost when the server is unreachable or drops mid-stream and
// ProtocolError on any out-of-contract reply (including server ERRORs).
PredictionLog client_stream(const std::vector<QuantizedImage>& frames, const std::string& host,
                            std::uint16_t port);

// Same, from a corpus directory (or a single .dtif frame): crop + quantize
// happen client-side, mirroring the capture device's role.
PredictionLog client_stream(const std::string& frame_source, const std::string& host,
                            std::uint16_t port, int crop_n, const QuantizationRange& range);

// One `seq<TAB>class_or_-<TAB>score` line per prediction.
std::string log_to_text(const PredictionLog& log);

// "host:port" or ":port" (binds everything); throws InvalidConfig otherwise.
std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr);

} // namespace dti
