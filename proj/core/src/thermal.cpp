#include "dti/thermal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>

// DTIF is defined little-endian; fields are written in native order.
static_assert(std::endian::native == std::endian::little);

namespace dti {

bool ThermalFrame::valid() const {
    if (width < 1 || height < 1) return false;
    if (temps.size() != static_cast<std::size_t>(width) * height) return false;
    return std::all_of(temps.begin(), temps.end(), [](double t) { return std::isfinite(t); });
}

Roi center_crop(const ThermalFrame& frame, int n) {
    if (n < 1 || n > frame.width || n > frame.height) {
        throw CropTooLarge("crop " + std::to_string(n) + " does not fit in " +
                           std::to_string(frame.width) + "x" + std::to_string(frame.height));
    }
    return Roi{(frame.width - n) / 2, (frame.height - n) / 2, n};
}

static void check_roi(const ThermalFrame& frame, const Roi& roi) {
    if (roi.n < 1 || roi.x0 < 0 || roi.y0 < 0 || roi.x0 + roi.n > frame.width ||
        roi.y0 + roi.n > frame.height) {
        throw CropTooLarge("roi out of bounds");
    }
}

std::pair<double, double> range_over_roi(const ThermalFrame& frame, const Roi& roi) {
    check_roi(frame, roi);
    double t1 = std::numeric_limits<double>::infinity();
    double t2 = -std::numeric_limits<double>::infinity();
    for (int y = roi.y0; y < roi.y0 + roi.n; ++y) {
        for (int x = roi.x0; x < roi.x0 + roi.n; ++x) {
            const double t = frame.at(x, y);
            t1 = std::min(t1, t);
            t2 = std::max(t2, t);
        }
    }
    return {t1, t2};
}

QuantizedImage quantize(const ThermalFrame& frame, const Roi& roi, const QuantizationRange& range) {
    check_roi(frame, roi);
    if (!range.valid()) throw InvalidConfig("quantization range requires lo < hi");
    for (int y = roi.y0; y < roi.y0 + roi.n; ++y) {
        for (int x = roi.x0; x < roi.x0 + roi.n; ++x) {
            if (!std::isfinite(frame.at(x, y))) {
                throw NonFiniteTemperature("at (" + std::to_string(x) + "," + std::to_string(y) + ")");
            }
        }
    }

    const auto [t1, t2] = range_over_roi(frame, roi);
    QuantizedImage img;
    img.n = roi.n;
    img.range = range;
    img.dynamics = t2 - t1;
    img.pixels.resize(static_cast<std::size_t>(roi.n) * roi.n, range.lo);
    if (t2 == t1) return img; // flat frame: all-lo, dynamics 0

    const double span = static_cast<double>(range.hi - range.lo);
    std::size_t out = 0;
    for (int y = roi.y0; y < roi.y0 + roi.n; ++y) {
        for (int x = roi.x0; x < roi.x0 + roi.n; ++x) {
            const double v = range.lo + span * ((frame.at(x, y) - t1) / (t2 - t1));
            auto q = static_cast<std::int32_t>(std::llround(v)); // half away from zero
            q = std::clamp(q, range.lo, range.hi);
            img.pixels[out++] = q;
        }
    }
    return img;
}

DynamicsStats dynamics_stats(const std::vector<double>& values, SdEstimator est) {
    if (values.empty()) throw EmptyInput("no dynamics values");
    DynamicsStats s;
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    const double divisor = est == SdEstimator::population
                               ? static_cast<double>(values.size())
                               : static_cast<double>(values.size()) - 1.0;
    s.sd = divisor > 0 ? std::sqrt(acc / divisor) : 0.0;
    return s;
}

DynamicsStats thermal_dynamics(const std::vector<QuantizedImage>& images, SdEstimator est) {
    if (images.empty()) throw EmptyInput("no images");
    std::vector<double> d;
    d.reserve(images.size());
    for (const auto& img : images) d.push_back(img.dynamics);
    return dynamics_stats(d, est);
}

// ---- DTIF io ----

namespace {

constexpr char kDtifMagic[4] = {'D', 'T', 'I', 'F'};
constexpr std::uint16_t kDtifVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_bytes(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n) throw IoError("short write to " + path);
}

void get_bytes(std::FILE* f, void* p, std::size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n) throw CorruptFile("truncated file " + path);
}

} // namespace

void write_dtif(const std::string& path, const ThermalFrame& frame) {
    if (!frame.valid()) throw InvalidConfig("frame invariants violated for " + path);
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path + " for writing");
    put_bytes(f.get(), kDtifMagic, 4, path);
    const std::uint16_t ver = kDtifVersion;
    put_bytes(f.get(), &ver, 2, path);
    const std::uint32_t w = static_cast<std::uint32_t>(frame.width);
    const std::uint32_t h = static_cast<std::uint32_t>(frame.height);
    put_bytes(f.get(), &w, 4, path);
    put_bytes(f.get(), &h, 4, path);
    std::vector<float> buf(frame.temps.begin(), frame.temps.end());
    put_bytes(f.get(), buf.data(), buf.size() * sizeof(float), path);
}

ThermalFrame read_dtif(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);
    char magic[4];
    get_bytes(f.get(), magic, 4, path);
    if (std::memcmp(magic, kDtifMagic, 4) != 0) throw CorruptFile("bad magic in " + path);
    std::uint16_t ver = 0;
    get_bytes(f.get(), &ver, 2, path);
    if (ver != kDtifVersion) throw CorruptFile("unsupported version in " + path);
    std::uint32_t w = 0, h = 0;
    get_bytes(f.get(), &w, 4, path);
    get_bytes(f.get(), &h, 4, path);
    if (w < 1 || h < 1 || w > 1u << 16 || h > 1u << 16) throw CorruptFile("bad dimensions in " + path);
    std::vector<float> buf(static_cast<std::size_t>(w) * h);
    get_bytes(f.get(), buf.data(), buf.size() * sizeof(float), path);
    ThermalFrame frame;
    frame.width = static_cast<int>(w);
    frame.height = static_cast<int>(h);
    frame.temps.assign(buf.begin(), buf.end());
    if (!frame.valid()) throw CorruptFile("non-finite temperature in " + path);
    return frame;
}

} // namespace dti
