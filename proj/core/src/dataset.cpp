#include "dti/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "dti/rng.hpp"

namespace fs = std::filesystem;

namespace dti {

void LabeledDataset::validate() const {
    if (labels.size() != samples.size() || condition_tags.size() != samples.size())
        throw InvalidConfig("dataset parallel arrays differ in length");
    for (int l : labels)
        if (l < 0 || l >= static_cast<int>(vocabulary.size()))
            throw LabelOutOfRange("label " + std::to_string(l));
    for (const auto& s : samples)
        if (s.n != side()) throw MixedFrameSizes("images differ in side length");
}

// The five families are chosen to differ in the SHAPE of their quantized
// value distribution, not just in spatial layout: per-frame dynamic-range
// quantization cancels absolute scale, but histogram shape survives it.
// blobs: sparse warm spots on a flat background (dark-heavy); stripes: thin
// cold gaps in a warm field (bright-heavy); checkerboard: two-level bimodal;
// grating: smooth arcsine-distributed sinusoid; value noise: large-scale
// smooth field (mid-heavy).
// The five families separate along axes a small CNN picks up quickly.
// Histogram slot (per-frame dynamic-range quantization cancels absolute
// scale but keeps histogram shape): blobs bright-heavy (cool dots on the
// warm ambient), stripes warm with thin cool gaps, checker two-level
// bimodal, grating arcsine mid, value noise dark-heavy with sparse warm
// swells. Spatial scale and orientation: grating fine/smooth near 0 deg,
// stripes sharp 1-D near 60 deg, checker sharp 2-D near 30 deg, noise
// coarse smooth isotropic, blobs small isotropic dots.
SynthConfig SynthConfig::default_corpus(std::uint64_t seed) {
    SynthConfig c;
    c.seed = seed;
    c.classes = {
        {"blobs", TextureFamily::blobs, 2.0, 3.0, 1.0},
        {"checker", TextureFamily::checkerboard, 14.0, 18.0, 1.0},
        {"grating", TextureFamily::grating, 8.0, 11.0, 1.0},
        {"noise", TextureFamily::value_noise, 22.0, 26.0, 1.0},
        {"stripes", TextureFamily::stripes, 4.0, 6.0, 1.0},
    };
    return c;
}

SynthConfig SynthConfig::shifted(double scale_factor, double amplitude_factor, double noise_factor,
                                 const std::string& tag) const {
    SynthConfig c = *this;
    for (auto& cls : c.classes) {
        cls.scale_lo *= scale_factor;
        cls.scale_hi *= scale_factor;
        cls.amplitude *= amplitude_factor;
    }
    c.noise_sd *= noise_factor;
    c.condition = tag;
    return c;
}

void SynthConfig::validate() const {
    if (classes.empty()) throw InvalidConfig("no classes configured");
    if (frames_per_class < 1) throw InvalidConfig("frames_per_class must be >= 1");
    if (noise_sd < 0) throw InvalidConfig("noise_sd must be >= 0");
    if (width < 1 || height < 1) throw InvalidConfig("bad frame size");
    if (ambient_hi < ambient_lo) throw InvalidConfig("bad ambient range");
    std::set<std::string> names;
    for (const auto& c : classes) {
        if (c.amplitude <= 0) throw InvalidConfig("amplitude must be > 0 for " + c.name);
        if (!(c.scale_lo < c.scale_hi)) throw InvalidConfig("degenerate scale range for " + c.name);
        if (c.name.empty() || !names.insert(c.name).second)
            throw InvalidConfig("class names must be unique and non-empty");
    }
}

namespace {

// Temperatures are snapped to this grid before composition. 2^-12 C is two
// orders below the best NETD in the camera class this models, and it keeps
// every frame value exactly representable in the DTIF f32 payload.
constexpr double kTempGrid = 4096.0;

double snap(double v) { return std::nearbyint(v * kTempGrid) / kTempGrid; }

struct Vec2 {
    double x, y;
};

Vec2 rotate(double x, double y, double c, double s) { return {x * c - y * s, x * s + y * c}; }

void add_grating(std::vector<double>& tex, int w, int h, double cycles, double amp, Rng& rng) {
    // random phase; orientation jittered around the family's base angle
    const double theta = rng.uniform(-0.26, 0.26);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double c = std::cos(theta), s = std::sin(theta);
    const double k = 2.0 * std::numbers::pi * cycles / 75.0; // cycles per crop side
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec2 r = rotate(x, y, c, s);
            tex[static_cast<std::size_t>(y) * w + x] += amp * std::sin(k * r.x + phase);
        }
}

void add_checkerboard(std::vector<double>& tex, int w, int h, double cell, double amp, Rng& rng) {
    const double theta = std::numbers::pi / 6.0 + rng.uniform(-0.26, 0.26);
    const double ox = rng.uniform(0.0, cell), oy = rng.uniform(0.0, cell);
    const double c = std::cos(theta), s = std::sin(theta);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec2 r = rotate(x, y, c, s);
            const long cx = static_cast<long>(std::floor((r.x + ox) / cell));
            const long cy = static_cast<long>(std::floor((r.y + oy) / cell));
            tex[static_cast<std::size_t>(y) * w + x] += ((cx + cy) & 1) ? amp : -amp;
        }
}

// bilinear interpolation of a seeded coarse random lattice; node values are
// skewed cool with sparse warm swells, so the quantized field is dark-heavy
// (every other family owns a brighter histogram slot)
void add_value_noise(std::vector<double>& tex, int w, int h, double cell, double amp, Rng& rng) {
    const int gw = static_cast<int>(std::ceil(w / cell)) + 2;
    const int gh = static_cast<int>(std::ceil(h / cell)) + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
    for (auto& v : lattice) {
        const double u = rng.uniform01();
        v = amp * (1.85 * std::pow(u, 3.0) - 0.85);
    }
    const double ox = rng.uniform(0.0, cell), oy = rng.uniform(0.0, cell);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fx = (x + ox) / cell, fy = (y + oy) / cell;
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const double wx = fx - x0, wy = fy - y0;
            const auto at = [&](int gx, int gy) {
                return lattice[static_cast<std::size_t>(std::min(gy, gh - 1)) * gw +
                               std::min(gx, gw - 1)];
            };
            tex[static_cast<std::size_t>(y) * w + x] +=
                (1 - wy) * ((1 - wx) * at(x0, y0) + wx * at(x0 + 1, y0)) +
                wy * ((1 - wx) * at(x0, y0 + 1) + wx * at(x0 + 1, y0 + 1));
        }
}

void add_blobs(std::vector<double>& tex, int w, int h, double sigma, double amp, Rng& rng) {
    // a dense, roughly stationary field of cool spots on the warm ambient:
    // every crop-sized window sees the same kind of statistics, and the
    // quantized image stays bright-heavy (strong activations downstream)
    const int count = static_cast<int>((30 + rng.below(11)) *
                                       (static_cast<double>(w) * h) / (160.0 * 120.0));
    for (int i = 0; i < count; ++i) {
        const double cx = rng.uniform(0.0, w), cy = rng.uniform(0.0, h);
        const double a = -amp * rng.uniform(0.6, 1.0);
        const double inv = 1.0 / (2.0 * sigma * sigma);
        const int x0 = std::max(0, static_cast<int>(cx - 4 * sigma));
        const int x1 = std::min(w - 1, static_cast<int>(cx + 4 * sigma));
        const int y0 = std::max(0, static_cast<int>(cy - 4 * sigma));
        const int y1 = std::min(h - 1, static_cast<int>(cy + 4 * sigma));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                tex[static_cast<std::size_t>(y) * w + x] += a * std::exp(-d2 * inv);
            }
    }
}

// thin cold gaps in a warm field: wide +amp segments separated by narrow
// -amp gaps (width and 3x width, both jittered), along a random direction
void add_stripes(std::vector<double>& tex, int w, int h, double width, double amp, Rng& rng) {
    const double theta = std::numbers::pi / 3.0 + rng.uniform(-0.26, 0.26);
    const double c = std::cos(theta), s = std::sin(theta);
    const double extent = std::hypot(w, h) + 8 * width;
    std::vector<double> bounds;
    double pos = -extent / 2 + rng.uniform(0.0, width);
    bool gap = false;
    while (pos < extent / 2) {
        bounds.push_back(pos);
        pos += (gap ? width : 3.0 * width) * rng.uniform(0.75, 1.25);
        gap = !gap;
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec2 r = rotate(x - w / 2.0, y - h / 2.0, c, s);
            const auto it = std::upper_bound(bounds.begin(), bounds.end(), r.x);
            const long idx = it - bounds.begin();
            tex[static_cast<std::size_t>(y) * w + x] += (idx & 1) ? amp : -amp;
        }
}

ThermalFrame make_frame(const SynthConfig& cfg, const ClassSpec& cls, std::uint64_t tex_seed,
                        std::uint64_t ambient_seed, std::int64_t index) {
    const int w = cfg.width, h = cfg.height;
    Rng tex_rng(tex_seed);
    std::vector<double> tex(static_cast<std::size_t>(w) * h, 0.0);
    const double scale = tex_rng.uniform(cls.scale_lo, cls.scale_hi);
    switch (cls.family) {
    case TextureFamily::grating: add_grating(tex, w, h, scale, cls.amplitude, tex_rng); break;
    case TextureFamily::checkerboard: add_checkerboard(tex, w, h, scale, cls.amplitude, tex_rng); break;
    case TextureFamily::value_noise: add_value_noise(tex, w, h, scale, cls.amplitude, tex_rng); break;
    case TextureFamily::blobs: add_blobs(tex, w, h, scale, cls.amplitude, tex_rng); break;
    case TextureFamily::stripes: add_stripes(tex, w, h, scale, cls.amplitude, tex_rng); break;
    }
    if (cfg.noise_sd > 0)
        for (auto& v : tex) v += cfg.noise_sd * tex_rng.normal();

    Rng ambient_rng(ambient_seed);
    const double ambient = snap(ambient_rng.uniform(cfg.ambient_lo, cfg.ambient_hi));

    ThermalFrame frame;
    frame.width = w;
    frame.height = h;
    frame.frame_index = index;
    frame.meta["condition"] = cfg.condition;
    frame.temps.resize(tex.size());
    for (std::size_t i = 0; i < tex.size(); ++i) frame.temps[i] = ambient + snap(tex[i]);
    return frame;
}

constexpr std::uint64_t kAmbientStream = 0x11;
constexpr std::uint64_t kTextureStream = 0x22;

} // namespace

void generate_synthetic(const SynthConfig& config, const std::string& out_dir) {
    config.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    std::string manifest;
    for (std::size_t ci = 0; ci < config.classes.size(); ++ci) {
        const ClassSpec& cls = config.classes[ci];
        const fs::path cls_dir = fs::path(out_dir) / cls.name;
        fs::create_directories(cls_dir, ec);
        if (ec) throw IoError("cannot create " + cls_dir.string());
        for (int fi = 0; fi < config.frames_per_class; ++fi) {
            const std::uint64_t uid = ci * 1000003ull + static_cast<std::uint64_t>(fi);
            ThermalFrame frame =
                make_frame(config, cls, derive_seed(derive_seed(config.seed, kTextureStream), uid),
                           derive_seed(derive_seed(config.seed, kAmbientStream), uid), fi);
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%05d.dtif", fi);
            write_dtif((cls_dir / name).string(), frame);
            manifest += cls.name + "/" + name + "\t" + cls.name + "\t" + config.condition + "\n";
        }
    }
    std::ofstream mf(fs::path(out_dir) / "manifest.tsv", std::ios::binary);
    if (!mf) throw IoError("cannot write manifest in " + out_dir);
    mf << manifest;
}

namespace {

struct CorpusEntry {
    std::string path; // absolute or root-relative
    std::string label;
    std::string condition;
};

std::vector<CorpusEntry> scan_corpus(const std::string& root) {
    const fs::path rootp(root);
    if (!fs::exists(rootp)) throw IoError("no such corpus directory: " + root);

    std::vector<CorpusEntry> entries;
    const fs::path manifest = rootp / "manifest.tsv";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest, std::ios::binary);
        if (!in) throw IoError("cannot read " + manifest.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto t1 = line.find('\t');
            const auto t2 = line.find('\t', t1 + 1);
            if (t1 == std::string::npos || t2 == std::string::npos)
                throw CorruptFile("malformed manifest line: " + line);
            entries.push_back({(rootp / line.substr(0, t1)).string(), line.substr(t1 + 1, t2 - t1 - 1),
                               line.substr(t2 + 1)});
        }
    } else {
        for (const auto& dir : fs::directory_iterator(rootp)) {
            if (!dir.is_directory()) continue;
            const std::string label = dir.path().filename().string();
            bool any = false;
            for (const auto& file : fs::directory_iterator(dir.path())) {
                if (file.path().extension() == ".dtif") {
                    entries.push_back({file.path().string(), label, ""});
                    any = true;
                }
            }
            if (!any) throw EmptyClass("class directory " + label + " has no frames");
        }
    }
    if (entries.empty()) throw EmptyClass("corpus " + root + " is empty");
    std::sort(entries.begin(), entries.end(),
              [](const CorpusEntry& a, const CorpusEntry& b) { return a.path < b.path; });
    return entries;
}

} // namespace

LabeledDataset load_corpus(const std::string& root_dir, int crop_n,
                           const QuantizationRange& range) {
    const auto entries = scan_corpus(root_dir);

    LabeledDataset ds;
    std::map<std::string, int> vocab;
    for (const auto& e : entries) vocab.emplace(e.label, 0);
    for (auto& [name, id] : vocab) {
        id = static_cast<int>(ds.vocabulary.size());
        ds.vocabulary.push_back(name);
    }
    for (const auto& e : entries) {
        ThermalFrame frame = read_dtif(e.path);
        if (crop_n > frame.width || crop_n > frame.height)
            throw MixedFrameSizes("crop " + std::to_string(crop_n) + " exceeds frame " + e.path);
        const Roi roi = center_crop(frame, crop_n);
        ds.samples.push_back(quantize(frame, roi, range));
        ds.labels.push_back(vocab.at(e.label));
        ds.condition_tags.push_back(e.condition);
    }
    ds.validate();
    return ds;
}

QuantizedImage resize_bilinear(const QuantizedImage& image, int target_side) {
    if (target_side < 1) throw InvalidConfig("target side must be >= 1");
    if (target_side == image.n) return image;
    QuantizedImage out;
    out.n = target_side;
    out.range = image.range;
    out.dynamics = image.dynamics;
    out.pixels.resize(static_cast<std::size_t>(target_side) * target_side);
    const int n = image.n;
    const double step = target_side > 1 ? static_cast<double>(n - 1) / (target_side - 1) : 0.0;
    for (int y = 0; y < target_side; ++y) {
        const double sy = y * step;
        const int y0 = std::min(static_cast<int>(sy), n - 1);
        const int y1 = std::min(y0 + 1, n - 1);
        const double wy = sy - y0;
        for (int x = 0; x < target_side; ++x) {
            const double sx = x * step;
            const int x0 = std::min(static_cast<int>(sx), n - 1);
            const int x1 = std::min(x0 + 1, n - 1);
            const double wx = sx - x0;
            const double v = (1 - wy) * ((1 - wx) * image.at(x0, y0) + wx * image.at(x1, y0)) +
                             wy * ((1 - wx) * image.at(x0, y1) + wx * image.at(x1, y1));
            const auto q = static_cast<std::int32_t>(std::llround(v));
            out.pixels[static_cast<std::size_t>(y) * target_side + x] =
                std::clamp(q, image.range.lo, image.range.hi);
        }
    }
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split_by_condition(
    const LabeledDataset& dataset, const std::vector<std::string>& held_out_tags) {
    const std::set<std::string> have(dataset.condition_tags.begin(), dataset.condition_tags.end());
    const std::set<std::string> held(held_out_tags.begin(), held_out_tags.end());
    for (const auto& t : held)
        if (!have.count(t)) throw UnknownTag("condition tag '" + t + "' not present");

    LabeledDataset train, held_ds;
    train.vocabulary = held_ds.vocabulary = dataset.vocabulary;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        LabeledDataset& dst = held.count(dataset.condition_tags[i]) ? held_ds : train;
        dst.samples.push_back(dataset.samples[i]);
        dst.labels.push_back(dataset.labels[i]);
        dst.condition_tags.push_back(dataset.condition_tags[i]);
    }
    return {std::move(train), std::move(held_ds)};
}

} // namespace dti
