#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dti/dataset.hpp"
#include "testutil.hpp"

using namespace dti;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_config(std::uint64_t seed, int classes = 2, int frames = 3) {
    SynthConfig c = SynthConfig::default_corpus(seed);
    c.classes.resize(classes);
    c.frames_per_class = frames;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

bool dirs_identical(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return false;
    for (const auto& rel : fa)
        if (slurp(a / rel) != slurp(b / rel)) return false;
    return true;
}

} // namespace

TEST_CASE("generate + load: counts, vocabulary, determinism") {
    const std::string dir = testutil::temp_dir("synth1");
    generate_synthetic(tiny_config(5), dir + "/c");
    const LabeledDataset ds = load_corpus(dir + "/c", 75, QuantizationRange{});
    CHECK(ds.size() == 6);
    CHECK(ds.vocabulary == std::vector<std::string>{"blobs", "checker"});
    CHECK(ds.side() == 75);
    for (int c = 0; c < 2; ++c)
        CHECK(std::count(ds.labels.begin(), ds.labels.end(), c) == 3); // class balance
    for (const auto& t : ds.condition_tags) CHECK(t == "base");

    const LabeledDataset again = load_corpus(dir + "/c", 75, QuantizationRange{});
    CHECK(again.labels == ds.labels);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(again.samples[i].pixels == ds.samples[i].pixels);

    // same seed regenerates byte-identical files
    generate_synthetic(tiny_config(5), dir + "/c2");
    CHECK(dirs_identical(dir + "/c", dir + "/c2"));
    generate_synthetic(tiny_config(6), dir + "/c3");
    CHECK_FALSE(dirs_identical(dir + "/c", dir + "/c3"));
    fs::remove_all(dir);
}

TEST_CASE("grating frames without noise span close to peak-to-peak") {
    const std::string dir = testutil::temp_dir("synth2");
    SynthConfig c;
    c.seed = 9;
    c.classes = {{"grating", TextureFamily::grating, 4.0, 7.0, 1.0}};
    c.frames_per_class = 8;
    c.noise_sd = 0.0;
    generate_synthetic(c, dir);
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.path().extension() != ".dtif") continue;
        const ThermalFrame f = read_dtif(e.path().string());
        const auto [lo, hi] = std::minmax_element(f.temps.begin(), f.temps.end());
        const double span = *hi - *lo;
        CHECK(span >= 1.6); // many cycles visible, sin sweeps most of [-1,1]
        CHECK(span <= 2.0 + 1e-9);
    }
    fs::remove_all(dir);
}

TEST_CASE("ambient shift leaves the quantized dataset untouched") {
    const std::string dir = testutil::temp_dir("synth3");
    SynthConfig base = tiny_config(31);
    generate_synthetic(base, dir + "/a");
    SynthConfig hot = base;
    hot.ambient_lo += 5.0; // same span, same texture seeds, shifted ambient
    hot.ambient_hi += 5.0;
    generate_synthetic(hot, dir + "/b");

    const LabeledDataset da = load_corpus(dir + "/a", 75, QuantizationRange{});
    const LabeledDataset db = load_corpus(dir + "/b", 75, QuantizationRange{});
    REQUIRE(da.size() == db.size());
    bool frames_differ = false;
    for (std::size_t i = 0; i < da.size(); ++i) {
        CHECK(da.samples[i].pixels == db.samples[i].pixels);
        CHECK(da.samples[i].dynamics == db.samples[i].dynamics);
    }
    // but the raw corpora do differ (the shift really happened)
    CHECK_FALSE(dirs_identical(dir + "/a", dir + "/b"));
    (void)frames_differ;
    fs::remove_all(dir);
}

TEST_CASE("loader failure modes") {
    const std::string dir = testutil::temp_dir("load");
    CHECK_THROWS_AS(load_corpus(dir + "/nowhere", 75, QuantizationRange{}), IoError);

    fs::create_directories(dir + "/c/empty_class");
    CHECK_THROWS_AS(load_corpus(dir + "/c", 75, QuantizationRange{}), EmptyClass);
    fs::remove_all(dir + "/c");

    generate_synthetic(tiny_config(3, 1, 2), dir + "/c");
    CHECK_THROWS_AS(load_corpus(dir + "/c", 200, QuantizationRange{}), MixedFrameSizes);

    // corrupt one frame; the error names the path
    std::string victim;
    for (const auto& e : fs::recursive_directory_iterator(dir + "/c"))
        if (e.path().extension() == ".dtif") victim = e.path().string();
    {
        std::ofstream out(victim, std::ios::binary);
        out << "NOPE";
    }
    try {
        load_corpus(dir + "/c", 75, QuantizationRange{});
        FAIL("expected CorruptFile");
    } catch (const CorruptFile& e) {
        CHECK(std::string(e.what()).find(fs::path(victim).filename().string()) !=
              std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("resize_bilinear: identity, constants, ramps, bounds") {
    QuantizedImage img;
    img.n = 75;
    img.range = {0, 255};
    img.dynamics = 1.5;
    img.pixels.resize(75 * 75);
    for (int y = 0; y < 75; ++y)
        for (int x = 0; x < 75; ++x) img.pixels[y * 75 + x] = (x * 255) / 74; // horizontal ramp

    const QuantizedImage same = resize_bilinear(img, 75);
    CHECK(same.pixels == img.pixels);

    const QuantizedImage down = resize_bilinear(img, 60);
    CHECK(down.n == 60);
    CHECK(down.dynamics == 1.5);
    for (int y = 0; y < 60; ++y)
        for (int x = 1; x < 60; ++x)
            CHECK(down.pixels[y * 60 + x] >= down.pixels[y * 60 + x - 1]); // still a ramp
    CHECK(down.pixels.front() == 0);
    CHECK(down.pixels[59] == 255);
    for (int p : down.pixels) {
        CHECK(p >= 0);
        CHECK(p <= 255);
    }

    QuantizedImage flat;
    flat.n = 9;
    flat.range = {0, 255};
    flat.pixels.assign(81, 42);
    for (int target : {3, 9, 21}) {
        const QuantizedImage r = resize_bilinear(flat, target);
        for (int p : r.pixels) CHECK(p == 42);
    }
}

TEST_CASE("split_by_condition partitions and validates tags") {
    LabeledDataset ds;
    ds.vocabulary = {"a", "b"};
    for (int i = 0; i < 10; ++i) {
        QuantizedImage img;
        img.n = 2;
        img.range = {0, 255};
        img.pixels = {0, 1, 2, 3};
        ds.samples.push_back(img);
        ds.labels.push_back(i % 2);
        ds.condition_tags.push_back(i < 4 ? "wet" : "dry");
    }

    auto [train1, held1] = split_by_condition(ds, {});
    CHECK(held1.size() == 0);
    CHECK(train1.size() == 10);

    auto [train2, held2] = split_by_condition(ds, {"wet"});
    CHECK(held2.size() == 4);
    CHECK(train2.size() == 6);
    CHECK(train2.vocabulary == ds.vocabulary);
    CHECK(held2.vocabulary == ds.vocabulary);
    for (const auto& t : held2.condition_tags) CHECK(t == "wet");
    for (const auto& t : train2.condition_tags) CHECK(t == "dry");

    CHECK_THROWS_AS(split_by_condition(ds, {"snow"}), UnknownTag);
}
