#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dti/tensor.hpp"
#include "dti/thermal.hpp"

namespace dti {

struct LabeledDataset {
    std::vector<QuantizedImage> samples; // uniform side length
    std::vector<int> labels;
    std::vector<std::string> vocabulary; // ordered class names
    std::vector<std::string> condition_tags;

    std::size_t size() const { return samples.size(); }
    int side() const { return samples.empty() ? 0 : samples.front().n; }
    void validate() const;
};

enum class TextureFamily { grating, checkerboard, value_noise, blobs, stripes };

// One synthetic material class: a texture family plus the range its
// characteristic scale parameter is jittered over (pixels for cell/stripe
// width and blob sigma, cycles-per-crop for the grating).
struct ClassSpec {
    std::string name;
    TextureFamily family;
    double scale_lo = 0.0;
    double scale_hi = 0.0;
    double amplitude = 1.0; // degrees C
};

struct SynthConfig {
    std::vector<ClassSpec> classes;
    int frames_per_class = 200;
    double ambient_lo = 15.0; // per-frame ambient offset range, degrees C
    double ambient_hi = 35.0;
    double noise_sd = 0.05; // sensor noise, NETD-style
    int width = 160;
    int height = 120;
    std::uint64_t seed = 1;
    std::string condition = "base"; // manifest condition tag

    // The stock five-family desk-scale corpus.
    static SynthConfig default_corpus(std::uint64_t seed = 1);

    // Same families under measurably different capture conditions: texture
    // scales stretched, amplitude reduced, noisier sensor. Used for the
    // cross-condition protocol.
    SynthConfig shifted(double scale_factor = 1.35, double amplitude_factor = 0.7,
                        double noise_factor = 4.0, const std::string& tag = "shifted") const;

    void validate() const;
};

// Writes frames_per_class DTIF frames per class under out_dir/<class>/ plus
// a manifest.tsv of `relative_path<TAB>class<TAB>condition`. Every frame is
// ambient offset + family texture (per-frame jittered parameters, random
// phase/rotation) + Gaussian sensor noise. Deterministic per seed; the
// ambient stream is independent of the texture stream, and temperatures are
// snapped to a 1/4096 C grid (far below any NETD) so frames are exactly
// f32-representable and ambient shifts commute with quantization.
void generate_synthetic(const SynthConfig& config, const std::string& out_dir);

// Loads a corpus directory: manifest.tsv when present, otherwise
// per-class subdirectories of DTIF files (directory name = label). Frames
// are center-cropped to crop_n and quantized. Deterministic ordering by
// sorted path.
LabeledDataset load_corpus(const std::string& root_dir, int crop_n, const QuantizationRange& range);

// Bilinear resample with pixel-center alignment; pixels are rounded half
// away from zero and clamped back to the image's own range. Identity when
// target equals the source side. The dynamics field carries through.
QuantizedImage resize_bilinear(const QuantizedImage& image, int target_side);

// Disjoint split by condition tag; vocabularies are preserved on both sides.
// Throws UnknownTag if a requested tag does not occur in the dataset.
std::pair<LabeledDataset, LabeledDataset> split_by_condition(
    const LabeledDataset& dataset, const std::vector<std::string>& held_out_tags);

} // namespace dti
