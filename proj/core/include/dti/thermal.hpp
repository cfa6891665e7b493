#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dti/errors.hpp"

namespace dti {

// Raw radiometric frame: per-pixel apparent temperature in degrees C,
// row-major. Temperatures are kept in double so that frame arithmetic
// (cropping, quantization) introduces no rounding of its own.
struct ThermalFrame {
    int width = 0;
    int height = 0;
    std::vector<double> temps;
    std::int64_t frame_index = 0;
    std::map<std::string, std::string> meta;

    double at(int x, int y) const { return temps[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return temps[static_cast<std::size_t>(y) * width + x]; }

    bool valid() const;
};

// Square region of interest inside a frame.
struct Roi {
    int x0 = 0;
    int y0 = 0;
    int n = 0;
};

struct QuantizationRange {
    int lo = 0;
    int hi = 255;

    bool valid() const { return lo < hi; }
};

// Integer image produced by dynamic-range quantization. `dynamics` is the
// temperature span T2-T1 of the source ROI, recorded at quantization time.
struct QuantizedImage {
    int n = 0;
    std::vector<std::int32_t> pixels;
    double dynamics = 0.0;
    QuantizationRange range;

    std::int32_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * n + x]; }
};

enum class SdEstimator { population, sample };

struct DynamicsStats {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double sd = 0.0; // population formula (divisor n) unless requested otherwise
};

// Largest centered n-by-n crop; offsets follow the floor rule.
// Throws CropTooLarge if n exceeds either frame dimension.
Roi center_crop(const ThermalFrame& frame, int n);

// (T1, T2) = min/max temperature over the ROI.
std::pair<double, double> range_over_roi(const ThermalFrame& frame, const Roi& roi);

// Per-frame dynamic-range quantization: each ROI pixel is linearly remapped
// from [T1,T2] to [lo,hi], rounded half-away-from-zero and clamped. A flat
// ROI (T1 == T2) maps to all-lo with dynamics 0 so callers can reject it.
// Throws NonFiniteTemperature if any ROI entry is NaN/Inf.
QuantizedImage quantize(const ThermalFrame& frame, const Roi& roi, const QuantizationRange& range);

// Statistics of per-image dynamics values. Throws EmptyInput.
DynamicsStats thermal_dynamics(const std::vector<QuantizedImage>& images,
                               SdEstimator sd = SdEstimator::population);
DynamicsStats dynamics_stats(const std::vector<double>& values,
                             SdEstimator sd = SdEstimator::population);

// ---- DTIF frame files ----
// Binary little-endian: magic "DTIF", version u16 = 1, width u32, height u32,
// then width*height IEEE-754 f32 temperatures in degrees C, row-major.
void write_dtif(const std::string& path, const ThermalFrame& frame);
ThermalFrame read_dtif(const std::string& path);

} // namespace dti
