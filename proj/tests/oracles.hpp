#pragma once

// Independent test oracles. Everything here is deliberately written as
// direct, naive evaluation of the definitions (separate from the library
// code paths it checks) so the two routes can disagree when one is wrong.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dti/tensor.hpp"
#include "dti/thermal.hpp"

namespace oracle {

// Direct evaluation of the dynamic-range quantization definition: full-scan
// min/max over the ROI, then per-pixel linear remap, rounded half away from
// zero and clamped.
inline dti::QuantizedImage quantize_direct(const dti::ThermalFrame& frame, const dti::Roi& roi,
                                           const dti::QuantizationRange& range) {
    double t1 = frame.at(roi.x0, roi.y0);
    double t2 = t1;
    for (int y = roi.y0; y < roi.y0 + roi.n; ++y)
        for (int x = roi.x0; x < roi.x0 + roi.n; ++x) {
            t1 = std::min(t1, frame.at(x, y));
            t2 = std::max(t2, frame.at(x, y));
        }
    dti::QuantizedImage img;
    img.n = roi.n;
    img.range = range;
    img.dynamics = t2 - t1;
    img.pixels.reserve(static_cast<std::size_t>(roi.n) * roi.n);
    for (int y = roi.y0; y < roi.y0 + roi.n; ++y)
        for (int x = roi.x0; x < roi.x0 + roi.n; ++x) {
            if (t2 == t1) {
                img.pixels.push_back(range.lo);
                continue;
            }
            const double u =
                range.lo + (range.hi - range.lo) * ((frame.at(x, y) - t1) / (t2 - t1));
            img.pixels.push_back(std::clamp(static_cast<std::int32_t>(std::llround(u)),
                                            range.lo, range.hi));
        }
    return img;
}

// Quadruple-loop valid cross-correlation.
inline dti::TensorD conv2d_direct(const dti::TensorD& in, const dti::TensorD& w,
                                  const dti::TensorD& b) {
    const int B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = H - kh + 1, OW = W - kw + 1;
    dti::TensorD out({B, K, OH, OW});
    for (int bb = 0; bb < B; ++bb)
        for (int k = 0; k < K; ++k)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = b.data[k];
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v)
                                acc += w.data[((static_cast<std::size_t>(k) * C + c) * kh + u) * kw + v] *
                                       in.data[((static_cast<std::size_t>(bb) * C + c) * H + oy + u) * W +
                                               ox + v];
                    out.data[((static_cast<std::size_t>(bb) * K + k) * OH + oy) * OW + ox] = acc;
                }
    return out;
}

// Per-layer parameter count from the published layer table, computed by
// walking the shapes by hand (independent of the library's trace).
struct LayerCount {
    int conv_kernel = 0, conv_count = 0; // set for conv
    int dense_units = 0;                 // set for dense
};

inline std::size_t count_params_towers(int input_side, int input_channels,
                                       const std::vector<LayerCount>& layers) {
    int c = input_channels, h = input_side;
    std::size_t total = 0;
    for (const auto& l : layers) {
        if (l.conv_kernel > 0) {
            total += static_cast<std::size_t>(l.conv_count) * c * l.conv_kernel * l.conv_kernel +
                     l.conv_count;
            c = l.conv_count;
            h = h - l.conv_kernel + 1;
        } else if (l.dense_units > 0) {
            const int f = c * h * h;
            total += static_cast<std::size_t>(f) * l.dense_units + l.dense_units;
            c = l.dense_units;
            h = 1;
        } else {
            h /= 2; // pooling
        }
    }
    return total;
}

// Brute-force recount of confusion statistics from raw (truth, prediction)
// pairs.
struct Recount {
    std::vector<std::vector<std::int64_t>> confusion;
    std::vector<double> per_class;
    double mean_class = 0.0;
    double overall = 0.0;
};

inline Recount recount_pairs(const std::vector<int>& truths, const std::vector<int>& preds,
                             int classes) {
    Recount r;
    r.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
    for (std::size_t i = 0; i < truths.size(); ++i) ++r.confusion[truths[i]][preds[i]];
    r.per_class.assign(classes, 0.0);
    int supported = 0;
    double sum = 0.0;
    std::int64_t correct = 0;
    for (int i = 0; i < classes; ++i) {
        std::int64_t row = 0;
        for (int j = 0; j < classes; ++j) row += r.confusion[i][j];
        correct += r.confusion[i][i];
        if (row > 0) {
            r.per_class[i] = static_cast<double>(r.confusion[i][i]) / row;
            sum += r.per_class[i];
            ++supported;
        }
    }
    r.mean_class = supported ? sum / supported : 0.0;
    r.overall = truths.empty() ? 0.0 : static_cast<double>(correct) / truths.size();
    return r;
}

} // namespace oracle
