#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dti/rng.hpp"
#include "dti/tensor.hpp"

// Forward/backward operator pairs used by the networks. Every backward
// implements the exact chain rule for the scalarized loss: given dL/d(output)
// it produces dL/d(each input). Scalar type T is float for training and
// double for gradient checking.

namespace dti::ops {

inline void expect(bool ok, const char* msg) {
    if (!ok) throw ShapeMismatch(msg);
}

// ---- conv2d: valid padding, stride 1, cross-correlation + per-kernel bias ----

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias) {
    expect(input.rank() == 4, "conv2d input must be [B,C,H,W]");
    expect(weights.rank() == 4, "conv2d weights must be [K,C,kh,kw]");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int K = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    expect(weights.dim(1) == C, "conv2d channel mismatch");
    expect(bias.rank() == 1 && bias.dim(0) == K, "conv2d bias must be [K]");
    expect(kh <= H && kw <= W, "conv2d kernel larger than input");
    const int OH = H - kh + 1, OW = W - kw + 1;

    TensorT<T> out({B, K, OH, OW});
    const T* in = input.ptr();
    const T* wt = weights.ptr();
    T* o = out.ptr();
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < K; ++k) {
            T* plane = o + (static_cast<std::size_t>(b) * K + k) * OH * OW;
            std::fill(plane, plane + static_cast<std::size_t>(OH) * OW, bias.data[k]);
            for (int c = 0; c < C; ++c) {
                const T* iplane = in + (static_cast<std::size_t>(b) * C + c) * H * W;
                const T* kern = wt + (static_cast<std::size_t>(k) * C + c) * kh * kw;
                for (int u = 0; u < kh; ++u) {
                    for (int v = 0; v < kw; ++v) {
                        const T wval = kern[u * kw + v];
                        for (int oy = 0; oy < OH; ++oy) {
                            const T* src = iplane + (oy + u) * W + v;
                            T* dst = plane + static_cast<std::size_t>(oy) * OW;
                            for (int ox = 0; ox < OW; ++ox) dst[ox] += wval * src[ox];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
struct Conv2dGrads {
    TensorT<T> input;
    TensorT<T> weights;
    TensorT<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                               const TensorT<T>& grad_out) {
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int K = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const int OH = H - kh + 1, OW = W - kw + 1;
    expect(grad_out.rank() == 4 && grad_out.dim(0) == B && grad_out.dim(1) == K &&
               grad_out.dim(2) == OH && grad_out.dim(3) == OW,
           "conv2d_backward grad shape");

    Conv2dGrads<T> g{TensorT<T>(input.shape), TensorT<T>(weights.shape),
                     TensorT<T>(std::vector<int>{K})};
    const T* in = input.ptr();
    const T* wt = weights.ptr();
    const T* go = grad_out.ptr();
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < K; ++k) {
            const T* gplane = go + (static_cast<std::size_t>(b) * K + k) * OH * OW;
            T bacc = 0;
            for (int i = 0; i < OH * OW; ++i) bacc += gplane[i];
            g.bias.data[k] += bacc;
            for (int c = 0; c < C; ++c) {
                const T* iplane = in + (static_cast<std::size_t>(b) * C + c) * H * W;
                T* giplane = g.input.ptr() + (static_cast<std::size_t>(b) * C + c) * H * W;
                const T* kern = wt + (static_cast<std::size_t>(k) * C + c) * kh * kw;
                T* gkern = g.weights.ptr() + (static_cast<std::size_t>(k) * C + c) * kh * kw;
                for (int u = 0; u < kh; ++u) {
                    for (int v = 0; v < kw; ++v) {
                        const T wval = kern[u * kw + v];
                        T wacc = 0;
                        for (int oy = 0; oy < OH; ++oy) {
                            const T* src = iplane + (oy + u) * W + v;
                            T* gdst = giplane + (oy + u) * W + v;
                            const T* grow = gplane + static_cast<std::size_t>(oy) * OW;
                            T acc = 0;
#pragma omp simd reduction(+ : acc)
                            for (int ox = 0; ox < OW; ++ox) {
                                acc += grow[ox] * src[ox];
                                gdst[ox] += wval * grow[ox];
                            }
                            wacc += acc;
                        }
                        gkern[u * kw + v] += wacc;
                    }
                }
            }
        }
    }
    return g;
}

// ---- 2x2/stride-2 pooling ----

template <typename T>
TensorT<T> avgpool2d(const TensorT<T>& input) {
    expect(input.rank() == 4, "avgpool2d input must be [B,C,H,W]");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    expect(H % 2 == 0 && W % 2 == 0, "avgpool2d requires even H and W");
    TensorT<T> out({B, C, H / 2, W / 2});
    const T* in = input.ptr();
    T* o = out.ptr();
    const std::size_t planes = static_cast<std::size_t>(B) * C;
    for (std::size_t p = 0; p < planes; ++p) {
        const T* ip = in + p * H * W;
        T* op = o + p * (H / 2) * (W / 2);
        for (int y = 0; y < H / 2; ++y) {
            for (int x = 0; x < W / 2; ++x) {
                const T* q = ip + (2 * y) * W + 2 * x;
                op[y * (W / 2) + x] = (q[0] + q[1] + q[W] + q[W + 1]) * T(0.25);
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> avgpool2d_backward(const std::vector<int>& input_shape, const TensorT<T>& grad_out) {
    const int H = input_shape[2], W = input_shape[3];
    TensorT<T> g(input_shape);
    const T* go = grad_out.ptr();
    T* gi = g.ptr();
    const std::size_t planes = static_cast<std::size_t>(input_shape[0]) * input_shape[1];
    for (std::size_t p = 0; p < planes; ++p) {
        const T* gp = go + p * (H / 2) * (W / 2);
        T* ip = gi + p * H * W;
        for (int y = 0; y < H / 2; ++y) {
            for (int x = 0; x < W / 2; ++x) {
                const T v = gp[y * (W / 2) + x] * T(0.25);
                T* q = ip + (2 * y) * W + 2 * x;
                q[0] += v;
                q[1] += v;
                q[W] += v;
                q[W + 1] += v;
            }
        }
    }
    return g;
}

template <typename T>
struct MaxPoolResult {
    TensorT<T> out;
    std::vector<std::int32_t> argmax; // flat index into each input plane; first hit wins ties
};

template <typename T>
MaxPoolResult<T> maxpool2d(const TensorT<T>& input) {
    expect(input.rank() == 4, "maxpool2d input must be [B,C,H,W]");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    expect(H % 2 == 0 && W % 2 == 0, "maxpool2d requires even H and W");
    MaxPoolResult<T> r{TensorT<T>({B, C, H / 2, W / 2}), {}};
    r.argmax.resize(r.out.numel());
    const T* in = input.ptr();
    T* o = r.out.ptr();
    std::int32_t* am = r.argmax.data();
    const std::size_t planes = static_cast<std::size_t>(B) * C;
    for (std::size_t p = 0; p < planes; ++p) {
        const T* ip = in + p * H * W;
        for (int y = 0; y < H / 2; ++y) {
            for (int x = 0; x < W / 2; ++x) {
                // row-major scan; strict > keeps the first occurrence on ties
                std::int32_t best = (2 * y) * W + 2 * x;
                T bv = ip[best];
                const std::int32_t cand[3] = {(2 * y) * W + 2 * x + 1, (2 * y + 1) * W + 2 * x,
                                              (2 * y + 1) * W + 2 * x + 1};
                for (std::int32_t ci : cand) {
                    if (ip[ci] > bv) {
                        bv = ip[ci];
                        best = ci;
                    }
                }
                *o++ = bv;
                *am++ = best;
            }
        }
    }
    return r;
}

template <typename T>
TensorT<T> maxpool2d_backward(const std::vector<int>& input_shape,
                              const std::vector<std::int32_t>& argmax, const TensorT<T>& grad_out) {
    const int H = input_shape[2], W = input_shape[3];
    TensorT<T> g(input_shape);
    const std::size_t plane_out = static_cast<std::size_t>(H / 2) * (W / 2);
    const std::size_t planes = static_cast<std::size_t>(input_shape[0]) * input_shape[1];
    for (std::size_t p = 0; p < planes; ++p) {
        const T* gp = grad_out.ptr() + p * plane_out;
        T* ip = g.ptr() + p * H * W;
        for (std::size_t i = 0; i < plane_out; ++i) ip[argmax[p * plane_out + i]] += gp[i];
    }
    return g;
}

// ---- relu ----

template <typename T>
TensorT<T> relu(const TensorT<T>& input) {
    TensorT<T> out = input;
    for (T& v : out.data) v = std::max(v, T(0));
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
    expect(input.same_shape(grad_out), "relu_backward shape");
    TensorT<T> g(input.shape);
    for (std::size_t i = 0; i < g.numel(); ++i)
        g.data[i] = input.data[i] > T(0) ? grad_out.data[i] : T(0); // subgradient 0 at x=0
    return g;
}

// ---- dense: out = x.W + b ----

template <typename T>
TensorT<T> dense(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias) {
    expect(input.rank() == 2, "dense input must be [B,F] (flatten first)");
    const int B = input.dim(0), F = input.dim(1);
    expect(weights.rank() == 2 && weights.dim(0) == F, "dense weight shape");
    const int O = weights.dim(1);
    expect(bias.rank() == 1 && bias.dim(0) == O, "dense bias shape");
    TensorT<T> out({B, O});
    for (int b = 0; b < B; ++b) {
        T* orow = out.ptr() + static_cast<std::size_t>(b) * O;
        for (int oi = 0; oi < O; ++oi) orow[oi] = bias.data[oi];
        const T* irow = input.ptr() + static_cast<std::size_t>(b) * F;
        for (int f = 0; f < F; ++f) {
            const T x = irow[f];
            const T* wrow = weights.ptr() + static_cast<std::size_t>(f) * O;
            for (int oi = 0; oi < O; ++oi) orow[oi] += x * wrow[oi];
        }
    }
    return out;
}

template <typename T>
struct DenseGrads {
    TensorT<T> input;
    TensorT<T> weights;
    TensorT<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const TensorT<T>& grad_out) {
    const int B = input.dim(0), F = input.dim(1), O = weights.dim(1);
    expect(grad_out.rank() == 2 && grad_out.dim(0) == B && grad_out.dim(1) == O,
           "dense_backward grad shape");
    DenseGrads<T> g{TensorT<T>(input.shape), TensorT<T>(weights.shape), TensorT<T>({O})};
    for (int b = 0; b < B; ++b) {
        const T* grow = grad_out.ptr() + static_cast<std::size_t>(b) * O;
        const T* irow = input.ptr() + static_cast<std::size_t>(b) * F;
        T* girow = g.input.ptr() + static_cast<std::size_t>(b) * F;
        for (int oi = 0; oi < O; ++oi) g.bias.data[oi] += grow[oi];
        for (int f = 0; f < F; ++f) {
            const T* wrow = weights.ptr() + static_cast<std::size_t>(f) * O;
            T* gwrow = g.weights.ptr() + static_cast<std::size_t>(f) * O;
            const T x = irow[f];
            T acc = 0;
#pragma omp simd reduction(+ : acc)
            for (int oi = 0; oi < O; ++oi) {
                acc += grow[oi] * wrow[oi];
                gwrow[oi] += x * grow[oi];
            }
            girow[f] = acc;
        }
    }
    return g;
}

// ---- flatten [B,C,H,W] -> [B,C*H*W] ----

template <typename T>
TensorT<T> flatten(const TensorT<T>& input) {
    expect(input.rank() >= 2, "flatten needs a batched tensor");
    int rest = 1;
    for (std::size_t i = 1; i < input.rank(); ++i) rest *= input.dim(i);
    TensorT<T> out;
    out.shape = {input.dim(0), rest};
    out.data = input.data;
    return out;
}

template <typename T>
TensorT<T> reshape_like(const std::vector<int>& shape, const TensorT<T>& grad_out) {
    TensorT<T> g;
    g.shape = shape;
    g.data = grad_out.data;
    expect(g.data.size() == TensorT<T>::numel_of(shape), "reshape size mismatch");
    return g;
}

// ---- inverted dropout ----

template <typename T>
struct DropoutResult {
    TensorT<T> out;
    std::vector<T> mask; // per-element multiplier: 0 or 1/(1-rate); empty in eval mode
};

template <typename T>
DropoutResult<T> dropout(const TensorT<T>& input, double rate, bool train, Rng* rng) {
    if (rate < 0.0 || rate >= 1.0) throw InvalidRate("dropout rate must be in [0,1)");
    DropoutResult<T> r;
    if (!train || rate == 0.0) {
        r.out = input;
        return r;
    }
    const T scale = T(1.0 / (1.0 - rate));
    r.out = TensorT<T>(input.shape);
    r.mask.resize(input.numel());
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const T m = rng->uniform01() < rate ? T(0) : scale;
        r.mask[i] = m;
        r.out.data[i] = input.data[i] * m;
    }
    return r;
}

template <typename T>
TensorT<T> dropout_backward(const DropoutResult<T>& fwd, const TensorT<T>& grad_out) {
    if (fwd.mask.empty()) return grad_out; // identity pass-through
    TensorT<T> g(grad_out.shape);
    for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] = grad_out.data[i] * fwd.mask[i];
    return g;
}

// ---- softmax / cross-entropy ----

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
    expect(logits.rank() == 2, "softmax input must be [B,C]");
    const int B = logits.dim(0), C = logits.dim(1);
    TensorT<T> probs({B, C});
    for (int b = 0; b < B; ++b) {
        const T* row = logits.ptr() + static_cast<std::size_t>(b) * C;
        T* prow = probs.ptr() + static_cast<std::size_t>(b) * C;
        T mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T sum = 0;
        for (int c = 0; c < C; ++c) {
            prow[c] = std::exp(row[c] - mx);
            sum += prow[c];
        }
        for (int c = 0; c < C; ++c) prow[c] /= sum;
    }
    return probs;
}

template <typename T>
struct SoftmaxXentResult {
    T loss = 0; // mean over the batch
    TensorT<T> probs;
};

template <typename T>
SoftmaxXentResult<T> softmax_xent(const TensorT<T>& logits, const std::vector<int>& labels) {
    expect(logits.rank() == 2, "softmax_xent input must be [B,C]");
    const int B = logits.dim(0), C = logits.dim(1);
    expect(static_cast<int>(labels.size()) == B, "softmax_xent label count");
    for (int l : labels)
        if (l < 0 || l >= C) throw LabelOutOfRange("label " + std::to_string(l));
    SoftmaxXentResult<T> r;
    r.probs = softmax(logits);
    T loss = 0;
    for (int b = 0; b < B; ++b)
        loss -= std::log(r.probs.data[static_cast<std::size_t>(b) * C + labels[b]]);
    r.loss = loss / T(B);
    return r;
}

// dL/dlogits for the mean cross-entropy above
template <typename T>
TensorT<T> softmax_xent_backward(const TensorT<T>& probs, const std::vector<int>& labels) {
    const int B = probs.dim(0), C = probs.dim(1);
    TensorT<T> g(probs.shape);
    const T inv = T(1) / T(B);
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const std::size_t i = static_cast<std::size_t>(b) * C + c;
            g.data[i] = (probs.data[i] - (labels[b] == c ? T(1) : T(0))) * inv;
        }
    }
    return g;
}

// ---- spatial transformer pieces ----
//
// affine_grid: theta is a batch of 2x3 row-major matrices mapping normalized
// output coordinates (x,y,1) in [-1,1]^2 to normalized input coordinates.
// The grid stores (xs,ys) per output pixel, shape [B,OH,OW,2]. Normalized
// coordinates place -1 and +1 on the centers of the border pixels.

template <typename T>
TensorT<T> affine_grid(const TensorT<T>& theta, int out_h, int out_w) {
    expect(theta.rank() == 2 && theta.dim(1) == 6, "theta must be [B,6]");
    const int B = theta.dim(0);
    TensorT<T> grid({B, out_h, out_w, 2});
    for (int b = 0; b < B; ++b) {
        const T* t = theta.ptr() + static_cast<std::size_t>(b) * 6;
        T* g = grid.ptr() + static_cast<std::size_t>(b) * out_h * out_w * 2;
        for (int y = 0; y < out_h; ++y) {
            const T yn = out_h > 1 ? T(2 * y - (out_h - 1)) / T(out_h - 1) : T(0);
            for (int x = 0; x < out_w; ++x) {
                const T xn = out_w > 1 ? T(2 * x - (out_w - 1)) / T(out_w - 1) : T(0);
                *g++ = t[0] * xn + t[1] * yn + t[2];
                *g++ = t[3] * xn + t[4] * yn + t[5];
            }
        }
    }
    return grid;
}

template <typename T>
TensorT<T> affine_grid_backward(const std::vector<int>& grid_shape, const TensorT<T>& grad_grid) {
    const int B = grid_shape[0], OH = grid_shape[1], OW = grid_shape[2];
    TensorT<T> gt({B, 6});
    for (int b = 0; b < B; ++b) {
        const T* g = grad_grid.ptr() + static_cast<std::size_t>(b) * OH * OW * 2;
        T* t = gt.ptr() + static_cast<std::size_t>(b) * 6;
        for (int y = 0; y < OH; ++y) {
            const T yn = OH > 1 ? T(2 * y - (OH - 1)) / T(OH - 1) : T(0);
            for (int x = 0; x < OW; ++x) {
                const T xn = OW > 1 ? T(2 * x - (OW - 1)) / T(OW - 1) : T(0);
                const T gxs = *g++;
                const T gys = *g++;
                t[0] += gxs * xn;
                t[1] += gxs * yn;
                t[2] += gxs;
                t[3] += gys * xn;
                t[4] += gys * yn;
                t[5] += gys;
            }
        }
    }
    return gt;
}

// Bilinear sampling with zeros outside the border. Normalized coordinates are
// mapped to pixel space via px = (xs*(W-1) + (W-1))/2; values within 1e-6 px
// of the pixel lattice are snapped onto it, which absorbs the round-off of
// the normalized-coordinate round trip so an identity grid reproduces the
// input bit-for-bit.
namespace detail {
template <typename T>
inline T to_pixel(T coord, int size) {
    T p = (coord * T(size - 1) + T(size - 1)) * T(0.5);
    const T r = std::nearbyint(p);
    if (std::abs(p - r) < T(1e-6)) p = r;
    return p;
}
} // namespace detail

template <typename T>
TensorT<T> grid_sample(const TensorT<T>& input, const TensorT<T>& grid) {
    expect(input.rank() == 4, "grid_sample input must be [B,C,H,W]");
    expect(grid.rank() == 4 && grid.dim(3) == 2, "grid must be [B,OH,OW,2]");
    expect(grid.dim(0) == input.dim(0), "grid batch mismatch");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int OH = grid.dim(1), OW = grid.dim(2);
    TensorT<T> out({B, C, OH, OW});
    for (int b = 0; b < B; ++b) {
        const T* g = grid.ptr() + static_cast<std::size_t>(b) * OH * OW * 2;
        for (int i = 0; i < OH * OW; ++i) {
            const T px = detail::to_pixel(g[2 * i], W);
            const T py = detail::to_pixel(g[2 * i + 1], H);
            const int x0 = static_cast<int>(std::floor(px));
            const int y0 = static_cast<int>(std::floor(py));
            const T wx = px - T(x0);
            const T wy = py - T(y0);
            for (int c = 0; c < C; ++c) {
                const T* ip = input.ptr() + (static_cast<std::size_t>(b) * C + c) * H * W;
                T acc = 0;
                for (int dy = 0; dy < 2; ++dy) {
                    const int yy = y0 + dy;
                    if (yy < 0 || yy >= H) continue;
                    const T wyv = dy ? wy : T(1) - wy;
                    for (int dx = 0; dx < 2; ++dx) {
                        const int xx = x0 + dx;
                        if (xx < 0 || xx >= W) continue;
                        const T wxv = dx ? wx : T(1) - wx;
                        acc += wyv * wxv * ip[yy * W + xx];
                    }
                }
                out.data[((static_cast<std::size_t>(b) * C + c) * OH + i / OW) * OW + i % OW] = acc;
            }
        }
    }
    return out;
}

template <typename T>
struct GridSampleGrads {
    TensorT<T> input;
    TensorT<T> grid;
};

template <typename T>
GridSampleGrads<T> grid_sample_backward(const TensorT<T>& input, const TensorT<T>& grid,
                                        const TensorT<T>& grad_out) {
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int OH = grid.dim(1), OW = grid.dim(2);
    expect(grad_out.rank() == 4 && grad_out.dim(0) == B && grad_out.dim(1) == C &&
               grad_out.dim(2) == OH && grad_out.dim(3) == OW,
           "grid_sample_backward grad shape");
    GridSampleGrads<T> g{TensorT<T>(input.shape), TensorT<T>(grid.shape)};
    for (int b = 0; b < B; ++b) {
        const T* gr = grid.ptr() + static_cast<std::size_t>(b) * OH * OW * 2;
        T* gg = g.grid.ptr() + static_cast<std::size_t>(b) * OH * OW * 2;
        for (int i = 0; i < OH * OW; ++i) {
            const T px = detail::to_pixel(gr[2 * i], W);
            const T py = detail::to_pixel(gr[2 * i + 1], H);
            const int x0 = static_cast<int>(std::floor(px));
            const int y0 = static_cast<int>(std::floor(py));
            const T wx = px - T(x0);
            const T wy = py - T(y0);
            T dpx = 0, dpy = 0;
            for (int c = 0; c < C; ++c) {
                const std::size_t plane = (static_cast<std::size_t>(b) * C + c);
                const T* ip = input.ptr() + plane * H * W;
                T* gip = g.input.ptr() + plane * H * W;
                const T go = grad_out.data[(plane * OH + i / OW) * OW + i % OW];
                for (int dy = 0; dy < 2; ++dy) {
                    const int yy = y0 + dy;
                    if (yy < 0 || yy >= H) continue;
                    const T wyv = dy ? wy : T(1) - wy;
                    const T syv = dy ? T(1) : T(-1);
                    for (int dx = 0; dx < 2; ++dx) {
                        const int xx = x0 + dx;
                        if (xx < 0 || xx >= W) continue;
                        const T wxv = dx ? wx : T(1) - wx;
                        const T sxv = dx ? T(1) : T(-1);
                        const T val = ip[yy * W + xx];
                        gip[yy * W + xx] += go * wyv * wxv;
                        dpx += go * wyv * sxv * val;
                        dpy += go * syv * wxv * val;
                    }
                }
            }
            // chain through px = (xs*(W-1) + (W-1))/2
            gg[2 * i] += dpx * T(W - 1) * T(0.5);
            gg[2 * i + 1] += dpy * T(H - 1) * T(0.5);
        }
    }
    return g;
}

} // namespace dti::ops
