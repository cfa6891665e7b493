#include "dti/gradcheck.hpp"

#include <cmath>

#include "dti/model.hpp"
#include "dti/ops.hpp"
#include "dti/rng.hpp"

namespace dti {

GradCheckReport grad_check(const std::function<double()>& eval,
                           const std::vector<GradCheckInput>& inputs, double epsilon,
                           double tolerance) {
    GradCheckReport rep;
    rep.tolerance = tolerance;
    for (const auto& gi : inputs) {
        TensorD& t = *gi.tensor;
        const double eps = gi.epsilon > 0.0 ? gi.epsilon : epsilon;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data[i];
            const double h = eps * std::max(1.0, std::abs(orig));
            t.data[i] = orig + h;
            const double lp = eval();
            t.data[i] = orig - h;
            const double lm = eval();
            t.data[i] = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = gi.analytic->data[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
            const double err = std::abs(analytic - numeric) / denom;
            if (err > rep.max_rel_error) {
                rep.max_rel_error = err;
                rep.worst_input = gi.name;
                rep.worst_index = i;
            }
        }
    }
    rep.pass = rep.max_rel_error <= tolerance;
    return rep;
}

namespace {

TensorD rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorD t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

double dot_loss(const TensorD& out, const TensorD& coef) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out.data[i] * coef.data[i];
    return s;
}

double check_conv2d(Rng& rng) {
    TensorD in = rand_tensor({2, 3, 8, 8}, rng);
    TensorD w = rand_tensor({4, 3, 3, 3}, rng);
    TensorD b = rand_tensor({4}, rng);
    const TensorD coef = rand_tensor({2, 4, 6, 6}, rng);
    auto grads = ops::conv2d_backward(in, w, coef);
    auto eval = [&] { return dot_loss(ops::conv2d(in, w, b), coef); };
    // bias gradient equals the per-kernel coefficient sum; checked with the rest
    auto rep = grad_check(eval,
                          {{"input", &in, &grads.input},
                           {"weights", &w, &grads.weights},
                           {"bias", &b, &grads.bias}});
    return rep.max_rel_error;
}

double check_avgpool(Rng& rng) {
    TensorD in = rand_tensor({2, 3, 6, 6}, rng);
    const TensorD coef = rand_tensor({2, 3, 3, 3}, rng);
    TensorD analytic = ops::avgpool2d_backward(in.shape, coef);
    auto eval = [&] { return dot_loss(ops::avgpool2d(in), coef); };
    return grad_check(eval, {{"input", &in, &analytic}}).max_rel_error;
}

double check_maxpool(Rng& rng) {
    TensorD in = rand_tensor({2, 2, 6, 6}, rng);
    // keep each window's top-2 gap well clear of the perturbation step so the
    // argmax never flips (ties are non-differentiable points)
    const int H = 6, W = 6;
    for (int p = 0; p < 4; ++p) {
        double* plane = in.ptr() + p * H * W;
        for (int y = 0; y < H / 2; ++y) {
            for (int x = 0; x < W / 2; ++x) {
                double* q0 = plane + 2 * y * W + 2 * x;
                double* cells[4] = {q0, q0 + 1, q0 + W, q0 + W + 1};
                int best = 0;
                for (int i = 1; i < 4; ++i)
                    if (*cells[i] > *cells[best]) best = i;
                double second = -1e30;
                for (int i = 0; i < 4; ++i)
                    if (i != best) second = std::max(second, *cells[i]);
                if (*cells[best] - second < 0.05) *cells[best] += 0.1;
            }
        }
    }
    const TensorD coef = rand_tensor({2, 2, 3, 3}, rng);
    auto fwd = ops::maxpool2d(in);
    TensorD analytic = ops::maxpool2d_backward(in.shape, fwd.argmax, coef);
    auto eval = [&] { return dot_loss(ops::maxpool2d(in).out, coef); };
    return grad_check(eval, {{"input", &in, &analytic}}).max_rel_error;
}

double check_dense(Rng& rng) {
    TensorD in = rand_tensor({3, 10}, rng);
    TensorD w = rand_tensor({10, 7}, rng);
    TensorD b = rand_tensor({7}, rng);
    const TensorD coef = rand_tensor({3, 7}, rng);
    auto grads = ops::dense_backward(in, w, coef);
    auto eval = [&] { return dot_loss(ops::dense(in, w, b), coef); };
    auto rep = grad_check(eval, {{"input", &in, &grads.input},
                                 {"weights", &w, &grads.weights},
                                 {"bias", &b, &grads.bias}});
    return rep.max_rel_error;
}

double check_relu(Rng& rng) {
    TensorD in({2, 40});
    for (auto& v : in.data) {
        do {
            v = rng.uniform(-1.0, 1.0);
        } while (std::abs(v) < 0.05); // keep clear of the kink at 0
    }
    const TensorD coef = rand_tensor({2, 40}, rng);
    TensorD analytic = ops::relu_backward(in, coef);
    auto eval = [&] { return dot_loss(ops::relu(in), coef); };
    return grad_check(eval, {{"input", &in, &analytic}}).max_rel_error;
}

double check_softmax_xent(Rng& rng) {
    TensorD logits = rand_tensor({4, 9}, rng, -2.0, 2.0);
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng.below(9));
    auto fwd = ops::softmax_xent(logits, labels);
    TensorD analytic = ops::softmax_xent_backward(fwd.probs, labels);
    auto eval = [&] { return static_cast<double>(ops::softmax_xent(logits, labels).loss); };
    return grad_check(eval, {{"logits", &logits, &analytic}}, 1e-5).max_rel_error;
}

double check_affine_grid(Rng& rng) {
    TensorD theta = rand_tensor({2, 6}, rng);
    const int OH = 5, OW = 7;
    const TensorD coef = rand_tensor({2, OH, OW, 2}, rng);
    TensorD analytic = ops::affine_grid_backward({2, OH, OW, 2}, coef);
    auto eval = [&] { return dot_loss(ops::affine_grid(theta, OH, OW), coef); };
    return grad_check(eval, {{"theta", &theta, &analytic}}).max_rel_error;
}

// normalized coordinate whose pixel-space image is `cell + frac`
double norm_coord(double px, int size) { return (2.0 * px - (size - 1)) / (size - 1); }

double check_grid_sample(Rng& rng) {
    const int H = 7, W = 7, OH = 4, OW = 4;
    TensorD in = rand_tensor({2, 2, H, W}, rng);
    TensorD grid({2, OH, OW, 2});
    for (std::size_t i = 0; i < grid.numel() / 2; ++i) {
        // interior points with fractional parts clear of cell boundaries,
        // plus the occasional fully-outside point (constant-zero region)
        const bool outside = rng.uniform01() < 0.1;
        double px, py;
        if (outside) {
            px = -3.0 - rng.uniform01();
            py = rng.uniform(0.0, H - 1.0);
        } else {
            px = static_cast<double>(rng.below(W - 1)) + rng.uniform(0.1, 0.9);
            py = static_cast<double>(rng.below(H - 1)) + rng.uniform(0.1, 0.9);
        }
        grid.data[2 * i] = norm_coord(px, W);
        grid.data[2 * i + 1] = norm_coord(py, H);
    }
    const TensorD coef = rand_tensor({2, 2, OH, OW}, rng);
    auto grads = ops::grid_sample_backward(in, grid, coef);
    auto eval = [&] { return dot_loss(ops::grid_sample(in, grid), coef); };
    auto rep = grad_check(eval, {{"input", &in, &grads.input}, {"grid", &grid, &grads.grid}}, 1e-5);
    return rep.max_rel_error;
}

// End-to-end spatial-transformer block: localization net -> affine grid ->
// bilinear sampler -> classifier head, checked through the same executor the
// trainer uses. The head is pinned to identity-plus-half-pixel translation
// with tiny random weights: gradients flow through every localization
// parameter while all sampling points provably stay mid-cell (the affine
// drift over the lattice is bounded by ~0.1 px against a 0.35 px offset).
// Kinks elsewhere (localization relu zeros, pooling near-ties) are excluded
// by margin checks with a re-draw.
double check_st_block(Rng& rng) {
    NetworkSpec spec;
    spec.input_side = 16;
    spec.input_channels = 1;
    spec.classes = 4;
    spec.layers = {LayerSpec::input(16, 1), LayerSpec::flatten(), LayerSpec::dense(4),
                   LayerSpec::softmax()};
    spec = attach_spatial_transformer(spec);

    const int B = 2;
    for (int attempt = 0; attempt < 500; ++attempt) {
        Model m = init_parameters(spec, rng.next_u64());
        std::vector<TensorD> params;
        for (auto& p : m.params) params.push_back(p.cast<double>());
        std::size_t fc2w = 0, fc2b = 0;
        for (std::size_t i = 0; i < m.param_names.size(); ++i) {
            if (m.param_names[i] == "st_fc2_w") fc2w = i;
            if (m.param_names[i] == "st_fc2_b") fc2b = i;
        }
        for (auto& v : params[fc2w].data) v = rng.uniform(-1e-4, 1e-4);
        const double tx = rng.uniform(0.045, 0.09); // 0.34..0.68 px of translation
        const double ty = rng.uniform(0.045, 0.09);
        params[fc2b].data = {1.0 + rng.uniform(-3e-3, 3e-3), rng.uniform(-3e-3, 3e-3), tx,
                             rng.uniform(-3e-3, 3e-3), 1.0 + rng.uniform(-3e-3, 3e-3), ty};

        TensorD input = rand_tensor({B, 1, 16, 16}, rng, 0.0, 1.0);
        std::vector<int> labels = {static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4))};

        // margin checks at the base point: localization relu inputs away
        // from 0, pooling gaps clear, every grid coordinate mid-cell. The
        // chain below must mirror the executor, including its input remap.
        TensorD remapped = input;
        for (double& v : remapped.data) v = 2.0 * v - 1.0;
        TensorD a0 = ops::avgpool2d(remapped);
        TensorD c1 = ops::conv2d(a0, params[0], params[1]);
        bool safe = true;
        for (double v : c1.data)
            if (std::abs(v) < 1e-4) safe = false;
        TensorD r1 = ops::relu(c1);
        auto pool = ops::maxpool2d(r1);
        {
            const int h = r1.dim(2), w = r1.dim(3);
            const std::size_t planes = r1.numel() / (static_cast<std::size_t>(h) * w);
            for (std::size_t p = 0; p < planes && safe; ++p) {
                const double* plane = r1.ptr() + p * h * w;
                for (int y = 0; y + 1 < h; y += 2)
                    for (int x = 0; x + 1 < w; x += 2) {
                        double best = -1e30, second = -1e30;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const double v = plane[(y + dy) * w + x + dx];
                                if (v > best) {
                                    second = best;
                                    best = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                        if (best > 0 && best - second < 1e-3) safe = false;
                    }
            }
        }
        TensorD d1 = ops::dense(ops::flatten(pool.out), params[2], params[3]);
        for (double v : d1.data)
            if (std::abs(v) < 1e-4) safe = false;
        TensorD theta = ops::dense(ops::relu(d1), params[fc2w], params[fc2b]);
        TensorD grid = ops::affine_grid(theta, 16, 16);
        for (std::size_t i = 0; i < grid.numel() && safe; ++i) {
            const double p = (grid.data[i] * 15.0 + 15.0) * 0.5;
            const double frac = p - std::floor(p);
            if (frac < 0.1 || frac > 0.9) safe = false;
        }
        if (!safe) continue;

        NetExec<double> exec(spec);
        std::vector<TensorD> grads;
        for (const auto& p : params) grads.emplace_back(p.shape);
        exec.forward_backward(input, labels, params, grads, Mode::eval);

        // The head parameters see real curvature (the affine scale sweeps the
        // whole lattice), so they get a small step. Every other localization
        // parameter reaches the loss through the 1e-4 head weights, which
        // cubes away its curvature but leaves tiny gradients: a large step
        // keeps those clear of the double-precision difference noise.
        std::vector<GradCheckInput> checks;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const bool head = i == fc2w || i == fc2b;
            checks.push_back({m.param_names[i], &params[i], &grads[i], head ? 3e-6 : 1e-4});
        }
        auto eval = [&] {
            NetExec<double> e(spec);
            auto xent = ops::softmax_xent(e.forward(input, params, Mode::eval), labels);
            return static_cast<double>(xent.loss);
        };
        return grad_check(eval, checks).max_rel_error;
    }
    throw InvalidConfig("could not build a boundary-safe spatial-transformer instance");
}

} // namespace

namespace {
std::uint64_t fnv1a(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ull;
    return h;
}
} // namespace

std::vector<OpGradReport> gradient_suite(int instances, double tolerance, std::uint64_t seed) {
    struct Entry {
        const char* name;
        double (*fn)(Rng&);
    };
    const Entry entries[] = {
        {"conv2d", check_conv2d},       {"avgpool2d", check_avgpool},
        {"maxpool2d", check_maxpool},   {"dense", check_dense},
        {"relu", check_relu},           {"softmax_xent", check_softmax_xent},
        {"affine_grid", check_affine_grid}, {"grid_sample", check_grid_sample},
        {"st_block", check_st_block},
    };
    std::vector<OpGradReport> out;
    for (const auto& e : entries) {
        OpGradReport rep;
        rep.op = e.name;
        rep.instances = instances;
        Rng rng(derive_seed(seed, fnv1a(e.name)));
        for (int i = 0; i < instances; ++i) rep.max_rel_error = std::max(rep.max_rel_error, e.fn(rng));
        rep.pass = rep.max_rel_error <= tolerance;
        out.push_back(rep);
    }
    return out;
}

} // namespace dti
