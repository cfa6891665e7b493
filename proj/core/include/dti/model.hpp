#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dti/ops.hpp"
#include "dti/rng.hpp"
#include "dti/tensor.hpp"

namespace dti {

enum class LayerKind {
    input,
    avgpool,
    conv,
    relu,
    maxpool,
    flatten,
    dense,
    dropout,
    softmax,
    spatial_transformer,
};

struct LayerSpec {
    LayerKind kind;
    int kernel = 0;    // conv kernel side (pooling windows are fixed 2x2)
    int count = 0;     // conv kernel count / dense output units / input side+channels
    double rate = 0.0; // dropout keep-out probability

    static LayerSpec input(int side, int channels = 1) { return {LayerKind::input, side, channels, 0}; }
    static LayerSpec avgpool() { return {LayerKind::avgpool, 2, 0, 0}; }
    static LayerSpec conv(int kernel, int count) { return {LayerKind::conv, kernel, count, 0}; }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0}; }
    static LayerSpec maxpool() { return {LayerKind::maxpool, 2, 0, 0}; }
    static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0}; }
    static LayerSpec dense(int units) { return {LayerKind::dense, 0, units, 0}; }
    static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, 0, rate}; }
    static LayerSpec softmax() { return {LayerKind::softmax, 0, 0, 0}; }
    static LayerSpec spatial_transformer() { return {LayerKind::spatial_transformer, 0, 0, 0}; }
};

struct NetworkSpec {
    std::vector<LayerSpec> layers; // layers[0] is the input layer
    int input_side = 0;
    int input_channels = 1;
    int classes = 0;
};

// The 13-layer stack used for the outdoor study:
// input 60x60x1, avgpool2x2, conv7x7x12, relu, maxpool2x2, conv5x5x24, relu,
// maxpool2x2, [flatten], dense(48), relu, dense(classes), dropout(0.3), softmax.
NetworkSpec build_study2_spec(int classes = 17);

// Indoor-study variant: same stack without the dropout layer.
NetworkSpec build_study1_spec(int classes = 15);

// Prepends a spatial-transformer block: a localization net
// (avgpool2x2, conv5x5x8, relu, maxpool2x2, flatten, dense(32), relu,
// dense(6)) predicting an affine theta, followed by affine_grid +
// grid_sample back to the input size. The final localization layer is
// initialized to the identity transform (zero weights, identity bias).
NetworkSpec attach_spatial_transformer(NetworkSpec spec);

// Output shape after each layer ([C,H,W] or [F]); throws ShapeMismatch if the
// trace does not close (odd pooling input, non-positive conv output, etc.).
std::vector<std::vector<int>> shape_trace(const NetworkSpec& spec);

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    int fan_in = 0;
    bool identity_init = false; // ST final layer: zero weights / identity bias
};

std::vector<ParamSpec> parameter_specs(const NetworkSpec& spec);
std::size_t parameter_count(const NetworkSpec& spec);

// Canonical text form used inside model files; parse is the exact inverse.
std::string spec_to_text(const NetworkSpec& spec);
NetworkSpec spec_from_text(const std::string& text);

struct TrainingMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    double learning_rate = 0.0;
    int batch_size = 0;
    double momentum = 0.0;
    std::vector<std::string> conditions; // condition tags seen during training
};

struct Model {
    NetworkSpec spec;
    std::vector<std::string> param_names;
    std::vector<Tensor> params;
    std::vector<std::string> class_labels;
    TrainingMeta meta;
};

// He-style scaled-uniform init (bound sqrt(6/fan_in)), zero biases, identity
// ST head; deterministic per seed.
Model init_parameters(const NetworkSpec& spec, std::uint64_t seed);

enum class Mode { train, eval };

// Single-graph executor: owns per-layer caches so backward can reuse the
// forward activations. One instance per thread; Tensors in and out are values.
template <typename T>
class NetExec {
public:
    explicit NetExec(NetworkSpec spec);

    // Runs all layers except the final softmax; returns logits.
    TensorT<T> forward(const TensorT<T>& input, const std::vector<TensorT<T>>& params, Mode mode,
                       Rng* dropout_rng = nullptr);

    // forward + mean cross-entropy + full backward; accumulates dL/dparam
    // into `grads` (same shapes as params). Returns the batch loss.
    T forward_backward(const TensorT<T>& input, const std::vector<int>& labels,
                       const std::vector<TensorT<T>>& params, std::vector<TensorT<T>>& grads,
                       Mode mode, Rng* dropout_rng = nullptr);

    // forward + softmax rows.
    TensorT<T> probs(const TensorT<T>& input, const std::vector<TensorT<T>>& params, Mode mode,
                     Rng* dropout_rng = nullptr);

    const NetworkSpec& spec() const { return spec_; }

private:
    struct Cache {
        TensorT<T> in;
        ops::MaxPoolResult<T> pool;
        ops::DropoutResult<T> drop;
        // spatial transformer intermediates
        TensorT<T> st_a0, st_c1, st_r1, st_flat, st_d1, st_r2, st_theta, st_grid;
        ops::MaxPoolResult<T> st_pool;
    };

    NetworkSpec spec_;
    std::vector<Cache> caches_;
};

extern template class NetExec<float>;
extern template class NetExec<double>;

// Convenience single-shot eval-style forward; batch is [B,C,side,side] with
// values already normalized to [0,1]. Returns probability rows.
Tensor forward(const Model& model, const Tensor& batch, Mode mode, Rng* dropout_rng = nullptr);

// ---- DTIM model files ----
// Little-endian: magic "DTIM", version u16 = 1, canonical spec text
// (u32 length + bytes), labels (u32 count, then u32 length + bytes each),
// training meta text (u32 length + bytes), parameters (u32 count, then per
// parameter: u32 name length + bytes, u32 rank, u32 dims..., f32 data).
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

} // namespace dti
