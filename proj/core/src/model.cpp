#include "dti/model.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <memory>
#include <sstream>

static_assert(std::endian::native == std::endian::little);

namespace dti {

NetworkSpec build_study2_spec(int classes) {
    if (classes < 2) throw InvalidConfig("need at least 2 classes");
    NetworkSpec s;
    s.input_side = 60;
    s.input_channels = 1;
    s.classes = classes;
    s.layers = {
        LayerSpec::input(60, 1),  LayerSpec::avgpool(),      LayerSpec::conv(7, 12),
        LayerSpec::relu(),        LayerSpec::maxpool(),      LayerSpec::conv(5, 24),
        LayerSpec::relu(),        LayerSpec::maxpool(),      LayerSpec::flatten(),
        LayerSpec::dense(48),     LayerSpec::relu(),         LayerSpec::dense(classes),
        LayerSpec::dropout(0.3),  LayerSpec::softmax(),
    };
    shape_trace(s); // validate
    return s;
}

NetworkSpec build_study1_spec(int classes) {
    NetworkSpec s = build_study2_spec(classes);
    std::erase_if(s.layers, [](const LayerSpec& l) { return l.kind == LayerKind::dropout; });
    shape_trace(s);
    return s;
}

NetworkSpec attach_spatial_transformer(NetworkSpec spec) {
    if (spec.layers.empty() || spec.layers.front().kind != LayerKind::input)
        throw ShapeMismatch("spec must start with an input layer");
    if (spec.input_channels != 1) throw ShapeMismatch("spatial transformer expects 1 channel");
    for (const auto& l : spec.layers)
        if (l.kind == LayerKind::spatial_transformer)
            throw ShapeMismatch("spec already has a spatial transformer");
    spec.layers.insert(spec.layers.begin() + 1, LayerSpec::spatial_transformer());
    shape_trace(spec);
    return spec;
}

namespace {

// localization-net geometry for an SxS single-channel input
struct StDims {
    int pooled;  // S/2
    int conv;    // S/2 - 4 (5x5 valid)
    int halved;  // (S/2-4)/2
    int flat;    // 8 * halved^2
};

StDims st_dims(int side) {
    if (side % 2 != 0) throw ShapeMismatch("spatial transformer input side must be even");
    StDims d;
    d.pooled = side / 2;
    d.conv = d.pooled - 4;
    if (d.conv < 1) throw ShapeMismatch("input too small for the localization net");
    if (d.conv % 2 != 0) throw ShapeMismatch("localization maxpool needs an even input");
    d.halved = d.conv / 2;
    d.flat = 8 * d.halved * d.halved;
    return d;
}

} // namespace

std::vector<std::vector<int>> shape_trace(const NetworkSpec& spec) {
    if (spec.layers.empty() || spec.layers.front().kind != LayerKind::input)
        throw ShapeMismatch("spec must start with an input layer");
    if (spec.layers.back().kind != LayerKind::softmax)
        throw ShapeMismatch("spec must end with softmax");

    std::vector<std::vector<int>> trace;
    std::vector<int> cur = {spec.input_channels, spec.input_side, spec.input_side};
    trace.push_back(cur);
    for (std::size_t i = 1; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
        case LayerKind::input:
            throw ShapeMismatch("duplicate input layer");
        case LayerKind::spatial_transformer:
            if (cur.size() != 3 || cur[0] != 1 || cur[1] != cur[2])
                throw ShapeMismatch("spatial transformer needs a square 1-channel image");
            st_dims(cur[1]); // validates
            break;           // output shape = input shape
        case LayerKind::avgpool:
        case LayerKind::maxpool:
            if (cur.size() != 3) throw ShapeMismatch("pooling needs a [C,H,W] input");
            if (cur[1] % 2 != 0 || cur[2] % 2 != 0)
                throw ShapeMismatch("pooling needs even spatial dimensions");
            cur = {cur[0], cur[1] / 2, cur[2] / 2};
            break;
        case LayerKind::conv: {
            if (cur.size() != 3) throw ShapeMismatch("conv needs a [C,H,W] input");
            const int oh = cur[1] - l.kernel + 1, ow = cur[2] - l.kernel + 1;
            if (oh < 1 || ow < 1) throw ShapeMismatch("conv kernel larger than input");
            cur = {l.count, oh, ow};
            break;
        }
        case LayerKind::relu:
        case LayerKind::dropout:
            break;
        case LayerKind::flatten:
            if (cur.size() != 3) throw ShapeMismatch("flatten needs a [C,H,W] input");
            cur = {cur[0] * cur[1] * cur[2]};
            break;
        case LayerKind::dense: {
            const int f = cur.size() == 1 ? cur[0] : cur[0] * cur[1] * cur[2];
            if (f < 1) throw ShapeMismatch("dense input empty");
            cur = {l.count};
            break;
        }
        case LayerKind::softmax:
            if (i + 1 != spec.layers.size()) throw ShapeMismatch("softmax must be last");
            if (cur.size() != 1) throw ShapeMismatch("softmax needs a flat input");
            break;
        }
        trace.push_back(cur);
    }
    if (trace.back().size() != 1 || trace.back()[0] != spec.classes)
        throw ShapeMismatch("final output length " + std::to_string(trace.back()[0]) +
                            " does not match class count " + std::to_string(spec.classes));
    return trace;
}

std::vector<ParamSpec> parameter_specs(const NetworkSpec& spec) {
    const auto trace = shape_trace(spec);
    std::vector<ParamSpec> out;
    int conv_idx = 0, fc_idx = 0;
    for (std::size_t i = 1; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const std::vector<int>& in = trace[i - 1];
        switch (l.kind) {
        case LayerKind::conv: {
            ++conv_idx;
            const int c = in[0];
            const int fan = c * l.kernel * l.kernel;
            out.push_back({"conv" + std::to_string(conv_idx) + "_w",
                           {l.count, c, l.kernel, l.kernel}, fan, false});
            out.push_back({"conv" + std::to_string(conv_idx) + "_b", {l.count}, fan, false});
            break;
        }
        case LayerKind::dense: {
            ++fc_idx;
            const int f = in.size() == 1 ? in[0] : in[0] * in[1] * in[2];
            out.push_back({"fc" + std::to_string(fc_idx) + "_w", {f, l.count}, f, false});
            out.push_back({"fc" + std::to_string(fc_idx) + "_b", {l.count}, f, false});
            break;
        }
        case LayerKind::spatial_transformer: {
            const StDims d = st_dims(in[1]);
            out.push_back({"st_conv1_w", {8, 1, 5, 5}, 25, false});
            out.push_back({"st_conv1_b", {8}, 25, false});
            out.push_back({"st_fc1_w", {d.flat, 32}, d.flat, false});
            out.push_back({"st_fc1_b", {32}, d.flat, false});
            out.push_back({"st_fc2_w", {32, 6}, 32, true});
            out.push_back({"st_fc2_b", {6}, 32, true});
            break;
        }
        default:
            break;
        }
    }
    return out;
}

std::size_t parameter_count(const NetworkSpec& spec) {
    std::size_t n = 0;
    for (const auto& p : parameter_specs(spec)) n += Tensor::numel_of(p.shape);
    return n;
}

// ---- canonical text form ----

namespace {

std::string fmt_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

} // namespace

std::string spec_to_text(const NetworkSpec& spec) {
    std::string out;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
        case LayerKind::input:
            out += "input " + std::to_string(l.kernel) + " " + std::to_string(l.count);
            break;
        case LayerKind::avgpool: out += "avgpool 2"; break;
        case LayerKind::maxpool: out += "maxpool 2"; break;
        case LayerKind::conv:
            out += "conv " + std::to_string(l.kernel) + " " + std::to_string(l.count);
            break;
        case LayerKind::relu: out += "relu"; break;
        case LayerKind::flatten: out += "flatten"; break;
        case LayerKind::dense: out += "dense " + std::to_string(l.count); break;
        case LayerKind::dropout: out += "dropout " + fmt_double(l.rate); break;
        case LayerKind::softmax: out += "softmax"; break;
        case LayerKind::spatial_transformer: out += "spatial_transformer"; break;
        }
        out += "\n";
    }
    return out;
}

NetworkSpec spec_from_text(const std::string& text) {
    NetworkSpec spec;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "input") {
            int side = 0, ch = 0;
            ls >> side >> ch;
            spec.layers.push_back(LayerSpec::input(side, ch));
            spec.input_side = side;
            spec.input_channels = ch;
        } else if (kind == "avgpool") {
            spec.layers.push_back(LayerSpec::avgpool());
        } else if (kind == "maxpool") {
            spec.layers.push_back(LayerSpec::maxpool());
        } else if (kind == "conv") {
            int k = 0, n = 0;
            ls >> k >> n;
            spec.layers.push_back(LayerSpec::conv(k, n));
        } else if (kind == "relu") {
            spec.layers.push_back(LayerSpec::relu());
        } else if (kind == "flatten") {
            spec.layers.push_back(LayerSpec::flatten());
        } else if (kind == "dense") {
            int n = 0;
            ls >> n;
            spec.layers.push_back(LayerSpec::dense(n));
            spec.classes = n; // last dense wins
        } else if (kind == "dropout") {
            double r = 0;
            ls >> r;
            spec.layers.push_back(LayerSpec::dropout(r));
        } else if (kind == "softmax") {
            spec.layers.push_back(LayerSpec::softmax());
        } else if (kind == "spatial_transformer") {
            spec.layers.push_back(LayerSpec::spatial_transformer());
        } else {
            throw CorruptFile("unknown layer kind '" + kind + "'");
        }
        if (ls.fail()) throw CorruptFile("malformed layer line '" + line + "'");
    }
    shape_trace(spec); // validates, throws on nonsense
    return spec;
}

// ---- init ----

Model init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
    Model m;
    m.spec = spec;
    m.meta.seed = seed;
    const auto specs = parameter_specs(spec);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const ParamSpec& p = specs[i];
        Tensor t(p.shape);
        if (p.identity_init) {
            if (p.shape.size() == 1) { // theta bias: identity transform
                t.data = {1.f, 0.f, 0.f, 0.f, 1.f, 0.f};
            } // weights stay zero
        } else if (p.shape.size() > 1) {
            Rng rng(derive_seed(seed, i));
            const double bound = std::sqrt(6.0 / p.fan_in);
            for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
        } // biases stay zero
        m.param_names.push_back(p.name);
        m.params.push_back(std::move(t));
    }
    return m;
}

// ---- executor ----

template <typename T>
NetExec<T>::NetExec(NetworkSpec spec) : spec_(std::move(spec)) {
    shape_trace(spec_);
    caches_.resize(spec_.layers.size());
}

template <typename T>
TensorT<T> NetExec<T>::forward(const TensorT<T>& input, const std::vector<TensorT<T>>& params,
                               Mode mode, Rng* dropout_rng) {
    ops::expect(input.rank() == 4 && input.dim(1) == spec_.input_channels &&
                    input.dim(2) == spec_.input_side && input.dim(3) == spec_.input_side,
                "batch does not match the network input");
    TensorT<T> x = input;
    std::size_t pi = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        Cache& cc = caches_[i];
        const LayerSpec& l = spec_.layers[i];
        switch (l.kind) {
        case LayerKind::input:
            // callers hand in [0,1] pixels; remap to [-1,1] so the common DC
            // component does not couple every downstream gradient
            for (T& v : x.data) v = T(2) * v - T(1);
            break;
        case LayerKind::avgpool:
            cc.in = std::move(x);
            x = ops::avgpool2d(cc.in);
            break;
        case LayerKind::maxpool:
            cc.in = std::move(x);
            cc.pool = ops::maxpool2d(cc.in);
            x = cc.pool.out;
            break;
        case LayerKind::conv:
            cc.in = std::move(x);
            x = ops::conv2d(cc.in, params[pi], params[pi + 1]);
            pi += 2;
            break;
        case LayerKind::relu:
            cc.in = std::move(x);
            x = ops::relu(cc.in);
            break;
        case LayerKind::flatten:
            cc.in.shape = x.shape;
            x = ops::flatten(x);
            break;
        case LayerKind::dense:
            if (x.rank() > 2) x = ops::flatten(x);
            cc.in = std::move(x);
            x = ops::dense(cc.in, params[pi], params[pi + 1]);
            pi += 2;
            break;
        case LayerKind::dropout:
            if (mode == Mode::train && dropout_rng == nullptr)
                throw InvalidConfig("dropout in train mode needs an rng");
            cc.drop = ops::dropout(std::move(x), l.rate, mode == Mode::train, dropout_rng);
            x = cc.drop.out;
            break;
        case LayerKind::softmax:
            break; // logits are the forward output
        case LayerKind::spatial_transformer: {
            cc.in = std::move(x);
            cc.st_a0 = ops::avgpool2d(cc.in);
            cc.st_c1 = ops::conv2d(cc.st_a0, params[pi], params[pi + 1]);
            cc.st_r1 = ops::relu(cc.st_c1);
            cc.st_pool = ops::maxpool2d(cc.st_r1);
            cc.st_flat = ops::flatten(cc.st_pool.out);
            cc.st_d1 = ops::dense(cc.st_flat, params[pi + 2], params[pi + 3]);
            cc.st_r2 = ops::relu(cc.st_d1);
            cc.st_theta = ops::dense(cc.st_r2, params[pi + 4], params[pi + 5]);
            cc.st_grid = ops::affine_grid(cc.st_theta, cc.in.dim(2), cc.in.dim(3));
            x = ops::grid_sample(cc.in, cc.st_grid);
            pi += 6;
            break;
        }
        }
    }
    return x;
}

template <typename T>
TensorT<T> NetExec<T>::probs(const TensorT<T>& input, const std::vector<TensorT<T>>& params,
                             Mode mode, Rng* dropout_rng) {
    return ops::softmax(forward(input, params, mode, dropout_rng));
}

template <typename T>
T NetExec<T>::forward_backward(const TensorT<T>& input, const std::vector<int>& labels,
                               const std::vector<TensorT<T>>& params,
                               std::vector<TensorT<T>>& grads, Mode mode, Rng* dropout_rng) {
    TensorT<T> logits = forward(input, params, mode, dropout_rng);
    auto xent = ops::softmax_xent(logits, labels);
    if (!std::isfinite(static_cast<double>(xent.loss)))
        throw InvalidConfig("non-finite training loss");

    // parameter offset per layer
    std::vector<std::size_t> offsets(spec_.layers.size(), 0);
    std::size_t pi = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        offsets[i] = pi;
        if (spec_.layers[i].kind == LayerKind::conv || spec_.layers[i].kind == LayerKind::dense)
            pi += 2;
        else if (spec_.layers[i].kind == LayerKind::spatial_transformer)
            pi += 6;
    }

    auto accumulate = [](TensorT<T>& dst, const TensorT<T>& src) {
        for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
    };

    TensorT<T> g = ops::softmax_xent_backward(xent.probs, labels);
    for (std::size_t ri = spec_.layers.size(); ri-- > 0;) {
        Cache& cc = caches_[ri];
        const LayerSpec& l = spec_.layers[ri];
        const std::size_t po = offsets[ri];
        switch (l.kind) {
        case LayerKind::input:
        case LayerKind::softmax:
            break;
        case LayerKind::avgpool:
            g = ops::avgpool2d_backward(cc.in.shape, g);
            break;
        case LayerKind::maxpool:
            g = ops::maxpool2d_backward(cc.in.shape, cc.pool.argmax, g);
            break;
        case LayerKind::conv: {
            auto cg = ops::conv2d_backward(cc.in, params[po], g);
            accumulate(grads[po], cg.weights);
            accumulate(grads[po + 1], cg.bias);
            g = std::move(cg.input);
            break;
        }
        case LayerKind::relu:
            g = ops::relu_backward(cc.in, g);
            break;
        case LayerKind::flatten:
            g = ops::reshape_like(cc.in.shape, g);
            break;
        case LayerKind::dense: {
            auto dg = ops::dense_backward(cc.in, params[po], g);
            accumulate(grads[po], dg.weights);
            accumulate(grads[po + 1], dg.bias);
            g = std::move(dg.input);
            break;
        }
        case LayerKind::dropout:
            g = ops::dropout_backward(cc.drop, g);
            break;
        case LayerKind::spatial_transformer: {
            auto gs = ops::grid_sample_backward(cc.in, cc.st_grid, g);
            TensorT<T> gtheta = ops::affine_grid_backward(cc.st_grid.shape, gs.grid);
            auto d2 = ops::dense_backward(cc.st_r2, params[po + 4], gtheta);
            accumulate(grads[po + 4], d2.weights);
            accumulate(grads[po + 5], d2.bias);
            TensorT<T> gl = ops::relu_backward(cc.st_d1, d2.input);
            auto d1 = ops::dense_backward(cc.st_flat, params[po + 2], gl);
            accumulate(grads[po + 2], d1.weights);
            accumulate(grads[po + 3], d1.bias);
            gl = ops::reshape_like(cc.st_pool.out.shape, d1.input);
            gl = ops::maxpool2d_backward(cc.st_r1.shape, cc.st_pool.argmax, gl);
            gl = ops::relu_backward(cc.st_c1, gl);
            auto c1 = ops::conv2d_backward(cc.st_a0, params[po], gl);
            accumulate(grads[po], c1.weights);
            accumulate(grads[po + 1], c1.bias);
            TensorT<T> gx = ops::avgpool2d_backward(cc.in.shape, c1.input);
            accumulate(gx, gs.input);
            g = std::move(gx);
            break;
        }
        }
    }
    return xent.loss;
}

template class NetExec<float>;
template class NetExec<double>;

Tensor forward(const Model& model, const Tensor& batch, Mode mode, Rng* dropout_rng) {
    NetExec<float> exec(model.spec);
    return exec.probs(batch, model.params, mode, dropout_rng);
}

// ---- DTIM io ----

namespace {

constexpr char kDtimMagic[4] = {'D', 'T', 'I', 'M'};
constexpr std::uint16_t kDtimVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n) throw IoError("short write to " + path);
}

void get(std::FILE* f, void* p, std::size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n) throw CorruptFile("truncated file " + path);
}

void put_u32(std::FILE* f, std::uint32_t v, const std::string& path) { put(f, &v, 4, path); }

std::uint32_t get_u32(std::FILE* f, const std::string& path) {
    std::uint32_t v = 0;
    get(f, &v, 4, path);
    return v;
}

void put_str(std::FILE* f, const std::string& s, const std::string& path) {
    put_u32(f, static_cast<std::uint32_t>(s.size()), path);
    put(f, s.data(), s.size(), path);
}

std::string get_str(std::FILE* f, const std::string& path) {
    const std::uint32_t n = get_u32(f, path);
    if (n > (1u << 24)) throw CorruptFile("unreasonable string length in " + path);
    std::string s(n, '\0');
    get(f, s.data(), n, path);
    return s;
}

std::string meta_to_text(const TrainingMeta& m) {
    std::string out;
    out += "seed=" + std::to_string(m.seed) + "\n";
    out += "epochs=" + std::to_string(m.epochs) + "\n";
    out += "learning_rate=" + fmt_double(m.learning_rate) + "\n";
    out += "batch_size=" + std::to_string(m.batch_size) + "\n";
    out += "momentum=" + fmt_double(m.momentum) + "\n";
    out += "conditions=";
    for (std::size_t i = 0; i < m.conditions.size(); ++i) {
        if (i) out += ",";
        out += m.conditions[i];
    }
    out += "\n";
    return out;
}

TrainingMeta meta_from_text(const std::string& text) {
    TrainingMeta m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "seed") m.seed = std::stoull(val);
        else if (key == "epochs") m.epochs = std::stoi(val);
        else if (key == "learning_rate") m.learning_rate = std::stod(val);
        else if (key == "batch_size") m.batch_size = std::stoi(val);
        else if (key == "momentum") m.momentum = std::stod(val);
        else if (key == "conditions" && !val.empty()) {
            std::istringstream cs(val);
            std::string tag;
            while (std::getline(cs, tag, ',')) m.conditions.push_back(tag);
        }
    }
    return m;
}

} // namespace

void save_model(const Model& model, const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path + " for writing");
    put(f.get(), kDtimMagic, 4, path);
    put(f.get(), &kDtimVersion, 2, path);
    put_str(f.get(), spec_to_text(model.spec), path);
    put_u32(f.get(), static_cast<std::uint32_t>(model.class_labels.size()), path);
    for (const auto& label : model.class_labels) put_str(f.get(), label, path);
    put_str(f.get(), meta_to_text(model.meta), path);
    put_u32(f.get(), static_cast<std::uint32_t>(model.params.size()), path);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        put_str(f.get(), model.param_names[i], path);
        const Tensor& t = model.params[i];
        put_u32(f.get(), static_cast<std::uint32_t>(t.rank()), path);
        for (int d : t.shape) put_u32(f.get(), static_cast<std::uint32_t>(d), path);
        put(f.get(), t.data.data(), t.data.size() * sizeof(float), path);
    }
}

Model load_model(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);
    char magic[4];
    get(f.get(), magic, 4, path);
    if (std::memcmp(magic, kDtimMagic, 4) != 0) throw CorruptFile("bad magic in " + path);
    std::uint16_t ver = 0;
    get(f.get(), &ver, 2, path);
    if (ver != kDtimVersion) throw CorruptFile("unsupported version in " + path);

    Model m;
    m.spec = spec_from_text(get_str(f.get(), path));
    const std::uint32_t nlabels = get_u32(f.get(), path);
    if (nlabels > (1u << 20)) throw CorruptFile("unreasonable label count in " + path);
    for (std::uint32_t i = 0; i < nlabels; ++i) m.class_labels.push_back(get_str(f.get(), path));
    m.meta = meta_from_text(get_str(f.get(), path));

    const auto expected = parameter_specs(m.spec);
    const std::uint32_t nparams = get_u32(f.get(), path);
    if (nparams != expected.size()) throw CorruptFile("parameter count mismatch in " + path);
    for (std::uint32_t i = 0; i < nparams; ++i) {
        const std::string name = get_str(f.get(), path);
        const std::uint32_t rank = get_u32(f.get(), path);
        if (rank > 8) throw CorruptFile("unreasonable tensor rank in " + path);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(get_u32(f.get(), path));
        if (name != expected[i].name || shape != expected[i].shape)
            throw CorruptFile("parameter " + name + " does not match the spec in " + path);
        Tensor t(shape);
        get(f.get(), t.data.data(), t.data.size() * sizeof(float), path);
        m.param_names.push_back(name);
        m.params.push_back(std::move(t));
    }
    if (!m.class_labels.empty() &&
        static_cast<int>(m.class_labels.size()) != m.spec.classes)
        throw CorruptFile("label count does not match class count in " + path);
    return m;
}

} // namespace dti
