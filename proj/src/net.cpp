#include "tleap/net.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace tleap::nn {

void ModelConfig::validate() const {
    if (mode == Mode::Static && seq_len != 1)
        throw std::invalid_argument("static mode requires T=1");
    if (mode == Mode::Temporal && seq_len != 2 && seq_len != 4)
        throw std::invalid_argument("temporal mode requires T in {2,4}");
    if (input_channels <= 0 || num_keypoints <= 0 || base_channels <= 0)
        throw std::invalid_argument("channel counts must be positive");
    const int pools = depth == Depth::Deeper ? 3 : 2;
    const int divisor = 1 << pools;
    if (input_height <= 0 || input_width <= 0 || input_height % divisor ||
        input_width % divisor)
        throw std::invalid_argument("input size must be divisible by " +
                                    std::to_string(divisor) +
                                    " (pooling halvings must be exact)");
}

std::string ModelConfig::canonical_json() const {
    json j{{"mode", mode == Mode::Static ? "static" : "temporal"},
           {"depth", depth == Depth::Original ? "original" : "deeper"},
           {"seq_len", seq_len},
           {"input_channels", input_channels},
           {"num_keypoints", num_keypoints},
           {"input_height", input_height},
           {"input_width", input_width},
           {"base_channels", base_channels}};
    return j.dump();  // nlohmann::json orders keys, so this is canonical
}

uint64_t ModelConfig::hash() const { return fnv1a(canonical_json()); }

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "static")
        c.mode = Mode::Static;
    else if (mode == "temporal")
        c.mode = Mode::Temporal;
    else
        throw std::invalid_argument("unknown mode: " + mode);
    const std::string depth = j.at("depth").get<std::string>();
    if (depth == "original")
        c.depth = Depth::Original;
    else if (depth == "deeper")
        c.depth = Depth::Deeper;
    else
        throw std::invalid_argument("unknown depth: " + depth);
    c.seq_len = j.at("seq_len").get<int>();
    c.input_channels = j.value("input_channels", 3);
    c.num_keypoints = j.value("num_keypoints", 17);
    c.input_height = j.value("input_height", 200);
    c.input_width = j.value("input_width", 200);
    c.base_channels = j.value("base_channels", 64);
    c.validate();
    return c;
}

namespace {

struct GraphBuilder {
    const ModelConfig& cfg;
    LayerGraph graph;
    int extent;  // current temporal extent

    bool temporal() const { return cfg.mode == Mode::Temporal; }
    int conv_kt() const { return temporal() ? 3 : 1; }
    int conv_pt() const { return temporal() ? 1 : 0; }

    void conv(const std::string& name, int cin, int cout) {
        LayerSpec s;
        s.op = OpKind::Conv;
        s.name = name;
        s.in_channels = cin;
        s.out_channels = cout;
        s.kt = conv_kt();
        s.kh = s.kw = 3;
        s.pt = conv_pt();
        s.ph = s.pw = 1;
        s.activation = Activation::ReLU;
        s.batch_norm = true;
        s.in_extent = s.out_extent = extent;
        graph.push_back(s);
    }

    void pool(const std::string& name) {
        LayerSpec s;
        s.op = OpKind::MaxPool;
        s.name = name;
        s.kt = std::min(2, extent);
        s.kh = s.kw = 2;
        s.st = s.kt;
        s.sh = s.sw = 2;
        s.in_extent = extent;
        extent /= s.kt;
        s.out_extent = extent;
        graph.push_back(s);
    }

    void tconv(const std::string& name, int cin, int cout, Activation act,
               bool softmax) {
        LayerSpec s;
        s.op = OpKind::ConvTranspose;
        s.name = name;
        s.in_channels = cin;
        s.out_channels = cout;
        s.kt = conv_kt();
        s.kh = s.kw = 3;
        s.st = 1;
        s.sh = s.sw = 2;
        s.pt = conv_pt();
        s.ph = s.pw = 1;
        s.oph = s.opw = 1;
        s.activation = act;
        s.softmax = softmax;
        s.in_extent = s.out_extent = extent;
        graph.push_back(s);
    }
};

}  // namespace

LayerGraph build(const ModelConfig& config) {
    config.validate();
    GraphBuilder b{config, {}, config.seq_len};

    const int base = config.base_channels;
    const int enc_groups = config.depth == Depth::Deeper ? 4 : 3;
    int cin = config.input_channels;
    for (int g = 0; g < enc_groups; ++g) {
        const int cout = base << g;  // 64, 128, 256(, 512) for base 64
        const std::string gname = "enc" + std::to_string(g + 1);
        for (int l = 0; l < 3; ++l) {
            b.conv(gname + ".conv" + std::to_string(l + 1), cin, cout);
            cin = cout;
        }
        if (g + 1 < enc_groups) b.pool(gname + ".pool");
    }

    const int dec_groups = config.depth == Depth::Deeper ? 2 : 1;
    for (int g = 0; g < dec_groups; ++g) {
        const int cout = cin / 2;
        const std::string gname = "dec" + std::to_string(g + 1);
        b.tconv(gname + ".up", cin, cout, Activation::ReLU, false);
        cin = cout;
        for (int l = 0; l < 2; ++l)
            b.conv(gname + ".conv" + std::to_string(l + 1), cin, cin);
    }
    b.tconv("head.up", cin, config.num_keypoints, Activation::Linear, true);
    return b.graph;
}

int64_t parameter_count(const LayerGraph& graph) {
    int64_t n = 0;
    for (const LayerSpec& s : graph) {
        if (s.op == OpKind::MaxPool) continue;
        n += int64_t(s.in_channels) * s.out_channels * s.kt * s.kh * s.kw;  // weight
        n += s.out_channels;                                                // bias
        if (s.batch_norm) n += 2 * int64_t(s.out_channels);                 // gamma, beta
    }
    return n;
}

template <typename S>
Network<S>::Network(ModelConfig config, const LayerGraph& graph)
    : config_(std::move(config)), graph_(graph) {
    for (const LayerSpec& s : graph_) {
        switch (s.op) {
            case OpKind::Conv:
                layers_.push_back(std::make_unique<Conv3d<S>>(
                    s.name, s.in_channels, s.out_channels, s.kt, s.kh, s.kw, s.pt,
                    s.ph, s.pw));
                break;
            case OpKind::MaxPool:
                layers_.push_back(std::make_unique<MaxPool3d<S>>(s.kt, s.kh, s.kw));
                break;
            case OpKind::ConvTranspose:
                layers_.push_back(std::make_unique<ConvTranspose3d<S>>(
                    s.name, s.in_channels, s.out_channels, s.kt, s.pt));
                break;
        }
        const bool fuse_relu = s.batch_norm && s.activation == Activation::ReLU;
        if (s.batch_norm)
            layers_.push_back(std::make_unique<BatchNorm<S>>(s.name, s.out_channels,
                                                             0.1, 1e-5, fuse_relu));
        if (s.activation == Activation::ReLU && !fuse_relu)
            layers_.push_back(std::make_unique<ReLU<S>>());
        if (s.softmax) layers_.push_back(std::make_unique<SpatialSoftmax<S>>());
    }
}

template <typename S>
void Network<S>::init_weights(uint64_t seed) {
    size_t layer_idx = 0;
    for (auto& layer : layers_) {
        ++layer_idx;
        auto ps = layer->params();
        if (ps.empty()) continue;
        if (std::string(layer->kind()) == "batch_norm") continue;  // keep 1/0 init
        // weight tensor is first, bias second
        ParamTensor<S>* w = ps[0];
        ParamTensor<S>* bias = ps[1];
        int64_t fan_in = 1;
        for (size_t d = 1; d < w->value.rank(); ++d) fan_in *= w->value.dim(d);
        if (std::string(layer->kind()) == "conv_transpose") {
            // weight is [cin, cout, k...]: receptive fan-in is cin * k volume
            fan_in = w->value.dim(0);
            for (size_t d = 2; d < w->value.rank(); ++d) fan_in *= w->value.dim(d);
        }
        const double bound = 1.0 / std::sqrt(double(fan_in));
        Rng rng(mix_seed(seed, layer_idx));
        for (int64_t i = 0; i < w->value.numel(); ++i)
            w->value[size_t(i)] = S(rng.uniform(-bound, bound));
        for (int64_t i = 0; i < bias->value.numel(); ++i)
            bias->value[size_t(i)] = S(rng.uniform(-bound, bound));
    }
}

template <typename S>
Tensor<S> Network<S>::forward(const Tensor<S>& x, bool train) {
    if (x.rank() != 5)
        throw std::invalid_argument("Network::forward expects [B,C,T,H,W], got " +
                                    x.shape_str());
    if (x.dim(1) != config_.input_channels || x.dim(2) != config_.seq_len ||
        x.dim(3) != config_.input_height || x.dim(4) != config_.input_width)
        throw std::invalid_argument("Network::forward: input shape " + x.shape_str() +
                                    " does not match the model config");
    out_shapes_.clear();
    if (train) {
        acts_.clear();
        acts_.push_back(x);
        for (auto& layer : layers_) {
            acts_.push_back(layer->forward(acts_.back(), true));
            out_shapes_.push_back(acts_.back().shape());
        }
        output_ = acts_.back();
        have_cache_ = true;
        return output_;
    }
    Tensor<S> cur = x;
    for (auto& layer : layers_) {
        cur = layer->forward(cur, false);
        out_shapes_.push_back(cur.shape());
    }
    have_cache_ = false;
    return cur;
}

template <typename S>
Tensor<S> Network<S>::backward(const Tensor<S>& grad_out) {
    if (!have_cache_)
        throw std::logic_error("Network::backward without a training forward pass");
    Tensor<S> g = grad_out;
    for (size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(acts_[i], g);
    return g;
}

template <typename S>
void Network<S>::zero_grads() {
    for (auto* p : params()) p->grad.zero();
}

template <typename S>
std::vector<ParamTensor<S>*> Network<S>::params() {
    std::vector<ParamTensor<S>*> out;
    for (auto& layer : layers_)
        for (auto* p : layer->params()) out.push_back(p);
    return out;
}

template <typename S>
std::vector<ParamTensor<S>*> Network<S>::trainable_params() {
    std::vector<ParamTensor<S>*> out;
    for (auto* p : params())
        if (p->trainable) out.push_back(p);
    return out;
}

template <typename S>
std::vector<size_t> Network<S>::pool_layer_indices() const {
    // Indices into the runtime layer sequence (and thus last_output_shapes()).
    // Must mirror the materialization above (BN+ReLU fuse into one layer).
    std::vector<size_t> out;
    size_t runtime_idx = 0;
    for (const LayerSpec& s : graph_) {
        if (s.op == OpKind::MaxPool) out.push_back(runtime_idx);
        ++runtime_idx;
        if (s.batch_norm) ++runtime_idx;
        if (s.activation == Activation::ReLU && !s.batch_norm) ++runtime_idx;
        if (s.softmax) ++runtime_idx;
    }
    return out;
}

template class Network<float>;
template class Network<double>;

namespace {

constexpr char kMagic[4] = {'T', 'L', 'P', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, Network<float>& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    const std::string cfg = net.config().canonical_json();
    write_pod(out, uint64_t(cfg.size()));
    out.write(cfg.data(), std::streamsize(cfg.size()));
    write_pod(out, net.config().hash());
    auto ps = net.params();
    write_pod(out, uint32_t(ps.size()));
    for (auto* p : ps) {
        write_pod(out, uint32_t(p->name.size()));
        out.write(p->name.data(), std::streamsize(p->name.size()));
        write_pod(out, uint32_t(p->value.rank()));
        for (size_t d = 0; d < p->value.rank(); ++d)
            write_pod(out, uint64_t(p->value.dim(d)));
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  std::streamsize(sizeof(float) * size_t(p->value.numel())));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed on " + path);
}

namespace {

ModelConfig read_header(std::ifstream& in, const std::string& path, uint64_t* hash) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (read_pod<uint32_t>(in) != kVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    const auto len = read_pod<uint64_t>(in);
    std::string cfg(len, '\0');
    in.read(cfg.data(), std::streamsize(len));
    *hash = read_pod<uint64_t>(in);
    return ModelConfig::from_json_text(cfg);
}

}  // namespace

ModelConfig peek_checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    uint64_t hash = 0;
    return read_header(in, path, &hash);
}

Network<float> load_checkpoint(const std::string& path, const ModelConfig& requesting) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    uint64_t stored_hash = 0;
    const ModelConfig stored = read_header(in, path, &stored_hash);
    if (stored_hash != stored.hash())
        throw std::runtime_error("checkpoint: corrupt config hash in " + path);
    if (stored_hash != requesting.hash())
        throw std::runtime_error(
            "checkpoint: config hash mismatch (requesting config differs from " +
            path + ")");

    Network<float> net(stored, build(stored));
    auto ps = net.params();
    const auto n = read_pod<uint32_t>(in);
    if (n != ps.size())
        throw std::runtime_error("checkpoint: tensor count mismatch in " + path);
    for (auto* p : ps) {
        const auto name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (name != p->name)
            throw std::runtime_error("checkpoint: tensor order mismatch: expected " +
                                     p->name + ", found " + name);
        const auto rank = read_pod<uint32_t>(in);
        if (rank != p->value.rank())
            throw std::runtime_error("checkpoint: rank mismatch for " + name);
        for (size_t d = 0; d < rank; ++d)
            if (int64_t(read_pod<uint64_t>(in)) != p->value.dim(d))
                throw std::runtime_error("checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(p->value.data()),
                std::streamsize(sizeof(float) * size_t(p->value.numel())));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
    }
    return net;
}

}  // namespace tleap::nn
