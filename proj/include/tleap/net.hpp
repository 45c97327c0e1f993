#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tleap/layers.hpp"

namespace tleap::nn {

enum class Mode { Static, Temporal };
enum class Depth { Original, Deeper };

/// Architecture selector for the four model variants.
struct ModelConfig {
    Mode mode = Mode::Static;
    Depth depth = Depth::Deeper;
    int seq_len = 1;  // T: 1 for static, 2 or 4 for temporal
    int input_channels = 3;
    int num_keypoints = 17;
    int input_height = 200;
    int input_width = 200;
    int base_channels = 64;

    /// Throws std::invalid_argument on mode/T/size violations.
    void validate() const;

    /// Canonical JSON (sorted keys); its FNV-1a hash identifies the
    /// architecture in checkpoints.
    std::string canonical_json() const;
    uint64_t hash() const;

    static ModelConfig from_json_text(const std::string& text);
};

enum class OpKind { Conv, MaxPool, ConvTranspose };
enum class Activation { None, ReLU, Linear };

/// One layer specification: operation, channels, kernel/stride/padding,
/// activation, and whether batch normalization / a final spatial softmax
/// follow the operation.
struct LayerSpec {
    OpKind op = OpKind::Conv;
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kt = 1, kh = 1, kw = 1;
    int st = 1, sh = 1, sw = 1;
    int pt = 0, ph = 0, pw = 0;
    int opt = 0, oph = 0, opw = 0;
    Activation activation = Activation::None;
    bool batch_norm = false;
    bool softmax = false;
    // Expected temporal extents, tracked at build time for instrumentation.
    int in_extent = 1;
    int out_extent = 1;
};

using LayerGraph = std::vector<LayerSpec>;

/// Realizes the architecture for a validated config: encoder groups of
/// three convolutions with pooling between groups (4 groups when deeper,
/// 3 for the original depth), a decoder of transposed-convolution +
/// two-convolution groups (2 when deeper, 1 original), and a final
/// transposed convolution with linear activation and per-map softmax.
/// Temporal mode swaps every operation for its 3-D counterpart.
LayerGraph build(const ModelConfig& config);

/// Exact number of trainable scalars in a graph (conv/transposed-conv
/// weights and biases plus batch-norm scale and shift).
int64_t parameter_count(const LayerGraph& graph);

/// Runtime network materialized from a LayerGraph.
template <typename S>
class Network {
public:
    Network(ModelConfig config, const LayerGraph& graph);

    /// Initializes weights with fan-in-scaled uniform draws from the seed.
    void init_weights(uint64_t seed);

    /// x is [B, C, T, H, W] (T = 1 for static inputs). Training mode keeps
    /// intermediate activations for backward(); evaluation mode does not.
    /// Output is [B, num_keypoints, 1, H, W] with softmax-normalized maps.
    Tensor<S> forward(const Tensor<S>& x, bool train);

    /// Backpropagates the loss gradient through the cached activations,
    /// accumulating parameter gradients. Returns grad wrt the input.
    Tensor<S> backward(const Tensor<S>& grad_out);

    void zero_grads();

    std::vector<ParamTensor<S>*> params();
    std::vector<ParamTensor<S>*> trainable_params();

    const ModelConfig& config() const { return config_; }
    const LayerGraph& graph() const { return graph_; }

    /// Per-layer output shapes of the most recent forward pass.
    const std::vector<std::vector<int64_t>>& last_output_shapes() const {
        return out_shapes_;
    }
    /// Indices into the graph of the pooling layers, in order.
    std::vector<size_t> pool_layer_indices() const;

private:
    ModelConfig config_;
    LayerGraph graph_;
    std::vector<std::unique_ptr<Layer<S>>> layers_;
    std::vector<Tensor<S>> acts_;  // acts_[i] = input of layer i
    Tensor<S> output_;
    std::vector<std::vector<int64_t>> out_shapes_;
    bool have_cache_ = false;
};

extern template class Network<float>;
extern template class Network<double>;

/// Serializes config JSON + named float32 weight tensors into a single
/// checkpoint file.
void save_checkpoint(const std::string& path, Network<float>& net);

/// Loads a checkpoint into a freshly materialized network. Refuses files
/// whose stored config hash differs from the requesting config's hash.
Network<float> load_checkpoint(const std::string& path, const ModelConfig& requesting);

/// Reads only the embedded ModelConfig of a checkpoint.
ModelConfig peek_checkpoint_config(const std::string& path);

}  // namespace tleap::nn
