#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advknn/dataio.hpp"
#include "advknn/graph.hpp"
#include "advknn/tensor.hpp"

namespace advknn {

enum class LayerKind : std::uint8_t { Conv, Relu, MaxPool, Flatten, Affine };

struct LayerSpec {
    LayerKind kind;
    int units = 0;   // conv: output channels, affine: output width
    int kernel = 0;  // conv only
    bool capture = false; // activation capture point sits after this layer

    bool operator==(const LayerSpec&) const = default;
};

/// Architecture description. Capture points are numbered l = 1..L in layer
/// order; the last layer must produce the C logits.
struct NetworkConfig {
    std::string name;
    std::vector<LayerSpec> layers;
    int class_count = 10;
    std::size_t in_channels = 1, in_height = 28, in_width = 28;

    int capture_count() const;
    /// Layer index (0-based) of capture point l (1-based).
    int capture_layer(int l) const;
    void validate() const;
    std::string to_text() const;
    static NetworkConfig from_text(const std::string& text);

    bool operator==(const NetworkConfig&) const = default;
};

/// conv16/3 pool conv32/3 pool conv64/3, affine head; capture points after
/// each conv block and at the logits, so L = 4 and the last convolution
/// layer is capture point 3.
NetworkConfig base_config(int class_count = 10);

/// LeNet5-style transfer target: two conv blocks and three affine layers,
/// capture points after each block, the two hidden affines, and the logits.
NetworkConfig lenet5_config(int class_count = 10);

NetworkConfig config_by_name(const std::string& name);

struct OptimizerSettings {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int epochs = 10;
    int batch_size = 64;
};

struct TrainMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    double final_train_loss = 0.0;
    double final_accuracy = -1.0; // on the eval set passed to train_base, if any
};

template <class T>
struct ForwardResult {
    Tensor<T> logits;                  // [n, C]
    std::vector<Tensor<T>> activations; // per capture point, [n, d_l]
};

/// Loss attached to a capture point (or the logits) for input gradients.
struct LossHead {
    enum class Kind {
        CrossEntropyLogits, // softmax + cross-entropy on the logits
        SurrogateCrossEntropy, // softmax(W f + b) at a capture point, cross-entropy
        Constant, // ignores the input; gradient is identically zero
    };
    Kind kind = Kind::CrossEntropyLogits;
    int capture_point = 0; // 1-based, used by SurrogateCrossEntropy
    // surrogate parameters, row-major [d, C] and [C]
    std::vector<float> weight;
    std::vector<float> bias;
};

template <class T>
class TrainedNetwork {
public:
    TrainedNetwork() = default;
    TrainedNetwork(NetworkConfig config, std::uint64_t init_seed);

    const NetworkConfig& config() const { return config_; }
    const TrainMeta& meta() const { return meta_; }
    TrainMeta& meta() { return meta_; }

    std::vector<Tensor<T>>& params() { return params_; }
    const std::vector<Tensor<T>>& params() const { return params_; }

    /// Stable 64-bit digest of the architecture and parameter bytes; feature
    /// databases and surrogate heads record it to pin their source network.
    std::uint64_t fingerprint() const;

    /// Pure forward pass; activations are flattened per-sample vectors at
    /// each capture point.
    ForwardResult<T> forward_with_activations(const Tensor<T>& batch) const;

    Tensor<T> logits(const Tensor<T>& batch) const;
    std::vector<int> predict(const Tensor<T>& batch) const;
    /// predict() in parallel fixed-size chunks; use for large populations.
    std::vector<int> predict_chunked(const Tensor<T>& images, std::size_t batch_size = 256) const;
    double accuracy(const Dataset& data, std::size_t batch_size = 256) const;

    /// d loss / d input for the given head, same shape as x. `targets` holds
    /// one label per sample.
    Tensor<T> input_gradient(const LossHead& head, const Tensor<T>& x,
                             const std::vector<std::int32_t>& targets) const;

    /// Replays the network on an existing graph; returns capture ids
    /// (1-based index l-1) and the logits id.
    struct Trace {
        std::vector<typename Graph<T>::Id> captures;
        typename Graph<T>::Id logits;
        std::vector<typename Graph<T>::Id> param_ids;
    };
    Trace trace(Graph<T>& g, typename Graph<T>::Id input,
                bool params_require_grad = false) const;

    template <class U>
    TrainedNetwork<U> cast() const {
        TrainedNetwork<U> out;
        out.set_state(config_, meta_);
        for (const auto& p : params_) out.params().push_back(p.template cast<U>());
        return out;
    }

    void set_state(NetworkConfig config, TrainMeta meta) {
        config_ = std::move(config);
        meta_ = meta;
        config_.validate();
    }

private:
    NetworkConfig config_;
    std::vector<Tensor<T>> params_; // conv/affine weights and biases, layer order
    TrainMeta meta_;
};

using NetworkF = TrainedNetwork<float>;

/// Progress callback: (epoch, mean epoch loss).
using EpochHook = std::function<void(int, double)>;

/// Cross-entropy SGD training with momentum, deterministic under seed.
/// Throws TrainingError naming the epoch if the loss goes non-finite.
NetworkF train_base(const Dataset& train, const NetworkConfig& config,
                    const OptimizerSettings& opt, std::uint64_t seed,
                    const Dataset* eval_set = nullptr, const EpochHook& hook = {});

void save_checkpoint(const NetworkF& net, const std::string& path);
NetworkF load_checkpoint(const std::string& path);
/// Loads and additionally insists the checkpoint matches `expect`.
NetworkF load_checkpoint(const std::string& path, const NetworkConfig& expect);

extern template class TrainedNetwork<float>;
extern template class TrainedNetwork<double>;

} // namespace advknn
