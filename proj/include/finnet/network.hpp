#ifndef FINNET_NETWORK_HPP
#define FINNET_NETWORK_HPP

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "finnet/adam.hpp"
#include "finnet/ops.hpp"
#include "finnet/tensor.hpp"

namespace finnet {

enum class LayerKind {
    Conv,
    BatchNorm,
    SeBlock,
    Relu,
    LeakyRelu,
    MaxPool,
    Dense,
    Dropout,
    Softmax,
    Flatten,
    ResidualAdd,
    GridOutput,  // marks the running feature map as a detection grid output
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind;
    int filters = 0;      // conv
    int kernel = 0;       // conv
    int stride = 1;       // conv
    Padding pad = Padding::Valid;
    int units = 0;        // dense
    double rate = 0.0;    // dropout
    double slope = 0.1;   // leaky_relu
    int ratio = 0;        // se_block reduction ratio
    int skip = 0;         // residual_add: operand is the output `skip+1` layers back
    int from = 0;         // input taken `from` layers further back than usual (branching)
};

struct NetworkSpec {
    int in_channels = 3, in_height = 0, in_width = 0;
    int class_count = 0;
    int se_ratio = 16;
    int batch_size = 16;
    bool se_residual = false;
    std::vector<LayerSpec> layers;

    std::string serialize() const;
    static NetworkSpec parse(const std::string& text);

    /// Propagates shapes through every layer; throws on any incompatibility.
    /// Returned shapes are per-layer outputs for batch size 1.
    std::vector<Shape> validate() const;
};

struct NamedBuffer {
    std::string name;
    Shape shape;
    std::vector<float>* data;
    bool trainable;
};

/// Executable network built from a NetworkSpec. Holds all parameters and
/// batch-norm running statistics.
class Network {
  public:
    Network(NetworkSpec spec, std::uint64_t seed);

    Tensor forward(Tensor x, bool train, std::mt19937_64* rng = nullptr);
    /// Forward returning every grid_output-marked map (or the final output
    /// when the spec marks none).
    std::vector<Tensor> forward_grids(Tensor x, bool train, std::mt19937_64* rng = nullptr);

    std::vector<NamedParam<float>> trainable_params();
    std::vector<NamedBuffer> buffers();
    std::int64_t parameter_count();
    /// Rebuilds batch-norm `initialized` state from the persisted flag buffers.
    void sync_batchnorm_flags();

    const NetworkSpec& spec() const { return spec_; }

  private:
    struct LayerState {
        Tensor w, b;            // conv / dense
        Tensor gamma, beta;     // batchnorm
        BatchNormState<float> bn;
        std::vector<float> bn_init_flag;  // size 1, persisted with the checkpoint
        Tensor se_rw, se_rb, se_ew, se_eb;
    };
    NetworkSpec spec_;
    std::vector<Shape> shapes_;  // per-layer output shapes at batch 1
    std::vector<LayerState> state_;

    Tensor run_layer(size_t i, const std::vector<Tensor>& outs, Tensor x, bool train,
                     std::mt19937_64* rng);
};

// ---------------------------------------------------------------------------
// builders

/// The five-block SE classifier at 200x200x3 input; with_se=false drops the
/// recalibration stage from every block.
NetworkSpec build_cnn_senet(int class_count, int se_ratio = 16, bool with_se = true);

enum class DetectorPreset { Darknet53, Tiny };

/// Detection backbone. `anchors_per_grid` sizes the head convolution
/// (channels = anchors * (5 + 1) for the single fish class).
NetworkSpec build_detector_backbone(DetectorPreset preset, int input_size = 0,
                                    int anchors_per_grid = 3);

struct Checkpoint;  // datasets-io

/// Head surgery: same network with the final dense layer re-sized to
/// `new_class_count`, every other parameter copied bit-exactly.
std::unique_ptr<Network> replace_head(const Checkpoint& ckpt, int new_class_count,
                                      std::uint64_t reinit_seed);

std::unique_ptr<Network> network_from_checkpoint(const Checkpoint& ckpt);

}  // namespace finnet

#endif
