#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "psep/common.hpp"
#include "psep/dataset.hpp"
#include "psep/phase_features.hpp"
#include "psep/stft.hpp"

namespace psep::nn {

enum class LayerKind { dense, relu, bias, scale };

struct Layer {
    LayerKind kind;
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;  // dense: in*out weights; scale: per-dim factors
    std::vector<double> b;  // dense/bias: per-dim offsets
    std::vector<double> gw, gb;

    Matrix cached_input;  // forward state consumed by backward

    static Layer dense(std::size_t in, std::size_t out);
    static Layer relu(std::size_t dim);
    static Layer bias(std::size_t dim);
    static Layer scale(std::size_t dim);
};

Matrix layer_forward(Layer& layer, const Matrix& x);
// Returns dX; accumulates gw/gb. `need_input_grad` may be false for the
// first layer of a chain.
Matrix layer_backward(Layer& layer, const Matrix& dy, bool need_input_grad = true);

enum class InputKind { amp_only, phase_only, concat, branches };
enum class ArchTag { phase_only, amp_only, joint, naive_concat };

struct Network {
    InputKind input_kind = InputKind::amp_only;
    // branches feed a concat followed by the trunk; empty for chain nets
    std::vector<Layer> amp_branch;
    std::vector<Layer> phase_branch;
    std::vector<Layer> trunk;
    std::size_t amp_input_dim = 0;
    std::size_t phase_input_dim = 0;
    std::size_t output_dim = 0;

    std::size_t parameter_count() const;
    std::vector<Layer*> all_layers();
};

// Forward for a batch; pass whichever inputs the network consumes.
Matrix forward(Network& net, const Matrix* amp, const Matrix* phase);
struct InputGrads {
    std::optional<Matrix> amp;
    std::optional<Matrix> phase;
};
// Accumulates parameter gradients; input gradients returned for testing.
InputGrads backward(Network& net, const Matrix& d_output, bool need_input_grads = false);
void zero_gradients(Network& net);

// Architecture builders (hidden width 500 in the production profile).
Network build_phase_net(std::size_t bins, std::size_t channels, std::size_t context,
                        std::size_t feature_count, const DatasetStats& stats,
                        const std::string& instrument, std::uint64_t seed,
                        std::size_t hidden = 500);
Network build_amp_net(std::size_t bins, std::size_t channels, std::size_t context,
                      const DatasetStats& stats, const std::string& instrument,
                      std::uint64_t seed, std::size_t hidden = 500);
Network build_joint_net(std::size_t bins, std::size_t channels, std::size_t context,
                        std::size_t feature_count, const DatasetStats& stats,
                        const std::string& instrument, std::uint64_t seed,
                        std::size_t hidden = 500);
// Diagnostic: single chain fed with [amplitude || phase] concatenated.
Network build_naive_concat_net(std::size_t bins, std::size_t channels, std::size_t context,
                               std::size_t feature_count, const DatasetStats& stats,
                               const std::string& instrument, std::uint64_t seed,
                               std::size_t hidden = 500);

// mean |input weight| over phase columns / over amplitude columns
double naive_concat_weight_ratio(const Network& net);

// Copy a trained amplitude-only network into the amplitude path of a joint
// network and zero the head's phase half, so the joint net starts out
// computing exactly the same function as the amplitude network.
void seed_joint_from_amp(Network& joint, const Network& amp_net);

enum class Optimizer { sgd, adam };

struct TrainConfig {
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 128;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    std::size_t patience = 10;

    void validate() const;
};

struct TrainResult {
    std::vector<double> train_mse;  // per epoch
    std::vector<double> val_mse;    // per epoch; empty if no validation split
};

struct TrainData {
    const Matrix* amp = nullptr;
    const Matrix* phase = nullptr;
    const Matrix* targets = nullptr;
};

TrainResult train(Network& net, const TrainData& data, const TrainConfig& cfg);

struct ModelBundle {
    std::map<std::string, Network> networks;  // per instrument
    DatasetStats stats;
    StftConfig stft_config;
    PhaseFeatureConfig phase_config;
    ArchTag tag = ArchTag::amp_only;
    std::size_t context = 5;
    std::map<std::string, TrainResult> curves;
};

std::string arch_tag_name(ArchTag tag);
ArchTag arch_tag_from_name(const std::string& name);

void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);

void write_loss_curve_csv(const std::string& path, const TrainResult& result);

}  // namespace psep::nn
