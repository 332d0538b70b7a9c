#pragma once

#include "fogdet/detect.hpp"
#include "fogdet/fog.hpp"
#include "fogdet/image.hpp"
#include "fogdet/rng.hpp"

#include <string>
#include <vector>

namespace fogdet {

struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    double& at(int ch, int y, int x) { return v[((size_t)ch * h + y) * w + x]; }
    double at(int ch, int y, int x) const { return v[((size_t)ch * h + y) * w + x]; }
    int size() const { return c * h * w; }
};

Tensor to_tensor(const Image& img);

enum class LayerKind { conv3x3, relu, maxpool2, detection_head };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
};

// Flat-parameter convnet. Layout: per layer in order, conv weights
// [out][in][ky][kx] then biases; the head holds a dense matrix [out][in]
// then biases. The head emits S*S*B rows of (4 raw box values, sigmoid
// objectness, softmax class row).
struct ToyNet {
    std::vector<LayerSpec> layers;
    int S = 0, B = 0, C = 0;
    int in_width = 0, in_height = 0;
    std::vector<double> params;
};

// Pinned 9-layer stack: conv3x3(3->8), relu, maxpool2, conv3x3(8->16),
// relu, maxpool2, conv3x3(16->16), relu, detection_head. Input dims must be
// divisible by 4. Parameters start at zero.
ToyNet make_toy_net(int in_w = 64, int in_h = 64, int S = 4, int B = 1, int C = 3);

int param_count(const ToyNet& net);
int layer_param_offset(const ToyNet& net, int layer);
int layer_param_count(const ToyNet& net, int layer);

// Uniform [-sqrt(6/fan_in), +sqrt(6/fan_in)] weights, zero biases.
void init_params(ToyNet& net, SplitMix64& rng);

// Post-nonlinearity activations per layer; the head entry is the packed
// output vector.
struct ActivationTrace {
    Tensor input;
    std::vector<Tensor> acts;
};

Prediction forward(const ToyNet& net, const Image& img, ActivationTrace* trace = nullptr);

// Per-layer gradients wrt traced activations; an empty entry means zero.
using ActGrads = std::vector<std::vector<double>>;

ActGrads zero_seeds(const ToyNet& net);

// Reverse pass over a retained trace: returns d(loss)/d(params) for the
// scalar whose activation gradients are given in seeds.
std::vector<double> backward(const ToyNet& net, const ActivationTrace& trace, const ActGrads& seeds);

// Packs a detection-loss gradient into a head-layer seed.
std::vector<double> head_seed(const ToyNet& net, const PredictionGrad& g);

// 1-based inclusive layer range for activation comparisons.
struct PercConfig {
    int start = 1;
    int end = 1;
};

// Sum over the configured layers of ||a_l - b_l||^2 / (max(1, end-start) *
// n_l) with n_l the activation count of layer l. grad_a, when given,
// receives d/d(a activations).
double activation_gap(const ActivationTrace& a, const ActivationTrace& b, const PercConfig& cfg,
                      ActGrads* grad_a = nullptr);

double perceptual_loss(const ToyNet& net, const Image& xa, const Image& xb, const PercConfig& cfg);

// Student runs on the fog rendering of x_clear, the frozen teacher on
// x_clear itself; both nets must share one architecture.
double ts_perceptual_loss(const ToyNet& student, const ToyNet& teacher, const Image& x_clear,
                          const DepthMap& depth, const FogParams& fog, const PercConfig& cfg);

// Checkpoint: magic "FGCKPT1\n", one JSON header line, then param_count
// little-endian f64.
void save_checkpoint(const std::string& path, const ToyNet& net);
ToyNet load_checkpoint(const std::string& path);

bool same_architecture(const ToyNet& a, const ToyNet& b);

} // namespace fogdet
