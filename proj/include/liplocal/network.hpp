#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "liplocal/tensor.hpp"

namespace liplocal {

enum class Activation : std::uint8_t { none = 0, relu, relu_theta, maxmin, clipped_maxmin };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// ReLU clipped above at a learnable threshold. Flat at 0 for z <= 0 and at
// theta for z >= theta.
inline double relu_theta(double z, double theta) {
    if (z <= 0.0) return 0.0;
    if (z >= theta) return theta;
    return z;
}

// Pairwise sort with learnable clip: (min(max(x1,x2), a), max(min(x1,x2), b)).
inline std::pair<double, double> clipped_maxmin(double x1, double x2, double a, double b) {
    const double hi = x1 >= x2 ? x1 : x2;
    const double lo = x1 >= x2 ? x2 : x1;
    return {hi > a ? a : hi, lo < b ? b : lo};
}

struct LayerSpec {
    enum class Kind : std::uint8_t { linear = 0, conv = 1 };

    Kind kind = Kind::linear;
    std::size_t out_features = 0;                                       // linear
    std::size_t out_channels = 0, kernel_size = 0, stride = 1, padding = 0;  // conv

    Tensor weight;  // linear: [out, in]; conv: [O, C, k, k]
    Tensor bias;    // [out] / [O]

    Activation activation = Activation::none;
    Tensor theta;    // relu_theta: one entry per output element, > 0
    Tensor clip_hi;  // clipped_maxmin upper thresholds a, one per pair slot
    Tensor clip_lo;  // clipped_maxmin lower thresholds b, elementwise < a

    // Resolved when the network is assembled. For linear layers in_shape is
    // the flattened size of whatever precedes them.
    Shape in_shape, out_shape;

    std::size_t in_size() const { return shape_product(in_shape); }
    std::size_t out_size() const { return shape_product(out_shape); }
    bool is_conv() const { return kind == Kind::conv; }
};

struct NetworkSpec {
    Shape input_shape;
    std::vector<LayerSpec> layers;
    std::string name;
    double trained_eps = 0.0;

    std::size_t num_layers() const { return layers.size(); }
    std::size_t num_classes() const { return layers.back().out_size(); }
};

// Grammar: item ('-' item)*, item = C(channels,kernel,stride,padding) | F(features).
// The hidden activation is applied after every layer except the last. Weights
// are Kaiming-uniform (fan-in), biases zero, thresholds start at theta_init
// (clipped MaxMin: a = +theta_init, b = -theta_init). num_classes > 0 checks
// the final layer's output count.
NetworkSpec parse_architecture(const std::string& spec, const Shape& input_shape,
                               std::size_t num_classes, Activation hidden_activation,
                               std::uint64_t seed, double theta_init = 1.0);

// Inverse formatter; parse_architecture(render_architecture(net), ...) rebuilds
// the same layer structure.
std::string render_architecture(const NetworkSpec& net);

// Recomputes in_shape/out_shape for every layer and validates composition.
void resolve_shapes(NetworkSpec& net);

// Checks structural invariants (theta > 0, b < a, even pair counts, final
// layer has no activation). Throws DomainError / ShapeError.
void validate_network(const NetworkSpec& net);

Tensor apply_activation(const LayerSpec& layer, const Tensor& z);

// z = W x + b for one layer, with the implicit flatten before linear layers.
Tensor layer_preactivation(const LayerSpec& layer, const Tensor& x);

struct ForwardTrace {
    std::vector<Tensor> pre;   // W z + b per layer
    std::vector<Tensor> post;  // after activation (last layer: == pre)
    const Tensor& logits() const { return post.back(); }
};

Tensor forward(const NetworkSpec& net, const Tensor& x);
ForwardTrace forward_trace(const NetworkSpec& net, const Tensor& x);

std::size_t argmax(const Tensor& t);

}  // namespace liplocal
