#pragma once

#include <utility>
#include <vector>

#include "liplocal/network.hpp"
#include "liplocal/tensor.hpp"

namespace liplocal {

// Pre- and post-activation bounds for every layer, valid for all inputs x'
// with ||x' - x|| <= eps. Ball fields are filled only by bcp_forward.
struct LayerBounds {
    Tensor input_lb, input_ub;  // the input box [x - eps, x + eps]

    std::vector<Tensor> lb, ub;            // pre-activation, per layer
    std::vector<Tensor> post_lb, post_ub;  // after activation, per layer

    // BCP extras. ball_mid[l] is the clean pre-activation of layer l;
    // ball_rad[l][i] = ||row_i|| * rho_in[l]; rho_in[l] = eps * prod_{k<l} ||W^k||
    // is the l2 radius around the clean trajectory entering layer l.
    bool has_ball = false;
    std::vector<Tensor> ball_mid, ball_rad;
    std::vector<double> rho_in;

    std::size_t num_layers() const { return lb.size(); }

    Tensor pre_mid(std::size_t l) const { return scale(add(ub[l], lb[l]), 0.5); }
    Tensor pre_rad(std::size_t l) const { return scale(sub(ub[l], lb[l]), 0.5); }
    Tensor post_mid(std::size_t l) const { return scale(add(post_ub[l], post_lb[l]), 0.5); }
    Tensor post_rad(std::size_t l) const { return scale(sub(post_ub[l], post_lb[l]), 0.5); }
};

// Interval propagation through the box circumscribing the l2 eps-ball.
// Linear/conv layers map midpoint and radius (m' = W m + b, r' = |W| r);
// activations are applied to the interval endpoints (all are monotone).
LayerBounds ibp_forward(const NetworkSpec& net, const Tensor& x, double eps);

// Box-and-ball propagation. Each layer's pre-activation bound is the
// elementwise intersection of the propagated box and the ball bound
// ball_mid +- ball_rad. layer_norms must hold one global spectral norm per
// layer (the ball path uses global norms by construction).
LayerBounds bcp_forward(const NetworkSpec& net, const Tensor& x, double eps,
                        const std::vector<double>& layer_norms);

// Interval rule for one clipped MaxMin pair. Returns ((lb_max, ub_max),
// (lb_min, ub_min)): max interval clipped above at a, min interval clipped
// below at b.
std::pair<std::pair<double, double>, std::pair<double, double>> interval_maxmin(
    double lb1, double ub1, double lb2, double ub2, double a, double b);

// Row norms of the linear operator behind a layer, one entry per output
// element. Conv rows are exact per position: border positions with fewer
// valid taps get their true, smaller norm.
Tensor operator_row_norms(const LayerSpec& layer);

}  // namespace liplocal
