#include "liplocal/bound_prop.hpp"

#include <cmath>

#include "liplocal/error.hpp"

namespace liplocal {

namespace {

// m' = W m + b and r' = |W| r for one layer; r enters flattened if needed.
void propagate_box(const LayerSpec& layer, const Tensor& mid_in, const Tensor& rad_in, Tensor& mid_out,
                   Tensor& rad_out) {
    mid_out = layer_preactivation(layer, mid_in);
    Tensor abs_w = abs(layer.weight);
    if (layer.is_conv()) {
        Tensor rad = rad_in.shape() == layer.in_shape ? rad_in : rad_in.reshaped(layer.in_shape);
        rad_out = conv2d(rad, abs_w, layer.stride, layer.padding);
    } else {
        rad_out = matvec(abs_w, rad_in.rank() == 1 ? rad_in : rad_in.flattened());
    }
}

}  // namespace

Tensor operator_row_norms(const LayerSpec& layer) {
    if (layer.is_conv()) {
        Tensor sq = layer.weight;
        for (double& v : sq.values()) v *= v;
        Tensor norms = conv2d(Tensor::ones(layer.in_shape), sq, layer.stride, layer.padding);
        for (double& v : norms.values()) v = std::sqrt(v);
        return norms;
    }
    const Tensor& w = layer.weight;
    Tensor norms({w.dim(0)});
    for (std::size_t i = 0; i < w.dim(0); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w.dim(1); ++j) acc += w.at(i, j) * w.at(i, j);
        norms[i] = std::sqrt(acc);
    }
    return norms;
}

std::pair<std::pair<double, double>, std::pair<double, double>> interval_maxmin(
    double lb1, double ub1, double lb2, double ub2, double a, double b) {
    if (lb1 > ub1 || lb2 > ub2) throw DomainError("interval_maxmin: lb > ub");
    const double lb_max = std::min(std::max(lb1, lb2), a);
    const double ub_max = std::min(std::max(ub1, ub2), a);
    const double lb_min = std::max(std::min(lb1, lb2), b);
    const double ub_min = std::max(std::min(ub1, ub2), b);
    return {{lb_max, ub_max}, {lb_min, ub_min}};
}

static LayerBounds bounds_forward(const NetworkSpec& net, const Tensor& x, double eps,
                                  const std::vector<double>* layer_norms) {
    if (eps < 0.0) throw DomainError("eps must be nonnegative");
    const bool with_ball = layer_norms != nullptr;
    if (with_ball && layer_norms->size() != net.num_layers()) {
        throw ShapeError("bcp_forward needs one spectral norm per layer");
    }

    Tensor x0 = x.shape() == net.input_shape ? x : x.reshaped(net.input_shape);
    ForwardTrace clean;
    if (with_ball) clean = forward_trace(net, x0);

    LayerBounds out;
    out.has_ball = with_ball;
    out.input_lb = x0;
    out.input_ub = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        out.input_lb[i] -= eps;
        out.input_ub[i] += eps;
    }

    Tensor mid = x0;
    Tensor rad = Tensor::full(x0.shape(), eps);
    double rho = eps;

    for (std::size_t li = 0; li < net.num_layers(); ++li) {
        const LayerSpec& layer = net.layers[li];
        Tensor pre_mid, pre_rad;
        propagate_box(layer, mid, rad, pre_mid, pre_rad);
        Tensor lb = sub(pre_mid, pre_rad);
        Tensor ub = add(pre_mid, pre_rad);

        if (with_ball) {
            Tensor ball_rad = operator_row_norms(layer);
            scale_in_place(ball_rad, rho);
            const Tensor& ball_mid = clean.pre[li];
            Tensor flat_rad = ball_rad.flattened().reshaped(ball_mid.shape());
            lb = elementwise_max(lb, sub(ball_mid, flat_rad));
            ub = elementwise_min(ub, add(ball_mid, flat_rad));
            out.ball_mid.push_back(ball_mid);
            out.ball_rad.push_back(flat_rad);
            out.rho_in.push_back(rho);
            rho *= (*layer_norms)[li];
        }

        out.lb.push_back(lb);
        out.ub.push_back(ub);
        out.post_lb.push_back(apply_activation(layer, lb));
        out.post_ub.push_back(apply_activation(layer, ub));

        mid = scale(add(out.post_ub[li], out.post_lb[li]), 0.5);
        rad = scale(sub(out.post_ub[li], out.post_lb[li]), 0.5);
    }
    return out;
}

LayerBounds ibp_forward(const NetworkSpec& net, const Tensor& x, double eps) {
    return bounds_forward(net, x, eps, nullptr);
}

LayerBounds bcp_forward(const NetworkSpec& net, const Tensor& x, double eps,
                        const std::vector<double>& layer_norms) {
    return bounds_forward(net, x, eps, &layer_norms);
}

}  // namespace liplocal
