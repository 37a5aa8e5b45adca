#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "liplocal/tensor.hpp"

namespace liplocal {

// Reverse-mode tape. Nodes are appended in evaluation order, which is already
// a topological order, so backward() is a single reverse sweep that touches
// each node once. One tape per training thread; tapes are never shared.
//
// Kink conventions: ReLU-family derivatives are 0 exactly at z = 0 and the
// clip boundary counts as clipped (gradient routed to the threshold);
// max/min ties are broken toward the first operand.
class Tape {
  public:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily on first accumulation
        std::function<void(Tape&, const Node&)> backward;
    };

    int leaf(Tensor value);
    // A leaf the caller promises not to differentiate through (masks, bounds
    // used as constants, singular vectors).
    int constant(Tensor value) { return leaf(std::move(value)); }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    double scalar(int id) const { return nodes_[static_cast<std::size_t>(id)].value[0]; }
    // Zero tensor if the node was never reached by backward.
    Tensor gradient(int id) const;

    void backward(int output_id, const Tensor& seed);
    void backward_scalar(int output_id) { backward(output_id, Tensor::ones({1})); }

    std::size_t size() const { return nodes_.size(); }

    // --- elementwise / shape ---
    int add(int a, int b);
    int sub(int a, int b);
    int hadamard(int a, int b);
    int scale(int a, double s);
    int add_scaled(int a, int b, double sb);  // a + sb * b
    int emin(int a, int b);
    int emax(int a, int b);
    int reshape(int a, Shape shape);

    // --- layers ---
    int linear(int weight, int bias, int x);
    int conv(int weight, int bias, int x, std::size_t stride, std::size_t padding);
    // |W| r with d|W| = sign(W), sign(0) = 0.
    int abs_linear(int weight, int r);
    int abs_conv(int weight, int r, std::size_t stride, std::size_t padding);

    // --- activations (elementwise over the node value) ---
    int relu(int x);
    int relu_theta_op(int x, int theta);
    // pairs of entries (2p*spatial+s, (2p+1)*spatial+s) -> (max, min)
    int maxmin(int x, std::size_t pairs, std::size_t spatial);
    int clipped_maxmin_op(int x, int clip_hi, int clip_lo, std::size_t pairs, std::size_t spatial);
    // extracts max slots (slot=0) or min slots (slot=1) into a half-size vector
    int maxmin_slots(int x, std::size_t pairs, std::size_t spatial, int slot);

    // --- norms / bilinear forms ---
    int row_norms(int weight);  // l2 norm per row of a matrix
    // per-output-position l2 norm of the conv operator's rows, exact at borders
    int conv_row_norms(int weight, const Shape& in_shape, std::size_t stride, std::size_t padding);
    // sigma = v . (mask_out * op(W, mask_in * u)); u, v, masks are constants.
    int sigma_linear(int weight, const Tensor& u, const Tensor& v, const Tensor* mask_in,
                     const Tensor* mask_out);
    int sigma_conv(int weight, const Tensor& u, const Tensor& v, const Tensor* mask_in,
                   const Tensor* mask_out, std::size_t stride, std::size_t padding);

    // --- scalar graph (shape {1} nodes) ---
    int scalar_const(double v) { return constant(Tensor::vector({v})); }
    int s_add(int a, int b);
    int s_sub(int a, int b);
    int s_mul(int a, int b);
    int s_max(int a, int b);
    int product(const std::vector<int>& scalars);
    int dot_of(int a, int b);
    int norm_of(int a);                  // l2 norm, zero gradient at 0
    int sum_of(int a);
    int hinge_sum(int a);                // sum_i max(0, a_i)
    int pick(int v, std::size_t index);  // scalar from a vector entry
    int vec_times_scalar(int v, int s);

    // --- vector assembly ---
    int pack(const std::vector<int>& scalars);
    int append_scalar(int v, int s);
    int max_excluding(int v, std::size_t exclude);  // max over entries != exclude
    int row_diff(int weight, std::size_t r1, std::size_t r2);   // W[r1,:] - W[r2,:]
    int elem_diff(int vec, std::size_t i1, std::size_t i2);     // scalar v[i1] - v[i2]

    // --- losses ---
    int cross_entropy(int logits, std::size_t label);

  private:
    int push(Tensor value, std::function<void(Tape&, const Node&)> backward_fn);
    Tensor& grad_buffer(int id);
    void accumulate(int id, const Tensor& g);

    std::vector<Node> nodes_;
};

}  // namespace liplocal
