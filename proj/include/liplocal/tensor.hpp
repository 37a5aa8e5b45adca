#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace liplocal {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. Shapes are validated at operation
// boundaries; values are expected to stay finite through every public op.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor vector(std::vector<double> data);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors (matrices).
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    // 3-D accessors (C x H x W feature maps).
    double& at(std::size_t c, std::size_t h, std::size_t w) {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double at(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    // 4-D accessors (O x C x k x k kernels).
    double& at(std::size_t o, std::size_t c, std::size_t i, std::size_t j) {
        return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }
    double at(std::size_t o, std::size_t c, std::size_t i, std::size_t j) const {
        return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }

    Tensor reshaped(Shape new_shape) const;
    Tensor flattened() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

  private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const Shape& s);

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// A^T b for matrix A and flat vector b.
Tensor matvec(const Tensor& m, const Tensor& v);
Tensor matvec_transposed(const Tensor& m, const Tensor& v);
Tensor transpose(const Tensor& m);

double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& t);
double max_abs(const Tensor& t);

// --- convolution -----------------------------------------------------------

// Cross-correlation with zero padding. input C x H x W, kernel O x C x k x k.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

// Exact adjoint of conv2d: <conv2d(x), y> == <x, conv2d_transpose(y)> for all
// x of shape `input_shape` and matching y. The forward input shape must be
// given because stride > 1 makes it ambiguous.
Tensor conv2d_transpose(const Tensor& grad_output, const Tensor& kernel, std::size_t stride,
                        std::size_t padding, const Shape& input_shape);

// Gradient of conv2d w.r.t. the kernel: d<conv2d(input, K), grad_output>/dK.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_output, const Shape& kernel_shape,
                          std::size_t stride, std::size_t padding);

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor abs(const Tensor& a);
Tensor elementwise_min(const Tensor& a, const Tensor& b);
Tensor elementwise_max(const Tensor& a, const Tensor& b);

void add_in_place(Tensor& dst, const Tensor& src);
void scale_in_place(Tensor& t, double s);

}  // namespace liplocal
