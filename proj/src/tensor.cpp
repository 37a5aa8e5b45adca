#include "liplocal/tensor.hpp"

#include <cmath>
#include <sstream>

#include "liplocal/error.hpp"

namespace liplocal {

std::string shape_str(const Shape& s) {
    std::ostringstream oss;
    oss << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) oss << "x";
        oss << s[i];
    }
    oss << ")";
    return oss.str();
}

std::size_t shape_product(const Shape& s) {
    std::size_t p = 1;
    for (std::size_t d : s) p *= d;
    return p;
}

static void check_positive_dims(const Shape& shape) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape));
    }
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
    check_positive_dims(shape_);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_positive_dims(shape_);
    if (shape_product(shape_) != data_.size()) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = value;
    return t;
}

Tensor Tensor::vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::reshaped(Shape new_shape) const {
    if (shape_product(new_shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
}

Tensor Tensor::flattened() const { return Tensor({data_.size()}, data_); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul expects matrices, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
        }
    }
    return out;
}

Tensor matvec(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2) throw ShapeError("matvec expects a matrix, got " + shape_str(m.shape()));
    if (m.dim(1) != v.size()) {
        throw ShapeError("matvec dimensions disagree: " + shape_str(m.shape()) + " vs vector of " +
                         std::to_string(v.size()));
    }
    Tensor out({m.dim(0)});
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        double acc = 0.0;
        const double* row = m.data() + i * m.dim(1);
        for (std::size_t j = 0; j < m.dim(1); ++j) acc += row[j] * v[j];
        out[i] = acc;
    }
    return out;
}

Tensor matvec_transposed(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2) throw ShapeError("matvec_transposed expects a matrix");
    if (m.dim(0) != v.size()) {
        throw ShapeError("matvec_transposed dimensions disagree: " + shape_str(m.shape()) +
                         " vs vector of " + std::to_string(v.size()));
    }
    Tensor out({m.dim(1)});
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        const double vi = v[i];
        if (vi == 0.0) continue;
        const double* row = m.data() + i * m.dim(1);
        for (std::size_t j = 0; j < m.dim(1); ++j) out[j] += row[j] * vi;
    }
    return out;
}

Tensor transpose(const Tensor& m) {
    if (m.rank() != 2) throw ShapeError("transpose expects a matrix");
    Tensor out({m.dim(1), m.dim(0)});
    for (std::size_t i = 0; i < m.dim(0); ++i)
        for (std::size_t j = 0; j < m.dim(1); ++j) out.at(j, i) = m.at(i, j);
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot size mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(const Tensor& t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
    return std::sqrt(acc);
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
    return m;
}

// --- convolution -------------------------------------------------------------

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const std::size_t padded = in + 2 * padding;
    if (padded < kernel) throw ShapeError("conv kernel larger than padded input");
    if (stride == 0) throw ShapeError("conv stride must be positive");
    return (padded - kernel) / stride + 1;
}

static void check_conv_args(const Tensor& input, const Tensor& kernel) {
    if (input.rank() != 3) throw ShapeError("conv input must be C x H x W, got " + shape_str(input.shape()));
    if (kernel.rank() != 4) {
        throw ShapeError("conv kernel must be O x C x k x k, got " + shape_str(kernel.shape()));
    }
    if (kernel.dim(1) != input.dim(0)) {
        throw ShapeError("conv channel mismatch: kernel " + shape_str(kernel.shape()) + " vs input " +
                         shape_str(input.shape()));
    }
    if (kernel.dim(2) != kernel.dim(3)) throw ShapeError("conv kernel must be square");
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    check_conv_args(input, kernel);
    const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t c_out = kernel.dim(0), k = kernel.dim(2);
    const std::size_t oh = conv_out_extent(h, k, stride, padding);
    const std::size_t ow = conv_out_extent(w, k, stride, padding);

    Tensor out({c_out, oh, ow});
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t ki = 0; ki < k; ++ki) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + ki) -
                                                 static_cast<std::ptrdiff_t>(padding);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kj = 0; kj < k; ++kj) {
                            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * stride + kj) -
                                                     static_cast<std::ptrdiff_t>(padding);
                            if (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += input.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) *
                                   kernel.at(o, c, ki, kj);
                        }
                    }
                }
                out.at(o, i, j) = acc;
            }
        }
    }
    return out;
}

Tensor conv2d_transpose(const Tensor& grad_output, const Tensor& kernel, std::size_t stride,
                        std::size_t padding, const Shape& input_shape) {
    if (input_shape.size() != 3) throw ShapeError("conv2d_transpose needs a C x H x W input shape");
    if (grad_output.rank() != 3) throw ShapeError("conv2d_transpose input must be O x H' x W'");
    if (kernel.rank() != 4) throw ShapeError("conv kernel must be O x C x k x k");
    if (grad_output.dim(0) != kernel.dim(0)) {
        throw ShapeError("conv2d_transpose channel mismatch: " + shape_str(grad_output.shape()) +
                         " vs kernel " + shape_str(kernel.shape()));
    }
    if (kernel.dim(1) != input_shape[0]) {
        throw ShapeError("conv2d_transpose kernel/input channel mismatch");
    }
    const std::size_t h = input_shape[1], w = input_shape[2];
    const std::size_t k = kernel.dim(2);
    const std::size_t oh = conv_out_extent(h, k, stride, padding);
    const std::size_t ow = conv_out_extent(w, k, stride, padding);
    if (grad_output.dim(1) != oh || grad_output.dim(2) != ow) {
        throw ShapeError("conv2d_transpose spatial mismatch: got " + shape_str(grad_output.shape()) +
                         ", expected output " + shape_str({kernel.dim(0), oh, ow}));
    }

    // Scatter over the same index set conv2d gathers from, so the adjoint
    // identity holds exactly.
    Tensor out(Shape{input_shape[0], h, w});
    const std::size_t c_in = input_shape[0], c_out = kernel.dim(0);
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                const double g = grad_output.at(o, i, j);
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t ki = 0; ki < k; ++ki) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + ki) -
                                                 static_cast<std::ptrdiff_t>(padding);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kj = 0; kj < k; ++kj) {
                            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * stride + kj) -
                                                     static_cast<std::ptrdiff_t>(padding);
                            if (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) continue;
                            out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) +=
                                g * kernel.at(o, c, ki, kj);
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_output, const Shape& kernel_shape,
                          std::size_t stride, std::size_t padding) {
    if (kernel_shape.size() != 4) throw ShapeError("kernel shape must be O x C x k x k");
    check_conv_args(input, Tensor(kernel_shape));
    const std::size_t h = input.dim(1), w = input.dim(2);
    const std::size_t k = kernel_shape[2];
    const std::size_t oh = conv_out_extent(h, k, stride, padding);
    const std::size_t ow = conv_out_extent(w, k, stride, padding);
    if (grad_output.rank() != 3 || grad_output.dim(0) != kernel_shape[0] || grad_output.dim(1) != oh ||
        grad_output.dim(2) != ow) {
        throw ShapeError("conv2d_kernel_grad output-gradient shape mismatch");
    }

    Tensor grad(kernel_shape);
    const std::size_t c_in = kernel_shape[1], c_out = kernel_shape[0];
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                const double g = grad_output.at(o, i, j);
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t ki = 0; ki < k; ++ki) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + ki) -
                                                 static_cast<std::ptrdiff_t>(padding);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kj = 0; kj < k; ++kj) {
                            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * stride + kj) -
                                                     static_cast<std::ptrdiff_t>(padding);
                            if (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) continue;
                            grad.at(o, c, ki, kj) +=
                                g * input.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                        }
                    }
                }
            }
        }
    }
    return grad;
}

// --- elementwise --------------------------------------------------------------

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

Tensor abs(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
    return out;
}

Tensor elementwise_min(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "min");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], b[i]);
    return out;
}

Tensor elementwise_max(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], b[i]);
    return out;
}

void add_in_place(Tensor& dst, const Tensor& src) {
    check_same_shape(dst, src, "add_in_place");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void scale_in_place(Tensor& t, double s) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= s;
}

}  // namespace liplocal
