#include "liplocal/autodiff.hpp"

#include <cmath>

#include "liplocal/error.hpp"
#include "liplocal/network.hpp"

namespace liplocal {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Tensor masked(const Tensor& t, const Tensor* mask) {
    if (mask == nullptr) return t;
    return hadamard(t, *mask);
}

}  // namespace

int Tape::push(Tensor value, std::function<void(Tape&, const Node&)> backward_fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward_fn)});
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value) { return push(std::move(value), nullptr); }

Tensor& Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) { add_in_place(grad_buffer(id), g); }

Tensor Tape::gradient(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(int output_id, const Tensor& seed) {
    Node& out = nodes_[static_cast<std::size_t>(output_id)];
    if (!seed.same_shape(out.value)) {
        throw ShapeError("backward seed shape " + shape_str(seed.shape()) + " does not match output " +
                         shape_str(out.value.shape()));
    }
    accumulate(output_id, seed);
    for (int id = output_id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty() || !n.backward) continue;
        n.backward(*this, n);
    }
}

// --- elementwise / shape ------------------------------------------------------

int Tape::add(int a, int b) {
    Tensor v = liplocal::add(value(a), value(b));
    return push(std::move(v), [a, b](Tape& t, const Node& n) {
        t.accumulate(a, n.grad);
        t.accumulate(b, n.grad);
    });
}

int Tape::sub(int a, int b) {
    Tensor v = liplocal::sub(value(a), value(b));
    return push(std::move(v), [a, b](Tape& t, const Node& n) {
        t.accumulate(a, n.grad);
        Tensor neg = liplocal::scale(n.grad, -1.0);
        t.accumulate(b, neg);
    });
}

int Tape::hadamard(int a, int b) {
    Tensor v = liplocal::hadamard(value(a), value(b));
    return push(std::move(v), [a, b](Tape& t, const Node& n) {
        t.accumulate(a, liplocal::hadamard(n.grad, t.value(b)));
        t.accumulate(b, liplocal::hadamard(n.grad, t.value(a)));
    });
}

int Tape::scale(int a, double s) {
    Tensor v = liplocal::scale(value(a), s);
    return push(std::move(v),
                [a, s](Tape& t, const Node& n) { t.accumulate(a, liplocal::scale(n.grad, s)); });
}

int Tape::add_scaled(int a, int b, double sb) {
    Tensor v = liplocal::add(value(a), liplocal::scale(value(b), sb));
    return push(std::move(v), [a, b, sb](Tape& t, const Node& n) {
        t.accumulate(a, n.grad);
        t.accumulate(b, liplocal::scale(n.grad, sb));
    });
}

int Tape::emin(int a, int b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    Tensor v = elementwise_min(va, vb);
    return push(std::move(v), [a, b](Tape& t, const Node& n) {
        const Tensor& va = t.value(a);
        const Tensor& vb = t.value(b);
        Tensor ga(va.shape()), gb(vb.shape());
        for (std::size_t i = 0; i < va.size(); ++i) {
            if (va[i] <= vb[i]) {
                ga[i] = n.grad[i];
            } else {
                gb[i] = n.grad[i];
            }
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

int Tape::emax(int a, int b) {
    Tensor v = elementwise_max(value(a), value(b));
    return push(std::move(v), [a, b](Tape& t, const Node& n) {
        const Tensor& va = t.value(a);
        const Tensor& vb = t.value(b);
        Tensor ga(va.shape()), gb(vb.shape());
        for (std::size_t i = 0; i < va.size(); ++i) {
            if (va[i] >= vb[i]) {
                ga[i] = n.grad[i];
            } else {
                gb[i] = n.grad[i];
            }
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

int Tape::reshape(int a, Shape shape) {
    Tensor v = value(a).reshaped(shape);
    return push(std::move(v), [a](Tape& t, const Node& n) {
        t.accumulate(a, n.grad.reshaped(t.value(a).shape()));
    });
}

// --- layers --------------------------------------------------------------------

int Tape::linear(int weight, int bias, int x) {
    const Tensor& w = value(weight);
    Tensor in = value(x).rank() == 1 ? value(x) : value(x).flattened();
    Tensor v = matvec(w, in);
    if (bias >= 0) add_in_place(v, value(bias));
    return push(std::move(v), [weight, bias, x](Tape& t, const Node& n) {
        const Tensor& w = t.value(weight);
        Tensor in = t.value(x).rank() == 1 ? t.value(x) : t.value(x).flattened();
        // dW = g (outer) x
        Tensor gw(w.shape());
        for (std::size_t i = 0; i < w.dim(0); ++i) {
            const double gi = n.grad[i];
            if (gi == 0.0) continue;
            for (std::size_t j = 0; j < w.dim(1); ++j) gw.at(i, j) = gi * in[j];
        }
        t.accumulate(weight, gw);
        if (bias >= 0) t.accumulate(bias, n.grad);
        Tensor gx = matvec_transposed(w, n.grad);
        t.accumulate(x, gx.reshaped(t.value(x).shape()));
    });
}

int Tape::conv(int weight, int bias, int x, std::size_t stride, std::size_t padding) {
    const Tensor& w = value(weight);
    Tensor v = conv2d(value(x), w, stride, padding);
    if (bias >= 0) {
        const Tensor& b = value(bias);
        for (std::size_t o = 0; o < v.dim(0); ++o)
            for (std::size_t i = 0; i < v.dim(1); ++i)
                for (std::size_t j = 0; j < v.dim(2); ++j) v.at(o, i, j) += b[o];
    }
    return push(std::move(v), [weight, bias, x, stride, padding](Tape& t, const Node& n) {
        const Tensor& w = t.value(weight);
        const Tensor& in = t.value(x);
        t.accumulate(weight, conv2d_kernel_grad(in, n.grad, w.shape(), stride, padding));
        if (bias >= 0) {
            Tensor gb({n.grad.dim(0)});
            for (std::size_t o = 0; o < n.grad.dim(0); ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n.grad.dim(1); ++i)
                    for (std::size_t j = 0; j < n.grad.dim(2); ++j) acc += n.grad.at(o, i, j);
                gb[o] = acc;
            }
            t.accumulate(bias, gb);
        }
        t.accumulate(x, conv2d_transpose(n.grad, w, stride, padding, in.shape()));
    });
}

int Tape::abs_linear(int weight, int r) {
    Tensor v = matvec(liplocal::abs(value(weight)), value(r));
    return push(std::move(v), [weight, r](Tape& t, const Node& n) {
        const Tensor& w = t.value(weight);
        const Tensor& rv = t.value(r);
        Tensor gw(w.shape());
        for (std::size_t i = 0; i < w.dim(0); ++i) {
            const double gi = n.grad[i];
            if (gi == 0.0) continue;
            for (std::size_t j = 0; j < w.dim(1); ++j) gw.at(i, j) = gi * rv[j] * sign(w.at(i, j));
        }
        t.accumulate(weight, gw);
        t.accumulate(r, matvec_transposed(liplocal::abs(w), n.grad));
    });
}

int Tape::abs_conv(int weight, int r, std::size_t stride, std::size_t padding) {
    Tensor v = conv2d(value(r), liplocal::abs(value(weight)), stride, padding);
    return push(std::move(v), [weight, r, stride, padding](Tape& t, const Node& n) {
        const Tensor& w = t.value(weight);
        const Tensor& rv = t.value(r);
        Tensor gw = conv2d_kernel_grad(rv, n.grad, w.shape(), stride, padding);
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] *= sign(w[i]);
        t.accumulate(weight, gw);
        t.accumulate(r, conv2d_transpose(n.grad, liplocal::abs(w), stride, padding, rv.shape()));
    });
}

// --- activations -----------------------------------------------------------------

int Tape::relu(int x) {
    Tensor v = value(x);
    for (double& e : v.values()) e = e > 0.0 ? e : 0.0;
    return push(std::move(v), [x](Tape& t, const Node& n) {
        const Tensor& in = t.value(x);
        Tensor gx(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) gx[i] = in[i] > 0.0 ? n.grad[i] : 0.0;
        t.accumulate(x, gx);
    });
}

int Tape::relu_theta_op(int x, int theta) {
    const Tensor& in = value(x);
    const Tensor& th = value(theta);
    if (in.size() != th.size()) throw ShapeError("relu_theta threshold size mismatch");
    Tensor v(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) v[i] = relu_theta(in[i], th[i]);
    return push(std::move(v), [x, theta](Tape& t, const Node& n) {
        const Tensor& in = t.value(x);
        const Tensor& th = t.value(theta);
        Tensor gx(in.shape());
        Tensor gt(th.shape());
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i] >= th[i]) {
                gt[i] = n.grad[i];
            } else if (in[i] > 0.0) {
                gx[i] = n.grad[i];
            }
        }
        t.accumulate(x, gx);
        t.accumulate(theta, gt);
    });
}

int Tape::maxmin(int x, std::size_t pairs, std::size_t spatial) {
    const Tensor& in = value(x);
    if (in.size() != 2 * pairs * spatial) throw ShapeError("maxmin size mismatch");
    Tensor v = in;
    for (std::size_t p = 0; p < pairs; ++p) {
        for (std::size_t s = 0; s < spatial; ++s) {
            const std::size_t i1 = (2 * p) * spatial + s, i2 = (2 * p + 1) * spatial + s;
            v[i1] = std::max(in[i1], in[i2]);
            v[i2] = std::min(in[i1], in[i2]);
        }
    }
    return push(std::move(v), [x, pairs, spatial](Tape& t, const Node& n) {
        const Tensor& in = t.value(x);
        Tensor gx(in.shape());
        for (std::size_t p = 0; p < pairs; ++p) {
            for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t i1 = (2 * p) * spatial + s, i2 = (2 * p + 1) * spatial + s;
                // ties route both slots to the first element
                const std::size_t amax = in[i1] >= in[i2] ? i1 : i2;
                const std::size_t amin = in[i1] <= in[i2] ? i1 : i2;
                gx[amax] += n.grad[i1];
                gx[amin] += n.grad[i2];
            }
        }
        t.accumulate(x, gx);
    });
}

int Tape::clipped_maxmin_op(int x, int clip_hi, int clip_lo, std::size_t pairs, std::size_t spatial) {
    const Tensor& in = value(x);
    const Tensor& hi = value(clip_hi);
    const Tensor& lo = value(clip_lo);
    if (in.size() != 2 * pairs * spatial || hi.size() != pairs * spatial || lo.size() != pairs * spatial) {
        throw ShapeError("clipped_maxmin size mismatch");
    }
    Tensor v = in;
    for (std::size_t p = 0; p < pairs; ++p) {
        for (std::size_t s = 0; s < spatial; ++s) {
            const std::size_t i1 = (2 * p) * spatial + s, i2 = (2 * p + 1) * spatial + s;
            const auto [mx, mn] = clipped_maxmin(in[i1], in[i2], hi[p * spatial + s], lo[p * spatial + s]);
            v[i1] = mx;
            v[i2] = mn;
        }
    }
    return push(std::move(v), [x, clip_hi, clip_lo, pairs, spatial](Tape& t, const Node& n) {
        const Tensor& in = t.value(x);
        const Tensor& hi = t.value(clip_hi);
        const Tensor& lo = t.value(clip_lo);
        Tensor gx(in.shape());
        Tensor ghi(hi.shape());
        Tensor glo(lo.shape());
        for (std::size_t p = 0; p < pairs; ++p) {
            for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t i1 = (2 * p) * spatial + s, i2 = (2 * p + 1) * spatial + s;
                const std::size_t pi = p * spatial + s;
                const double mx = std::max(in[i1], in[i2]);
                const double mn = std::min(in[i1], in[i2]);
                if (mx >= hi[pi]) {
                    ghi[pi] += n.grad[i1];
                } else {
                    gx[in[i1] >= in[i2] ? i1 : i2] += n.grad[i1];
                }
                if (mn <= lo[pi]) {
                    glo[pi] += n.grad[i2];
                } else {
                    gx[in[i1] <= in[i2] ? i1 : i2] += n.grad[i2];
                }
            }
        }
        t.accumulate(x, gx);
        t.accumulate(clip_hi, ghi);
        t.accumulate(clip_lo, glo);
    });
}

int Tape::maxmin_slots(int x, std::size_t pairs, std::size_t spatial, int slot) {
    const Tensor& in = value(x);
    if (in.size() != 2 * pairs * spatial) throw ShapeError("maxmin_slots size mismatch");
    Tensor v({pairs * spatial});
    for (std::size_t p = 0; p < pairs; ++p)
        for (std::size_t s = 0; s < spatial; ++s)
            v[p * spatial + s] = in[(2 * p + static_cast<std::size_t>(slot)) * spatial + s];
    return push(std::move(v), [x, pairs, spatial, slot](Tape& t, const Node& n) {
        Tensor gx(t.value(x).shape());
        for (std::size_t p = 0; p < pairs; ++p)
            for (std::size_t s = 0; s < spatial; ++s)
                gx[(2 * p + static_cast<std::size_t>(slot)) * spatial + s] = n.grad[p * spatial + s];
        t.accumulate(x, gx);
    });
}

// --- norms / bilinear forms ---------------------------------------------------------

int Tape::row_norms(int weight) {
    const Tensor& w = value(weight);
    if (w.rank() != 2) throw ShapeError("row_norms expects a matrix");
    Tensor v({w.dim(0)});
    for (std::size_t i = 0; i < w.dim(0); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w.dim(1); ++j) acc += w.at(i, j) * w.at(i, j);
        v[i] = std::sqrt(acc);
    }
    return push(std::move(v), [weight](Tape& t, const Node& n) {
        const Tensor& w = t.value(weight);
        Tensor gw(w.shape());
        for (std::size_t i = 0; i < w.dim(0); ++i) {
            if (n.value[i] == 0.0 || n.grad[i] == 0.0) continue;
            const double c = n.grad[i] / n.value[i];
            for (std::size_t j = 0; j < w.dim(1); ++j) gw.at(i, j) = c * w.at(i, j);
        }
        t.accumulate(weight, gw);
    });
}

int Tape::conv_row_norms(int weight, const Shape& in_shape, std::size_t stride, std::size_t padding) {
    const Tensor& w = value(weight);
    Tensor ones = Tensor::ones(in_shape);
    Tensor sq(w.shape());
    for (std::size_t i = 0; i < w.size(); ++i) sq[i] = w[i] * w[i];
    Tensor v = conv2d(ones, sq, stride, padding);
    for (double& e : v.values()) e = std::sqrt(e);
    return push(std::move(v), [weight, in_shape, stride, padding](Tape& t, const Node& n) {
        // norm_p^2 = sum over valid taps W_t^2  =>  d norm_p / d W_t = [valid] W_t / norm_p
        const Tensor& w = t.value(weight);
        Tensor coeff(n.value.shape());
        for (std::size_t i = 0; i < coeff.size(); ++i) {
            coeff[i] = n.value[i] > 0.0 ? n.grad[i] / n.value[i] : 0.0;
        }
        Tensor gw = conv2d_kernel_grad(Tensor::ones(in_shape), coeff, w.shape(), stride, padding);
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] *= w[i];
        t.accumulate(weight, gw);
    });
}

int Tape::sigma_linear(int weight, const Tensor& u, const Tensor& v, const Tensor* mask_in,
                       const Tensor* mask_out) {
    const Tensor& w = value(weight);
    const Tensor mu = masked(u, mask_in);
    const Tensor mv = masked(v, mask_out);
    const double s = dot(mv, matvec(w, mu));
    return push(Tensor::vector({s}), [weight, mu, mv](Tape& t, const Node& n) {
        // d sigma / dW = (mask_out v)(mask_in u)^T; u, v carry no gradient
        const double g = n.grad[0];
        if (g == 0.0) return;
        const Tensor& w = t.value(weight);
        Tensor gw(w.shape());
        for (std::size_t i = 0; i < w.dim(0); ++i) {
            const double c = g * mv[i];
            if (c == 0.0) continue;
            for (std::size_t j = 0; j < w.dim(1); ++j) gw.at(i, j) = c * mu[j];
        }
        t.accumulate(weight, gw);
    });
}

int Tape::sigma_conv(int weight, const Tensor& u, const Tensor& v, const Tensor* mask_in,
                     const Tensor* mask_out, std::size_t stride, std::size_t padding) {
    const Tensor& w = value(weight);
    const Tensor mu = masked(u, mask_in);
    const Tensor mv = masked(v, mask_out);
    const double s = dot(mv, conv2d(mu, w, stride, padding));
    return push(Tensor::vector({s}), [weight, mu, mv, stride, padding](Tape& t, const Node& n) {
        const double g = n.grad[0];
        if (g == 0.0) return;
        const Tensor& w = t.value(weight);
        Tensor gw = conv2d_kernel_grad(mu, mv, w.shape(), stride, padding);
        scale_in_place(gw, g);
        t.accumulate(weight, gw);
    });
}

// --- scalar graph ----------------------------------------------------------------

int Tape::s_add(int a, int b) { return add(a, b); }

int Tape::s_sub(int a, int b) { return sub(a, b); }

int Tape::s_mul(int a, int b) {
    const double va = scalar(a), vb = scalar(b);
    return push(Tensor::vector({va * vb}), [a, b](Tape& t, const Node& n) {
        t.accumulate(a, Tensor::vector({n.grad[0] * t.scalar(b)}));
        t.accumulate(b, Tensor::vector({n.grad[0] * t.scalar(a)}));
    });
}

int Tape::s_max(int a, int b) { return emax(a, b); }

int Tape::product(const std::vector<int>& scalars) {
    double p = 1.0;
    for (int id : scalars) p *= scalar(id);
    return push(Tensor::vector({p}), [scalars](Tape& t, const Node& n) {
        const double g = n.grad[0];
        for (std::size_t k = 0; k < scalars.size(); ++k) {
            double rest = 1.0;
            for (std::size_t j = 0; j < scalars.size(); ++j) {
                if (j != k) rest *= t.scalar(scalars[j]);
            }
            t.accumulate(scalars[k], Tensor::vector({g * rest}));
        }
    });
}

int Tape::dot_of(int a, int b) {
    const double d = dot(value(a), value(b));
    return push(Tensor::vector({d}), [a, b](Tape& t, const Node& n) {
        const double g = n.grad[0];
        t.accumulate(a, liplocal::scale(t.value(b), g));
        t.accumulate(b, liplocal::scale(t.value(a), g));
    });
}

int Tape::norm_of(int a) {
    const double nv = l2_norm(value(a));
    return push(Tensor::vector({nv}), [a](Tape& t, const Node& n) {
        if (n.value[0] == 0.0) return;
        t.accumulate(a, liplocal::scale(t.value(a), n.grad[0] / n.value[0]));
    });
}

int Tape::sum_of(int a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < value(a).size(); ++i) acc += value(a)[i];
    return push(Tensor::vector({acc}), [a](Tape& t, const Node& n) {
        t.accumulate(a, Tensor::full(t.value(a).shape(), n.grad[0]));
    });
}

int Tape::hinge_sum(int a) {
    const Tensor& v = value(a);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] > 0.0 ? v[i] : 0.0;
    return push(Tensor::vector({acc}), [a](Tape& t, const Node& n) {
        const Tensor& v = t.value(a);
        Tensor g(v.shape());
        for (std::size_t i = 0; i < v.size(); ++i) g[i] = v[i] > 0.0 ? n.grad[0] : 0.0;
        t.accumulate(a, g);
    });
}

int Tape::pick(int v, std::size_t index) {
    return push(Tensor::vector({value(v)[index]}), [v, index](Tape& t, const Node& n) {
        Tensor g(t.value(v).shape());
        g[index] = n.grad[0];
        t.accumulate(v, g);
    });
}

int Tape::vec_times_scalar(int v, int s) {
    Tensor out = liplocal::scale(value(v), scalar(s));
    return push(std::move(out), [v, s](Tape& t, const Node& n) {
        t.accumulate(v, liplocal::scale(n.grad, t.scalar(s)));
        t.accumulate(s, Tensor::vector({dot(n.grad, t.value(v))}));
    });
}

// --- vector assembly ----------------------------------------------------------------

int Tape::pack(const std::vector<int>& scalars) {
    Tensor v({scalars.size()});
    for (std::size_t i = 0; i < scalars.size(); ++i) v[i] = scalar(scalars[i]);
    return push(std::move(v), [scalars](Tape& t, const Node& n) {
        for (std::size_t i = 0; i < scalars.size(); ++i) {
            t.accumulate(scalars[i], Tensor::vector({n.grad[i]}));
        }
    });
}

int Tape::append_scalar(int v, int s) {
    const Tensor& in = value(v);
    Tensor out({in.size() + 1});
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i];
    out[in.size()] = scalar(s);
    return push(std::move(out), [v, s](Tape& t, const Node& n) {
        const std::size_t k = t.value(v).size();
        Tensor gv(t.value(v).shape());
        for (std::size_t i = 0; i < k; ++i) gv[i] = n.grad[i];
        t.accumulate(v, gv);
        t.accumulate(s, Tensor::vector({n.grad[k]}));
    });
}

int Tape::max_excluding(int v, std::size_t exclude) {
    const Tensor& in = value(v);
    std::size_t best = exclude == 0 ? 1 : 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (i == exclude) continue;
        if (in[i] > in[best]) best = i;
    }
    return push(Tensor::vector({in[best]}), [v, best](Tape& t, const Node& n) {
        Tensor g(t.value(v).shape());
        g[best] = n.grad[0];
        t.accumulate(v, g);
    });
}

int Tape::row_diff(int weight, std::size_t r1, std::size_t r2) {
    const Tensor& w = value(weight);
    Tensor v({w.dim(1)});
    for (std::size_t j = 0; j < w.dim(1); ++j) v[j] = w.at(r1, j) - w.at(r2, j);
    return push(std::move(v), [weight, r1, r2](Tape& t, const Node& n) {
        Tensor gw(t.value(weight).shape());
        for (std::size_t j = 0; j < gw.dim(1); ++j) {
            gw.at(r1, j) = n.grad[j];
            gw.at(r2, j) = -n.grad[j];
        }
        t.accumulate(weight, gw);
    });
}

int Tape::elem_diff(int vec, std::size_t i1, std::size_t i2) {
    return push(Tensor::vector({value(vec)[i1] - value(vec)[i2]}), [vec, i1, i2](Tape& t, const Node& n) {
        Tensor g(t.value(vec).shape());
        g[i1] += n.grad[0];
        g[i2] -= n.grad[0];
        t.accumulate(vec, g);
    });
}

// --- losses ---------------------------------------------------------------------------

int Tape::cross_entropy(int logits, std::size_t label) {
    const Tensor& z = value(logits);
    if (label >= z.size()) throw DomainError("cross_entropy label out of range");
    double m = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) m = std::max(m, z[i]);
    double lse = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) lse += std::exp(z[i] - m);
    lse = m + std::log(lse);
    return push(Tensor::vector({lse - z[label]}), [logits, label](Tape& t, const Node& n) {
        const Tensor& z = t.value(logits);
        double m = z[0];
        for (std::size_t i = 1; i < z.size(); ++i) m = std::max(m, z[i]);
        double total = 0.0;
        Tensor g(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) {
            g[i] = std::exp(z[i] - m);
            total += g[i];
        }
        for (std::size_t i = 0; i < z.size(); ++i) g[i] = n.grad[0] * g[i] / total;
        g[label] -= n.grad[0];
        t.accumulate(logits, g);
    });
}

}  // namespace liplocal
