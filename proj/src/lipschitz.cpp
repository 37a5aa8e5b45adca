#include "liplocal/lipschitz.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "liplocal/error.hpp"
#include "liplocal/rng.hpp"

namespace liplocal {

// --- masks ----------------------------------------------------------------------

double ActivationMasks::varying_fraction(std::size_t l) const {
    const Tensor& v = varying[l];
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i];
    return s / static_cast<double>(v.size());
}

ActivationMasks compute_masks(const LayerBounds& bounds, const NetworkSpec& net) {
    if (bounds.num_layers() != net.num_layers()) {
        throw ShapeError("bounds and network layer counts disagree");
    }
    ActivationMasks masks;
    for (std::size_t l = 0; l + 1 < net.num_layers(); ++l) {
        const LayerSpec& layer = net.layers[l];
        const Tensor& lb = bounds.lb[l];
        const Tensor& ub = bounds.ub[l];
        Tensor varying(lb.shape());
        Tensor const_zero(lb.shape());
        Tensor const_clip(lb.shape());
        Tensor max_clipped, min_clipped;

        switch (layer.activation) {
            case Activation::relu:
                for (std::size_t i = 0; i < lb.size(); ++i) {
                    if (ub[i] > 0.0) {
                        varying[i] = 1.0;
                    } else {
                        const_zero[i] = 1.0;
                    }
                }
                break;
            case Activation::relu_theta:
                for (std::size_t i = 0; i < lb.size(); ++i) {
                    if (ub[i] <= 0.0) {
                        const_zero[i] = 1.0;
                    } else if (lb[i] >= layer.theta[i]) {
                        const_clip[i] = 1.0;
                    } else {
                        varying[i] = 1.0;
                    }
                }
                break;
            case Activation::maxmin:
                for (std::size_t i = 0; i < lb.size(); ++i) varying[i] = 1.0;
                break;
            case Activation::clipped_maxmin: {
                std::size_t pairs = 0, spatial = 0;
                if (layer.is_conv()) {
                    pairs = layer.out_shape[0] / 2;
                    spatial = layer.out_shape[1] * layer.out_shape[2];
                } else {
                    pairs = layer.out_size() / 2;
                    spatial = 1;
                }
                max_clipped = Tensor(lb.shape());
                min_clipped = Tensor(lb.shape());
                for (std::size_t p = 0; p < pairs; ++p) {
                    for (std::size_t s = 0; s < spatial; ++s) {
                        const std::size_t i1 = (2 * p) * spatial + s;
                        const std::size_t i2 = (2 * p + 1) * spatial + s;
                        const std::size_t pi = p * spatial + s;
                        const double lb_max = std::max(lb[i1], lb[i2]);
                        const double ub_min = std::min(ub[i1], ub[i2]);
                        if (lb_max > layer.clip_hi[pi]) {
                            const_clip[i1] = 1.0;
                            max_clipped[i1] = 1.0;
                        } else {
                            varying[i1] = 1.0;
                        }
                        if (ub_min < layer.clip_lo[pi]) {
                            const_clip[i2] = 1.0;
                            min_clipped[i2] = 1.0;
                        } else {
                            varying[i2] = 1.0;
                        }
                    }
                }
                break;
            }
            case Activation::none:
                throw DomainError("hidden layer without activation");
        }

        const bool is_maxmin =
            layer.activation == Activation::maxmin || layer.activation == Activation::clipped_maxmin;
        masks.row_keep.push_back(is_maxmin ? Tensor::ones(lb.shape()) : varying);
        masks.varying.push_back(std::move(varying));
        masks.constant_zero.push_back(std::move(const_zero));
        masks.constant_clip.push_back(std::move(const_clip));
        masks.max_clipped.push_back(std::move(max_clipped));
        masks.min_clipped.push_back(std::move(min_clipped));
    }
    return masks;
}

// --- power iteration ---------------------------------------------------------------

namespace {

Tensor shaped_like(const Tensor& t, const Shape& shape) {
    return t.shape() == shape ? t : t.reshaped(shape);
}

// op(W, u) with optional input/output element masks, operator-style.
Tensor apply_masked(const LayerSpec& layer, const Tensor* mask_in, const Tensor* mask_out,
                    const Tensor& u) {
    Tensor x = u;
    if (mask_in != nullptr) x = hadamard(x, shaped_like(*mask_in, x.shape()));
    Tensor y;
    if (layer.is_conv()) {
        y = conv2d(shaped_like(x, layer.in_shape), layer.weight, layer.stride, layer.padding);
    } else {
        y = matvec(layer.weight, x.rank() == 1 ? x : x.flattened());
    }
    if (mask_out != nullptr) y = hadamard(y, shaped_like(*mask_out, y.shape()));
    return y;
}

Tensor apply_masked_adjoint(const LayerSpec& layer, const Tensor* mask_in, const Tensor* mask_out,
                            const Tensor& v) {
    Tensor y = v;
    if (mask_out != nullptr) y = hadamard(y, shaped_like(*mask_out, y.shape()));
    Tensor x;
    if (layer.is_conv()) {
        x = conv2d_transpose(shaped_like(y, layer.out_shape), layer.weight, layer.stride, layer.padding,
                             layer.in_shape);
    } else {
        x = matvec_transposed(layer.weight, y.rank() == 1 ? y : y.flattened());
    }
    if (mask_in != nullptr) x = hadamard(x, shaped_like(*mask_in, x.shape()));
    return x;
}

Shape layer_input_shape(const LayerSpec& layer) {
    return layer.is_conv() ? layer.in_shape : Shape{layer.in_size()};
}

}  // namespace

Tensor power_iter_seed_vector(const Shape& shape, std::uint64_t stream_a, std::uint64_t stream_b) {
    Rng rng(mix_seed(0x75736565ULL, stream_a, stream_b));
    Tensor u(shape);
    for (double& v : u.values()) v = rng.normal();
    const double n = l2_norm(u);
    if (n == 0.0) return Tensor::ones(shape);
    scale_in_place(u, 1.0 / n);
    return u;
}

SpectralResult masked_spectral_norm(const LayerSpec& layer, const Tensor* mask_in, const Tensor* mask_out,
                                    const Tensor& u0, const PowerIterStop& stop) {
    const Shape in_shape = layer_input_shape(layer);
    SpectralResult result;

    Tensor u = shaped_like(u0, in_shape);
    if (mask_in != nullptr) u = hadamard(u, shaped_like(*mask_in, in_shape));
    double nu = l2_norm(u);
    if (nu == 0.0) {
        // u0 fell entirely inside the masked-out subspace; restart from the
        // mask itself (all-ones when no mask).
        u = mask_in != nullptr ? shaped_like(*mask_in, in_shape) : Tensor::ones(in_shape);
        nu = l2_norm(u);
        if (nu == 0.0) {
            result.u = Tensor(in_shape);
            result.v = Tensor(layer.out_shape);
            return result;
        }
    }
    scale_in_place(u, 1.0 / nu);

    const int fixed = stop.iters;
    const int cap = fixed > 0 ? fixed : stop.max_sweeps;
    int iters = 0;
    for (; iters < cap; ++iters) {
        Tensor w = apply_masked(layer, mask_in, mask_out, u);
        const double nw = l2_norm(w);
        if (nw == 0.0) {
            result.u = Tensor(in_shape);
            result.v = Tensor(layer.out_shape);
            result.iterations = iters;
            return result;
        }
        scale_in_place(w, 1.0 / nw);
        Tensor un = apply_masked_adjoint(layer, mask_in, mask_out, w);
        const double nun = l2_norm(un);
        if (nun == 0.0) {
            result.u = Tensor(in_shape);
            result.v = Tensor(layer.out_shape);
            result.iterations = iters;
            return result;
        }
        scale_in_place(un, 1.0 / nun);
        const double diff = l2_norm(sub(un, u));
        u = std::move(un);
        if (fixed > 0) continue;
        if (diff <= stop.tol) {
            ++iters;
            break;
        }
    }

    Tensor w = apply_masked(layer, mask_in, mask_out, u);
    const double sigma = l2_norm(w);
    if (sigma == 0.0) {
        result.u = Tensor(in_shape);
        result.v = Tensor(layer.out_shape);
        result.iterations = iters;
        return result;
    }
    scale_in_place(w, 1.0 / sigma);
    result.sigma = sigma;
    result.u = std::move(u);
    result.v = std::move(w);
    result.iterations = iters;
    return result;
}

std::vector<double> GlobalNorms::sigmas() const {
    std::vector<double> out;
    out.reserve(per_layer.size());
    for (const auto& r : per_layer) out.push_back(r.sigma);
    return out;
}

GlobalNorms compute_global_norms(const NetworkSpec& net, const PowerIterStop& stop,
                                 const GlobalNorms* warm) {
    GlobalNorms norms;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const LayerSpec& layer = net.layers[l];
        Tensor u0;
        if (warm != nullptr && l < warm->per_layer.size() && !warm->per_layer[l].u.empty() &&
            l2_norm(warm->per_layer[l].u) > 0.0) {
            u0 = warm->per_layer[l].u;
        } else {
            u0 = power_iter_seed_vector(layer_input_shape(layer), 0x676c6f62ULL, l);
        }
        SpectralResult r = masked_spectral_norm(layer, nullptr, nullptr, u0, stop);
        norms.product *= r.sigma;
        norms.per_layer.push_back(std::move(r));
    }
    return norms;
}

std::pair<double, std::vector<double>> global_lipschitz(const NetworkSpec& net, const PowerIterStop& stop) {
    GlobalNorms norms = compute_global_norms(net, stop);
    return {norms.product, norms.sigmas()};
}

// --- cache -----------------------------------------------------------------------------

bool PowerIterCache::fetch(std::uint32_t sample, std::uint16_t layer, Tensor& out) const {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = entries_.find(key(sample, layer));
    if (it == entries_.end()) return false;
    const std::vector<float>& u = it->second.u;
    Tensor t({u.size()});
    for (std::size_t i = 0; i < u.size(); ++i) t[i] = static_cast<double>(u[i]);
    const double n = l2_norm(t);
    if (n == 0.0) return false;
    scale_in_place(t, 1.0 / n);
    out = std::move(t);
    return true;
}

void PowerIterCache::store(std::uint32_t sample, std::uint16_t layer, const Tensor& u,
                           std::uint32_t epoch) {
    std::vector<float> data(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) data[i] = static_cast<float>(u[i]);
    std::lock_guard<std::mutex> lk(mu_);
    Entry& e = entries_[key(sample, layer)];
    e.u = std::move(data);
    e.epoch = epoch;
}

std::size_t PowerIterCache::size() const {
    std::lock_guard<std::mutex> lk(mu_);
    return entries_.size();
}

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, std::size_t& offset) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (static_cast<std::size_t>(is.gcount()) != sizeof(T)) {
        throw FormatError("unexpected end of file", offset);
    }
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    offset += sizeof(T);
    return v;
}

}  // namespace

void PowerIterCache::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    std::lock_guard<std::mutex> lk(mu_);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
    // sorted key order keeps the file byte-stable
    std::vector<std::uint64_t> keys;
    keys.reserve(entries_.size());
    for (const auto& [k, _] : entries_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (std::uint64_t k : keys) {
        const Entry& e = entries_.at(k);
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(k >> 16));
        write_le<std::uint16_t>(os, static_cast<std::uint16_t>(k & 0xffff));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.u.size()));
        for (float f : e.u) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, sizeof(bits));
            write_le<std::uint32_t>(os, bits);
        }
    }
    if (!os) throw IoError("write failure on " + path);
}

PowerIterCache PowerIterCache::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::size_t offset = 0;
    PowerIterCache cache;
    const std::uint32_t count = read_le<std::uint32_t>(is, offset);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t sample = read_le<std::uint32_t>(is, offset);
        const std::uint16_t layer = read_le<std::uint16_t>(is, offset);
        const std::uint32_t len = read_le<std::uint32_t>(is, offset);
        if (len > (1u << 26)) throw FormatError("cache entry length implausibly large", offset - 4);
        Entry e;
        e.u.resize(len);
        for (std::uint32_t j = 0; j < len; ++j) {
            const std::uint32_t bits = read_le<std::uint32_t>(is, offset);
            float f;
            std::memcpy(&f, &bits, sizeof(f));
            if (!std::isfinite(f)) throw FormatError("non-finite cache value", offset - 4);
            e.u[j] = f;
        }
        cache.entries_[key(sample, layer)] = std::move(e);
    }
    return cache;
}

// --- local bound -------------------------------------------------------------------------

LocalLipschitzResult local_lipschitz(const NetworkSpec& net, const Tensor& x, double eps, BoundsMode mode,
                                     PowerIterCache* cache, std::uint32_t sample_id,
                                     const PowerIterStop& stop, const GlobalNorms* global_norms,
                                     std::uint32_t epoch) {
    if (eps < 0.0) throw DomainError("eps must be nonnegative");
    LayerBounds bounds;
    if (mode == BoundsMode::bcp) {
        if (global_norms == nullptr) throw DomainError("bcp bounds need global spectral norms");
        bounds = bcp_forward(net, x, eps, global_norms->sigmas());
    } else {
        bounds = ibp_forward(net, x, eps);
    }

    LocalLipschitzResult result;
    result.masks = compute_masks(bounds, net);
    result.bound = 1.0;
    const std::size_t L = net.num_layers();
    for (std::size_t l = 0; l < L; ++l) {
        const LayerSpec& layer = net.layers[l];
        const Tensor* mask_in = l == 0 ? nullptr : &result.masks.varying[l - 1];
        const Tensor* mask_out = l + 1 == L ? nullptr : &result.masks.row_keep[l];

        Tensor u0;
        const std::uint16_t layer_tag = static_cast<std::uint16_t>(l);
        if (cache == nullptr || !cache->fetch(sample_id, layer_tag, u0)) {
            u0 = power_iter_seed_vector(layer_input_shape(layer), mix_seed(sample_id, epoch), l);
        }
        SpectralResult r = masked_spectral_norm(layer, mask_in, mask_out, u0, stop);
        if (cache != nullptr && !r.u.empty() && l2_norm(r.u) > 0.0) {
            cache->store(sample_id, layer_tag, r.u.flattened(), epoch);
        }
        result.bound *= r.sigma;
        result.sigmas.push_back(r.sigma);
        result.iterations.push_back(r.iterations);
    }
    return result;
}

// --- oracles ------------------------------------------------------------------------------

Tensor materialize_conv_matrix(const LayerSpec& layer, const Shape& in_shape) {
    if (!layer.is_conv()) throw DomainError("materialize_conv_matrix needs a conv layer");
    if (in_shape.size() != 3) throw ShapeError("conv input shape must be C x H x W");
    const std::size_t in_size = shape_product(in_shape);
    const std::size_t oh = conv_out_extent(in_shape[1], layer.kernel_size, layer.stride, layer.padding);
    const std::size_t ow = conv_out_extent(in_shape[2], layer.kernel_size, layer.stride, layer.padding);
    const std::size_t out_size = layer.weight.dim(0) * oh * ow;
    if (in_size > 4096 || out_size > 4096) {
        throw DomainError("refusing to materialize conv matrix larger than 4096 x 4096");
    }

    Tensor m({out_size, in_size});
    Tensor basis(in_shape);
    for (std::size_t j = 0; j < in_size; ++j) {
        basis[j] = 1.0;
        Tensor col = conv2d(basis, layer.weight, layer.stride, layer.padding);
        for (std::size_t i = 0; i < out_size; ++i) m.at(i, j) = col[i];
        basis[j] = 0.0;
    }
    return m;
}

Tensor materialize_layer_matrix(const LayerSpec& layer) {
    if (layer.is_conv()) return materialize_conv_matrix(layer, layer.in_shape);
    if (layer.weight.dim(0) > 4096 || layer.weight.dim(1) > 4096) {
        throw DomainError("refusing to materialize matrix larger than 4096 x 4096");
    }
    return layer.weight;
}

double spectral_norm_oracle(const Tensor& m) {
    if (m.rank() != 2) throw ShapeError("spectral_norm_oracle expects a matrix");
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    if (rows > 4096 || cols > 4096) {
        throw DomainError("refusing to decompose matrix larger than 4096 x 4096");
    }
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMajor> a(m.data(), static_cast<Eigen::Index>(rows),
                                 static_cast<Eigen::Index>(cols));
    // Gram matrix of the smaller side keeps the eigenproblem small.
    Eigen::MatrixXd gram;
    if (rows <= cols) {
        gram = a * a.transpose();
    } else {
        gram = a.transpose() * a;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw DomainError("eigen-decomposition failed");
    const double lambda = solver.eigenvalues().maxCoeff();
    return std::sqrt(std::max(0.0, lambda));
}

}  // namespace liplocal
