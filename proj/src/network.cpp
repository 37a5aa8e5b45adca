#include "liplocal/network.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "liplocal/error.hpp"
#include "liplocal/rng.hpp"

namespace liplocal {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::relu_theta: return "relu_theta";
        case Activation::maxmin: return "maxmin";
        case Activation::clipped_maxmin: return "clipped_maxmin";
    }
    return "?";
}

Activation activation_from_name(const std::string& name) {
    if (name == "none") return Activation::none;
    if (name == "relu") return Activation::relu;
    if (name == "relu_theta") return Activation::relu_theta;
    if (name == "maxmin") return Activation::maxmin;
    if (name == "clipped_maxmin") return Activation::clipped_maxmin;
    throw DomainError("unknown activation: " + name);
}

// --- architecture parsing ----------------------------------------------------

namespace {

struct Parser {
    const std::string& s;
    std::size_t pos = 0;

    explicit Parser(const std::string& text) : s(text) {}

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos); }

    char peek() const { return pos < s.size() ? s[pos] : '\0'; }

    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos;
    }

    std::size_t integer() {
        if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected integer");
        std::size_t v = 0;
        while (std::isdigit(static_cast<unsigned char>(peek()))) {
            v = v * 10 + static_cast<std::size_t>(s[pos] - '0');
            if (v > 1000000) fail("integer out of range");
            ++pos;
        }
        return v;
    }
};

std::size_t activation_pairs(const LayerSpec& layer) {
    const std::size_t groups = layer.is_conv() ? layer.out_shape[0] : layer.out_size();
    return groups / 2;
}

void init_layer_params(LayerSpec& layer, Rng& rng, double theta_init) {
    const std::size_t fan_in =
        layer.is_conv() ? layer.in_shape[0] * layer.kernel_size * layer.kernel_size : layer.in_size();
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
    // bias stays zero

    if (layer.activation == Activation::relu_theta) {
        layer.theta = Tensor::full({layer.out_size()}, theta_init);
    } else if (layer.activation == Activation::clipped_maxmin) {
        const std::size_t pairs = activation_pairs(layer);
        const std::size_t slots = layer.is_conv() ? pairs * layer.out_shape[1] * layer.out_shape[2] : pairs;
        layer.clip_hi = Tensor::full({slots}, theta_init);
        layer.clip_lo = Tensor::full({slots}, -theta_init);
    }
}

}  // namespace

void resolve_shapes(NetworkSpec& net) {
    if (net.input_shape.empty()) throw ShapeError("network input shape is empty");
    if (net.layers.empty()) throw ShapeError("network has no layers");

    Shape cur = net.input_shape;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        LayerSpec& layer = net.layers[li];
        if (layer.is_conv()) {
            if (cur.size() != 3) {
                throw ShapeError("conv layer " + std::to_string(li) + " needs a C x H x W input, got " +
                                 shape_str(cur));
            }
            const std::size_t oh = conv_out_extent(cur[1], layer.kernel_size, layer.stride, layer.padding);
            const std::size_t ow = conv_out_extent(cur[2], layer.kernel_size, layer.stride, layer.padding);
            if (oh == 0 || ow == 0) throw ShapeError("conv layer " + std::to_string(li) + " output underflow");
            layer.in_shape = cur;
            layer.out_shape = {layer.out_channels, oh, ow};
        } else {
            layer.in_shape = {shape_product(cur)};
            layer.out_shape = {layer.out_features};
        }
        cur = layer.out_shape;
    }
}

void validate_network(const NetworkSpec& net) {
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& layer = net.layers[li];
        const bool last = li + 1 == net.layers.size();
        if (last && layer.activation != Activation::none) {
            throw DomainError("final layer must have no activation");
        }
        if (layer.activation == Activation::relu_theta) {
            if (layer.theta.size() != layer.out_size()) throw ShapeError("theta size mismatch");
            for (double t : layer.theta.values()) {
                if (!(t > 0.0)) throw DomainError("relu_theta threshold must be positive");
            }
        }
        if (layer.activation == Activation::maxmin || layer.activation == Activation::clipped_maxmin) {
            const std::size_t groups = layer.is_conv() ? layer.out_shape[0] : layer.out_size();
            if (groups % 2 != 0) {
                throw DomainError("maxmin needs an even number of " +
                                  std::string(layer.is_conv() ? "channels" : "features"));
            }
        }
        if (layer.activation == Activation::clipped_maxmin) {
            if (layer.clip_hi.size() != layer.clip_lo.size()) throw ShapeError("clip threshold size mismatch");
            for (std::size_t i = 0; i < layer.clip_hi.size(); ++i) {
                if (!(layer.clip_lo[i] < layer.clip_hi[i])) {
                    throw DomainError("clipped_maxmin requires b < a elementwise");
                }
            }
        }
    }
}

NetworkSpec parse_architecture(const std::string& spec, const Shape& input_shape,
                               std::size_t num_classes, Activation hidden_activation,
                               std::uint64_t seed, double theta_init) {
    if (theta_init <= 0.0) throw DomainError("theta_init must be positive");
    Parser p(spec);
    NetworkSpec net;
    net.input_shape = input_shape;

    for (;;) {
        LayerSpec layer;
        const char c = p.peek();
        if (c == 'C') {
            ++p.pos;
            p.expect('(');
            layer.kind = LayerSpec::Kind::conv;
            layer.out_channels = p.integer();
            p.expect(',');
            layer.kernel_size = p.integer();
            p.expect(',');
            layer.stride = p.integer();
            p.expect(',');
            layer.padding = p.integer();
            p.expect(')');
            if (layer.out_channels == 0 || layer.kernel_size == 0 || layer.stride == 0) {
                p.fail("conv parameters must be positive (padding may be 0)");
            }
        } else if (c == 'F') {
            ++p.pos;
            p.expect('(');
            layer.kind = LayerSpec::Kind::linear;
            layer.out_features = p.integer();
            p.expect(')');
            if (layer.out_features == 0) p.fail("linear layer needs a positive output size");
        } else {
            p.fail("expected layer item 'C(...)' or 'F(...)'");
        }
        net.layers.push_back(std::move(layer));
        if (p.peek() == '-') {
            ++p.pos;
            continue;
        }
        break;
    }
    if (p.pos != spec.size()) p.fail("trailing characters after architecture");

    for (std::size_t li = 0; li + 1 < net.layers.size(); ++li) {
        net.layers[li].activation = hidden_activation;
    }

    resolve_shapes(net);
    if (num_classes > 0 && net.layers.back().out_size() != num_classes) {
        throw ShapeError("final layer produces " + std::to_string(net.layers.back().out_size()) +
                         " outputs, expected " + std::to_string(num_classes) + " classes");
    }

    Rng rng(mix_seed(seed, 0x6e657477ULL));
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        LayerSpec& layer = net.layers[li];
        if (layer.is_conv()) {
            layer.weight = Tensor({layer.out_channels, layer.in_shape[0], layer.kernel_size, layer.kernel_size});
            layer.bias = Tensor({layer.out_channels});
        } else {
            layer.weight = Tensor({layer.out_features, layer.in_size()});
            layer.bias = Tensor({layer.out_features});
        }
        init_layer_params(layer, rng, theta_init);
    }
    validate_network(net);
    return net;
}

std::string render_architecture(const NetworkSpec& net) {
    std::ostringstream oss;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        if (li) oss << '-';
        const LayerSpec& l = net.layers[li];
        if (l.is_conv()) {
            oss << "C(" << l.out_channels << ',' << l.kernel_size << ',' << l.stride << ',' << l.padding
                << ')';
        } else {
            oss << "F(" << l.out_features << ')';
        }
    }
    return oss.str();
}

// --- forward -----------------------------------------------------------------

Tensor layer_preactivation(const LayerSpec& layer, const Tensor& x) {
    if (layer.is_conv()) {
        if (x.rank() != 3) throw ShapeError("conv layer input must be C x H x W");
        Tensor z = conv2d(x, layer.weight, layer.stride, layer.padding);
        for (std::size_t o = 0; o < z.dim(0); ++o) {
            const double b = layer.bias[o];
            for (std::size_t i = 0; i < z.dim(1); ++i)
                for (std::size_t j = 0; j < z.dim(2); ++j) z.at(o, i, j) += b;
        }
        return z;
    }
    Tensor flat = x.rank() == 1 ? x : x.flattened();
    Tensor z = matvec(layer.weight, flat);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.bias[i];
    return z;
}

namespace {

// MaxMin pairs adjacent features for vectors and adjacent channels for
// feature maps. `spatial` is 1 for vectors.
void maxmin_geometry(const LayerSpec& layer, std::size_t& pairs, std::size_t& spatial) {
    if (layer.is_conv()) {
        pairs = layer.out_shape[0] / 2;
        spatial = layer.out_shape[1] * layer.out_shape[2];
    } else {
        pairs = layer.out_size() / 2;
        spatial = 1;
    }
}

}  // namespace

Tensor apply_activation(const LayerSpec& layer, const Tensor& z) {
    switch (layer.activation) {
        case Activation::none:
            return z;
        case Activation::relu: {
            Tensor out = z;
            for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
            return out;
        }
        case Activation::relu_theta: {
            Tensor out = z;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = relu_theta(out[i], layer.theta[i]);
            return out;
        }
        case Activation::maxmin:
        case Activation::clipped_maxmin: {
            std::size_t pairs = 0, spatial = 0;
            maxmin_geometry(layer, pairs, spatial);
            const bool clipped = layer.activation == Activation::clipped_maxmin;
            Tensor out = z;
            for (std::size_t p = 0; p < pairs; ++p) {
                for (std::size_t s = 0; s < spatial; ++s) {
                    const std::size_t i1 = (2 * p) * spatial + s;
                    const std::size_t i2 = (2 * p + 1) * spatial + s;
                    const double a = clipped ? layer.clip_hi[p * spatial + s] : 0.0;
                    const double b = clipped ? layer.clip_lo[p * spatial + s] : 0.0;
                    double hi = std::max(z[i1], z[i2]);
                    double lo = std::min(z[i1], z[i2]);
                    if (clipped) {
                        hi = std::min(hi, a);
                        lo = std::max(lo, b);
                    }
                    out[i1] = hi;
                    out[i2] = lo;
                }
            }
            return out;
        }
    }
    throw DomainError("unhandled activation");
}

ForwardTrace forward_trace(const NetworkSpec& net, const Tensor& x) {
    if (x.shape() != net.input_shape && x.size() != shape_product(net.input_shape)) {
        throw ShapeError("input shape " + shape_str(x.shape()) + " does not match network input " +
                         shape_str(net.input_shape));
    }
    ForwardTrace trace;
    Tensor cur = x.shape() == net.input_shape ? x : x.reshaped(net.input_shape);
    for (const LayerSpec& layer : net.layers) {
        Tensor z = layer_preactivation(layer, cur);
        trace.pre.push_back(z);
        cur = apply_activation(layer, z);
        trace.post.push_back(cur);
    }
    return trace;
}

Tensor forward(const NetworkSpec& net, const Tensor& x) { return forward_trace(net, x).logits(); }

std::size_t argmax(const Tensor& t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.size(); ++i) {
        if (t[i] > t[best]) best = i;
    }
    return best;
}

}  // namespace liplocal
