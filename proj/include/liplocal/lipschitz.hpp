#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "liplocal/bound_prop.hpp"
#include "liplocal/network.hpp"
#include "liplocal/tensor.hpp"

namespace liplocal {

// Per hidden activation layer, 0/1 indicators over the activation's output
// elements. varying + constant_zero + constant_clip is exactly all-ones.
//
// varying masks the columns of the next weight operator. row_keep masks the
// rows of the layer's own operator: it equals varying for elementwise
// activations; for MaxMin only columns may be deleted, so row_keep is
// all-ones there.
struct ActivationMasks {
    std::vector<Tensor> varying;
    std::vector<Tensor> constant_zero;
    std::vector<Tensor> constant_clip;  // fixed at theta (ReLU-theta) or at a/b (MaxMin)
    std::vector<Tensor> row_keep;
    std::vector<Tensor> max_clipped, min_clipped;  // MaxMin layers only, else empty tensors

    std::size_t num_layers() const { return varying.size(); }
    double varying_fraction(std::size_t l) const;
};

ActivationMasks compute_masks(const LayerBounds& bounds, const NetworkSpec& net);

// iters > 0 runs a fixed number of iterations; tol > 0 stops once
// ||u(t+1) - u(t)|| <= tol (whichever comes first if both set). max_sweeps
// caps tolerance-mode runs.
struct PowerIterStop {
    int iters = 0;
    double tol = 0.0;
    int max_sweeps = 200000;

    static PowerIterStop fixed(int n) { return {n, 0.0, 0}; }
    static PowerIterStop tolerance(double t, int cap = 200000) { return {0, t, cap}; }
};

struct SpectralResult {
    double sigma = 0.0;
    Tensor u, v;
    int iterations = 0;
};

// Power iteration on the masked operator mask_out * op(W, mask_in * u).
// Conv layers are applied operator-style, never materialized. A null mask
// means identity. An all-zero masked operator yields sigma = 0 with zero
// vectors.
SpectralResult masked_spectral_norm(const LayerSpec& layer, const Tensor* mask_in, const Tensor* mask_out,
                                    const Tensor& u0, const PowerIterStop& stop);

// Deterministic unit vector used to cold-start power iteration.
Tensor power_iter_seed_vector(const Shape& shape, std::uint64_t stream_a, std::uint64_t stream_b);

struct GlobalNorms {
    std::vector<SpectralResult> per_layer;
    double product = 1.0;

    std::vector<double> sigmas() const;
};

// Unmasked per-layer spectral norms; activations contribute factor 1.
// `warm` (optional) supplies previous iterates to start from.
GlobalNorms compute_global_norms(const NetworkSpec& net, const PowerIterStop& stop,
                                 const GlobalNorms* warm = nullptr);
std::pair<double, std::vector<double>> global_lipschitz(
    const NetworkSpec& net, const PowerIterStop& stop = PowerIterStop::tolerance(1e-6));

// Per-(sample, layer) power-iteration iterates, stored as f32 and
// renormalized on retrieval. Thread-safe; callers partition work by sample.
class PowerIterCache {
  public:
    bool fetch(std::uint32_t sample, std::uint16_t layer, Tensor& out) const;
    void store(std::uint32_t sample, std::uint16_t layer, const Tensor& u, std::uint32_t epoch);
    std::size_t size() const;

    // Sidecar format, little-endian: count u32, then per entry sample u32,
    // layer u16, length u32, f32 values.
    void save(const std::string& path) const;
    static PowerIterCache load(const std::string& path);

  private:
    struct Entry {
        std::vector<float> u;
        std::uint32_t epoch = 0;
    };
    static std::uint64_t key(std::uint32_t sample, std::uint16_t layer) {
        return (static_cast<std::uint64_t>(sample) << 16) | layer;
    }
    std::unordered_map<std::uint64_t, Entry> entries_;
    mutable std::mutex mu_;
};

enum class BoundsMode : std::uint8_t { ibp = 0, bcp = 1 };

struct LocalLipschitzResult {
    double bound = 1.0;
    std::vector<double> sigmas;
    ActivationMasks masks;
    std::vector<int> iterations;
};

// Product of masked per-layer spectral norms (the masks come from
// compute_masks on the chosen bound propagation). global_norms is required
// for BoundsMode::bcp and ignored otherwise. cache may be null; sample_id
// keys the cache and the deterministic cold-start seed.
LocalLipschitzResult local_lipschitz(const NetworkSpec& net, const Tensor& x, double eps, BoundsMode mode,
                                     PowerIterCache* cache, std::uint32_t sample_id,
                                     const PowerIterStop& stop, const GlobalNorms* global_norms = nullptr,
                                     std::uint32_t epoch = 0);

// --- exact oracles ------------------------------------------------------------

// Explicit matrix M with conv2d(x) = M vec(x). Guarded to 4096 x 4096.
Tensor materialize_conv_matrix(const LayerSpec& layer, const Shape& in_shape);
// Linear layers return the weight matrix itself.
Tensor materialize_layer_matrix(const LayerSpec& layer);

// Exact maximum singular value via eigen-decomposition of the Gram matrix.
double spectral_norm_oracle(const Tensor& m);

}  // namespace liplocal
