#ifndef XNAS_CROSSBAR_HPP
#define XNAS_CROSSBAR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "xnas/tensor.hpp"

namespace xnas {

enum class NoiseModel { multiplicative, additive_per_level };

// One crossbar technology point. Defaults: 100 kOhm..1 MOhm ReRAM range
// (G in [1uS, 10uS]), 8-bit weight levels, 35% device variation.
struct CrossbarSpec {
    int size = 64;  // n x n array
    double r_min_ohm = 1e5;
    double r_max_ohm = 1e6;
    int weight_bits = 8;
    double sigma_over_mu = 0.35;
    NoiseModel noise_model = NoiseModel::multiplicative;

    double g_min() const { return 1.0 / r_max_ohm; }
    double g_max() const { return 1.0 / r_min_ohm; }
    int levels() const { return 1 << weight_bits; }
    void validate() const;
};

// How one layer's weight matrix lands on n x n arrays: 4-D conv weights
// reshape to (in_ch*k^2) x out_ch, FC weights to in_features x out_features,
// then zero-pad up to the next multiple of n and split into tiles. The
// occupied region of every tile is the top-left rectangle.
struct LayerMapping {
    std::string layer_id;
    std::vector<int> weight_shape;  // original tensor shape
    int rows = 0, cols = 0;         // logical 2-D shape
    int r_pad = 0, c_pad = 0;       // zero-padding to the next multiple of n
    int tile_rows = 0, tile_cols = 0;
    int crossbar_size = 0;

    int padded_rows() const { return rows + r_pad; }
    int padded_cols() const { return cols + c_pad; }
    int tile_count() const { return tile_rows * tile_cols; }
    bool needs_padding() const { return r_pad > 0 || c_pad > 0; }
    // occupied extent of the tile at grid position (tr, tc)
    int occupied_rows(int tr) const;
    int occupied_cols(int tc) const;
};

LayerMapping reshape_and_tile(const std::string& layer_id, const std::vector<int>& weight_shape,
                              const CrossbarSpec& spec);

// Magnitude-to-conductance mapping, quantized to 2^weight_bits uniform levels
// over [g_min, g_max]; the sign stays in software.
double weight_to_conductance(double w, double w_max_abs, const CrossbarSpec& spec);
double conductance_to_weight_mag(double g, double w_max_abs, const CrossbarSpec& spec);

// Realized device-variation draws for a set of layers. delta holds one
// standard-normal-scaled draw per logical weight; padded cells have none.
// apply_noise caches the clean weights inside the profile so restore is
// bit-exact rather than recomputed by inversion.
struct NoiseProfile {
    struct Layer {
        std::string name;
        std::vector<int> weight_shape;
        std::vector<double> delta;
    };
    CrossbarSpec spec;
    std::uint64_t seed = 0;
    std::vector<Layer> layers;

    // set while noise is applied
    bool applied = false;
    std::vector<std::vector<double>> clean_cache;
};

NoiseProfile sample_noise(const std::vector<LayerMapping>& mappings, const CrossbarSpec& spec,
                          std::uint64_t seed);

// In-place noise injection over the listed weight tensors (same order and
// shapes as the profile's layers). Effective weights move as their
// conductances do: w' = sign(w) * inv(clamp(perturb(quantize(map(|w|))))),
// expressed as an additive perturbation so sigma/mu = 0 is an exact identity.
void apply_noise(std::vector<Tensor>& weights, NoiseProfile& profile);
void restore_weights(std::vector<Tensor>& weights, NoiseProfile& profile);

// Net column currents of one tile: I_j = sum_i G[i][j] * V[i].
// V has length n, conductances are row-major n x n.
std::vector<double> column_current(const std::vector<double>& voltages,
                                   const std::vector<double>& conductances, int n);

// Zero-padding overhead of one mapped layer, in percent of padded capacity.
double underutilization(const LayerMapping& mapping);
// Mean over the layers that actually need padding; 0 when none does.
double average_underutilization(const std::vector<LayerMapping>& mappings);

// Binary export of a profile (header: spec, seed, layer shapes; then deltas).
void save_noise_profile(const NoiseProfile& profile, const std::string& path);
NoiseProfile load_noise_profile(const std::string& path);

}  // namespace xnas

#endif
