#include "xnas/crossbar.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "xnas/rng.hpp"

namespace xnas {

void CrossbarSpec::validate() const {
    if (size < 2) throw std::invalid_argument("CrossbarSpec: size must be >= 2");
    if (!(r_min_ohm > 0.0) || !(r_min_ohm < r_max_ohm))
        throw std::invalid_argument("CrossbarSpec: need 0 < R_MIN < R_MAX");
    if (weight_bits < 1 || weight_bits > 16)
        throw std::invalid_argument("CrossbarSpec: weight_bits out of range");
    if (sigma_over_mu < 0.0) throw std::invalid_argument("CrossbarSpec: sigma/mu must be >= 0");
}

int LayerMapping::occupied_rows(int tr) const {
    const int start = tr * crossbar_size;
    return std::clamp(rows - start, 0, crossbar_size);
}

int LayerMapping::occupied_cols(int tc) const {
    const int start = tc * crossbar_size;
    return std::clamp(cols - start, 0, crossbar_size);
}

LayerMapping reshape_and_tile(const std::string& layer_id, const std::vector<int>& weight_shape,
                              const CrossbarSpec& spec) {
    spec.validate();
    LayerMapping m;
    m.layer_id = layer_id;
    m.weight_shape = weight_shape;
    m.crossbar_size = spec.size;
    if (weight_shape.size() == 4) {
        // conv [O,C,k,k] -> rows = C*k^2, cols = O
        const int O = weight_shape[0], C = weight_shape[1], kh = weight_shape[2],
                  kw = weight_shape[3];
        if (O < 1 || C < 1 || kh < 1 || kh != kw)
            throw std::invalid_argument("reshape_and_tile: bad conv weight shape");
        m.rows = C * kh * kw;
        m.cols = O;
    } else if (weight_shape.size() == 2) {
        // FC [out,in] -> rows = in_features, cols = out_features (k=1 case)
        m.rows = weight_shape[1];
        m.cols = weight_shape[0];
    } else {
        throw std::invalid_argument("reshape_and_tile: weight must be 2-D or 4-D");
    }
    const int n = spec.size;
    m.r_pad = (n - m.rows % n) % n;
    m.c_pad = (n - m.cols % n) % n;
    m.tile_rows = (m.rows + m.r_pad) / n;
    m.tile_cols = (m.cols + m.c_pad) / n;
    return m;
}

double weight_to_conductance(double w, double w_max_abs, const CrossbarSpec& spec) {
    if (!(w_max_abs > 0.0))
        throw std::invalid_argument("weight_to_conductance: w_max_abs must be positive");
    const double mag = std::fabs(w);
    if (mag > w_max_abs)
        throw std::invalid_argument("weight_to_conductance: |w| exceeds layer maximum");
    const int last = spec.levels() - 1;
    const int level = static_cast<int>(std::floor(mag / w_max_abs * last + 0.5));
    return spec.g_min() + (spec.g_max() - spec.g_min()) * level / static_cast<double>(last);
}

double conductance_to_weight_mag(double g, double w_max_abs, const CrossbarSpec& spec) {
    return (g - spec.g_min()) / (spec.g_max() - spec.g_min()) * w_max_abs;
}

NoiseProfile sample_noise(const std::vector<LayerMapping>& mappings, const CrossbarSpec& spec,
                          std::uint64_t seed) {
    spec.validate();
    NoiseProfile profile;
    profile.spec = spec;
    profile.seed = seed;
    profile.layers.reserve(mappings.size());
    for (std::size_t li = 0; li < mappings.size(); ++li) {
        const LayerMapping& m = mappings[li];
        NoiseProfile::Layer layer;
        layer.name = m.layer_id;
        layer.weight_shape = m.weight_shape;
        const std::int64_t count = shape_numel(m.weight_shape);
        layer.delta.resize(static_cast<std::size_t>(count));
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(li)));
        for (double& d : layer.delta) d = rng.normal() * spec.sigma_over_mu;
        profile.layers.push_back(std::move(layer));
    }
    return profile;
}

namespace {

// Effective noisy weight for one clean weight given its realized draw.
double perturb_weight(double w, double w_max_abs, double delta, const CrossbarSpec& spec) {
    if (!(w_max_abs > 0.0)) return w;  // all-zero layer: nothing to map
    const double g = weight_to_conductance(w, w_max_abs, spec);
    double g_noisy;
    if (spec.noise_model == NoiseModel::multiplicative) {
        g_noisy = g * (1.0 + delta);
    } else {
        // additive-per-level: deviation scaled by the mid-range conductance,
        // independent of the programmed level
        const double g_mid = 0.5 * (spec.g_min() + spec.g_max());
        g_noisy = g + delta * g_mid;
    }
    g_noisy = std::clamp(g_noisy, spec.g_min(), spec.g_max());
    const double g_clean = std::clamp(g, spec.g_min(), spec.g_max());
    // additive effective perturbation; an unchanged conductance must leave
    // the weight bit-exact, so short-circuit before any arithmetic
    if (g_noisy == g_clean) return w;
    const double shift = conductance_to_weight_mag(g_noisy, w_max_abs, spec) -
                         conductance_to_weight_mag(g_clean, w_max_abs, spec);
    const double sign = w < 0.0 ? -1.0 : 1.0;
    return w + sign * shift;
}

void check_profile_layers(const std::vector<Tensor>& weights, const NoiseProfile& profile) {
    if (weights.size() != profile.layers.size())
        throw std::invalid_argument("noise profile: layer count mismatch");
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (weights[i].shape() != profile.layers[i].weight_shape)
            throw std::invalid_argument("noise profile: weight shape mismatch at layer " +
                                        profile.layers[i].name);
}

}  // namespace

void apply_noise(std::vector<Tensor>& weights, NoiseProfile& profile) {
    if (profile.applied)
        throw std::logic_error("apply_noise: profile already applied, restore first");
    check_profile_layers(weights, profile);
    profile.clean_cache.clear();
    profile.clean_cache.reserve(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        auto& vals = weights[i].values();
        profile.clean_cache.push_back(vals);
        double w_max = 0.0;
        for (double v : vals) w_max = std::max(w_max, std::fabs(v));
        const auto& delta = profile.layers[i].delta;
        for (std::size_t j = 0; j < vals.size(); ++j)
            vals[j] = perturb_weight(vals[j], w_max, delta[j], profile.spec);
    }
    profile.applied = true;
}

void restore_weights(std::vector<Tensor>& weights, NoiseProfile& profile) {
    if (!profile.applied) throw std::logic_error("restore_weights: profile not applied");
    check_profile_layers(weights, profile);
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i].values() = profile.clean_cache[i];
    profile.clean_cache.clear();
    profile.applied = false;
}

std::vector<double> column_current(const std::vector<double>& voltages,
                                   const std::vector<double>& conductances, int n) {
    if (static_cast<int>(voltages.size()) != n)
        throw std::invalid_argument("column_current: voltage vector length must equal n");
    if (static_cast<int>(conductances.size()) != n * n)
        throw std::invalid_argument("column_current: conductance matrix must be n x n");
    std::vector<double> currents(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double v = voltages[static_cast<std::size_t>(i)];
        const double* row = conductances.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) currents[static_cast<std::size_t>(j)] += row[j] * v;
    }
    return currents;
}

double underutilization(const LayerMapping& m) {
    const double rows = m.rows, cols = m.cols, rp = m.r_pad, cp = m.c_pad;
    return (rows * cp + cols * rp + rp * cp) / ((rows + rp) * (cols + cp)) * 100.0;
}

double average_underutilization(const std::vector<LayerMapping>& mappings) {
    double total = 0.0;
    int padded = 0;
    for (const LayerMapping& m : mappings) {
        if (!m.needs_padding()) continue;
        total += underutilization(m);
        ++padded;
    }
    return padded > 0 ? total / padded : 0.0;
}

namespace {

constexpr char kNoiseMagic[8] = {'X', 'N', 'A', 'S', 'N', 'O', 'I', 'S'};
constexpr std::uint32_t kNoiseVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("noise profile: truncated file");
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    std::uint32_t n;
    read_pod(is, n);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("noise profile: truncated string");
    return s;
}

}  // namespace

void save_noise_profile(const NoiseProfile& profile, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(kNoiseMagic, sizeof(kNoiseMagic));
    write_pod(os, kNoiseVersion);
    write_pod(os, profile.spec.size);
    write_pod(os, profile.spec.r_min_ohm);
    write_pod(os, profile.spec.r_max_ohm);
    write_pod(os, profile.spec.weight_bits);
    write_pod(os, profile.spec.sigma_over_mu);
    write_pod(os, static_cast<std::int32_t>(profile.spec.noise_model));
    write_pod(os, profile.seed);
    write_pod(os, static_cast<std::uint32_t>(profile.layers.size()));
    for (const auto& layer : profile.layers) {
        write_string(os, layer.name);
        write_pod(os, static_cast<std::uint32_t>(layer.weight_shape.size()));
        for (int d : layer.weight_shape) write_pod(os, d);
        write_pod(os, static_cast<std::uint64_t>(layer.delta.size()));
        os.write(reinterpret_cast<const char*>(layer.delta.data()),
                 static_cast<std::streamsize>(layer.delta.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("noise profile: write failed for " + path);
}

NoiseProfile load_noise_profile(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kNoiseMagic, sizeof(magic)) != 0)
        throw std::runtime_error("noise profile: bad magic in " + path);
    std::uint32_t version;
    read_pod(is, version);
    if (version != kNoiseVersion) throw std::runtime_error("noise profile: unsupported version");
    NoiseProfile p;
    read_pod(is, p.spec.size);
    read_pod(is, p.spec.r_min_ohm);
    read_pod(is, p.spec.r_max_ohm);
    read_pod(is, p.spec.weight_bits);
    read_pod(is, p.spec.sigma_over_mu);
    std::int32_t model;
    read_pod(is, model);
    p.spec.noise_model = static_cast<NoiseModel>(model);
    read_pod(is, p.seed);
    std::uint32_t layer_count;
    read_pod(is, layer_count);
    p.layers.resize(layer_count);
    for (auto& layer : p.layers) {
        layer.name = read_string(is);
        std::uint32_t rank;
        read_pod(is, rank);
        layer.weight_shape.resize(rank);
        for (auto& d : layer.weight_shape) read_pod(is, d);
        std::uint64_t count;
        read_pod(is, count);
        layer.delta.resize(count);
        is.read(reinterpret_cast<char*>(layer.delta.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!is) throw std::runtime_error("noise profile: truncated deltas");
    }
    return p;
}

}  // namespace xnas
