#include "xnas/nas_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace xnas {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::xbar: return "xbar";
        case Variant::xbar_ar: return "xbar_ar";
        case Variant::multixbar: return "multixbar";
    }
    throw std::logic_error("unknown variant");
}

Variant parse_variant(const std::string& name) {
    if (name == "xbar") return Variant::xbar;
    if (name == "xbar_ar") return Variant::xbar_ar;
    if (name == "multixbar") return Variant::multixbar;
    throw std::invalid_argument("unknown variant '" + name + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1 || finetune_epochs < 0)
        throw std::invalid_argument("TrainConfig: bad epoch counts");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (weight_lr < 0.0 || arch_lr < 0.0)
        throw std::invalid_argument("TrainConfig: learning rates must be non-negative");
    if (specs.empty()) throw std::invalid_argument("TrainConfig: need at least one crossbar spec");
    if (variant != Variant::multixbar && specs.size() != 1)
        throw std::invalid_argument("TrainConfig: xbar/xbar_ar variants take exactly one spec");
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (variant != Variant::xbar_ar && lambda != 0.0)
        throw std::invalid_argument("TrainConfig: lambda applies to the xbar_ar variant only");
    if (!(derive_threshold > 0.0) || derive_threshold >= 1.0)
        throw std::invalid_argument("TrainConfig: derive threshold must be in (0,1)");
    for (const auto& s : specs) s.validate();
}

SubnetDescriptor derive_subnet(const ArchParams& arch, double threshold) {
    SubnetDescriptor d;
    d.threshold = threshold;
    for (int slot = 0; slot < kSlotCount; ++slot) {
        const std::vector<double> p = arch.probabilities(slot);
        d.gates[slot].assign(p.size(), 0);
        bool any = false;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (p[j] > threshold) {
                d.gates[slot][j] = 1;
                any = true;
            }
        }
        if (!any) {
            const auto best = std::max_element(p.begin(), p.end()) - p.begin();
            d.gates[slot][static_cast<std::size_t>(best)] = 1;
            d.fallback_slots.push_back(slot);
        }
    }
    return d;
}

namespace {

// stream tags for seed derivation
constexpr std::uint64_t kTagPhase1Batch = 0x70315f62ULL;
constexpr std::uint64_t kTagAttack = 0x6174746bULL;
constexpr std::uint64_t kTagPhase2Noise = 0x70326e6fULL;
constexpr std::uint64_t kTagFinetuneNoise = 0x66746e6fULL;
constexpr std::uint64_t kTagFinetuneShuffle = 0x66747368ULL;

std::vector<int> range_chunk(int begin, int end) {
    std::vector<int> idx(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    return idx;
}

// restores weights even if an epoch aborts mid-flight
class NoiseScope {
public:
    NoiseScope(std::vector<Tensor>& weights, NoiseProfile& profile)
        : weights_(weights), profile_(profile) {
        apply_noise(weights_, profile_);
    }
    ~NoiseScope() { restore_weights(weights_, profile_); }
    NoiseScope(const NoiseScope&) = delete;
    NoiseScope& operator=(const NoiseScope&) = delete;

private:
    std::vector<Tensor>& weights_;
    NoiseProfile& profile_;
};

}  // namespace

Trainer::Trainer(Supernet& net, const TrainConfig& cfg, const AttackConfig& attack,
                 const CostModelConfig& cost)
    : net_(net),
      cfg_(cfg),
      attack_cfg_(attack),
      cost_cfg_(cost),
      weight_opt_(net.param_tensors(),
                  {.lr = cfg.weight_lr, .beta1 = cfg.adam_beta1, .beta2 = cfg.adam_beta2}),
      arch_opt_(net.alpha_tensors(),
                {.lr = cfg.arch_lr, .beta1 = cfg.adam_beta1, .beta2 = cfg.adam_beta2}),
      batch_rng_(mix_seed(cfg.seed, kTagPhase1Batch)),
      attack_rng_(mix_seed(cfg.seed, kTagAttack)) {
    cfg_.validate();
    attack_cfg_.validate();
    if (cfg_.variant == Variant::xbar_ar)
        area_table_ = build_area_table(net_.config(), cfg_.specs[0], cost_cfg_);
}

std::vector<LayerMapping> Trainer::mappings_for(const CrossbarSpec& spec) const {
    std::vector<LayerMapping> mappings;
    for (const auto& [name, shape] : net_.mapped_layers())
        mappings.push_back(reshape_and_tile(name, shape, spec));
    return mappings;
}

AdvBatch Trainer::attack_batch(const Tensor& x, const std::vector<int>& labels, int steps,
                               const GateSet* gates) {
    // frozen parameters: the attack only needs input gradients
    net_.set_params_requires_grad(false);
    AttackConfig cfg = attack_cfg_;
    cfg.steps = steps;
    auto forward = [&](const Tensor& t) { return net_.forward(t, RunMode::eval, gates); };
    AdvBatch batch = pgd_attack(forward, x, labels, cfg, attack_rng_);
    net_.set_params_requires_grad(true);
    return batch;
}

double Trainer::phase1_step(const Tensor& x, const std::vector<int>& labels) {
    if (!x.defined() || x.dim(0) == 0 || labels.empty())
        throw std::invalid_argument("phase1_step: empty batch");
    net_.set_params_requires_grad(true);
    net_.zero_all_grads();
    Tensor loss = cross_entropy(net_.forward(x, RunMode::train), labels);
    backward(loss);
    weight_opt_.step();  // alphas are not in this optimizer
    net_.zero_all_grads();
    return loss.item();
}

double Trainer::phase2_epoch(const Dataset& data, int epoch) {
    if (data.validation.count == 0)
        throw std::invalid_argument("phase2_epoch: empty validation split");
    std::vector<Tensor> mapped = net_.mapped_weights();

    // one fresh profile per (epoch, spec)
    std::vector<NoiseProfile> profiles;
    for (std::size_t si = 0; si < cfg_.specs.size(); ++si)
        profiles.push_back(sample_noise(mappings_for(cfg_.specs[si]), cfg_.specs[si],
                                        mix_seed(cfg_.seed, kTagPhase2Noise,
                                                 mix_seed(static_cast<std::uint64_t>(epoch), si))));

    // noisy weights are frozen; only alpha trains
    net_.set_params_requires_grad(false);
    double loss_acc = 0.0;
    int batches = 0;
    const int B = cfg_.batch_size;
    try {
        for (int start = 0; start < data.validation.count; start += B) {
            const int end = std::min(start + B, data.validation.count);
            std::vector<int> labels;
            Tensor x = make_batch(data, data.validation, range_chunk(start, end), labels);
            for (std::size_t si = 0; si < cfg_.specs.size(); ++si) {
                NoiseScope scope(mapped, profiles[si]);
                const int steps = attack_rng_.coin() ? 7 : 20;
                AdvBatch adv;
                {
                    auto forward = [&](const Tensor& t) {
                        return net_.forward(t, RunMode::eval, nullptr);
                    };
                    AttackConfig acfg = attack_cfg_;
                    acfg.steps = steps;
                    adv = pgd_attack(forward, x, labels, acfg, attack_rng_);
                }
                net_.zero_all_grads();
                Tensor loss = cross_entropy(net_.forward(adv.x_adv, RunMode::eval), labels);
                if (area_table_)
                    loss = regularized_loss(loss, expected_cost(net_.arch(), *area_table_),
                                            cfg_.lambda);
                backward(loss);
                arch_opt_.step();
                net_.zero_all_grads();
                loss_acc += loss.item();
                ++batches;
            }
        }
    } catch (const std::runtime_error& e) {
        net_.set_params_requires_grad(true);
        throw std::runtime_error("phase-2 epoch " + std::to_string(epoch) +
                                 " aborted: " + e.what());
    }
    net_.set_params_requires_grad(true);
    return batches > 0 ? loss_acc / batches : 0.0;
}

SearchResult Trainer::search(const Dataset& data) {
    if (data.train.count < cfg_.batch_size)
        throw std::invalid_argument("search: training split smaller than one batch");
    SearchResult result;
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
        EpochLog log;
        log.epoch = epoch;

        // Phase-1, alpha must stay untouched
        const std::uint64_t alpha_before = net_.alpha_checksum();
        std::vector<int> idx(static_cast<std::size_t>(data.train.count));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < cfg_.batch_size; ++i)
            std::swap(idx[i], idx[i + batch_rng_.uniform_int(data.train.count - i)]);
        idx.resize(static_cast<std::size_t>(cfg_.batch_size));
        std::vector<int> labels;
        Tensor x = make_batch(data, data.train, idx, labels);
        log.phase1_loss = phase1_step(x, labels);
        if (net_.alpha_checksum() != alpha_before)
            throw std::logic_error("phase separation violated: alpha changed in phase-1");

        // Phase-2, weights must come back bit-exact
        const std::uint64_t w_before = net_.weight_checksum();
        log.phase2_mean_loss = phase2_epoch(data, epoch);
        if (net_.weight_checksum() != w_before)
            throw std::logic_error("phase separation violated: weights changed in phase-2");

        log.alpha_checksum = net_.alpha_checksum();
        result.epochs.push_back(log);
    }
    result.subnet = derive_subnet(net_.arch(), cfg_.derive_threshold);
    result.subnet.variant = variant_name(cfg_.variant);
    result.subnet.seed = cfg_.seed;
    for (const auto& s : cfg_.specs) result.subnet.crossbar_sizes.push_back(s.size);
    return result;
}

void Trainer::finetune(const SubnetDescriptor& subnet, const Dataset& data, int epochs) {
    if (epochs == 0) return;
    if (epochs < 0) throw std::invalid_argument("finetune: negative epoch count");
    std::vector<Tensor> mapped = net_.mapped_weights();
    // fresh optimizer for the fine-tuning stage
    weight_opt_ = Adam(net_.param_tensors(),
                       {.lr = cfg_.weight_lr, .beta1 = cfg_.adam_beta1, .beta2 = cfg_.adam_beta2});
    Rng shuffle_rng(mix_seed(cfg_.seed, kTagFinetuneShuffle));
    const int B = cfg_.batch_size;

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        std::vector<NoiseProfile> profiles;
        for (std::size_t si = 0; si < cfg_.specs.size(); ++si)
            profiles.push_back(
                sample_noise(mappings_for(cfg_.specs[si]), cfg_.specs[si],
                             mix_seed(cfg_.seed, kTagFinetuneNoise,
                                      mix_seed(static_cast<std::uint64_t>(epoch), si))));

        std::vector<int> order(static_cast<std::size_t>(data.train.count));
        std::iota(order.begin(), order.end(), 0);
        for (int i = data.train.count - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);

        for (int start = 0; start < data.train.count; start += B) {
            const int end = std::min(start + B, data.train.count);
            std::vector<int> batch_idx(order.begin() + start, order.begin() + end);
            std::vector<int> labels;
            Tensor x = make_batch(data, data.train, batch_idx, labels);
            const int n = end - start;
            const int adv_from = n / 2;  // second half of the batch gets attacked

            for (std::size_t si = 0; si < cfg_.specs.size(); ++si) {
                {
                    NoiseScope scope(mapped, profiles[si]);
                    Tensor mix = Tensor::from_data(x.shape(), x.values());
                    if (adv_from < n) {
                        std::vector<int> tail_labels(labels.begin() + adv_from, labels.end());
                        const int isz = data.image_size();
                        Tensor tail = Tensor::zeros({n - adv_from, data.channels, data.height,
                                                     data.width});
                        std::copy_n(x.values().begin() + static_cast<std::size_t>(adv_from) * isz,
                                    static_cast<std::size_t>(n - adv_from) * isz,
                                    tail.values().begin());
                        const int steps = attack_rng_.coin() ? 7 : 20;
                        AdvBatch adv = attack_batch(tail, tail_labels, steps, &subnet.gates);
                        std::copy(adv.x_adv.values().begin(), adv.x_adv.values().end(),
                                  mix.values().begin() + static_cast<std::size_t>(adv_from) * isz);
                    }
                    net_.set_params_requires_grad(true);
                    net_.zero_all_grads();
                    Tensor loss =
                        cross_entropy(net_.forward(mix, RunMode::train, &subnet.gates), labels);
                    backward(loss);
                }
                // gradients were taken at the noisy point; the scope has
                // restored the clean weights, which now receive the update
                weight_opt_.step();
                ++finetune_updates_;
            }
        }
    }
    net_.zero_all_grads();
}

std::string Trainer::rng_state() const {
    return batch_rng_.serialize() + "\n" + attack_rng_.serialize();
}

void Trainer::restore_rng_state(const std::string& state) {
    const auto pos = state.find('\n');
    if (pos == std::string::npos) throw std::invalid_argument("bad trainer rng state");
    batch_rng_.deserialize(state.substr(0, pos));
    attack_rng_.deserialize(state.substr(pos + 1));
}

double evaluate(Supernet& net, const GateSet* gates, const Dataset& meta, const DataSplit& split,
                NoiseProfile* profile, const AttackConfig* attack, int batch_size,
                Rng& attack_rng) {
    if (split.count == 0) throw std::invalid_argument("evaluate: empty split");
    std::vector<Tensor> mapped = net.mapped_weights();
    std::optional<NoiseScope> scope;
    if (profile) scope.emplace(mapped, *profile);
    net.set_params_requires_grad(false);

    int correct = 0;
    for (int start = 0; start < split.count; start += batch_size) {
        const int end = std::min(start + batch_size, split.count);
        std::vector<int> labels;
        Tensor x = make_batch(meta, split, range_chunk(start, end), labels);
        if (attack) {
            auto forward = [&](const Tensor& t) { return net.forward(t, RunMode::eval, gates); };
            AdvBatch adv = pgd_attack(forward, x, labels, *attack, attack_rng);
            x = adv.x_adv;
        }
        NoGradGuard guard;
        Tensor logits = net.forward(x, RunMode::eval, gates);
        const int K = meta.classes;
        for (int i = 0; i < end - start; ++i) {
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (logits.values()[i * K + k] > logits.values()[i * K + best]) best = k;
            if (best == labels[static_cast<std::size_t>(i)]) ++correct;
        }
    }
    net.set_params_requires_grad(true);
    return 100.0 * correct / split.count;
}

namespace {

constexpr char kCkptMagic[8] = {'X', 'N', 'A', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void wr(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void rd(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
}
void wr_string(std::ostream& os, const std::string& s) {
    wr(os, static_cast<std::uint64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string rd_string(std::istream& is) {
    std::uint64_t n;
    rd(is, n);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}
void wr_doubles(std::ostream& os, const std::vector<double>& v) {
    wr(os, static_cast<std::uint64_t>(v.size()));
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}
std::vector<double> rd_doubles(std::istream& is) {
    std::uint64_t n;
    rd(is, n);
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated values");
    return v;
}

}  // namespace

Checkpoint snapshot(const Supernet& net, std::uint64_t config_hash,
                    const std::string& trainer_rng_state, const std::string& subnet_arch,
                    double derive_threshold) {
    Checkpoint c;
    c.config_hash = config_hash;
    c.net_cfg = net.config();
    for (const auto& a : net.arch().alpha) c.alphas.push_back(a.values());
    for (const auto& p : net.params()) c.params.emplace_back(p.name, p.tensor.values());
    for (const auto& b : net.buffers()) c.buffers.emplace_back(b.name, b.tensor.values());
    c.trainer_rng_state = trainer_rng_state;
    c.subnet_arch = subnet_arch;
    c.derive_threshold = derive_threshold;
    return c;
}

void apply_checkpoint(Supernet& net, const Checkpoint& ckpt) {
    if (ckpt.alphas.size() != kSlotCount)
        throw std::runtime_error("checkpoint: alpha slot count mismatch");
    for (int slot = 0; slot < kSlotCount; ++slot) {
        if (ckpt.alphas[slot].size() != net.arch().alpha[slot].values().size())
            throw std::runtime_error("checkpoint: alpha width mismatch");
        net.arch().alpha[slot].values() = ckpt.alphas[slot];
    }
    auto fill = [](std::vector<NamedParam>& dst,
                   const std::vector<std::pair<std::string, std::vector<double>>>& src,
                   const char* what) {
        if (dst.size() != src.size())
            throw std::runtime_error(std::string("checkpoint: ") + what + " count mismatch");
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (dst[i].name != src[i].first || dst[i].tensor.values().size() != src[i].second.size())
                throw std::runtime_error(std::string("checkpoint: ") + what + " mismatch at " +
                                         src[i].first);
            dst[i].tensor.values() = src[i].second;
        }
    };
    fill(net.params(), ckpt.params, "param");
    fill(net.buffers(), ckpt.buffers, "buffer");
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(kCkptMagic, sizeof(kCkptMagic));
    wr(os, kCkptVersion);
    wr(os, c.config_hash);
    wr(os, c.net_cfg.in_channels);
    wr(os, c.net_cfg.input_h);
    wr(os, c.net_cfg.input_w);
    wr(os, c.net_cfg.classes);
    wr(os, c.net_cfg.width);
    wr(os, c.net_cfg.seed);
    wr(os, static_cast<std::uint32_t>(c.alphas.size()));
    for (const auto& a : c.alphas) wr_doubles(os, a);
    auto dump = [&](const std::vector<std::pair<std::string, std::vector<double>>>& list) {
        wr(os, static_cast<std::uint32_t>(list.size()));
        for (const auto& [name, values] : list) {
            wr_string(os, name);
            wr_doubles(os, values);
        }
    };
    dump(c.params);
    dump(c.buffers);
    wr_string(os, c.trainer_rng_state);
    wr_string(os, c.subnet_arch);
    wr(os, c.derive_threshold);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version;
    rd(is, version);
    if (version != kCkptVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    rd(is, c.config_hash);
    rd(is, c.net_cfg.in_channels);
    rd(is, c.net_cfg.input_h);
    rd(is, c.net_cfg.input_w);
    rd(is, c.net_cfg.classes);
    rd(is, c.net_cfg.width);
    rd(is, c.net_cfg.seed);
    std::uint32_t n;
    rd(is, n);
    c.alphas.resize(n);
    for (auto& a : c.alphas) a = rd_doubles(is);
    auto slurp = [&](std::vector<std::pair<std::string, std::vector<double>>>& list) {
        std::uint32_t count;
        rd(is, count);
        list.resize(count);
        for (auto& [name, values] : list) {
            name = rd_string(is);
            values = rd_doubles(is);
        }
    };
    slurp(c.params);
    slurp(c.buffers);
    c.trainer_rng_state = rd_string(is);
    c.subnet_arch = rd_string(is);
    rd(is, c.derive_threshold);
    return c;
}

}  // namespace xnas
