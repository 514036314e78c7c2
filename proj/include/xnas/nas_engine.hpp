#ifndef XNAS_NAS_ENGINE_HPP
#define XNAS_NAS_ENGINE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xnas/adversarial.hpp"
#include "xnas/crossbar.hpp"
#include "xnas/dataset.hpp"
#include "xnas/hw_cost.hpp"
#include "xnas/optim.hpp"
#include "xnas/supernet.hpp"

namespace xnas {

// Search variants: noise-aware only; noise-aware plus area regularization;
// noise-aware across multiple crossbar sizes.
enum class Variant { xbar, xbar_ar, multixbar };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct TrainConfig {
    int epochs = 60;
    int batch_size = 1000;
    int finetune_epochs = 40;
    double weight_lr = 1e-3;
    double arch_lr = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    std::uint64_t seed = 0;
    Variant variant = Variant::xbar;
    double lambda = 0.0;  // area-regularization weight, xbar_ar only
    std::vector<CrossbarSpec> specs;
    double derive_threshold = 0.2;

    void validate() const;
};

// Discrete architecture extracted from trained probabilities: keep o_j when
// p_j > threshold; a slot that would retain nothing falls back to the argmax
// and is flagged.
struct SubnetDescriptor {
    GateSet gates;
    double threshold = 0.2;
    std::string variant;
    std::vector<int> crossbar_sizes;
    std::uint64_t seed = 0;
    std::vector<int> fallback_slots;

    std::string to_string() const { return serialize_arch(gates); }
};

SubnetDescriptor derive_subnet(const ArchParams& arch, double threshold = 0.2);

struct EpochLog {
    int epoch = 0;
    double phase1_loss = 0.0;
    double phase2_mean_loss = 0.0;
    std::uint64_t alpha_checksum = 0;
};

struct SearchResult {
    SubnetDescriptor subnet;
    std::vector<EpochLog> epochs;
};

// Algorithm driver. Owns the optimizers and the seeded streams; the supernet
// is borrowed and mutated in place.
class Trainer {
public:
    Trainer(Supernet& net, const TrainConfig& cfg, const AttackConfig& attack,
            const CostModelConfig& cost);

    // Phase-1: one Adam step on the weights from a clean batch. Architecture
    // parameters are untouched (checked by checksum in search()).
    double phase1_step(const Tensor& x, const std::vector<int>& labels);

    // Phase-2: per validation batch and per crossbar spec, bracket the
    // weights with that spec's epoch noise profile, attack the noisy model
    // with PGD-7 or PGD-20 (fair coin), and update only the architecture
    // parameters. Weights are restored bit-exactly.
    double phase2_epoch(const Dataset& data, int epoch);

    // Full two-phase loop plus derivation.
    SearchResult search(const Dataset& data);

    // Crossbar-aware adversarial fine-tuning of a derived subnet: per batch
    // and per spec, inject noise, attack half the batch, descend on the
    // clean/adversarial ensemble, restore, and step the clean weights.
    void finetune(const SubnetDescriptor& subnet, const Dataset& data, int epochs);

    std::int64_t finetune_update_count() const { return finetune_updates_; }

    Rng& attack_rng() { return attack_rng_; }
    std::string rng_state() const;
    void restore_rng_state(const std::string& state);

private:
    AdvBatch attack_batch(const Tensor& x, const std::vector<int>& labels, int steps,
                          const GateSet* gates);
    std::vector<LayerMapping> mappings_for(const CrossbarSpec& spec) const;

    Supernet& net_;
    TrainConfig cfg_;
    AttackConfig attack_cfg_;
    CostModelConfig cost_cfg_;
    std::optional<AreaTable> area_table_;
    Adam weight_opt_;
    Adam arch_opt_;
    Rng batch_rng_;
    Rng attack_rng_;
    std::int64_t finetune_updates_ = 0;
};

// Top-1 accuracy (percent) over a split. A profile, when given, brackets the
// whole evaluation; an attack config, when given, perturbs every batch with
// the fixed step count against the (possibly noisy) deployed model.
double evaluate(Supernet& net, const GateSet* gates, const Dataset& meta, const DataSplit& split,
                NoiseProfile* profile, const AttackConfig* attack, int batch_size,
                Rng& attack_rng);

// Versioned binary checkpoint: config hash, supernet config, alphas, named
// parameters and buffers, optimizer-free by design (fine-tuning restarts
// Adam), RNG states, and the derived architecture if any.
struct Checkpoint {
    std::uint64_t config_hash = 0;
    SupernetConfig net_cfg;
    std::vector<std::vector<double>> alphas;
    std::vector<std::pair<std::string, std::vector<double>>> params;
    std::vector<std::pair<std::string, std::vector<double>>> buffers;
    std::string trainer_rng_state;
    std::string subnet_arch;  // empty until derived
    double derive_threshold = 0.2;
};

Checkpoint snapshot(const Supernet& net, std::uint64_t config_hash,
                    const std::string& trainer_rng_state, const std::string& subnet_arch,
                    double derive_threshold);
void apply_checkpoint(Supernet& net, const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace xnas

#endif
