#ifndef XNAS_CONFIG_HPP
#define XNAS_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "xnas/adversarial.hpp"
#include "xnas/crossbar.hpp"
#include "xnas/dataset.hpp"
#include "xnas/hw_cost.hpp"
#include "xnas/nas_engine.hpp"

namespace xnas {

struct DatasetConfig {
    enum class Kind { synthetic, cifar10 } kind = Kind::synthetic;
    SyntheticSpec synthetic;
    std::string cifar_dir;
    int cifar_train_per_class = 0;  // 0 keeps the full files
    int cifar_test_per_class = 0;
};

// The run configuration file (JSON). Schema-validated on load: wrong types
// and unknown keys are rejected before any compute starts.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    DatasetConfig dataset;
    int supernet_width = 16;
    TrainConfig train;
    AttackConfig attack;
    std::vector<int> eval_attack_steps = {2, 20};
    CostModelConfig cost = CostModelConfig::defaults();
    std::vector<double> sweep_sigma_grid = {0.1, 0.2, 0.3, 0.4, 0.5};
    int sweep_attack_steps = 10;  // 0 sweeps clean accuracy
    int validation_size = 5000;

    void validate() const;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

// FNV over the canonical re-serialized form; ties checkpoints to configs.
std::uint64_t config_hash(const RunConfig& cfg);

Dataset build_dataset(const RunConfig& cfg);
SupernetConfig build_supernet_config(const RunConfig& cfg, const Dataset& data);

}  // namespace xnas

#endif
