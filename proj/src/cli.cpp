#include "xnas/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace xnas {

namespace {

constexpr std::uint64_t kTagEvalNoise = 0x65766c6eULL;
constexpr std::uint64_t kTagEvalAttack = 0x65766c61ULL;
constexpr std::uint64_t kTagSweepNoise = 0x73776e6fULL;

void ensure_dir(const std::string& dir) {
    std::filesystem::create_directories(dir);
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << content;
    if (!os) throw std::runtime_error("write failed for " + path);
}

std::string subnet_file_text(const SubnetDescriptor& subnet) {
    std::ostringstream os;
    os << "arch=" << subnet.to_string() << "\n";
    os << "threshold=" << subnet.threshold << "\n";
    os << "variant=" << subnet.variant << "\n";
    os << "seed=" << subnet.seed << "\n";
    os << "crossbar_sizes=";
    for (std::size_t i = 0; i < subnet.crossbar_sizes.size(); ++i)
        os << (i ? "," : "") << subnet.crossbar_sizes[i];
    os << "\n";
    os << "fallback_slots=";
    for (std::size_t i = 0; i < subnet.fallback_slots.size(); ++i)
        os << (i ? "," : "") << subnet.fallback_slots[i];
    os << "\n";
    return os.str();
}

NoiseProfile profile_for(Supernet& net, const CrossbarSpec& spec, std::uint64_t seed) {
    std::vector<LayerMapping> mappings;
    for (const auto& [name, shape] : net.mapped_layers())
        mappings.push_back(reshape_and_tile(name, shape, spec));
    return sample_noise(mappings, spec, seed);
}

// rebuilds the model and its derived gates from a checkpoint
struct LoadedModel {
    Checkpoint ckpt;
    std::unique_ptr<Supernet> net;
    SubnetDescriptor subnet;
};

LoadedModel load_model(const RunConfig& cfg, const std::string& checkpoint_path) {
    LoadedModel m;
    m.ckpt = load_checkpoint(checkpoint_path);
    if (m.ckpt.config_hash != config_hash(cfg))
        throw std::runtime_error(
            "checkpoint was produced by a different configuration (hash mismatch); "
            "pass the config file used for the search");
    m.net = std::make_unique<Supernet>(m.ckpt.net_cfg);
    apply_checkpoint(*m.net, m.ckpt);
    m.subnet = derive_subnet(m.net->arch(), m.ckpt.derive_threshold);
    if (!m.ckpt.subnet_arch.empty() && m.subnet.to_string() != m.ckpt.subnet_arch)
        throw std::runtime_error("checkpoint: stored architecture disagrees with re-derivation");
    m.subnet.variant = variant_name(cfg.train.variant);
    m.subnet.seed = cfg.seed;
    for (const auto& s : cfg.train.specs) m.subnet.crossbar_sizes.push_back(s.size);
    return m;
}

}  // namespace

int cmd_search(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    Dataset data = build_dataset(cfg);
    Supernet net(build_supernet_config(cfg, data));
    Trainer trainer(net, cfg.train, cfg.attack, cfg.cost);
    SearchResult result = trainer.search(data);

    std::ostringstream log;
    log << "epoch,phase1_loss,phase2_mean_loss\n";
    log.precision(12);
    for (const auto& e : result.epochs)
        log << e.epoch << "," << e.phase1_loss << "," << e.phase2_mean_loss << "\n";
    write_file(out_dir + "/search_log.csv", log.str());

    write_file(out_dir + "/subnet.txt", subnet_file_text(result.subnet));
    for (const auto& spec : cfg.train.specs) {
        HardwareReport report = edap_report(result.subnet.gates, net.config(), spec, cfg.cost);
        write_file(out_dir + "/hardware_report_n" + std::to_string(spec.size) + ".txt",
                   format_report(report));
    }

    Checkpoint ckpt = snapshot(net, config_hash(cfg), trainer.rng_state(),
                               result.subnet.to_string(), cfg.train.derive_threshold);
    save_checkpoint(ckpt, out_dir + "/checkpoint.bin");
    std::cout << "search: derived " << result.subnet.to_string() << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& out_dir) {
    ensure_dir(out_dir);
    Dataset data = build_dataset(cfg);
    LoadedModel m = load_model(cfg, checkpoint_path);
    Trainer trainer(*m.net, cfg.train, cfg.attack, cfg.cost);
    if (!m.ckpt.trainer_rng_state.empty()) trainer.restore_rng_state(m.ckpt.trainer_rng_state);
    trainer.finetune(m.subnet, data, cfg.train.finetune_epochs);

    Checkpoint ckpt = snapshot(*m.net, config_hash(cfg), trainer.rng_state(),
                               m.subnet.to_string(), m.ckpt.derive_threshold);
    save_checkpoint(ckpt, out_dir + "/checkpoint_finetuned.bin");
    std::cout << "finetune: " << cfg.train.finetune_epochs << " epochs, "
              << trainer.finetune_update_count() << " weight updates\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& out_dir) {
    ensure_dir(out_dir);
    Dataset data = build_dataset(cfg);
    LoadedModel m = load_model(cfg, checkpoint_path);

    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "arch=" << m.subnet.to_string() << "\n";
    for (const auto& spec : cfg.train.specs) {
        const std::string prefix = "n" + std::to_string(spec.size);
        NoiseProfile clean_profile =
            profile_for(*m.net, spec, mix_seed(cfg.seed, kTagEvalNoise, spec.size));
        Rng eval_rng(mix_seed(cfg.seed, kTagEvalAttack, spec.size));
        const double clean = evaluate(*m.net, &m.subnet.gates, data, data.test, &clean_profile,
                                      nullptr, cfg.train.batch_size, eval_rng);
        os << prefix << ".clean_accuracy=" << clean << "\n";
        for (int steps : cfg.eval_attack_steps) {
            AttackConfig attack = cfg.attack;
            attack.steps = steps;
            NoiseProfile profile =
                profile_for(*m.net, spec, mix_seed(cfg.seed, kTagEvalNoise, spec.size));
            const double acc = evaluate(*m.net, &m.subnet.gates, data, data.test, &profile,
                                        &attack, cfg.train.batch_size, eval_rng);
            os << prefix << ".pgd" << steps << "_accuracy=" << acc << "\n";
        }
    }
    write_file(out_dir + "/eval_report.txt", os.str());
    std::cout << os.str();
    return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& out_dir) {
    ensure_dir(out_dir);
    Dataset data = build_dataset(cfg);
    LoadedModel m = load_model(cfg, checkpoint_path);
    const CrossbarSpec base = cfg.train.specs.front();

    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "sigma_over_mu,attack_steps,accuracy\n";
    for (double sigma : cfg.sweep_sigma_grid) {
        CrossbarSpec spec = base;
        spec.sigma_over_mu = sigma;
        NoiseProfile profile =
            profile_for(*m.net, spec, mix_seed(cfg.seed, kTagSweepNoise, spec.size));
        Rng eval_rng(mix_seed(cfg.seed, kTagEvalAttack, spec.size));
        double acc;
        if (cfg.sweep_attack_steps > 0) {
            AttackConfig attack = cfg.attack;
            attack.steps = cfg.sweep_attack_steps;
            acc = evaluate(*m.net, &m.subnet.gates, data, data.test, &profile, &attack,
                           cfg.train.batch_size, eval_rng);
        } else {
            acc = evaluate(*m.net, &m.subnet.gates, data, data.test, &profile, nullptr,
                           cfg.train.batch_size, eval_rng);
        }
        os << sigma << "," << cfg.sweep_attack_steps << "," << acc << "\n";
    }
    write_file(out_dir + "/sweep.csv", os.str());
    std::cout << os.str();
    return 0;
}

}  // namespace xnas
