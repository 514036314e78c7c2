#include "xnas/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace xnas {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.contains(key))
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

AttackConfig parse_attack(const json& j) {
    reject_unknown_keys(j, {"step_size", "epsilon", "random_init", "eval_steps"}, "attack");
    AttackConfig a;
    read_field(j, "step_size", a.step_size);
    read_field(j, "epsilon", a.epsilon);
    read_field(j, "random_init", a.random_init);
    return a;
}

CrossbarSpec parse_crossbar_base(const json& j) {
    reject_unknown_keys(j, {"sizes", "r_min_ohm", "r_max_ohm", "weight_bits", "sigma_over_mu",
                            "noise_model"},
                        "crossbar");
    CrossbarSpec s;
    read_field(j, "r_min_ohm", s.r_min_ohm);
    read_field(j, "r_max_ohm", s.r_max_ohm);
    read_field(j, "weight_bits", s.weight_bits);
    read_field(j, "sigma_over_mu", s.sigma_over_mu);
    if (j.contains("noise_model")) {
        const std::string m = j.at("noise_model").get<std::string>();
        if (m == "multiplicative")
            s.noise_model = NoiseModel::multiplicative;
        else if (m == "additive_per_level")
            s.noise_model = NoiseModel::additive_per_level;
        else
            throw std::invalid_argument("config: unknown noise_model '" + m + "'");
    }
    return s;
}

std::map<int, double> parse_per_size(const json& j, const char* key) {
    std::map<int, double> out;
    for (const auto& [size_str, value] : j.at(key).items())
        out[std::stoi(size_str)] = value.get<double>();
    return out;
}

CostModelConfig parse_cost(const json& j) {
    reject_unknown_keys(j,
                        {"xbar_area_mm2", "tile_energy_mj", "tile_latency_ms", "area_overhead",
                         "energy_overhead", "delay_overhead", "avgpool_area_mm2"},
                        "cost_model");
    CostModelConfig c = CostModelConfig::defaults();
    if (j.contains("xbar_area_mm2")) c.xbar_area_mm2 = parse_per_size(j, "xbar_area_mm2");
    if (j.contains("tile_energy_mj")) c.tile_energy_mj = parse_per_size(j, "tile_energy_mj");
    if (j.contains("tile_latency_ms")) c.tile_latency_ms = parse_per_size(j, "tile_latency_ms");
    read_field(j, "area_overhead", c.area_overhead);
    read_field(j, "energy_overhead", c.energy_overhead);
    read_field(j, "delay_overhead", c.delay_overhead);
    read_field(j, "avgpool_area_mm2", c.avgpool_area_mm2);
    return c;
}

}  // namespace

void RunConfig::validate() const {
    train.validate();
    attack.validate();
    cost.validate();
    if (supernet_width < 1) throw std::invalid_argument("config: supernet width must be >= 1");
    if (validation_size < 1) throw std::invalid_argument("config: validation size must be >= 1");
    for (int n : eval_attack_steps)
        if (n < 1) throw std::invalid_argument("config: eval attack steps must be >= 1");
    for (double s : sweep_sigma_grid)
        if (s < 0.0) throw std::invalid_argument("config: sweep sigma must be >= 0");
    if (sweep_attack_steps < 0)
        throw std::invalid_argument("config: sweep attack steps must be >= 0");
    if (dataset.kind == DatasetConfig::Kind::cifar10 && dataset.cifar_dir.empty())
        throw std::invalid_argument("config: cifar10 dataset needs a 'dir'");
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown_keys(
        j, {"seed", "output_dir", "dataset", "supernet", "train", "attack", "crossbar",
            "cost_model", "sweep"},
        "top level");

    RunConfig cfg;
    read_field(j, "seed", cfg.seed);
    read_field(j, "output_dir", cfg.output_dir);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown_keys(d,
                            {"type", "classes", "train_per_class", "test_per_class", "image_size",
                             "channels", "margin", "pixel_noise", "dir"},
                            "dataset");
        const std::string type = d.value("type", "synthetic");
        if (type == "synthetic") {
            cfg.dataset.kind = DatasetConfig::Kind::synthetic;
            read_field(d, "classes", cfg.dataset.synthetic.classes);
            read_field(d, "train_per_class", cfg.dataset.synthetic.train_per_class);
            read_field(d, "test_per_class", cfg.dataset.synthetic.test_per_class);
            read_field(d, "image_size", cfg.dataset.synthetic.image_size);
            read_field(d, "channels", cfg.dataset.synthetic.channels);
            read_field(d, "margin", cfg.dataset.synthetic.margin);
            read_field(d, "pixel_noise", cfg.dataset.synthetic.pixel_noise);
        } else if (type == "cifar10") {
            cfg.dataset.kind = DatasetConfig::Kind::cifar10;
            read_field(d, "dir", cfg.dataset.cifar_dir);
            read_field(d, "train_per_class", cfg.dataset.cifar_train_per_class);
            read_field(d, "test_per_class", cfg.dataset.cifar_test_per_class);
        } else {
            throw std::invalid_argument("config: unknown dataset type '" + type + "'");
        }
    }

    if (j.contains("supernet")) {
        reject_unknown_keys(j.at("supernet"), {"width"}, "supernet");
        read_field(j.at("supernet"), "width", cfg.supernet_width);
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown_keys(t,
                            {"epochs", "batch_size", "finetune_epochs", "validation_size",
                             "weight_lr", "arch_lr", "variant", "lambda", "derive_threshold"},
                            "train");
        read_field(t, "epochs", cfg.train.epochs);
        read_field(t, "batch_size", cfg.train.batch_size);
        read_field(t, "finetune_epochs", cfg.train.finetune_epochs);
        read_field(t, "validation_size", cfg.validation_size);
        read_field(t, "weight_lr", cfg.train.weight_lr);
        read_field(t, "arch_lr", cfg.train.arch_lr);
        read_field(t, "lambda", cfg.train.lambda);
        read_field(t, "derive_threshold", cfg.train.derive_threshold);
        if (t.contains("variant")) cfg.train.variant = parse_variant(t.at("variant"));
    }

    if (j.contains("attack")) cfg.attack = parse_attack(j.at("attack"));
    if (j.contains("attack") && j.at("attack").contains("eval_steps"))
        cfg.eval_attack_steps = j.at("attack").at("eval_steps").get<std::vector<int>>();

    CrossbarSpec base;
    std::vector<int> sizes = {64};
    if (j.contains("crossbar")) {
        base = parse_crossbar_base(j.at("crossbar"));
        if (j.at("crossbar").contains("sizes"))
            sizes = j.at("crossbar").at("sizes").get<std::vector<int>>();
    }
    cfg.train.specs.clear();
    for (int n : sizes) {
        CrossbarSpec s = base;
        s.size = n;
        cfg.train.specs.push_back(s);
    }

    if (j.contains("cost_model")) cfg.cost = parse_cost(j.at("cost_model"));

    if (j.contains("sweep")) {
        reject_unknown_keys(j.at("sweep"), {"sigma_grid", "attack_steps"}, "sweep");
        if (j.at("sweep").contains("sigma_grid"))
            cfg.sweep_sigma_grid = j.at("sweep").at("sigma_grid").get<std::vector<double>>();
        read_field(j.at("sweep"), "attack_steps", cfg.sweep_attack_steps);
    }

    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

std::uint64_t config_hash(const RunConfig& cfg) {
    // canonical form: nlohmann objects iterate keys in sorted order
    json j;
    j["seed"] = cfg.seed;
    j["dataset_kind"] = cfg.dataset.kind == DatasetConfig::Kind::synthetic ? "synthetic" : "cifar10";
    j["classes"] = cfg.dataset.synthetic.classes;
    j["train_per_class"] = cfg.dataset.synthetic.train_per_class;
    j["test_per_class"] = cfg.dataset.synthetic.test_per_class;
    j["image_size"] = cfg.dataset.synthetic.image_size;
    j["margin"] = cfg.dataset.synthetic.margin;
    j["cifar_dir"] = cfg.dataset.cifar_dir;
    j["width"] = cfg.supernet_width;
    j["epochs"] = cfg.train.epochs;
    j["batch_size"] = cfg.train.batch_size;
    j["variant"] = variant_name(cfg.train.variant);
    j["lambda"] = cfg.train.lambda;
    std::vector<int> sizes;
    for (const auto& s : cfg.train.specs) sizes.push_back(s.size);
    j["sizes"] = sizes;
    j["sigma_over_mu"] = cfg.train.specs.front().sigma_over_mu;
    j["epsilon"] = cfg.attack.epsilon;
    j["validation_size"] = cfg.validation_size;
    const std::string dump = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Dataset build_dataset(const RunConfig& cfg) {
    if (cfg.dataset.kind == DatasetConfig::Kind::synthetic)
        return gen_synthetic(cfg.dataset.synthetic, cfg.validation_size, cfg.seed);
    return ingest_cifar10(cfg.dataset.cifar_dir, cfg.dataset.cifar_train_per_class,
                          cfg.dataset.cifar_test_per_class, cfg.validation_size, cfg.seed);
}

SupernetConfig build_supernet_config(const RunConfig& cfg, const Dataset& data) {
    SupernetConfig net;
    net.in_channels = data.channels;
    net.input_h = data.height;
    net.input_w = data.width;
    net.classes = data.classes;
    net.width = cfg.supernet_width;
    net.seed = cfg.seed;
    return net;
}

}  // namespace xnas
