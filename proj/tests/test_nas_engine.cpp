#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "xnas/nas_engine.hpp"

using namespace xnas;

namespace {

SupernetConfig tiny_net_config(int classes = 2, std::uint64_t seed = 1) {
    SupernetConfig cfg;
    cfg.in_channels = 3;
    cfg.input_h = 16;
    cfg.input_w = 16;
    cfg.classes = classes;
    cfg.width = 2;
    cfg.seed = seed;
    return cfg;
}

TrainConfig tiny_train_config(Variant variant = Variant::xbar, std::uint64_t seed = 7) {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.finetune_epochs = 2;
    cfg.seed = seed;
    cfg.variant = variant;
    CrossbarSpec spec;
    spec.size = 64;
    cfg.specs = {spec};
    return cfg;
}

Dataset tiny_data(int classes = 2, std::uint64_t seed = 3) {
    SyntheticSpec spec;
    spec.classes = classes;
    spec.train_per_class = 24;
    spec.test_per_class = 16;
    spec.image_size = 16;
    spec.margin = 0.8;
    return gen_synthetic(spec, 16, seed);
}

AttackConfig fast_attack() {
    AttackConfig cfg;
    cfg.steps = 2;
    return cfg;
}

}  // namespace

TEST_CASE("phase-1 leaves architecture parameters bit-identical") {
    Supernet net(tiny_net_config());
    Trainer trainer(net, tiny_train_config(), fast_attack(), CostModelConfig::defaults());
    Dataset data = tiny_data();
    std::vector<int> labels;
    Tensor x = make_batch(data, data.train, {0, 1, 2, 3}, labels);

    const std::uint64_t alpha_before = net.alpha_checksum();
    trainer.phase1_step(x, labels);
    CHECK(net.alpha_checksum() == alpha_before);
    CHECK_THROWS_AS(trainer.phase1_step(Tensor::zeros({1, 3, 16, 16}), {}),
                    std::invalid_argument);
}

TEST_CASE("phase-1 with zero learning rate leaves weights unchanged") {
    Supernet net(tiny_net_config());
    TrainConfig cfg = tiny_train_config();
    cfg.weight_lr = 0.0;
    Trainer trainer(net, cfg, fast_attack(), CostModelConfig::defaults());
    Dataset data = tiny_data();
    std::vector<int> labels;
    Tensor x = make_batch(data, data.train, {0, 1, 2, 3}, labels);

    const std::uint64_t w_before = net.weight_checksum();
    trainer.phase1_step(x, labels);
    // running BN stats move in train mode, so compare parameters only
    std::uint64_t after = 0x9ae16a3b2f90404fULL;
    std::uint64_t before_params = 0x9ae16a3b2f90404fULL;
    (void)w_before;
    Supernet ref(tiny_net_config());
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        after = checksum_combine(after, checksum(net.params()[i].tensor));
        before_params = checksum_combine(before_params, checksum(ref.params()[i].tensor));
    }
    CHECK(after == before_params);
}

TEST_CASE("phase-1 usually reduces the loss on its own batch") {
    int improved = 0;
    const int trials = 10;
    for (int t = 0; t < trials; ++t) {
        Supernet net(tiny_net_config(2, 100 + t));
        Trainer trainer(net, tiny_train_config(Variant::xbar, 200 + t), fast_attack(),
                        CostModelConfig::defaults());
        Dataset data = tiny_data(2, 300 + t);
        std::vector<int> idx;
        for (int i = 0; i < 16; ++i) idx.push_back(i);
        std::vector<int> labels;
        Tensor x = make_batch(data, data.train, idx, labels);

        const double before = trainer.phase1_step(x, labels);
        NoGradGuard guard;
        const double after = cross_entropy(net.forward(x, RunMode::train), labels).item();
        if (after <= before) ++improved;
    }
    CHECK(improved >= trials * 8 / 10);
}

TEST_CASE("phase-2 restores weights bit-exactly and moves alpha") {
    Supernet net(tiny_net_config());
    Trainer trainer(net, tiny_train_config(), fast_attack(), CostModelConfig::defaults());
    Dataset data = tiny_data();

    const std::uint64_t w_before = net.weight_checksum();
    const std::uint64_t a_before = net.alpha_checksum();
    trainer.phase2_epoch(data, 1);
    CHECK(net.weight_checksum() == w_before);
    CHECK(net.alpha_checksum() != a_before);
}

TEST_CASE("phase-2 aborts with a diagnostic on non-finite loss") {
    Supernet net(tiny_net_config());
    Trainer trainer(net, tiny_train_config(), fast_attack(), CostModelConfig::defaults());
    Dataset data = tiny_data();
    // poison the classifier: it sits after the last relu, so the NaN reaches
    // the loss instead of being flushed by a max(0, x)
    for (auto& p : net.params())
        if (p.name == "fc.weight") p.tensor.values()[0] = std::nan("");
    try {
        trainer.phase2_epoch(data, 1);
        FAIL("expected abort");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("aborted") != std::string::npos);
    }
}

TEST_CASE("xbar_ar with lambda zero matches the plain xbar trajectory") {
    Dataset data = tiny_data();
    auto run = [&](Variant variant) {
        Supernet net(tiny_net_config());
        TrainConfig cfg = tiny_train_config(variant);
        Trainer trainer(net, cfg, fast_attack(), CostModelConfig::defaults());
        return trainer.search(data);
    };
    SearchResult a = run(Variant::xbar);
    SearchResult b = run(Variant::xbar_ar);  // lambda defaults to 0
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t e = 0; e < a.epochs.size(); ++e)
        CHECK(a.epochs[e].alpha_checksum == b.epochs[e].alpha_checksum);
    CHECK(a.subnet.to_string() == b.subnet.to_string());
}

TEST_CASE("multixbar with a singleton spec list reproduces xbar bit-exactly") {
    Dataset data = tiny_data();
    auto run = [&](Variant variant) {
        Supernet net(tiny_net_config());
        Trainer trainer(net, tiny_train_config(variant), fast_attack(),
                        CostModelConfig::defaults());
        return trainer.search(data);
    };
    SearchResult a = run(Variant::xbar);
    SearchResult b = run(Variant::multixbar);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t e = 0; e < a.epochs.size(); ++e)
        CHECK(a.epochs[e].alpha_checksum == b.epochs[e].alpha_checksum);
    CHECK(a.subnet.to_string() == b.subnet.to_string());
}

TEST_CASE("derive_subnet thresholding") {
    ArchParams arch = ArchParams::zeros();
    SUBCASE("op-2 slot keeps the two strong constituents") {
        // p = [0.1, 0.5, 0.3, 0.1]
        arch.alpha[2].values() = {std::log(0.1), std::log(0.5), std::log(0.3), std::log(0.1)};
        auto d = derive_subnet(arch, 0.2);
        CHECK(d.gates[2] == std::vector<std::uint8_t>{0, 1, 1, 0});
        CHECK(d.fallback_slots.empty());
    }
    SUBCASE("op-1 slot with even probabilities keeps both") {
        auto d = derive_subnet(arch, 0.2);  // all alphas zero: p = [0.5, 0.5]
        CHECK(d.gates[0] == std::vector<std::uint8_t>{1, 1});
        // uniform op-2 probabilities are 0.25 > 0.2: all four retained
        CHECK(d.gates[2] == std::vector<std::uint8_t>{1, 1, 1, 1});
    }
    SUBCASE("argmax fallback is flagged when nothing clears the bar") {
        auto d = derive_subnet(arch, 0.6);  // 2-way slots: 0.5 <= 0.6
        CHECK(d.gates[0] == std::vector<std::uint8_t>{1, 0});
        CHECK(!d.fallback_slots.empty());
    }
}

TEST_CASE("finetune with zero epochs changes nothing") {
    Supernet net(tiny_net_config());
    Trainer trainer(net, tiny_train_config(), fast_attack(), CostModelConfig::defaults());
    Dataset data = tiny_data();
    SubnetDescriptor subnet = derive_subnet(net.arch(), 0.2);
    const std::uint64_t before = net.weight_checksum();
    trainer.finetune(subnet, data, 0);
    CHECK(net.weight_checksum() == before);
}

TEST_CASE("multixbar finetune performs one update per spec per batch") {
    Dataset data = tiny_data();
    auto updates = [&](const std::vector<int>& sizes) {
        Supernet net(tiny_net_config());
        TrainConfig cfg = tiny_train_config(sizes.size() > 1 ? Variant::multixbar : Variant::xbar);
        cfg.specs.clear();
        for (int n : sizes) {
            CrossbarSpec s;
            s.size = n;
            cfg.specs.push_back(s);
        }
        Trainer trainer(net, cfg, fast_attack(), CostModelConfig::defaults());
        SubnetDescriptor subnet = derive_subnet(net.arch(), 0.2);
        trainer.finetune(subnet, data, 1);
        return trainer.finetune_update_count();
    };
    const auto single = updates({64});
    const auto triple = updates({32, 64, 128});
    CHECK(triple == 3 * single);
}

TEST_CASE("finetune descends on easy data") {
    Supernet net(tiny_net_config(2, 11));
    TrainConfig cfg = tiny_train_config(Variant::xbar, 12);
    cfg.batch_size = 16;
    cfg.weight_lr = 5e-3;
    Trainer trainer(net, cfg, fast_attack(), CostModelConfig::defaults());
    SyntheticSpec sspec;
    sspec.classes = 2;
    sspec.train_per_class = 40;
    sspec.test_per_class = 8;
    sspec.image_size = 16;
    sspec.margin = 0.8;
    Dataset data = gen_synthetic(sspec, 16, 13);
    SubnetDescriptor subnet = derive_subnet(net.arch(), 0.2);
    SupernetConfig wide = tiny_net_config(2, 11);
    wide.width = 4;
    Supernet net4(wide);
    Trainer trainer4(net4, cfg, fast_attack(), CostModelConfig::defaults());

    // clean-weight training accuracy: the descent check is about the
    // optimization, not about noise resilience of a 4-channel toy
    Rng eval_rng(1);
    const double before =
        evaluate(net4, &subnet.gates, data, data.train, nullptr, nullptr, 16, eval_rng);
    trainer4.finetune(subnet, data, 10);
    const double after =
        evaluate(net4, &subnet.gates, data, data.train, nullptr, nullptr, 16, eval_rng);
    CHECK(after > before);
    CHECK(after > 80.0);
}

TEST_CASE("evaluate: untrained balanced 10-class model sits at chance") {
    SyntheticSpec sspec;
    sspec.classes = 10;
    sspec.train_per_class = 2;
    sspec.test_per_class = 120;
    sspec.image_size = 16;
    Dataset data = gen_synthetic(sspec, 4, 5);
    Supernet net(tiny_net_config(10, 21));
    Rng rng(2);
    const double acc = evaluate(net, nullptr, data, data.test, nullptr, nullptr, 64, rng);
    CHECK(acc > 7.0);
    CHECK(acc < 13.0);
}

TEST_CASE("evaluate: zero-sigma profile equals noise-free evaluation") {
    Dataset data = tiny_data();
    Supernet net(tiny_net_config());
    CrossbarSpec spec;
    spec.size = 64;
    spec.sigma_over_mu = 0.0;
    std::vector<LayerMapping> mappings;
    for (const auto& [name, shape] : net.mapped_layers())
        mappings.push_back(reshape_and_tile(name, shape, spec));
    NoiseProfile profile = sample_noise(mappings, spec, 123);

    Rng rng_a(3), rng_b(3);
    const double with_profile =
        evaluate(net, nullptr, data, data.test, &profile, nullptr, 16, rng_a);
    const double without = evaluate(net, nullptr, data, data.test, nullptr, nullptr, 16, rng_b);
    CHECK(with_profile == without);
}

TEST_CASE("a larger lambda lowers the expected cost after one descent step") {
    // directional property of the composed loss, independent of Adam
    Supernet net(tiny_net_config());
    Dataset data = tiny_data();
    CrossbarSpec spec;
    spec.size = 64;
    AreaTable table = build_area_table(net.config(), spec, CostModelConfig::defaults());
    std::vector<int> labels;
    Tensor x = make_batch(data, data.validation, {0, 1, 2, 3}, labels);

    auto cost_after_step = [&](double lambda) {
        Supernet fresh(tiny_net_config());
        fresh.zero_all_grads();
        Tensor loss = cross_entropy(fresh.forward(x, RunMode::eval), labels);
        loss = regularized_loss(loss, expected_cost(fresh.arch(), table), lambda);
        backward(loss);
        const double eta = 1e-3;
        for (auto& a : fresh.arch().alpha) {
            if (!a.has_grad()) continue;
            for (std::size_t i = 0; i < a.values().size(); ++i)
                a.values()[i] -= eta * a.grad()[i];
        }
        NoGradGuard guard;
        return expected_cost(fresh.arch(), table).item();
    };
    const double c0 = cost_after_step(0.0);
    const double c1 = cost_after_step(10.0);
    const double c2 = cost_after_step(100.0);
    CHECK(c1 <= c0);
    CHECK(c2 <= c1);
}

TEST_CASE("checkpoint round trip restores the exact model state") {
    Supernet net(tiny_net_config());
    Trainer trainer(net, tiny_train_config(), fast_attack(), CostModelConfig::defaults());
    Dataset data = tiny_data();
    trainer.search(data);

    const std::string arch_str = derive_subnet(net.arch(), 0.2).to_string();
    Checkpoint ckpt = snapshot(net, 0xabcdefULL, trainer.rng_state(), arch_str, 0.2);
    const std::string path =
        (std::filesystem::temp_directory_path() / "xnas_ckpt_test.bin").string();
    save_checkpoint(ckpt, path);
    Checkpoint loaded = load_checkpoint(path);
    std::remove(path.c_str());

    CHECK(loaded.config_hash == 0xabcdefULL);
    CHECK(loaded.subnet_arch == arch_str);
    CHECK(loaded.net_cfg.width == net.config().width);

    Supernet restored(loaded.net_cfg);
    apply_checkpoint(restored, loaded);
    CHECK(restored.weight_checksum() == net.weight_checksum());
    CHECK(restored.alpha_checksum() == net.alpha_checksum());
}

TEST_CASE("checkpoint loader rejects corrupt files") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "xnas_ckpt_bad.bin").string();
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTACKPT garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("train config validation") {
    TrainConfig cfg = tiny_train_config();
    cfg.variant = Variant::xbar;
    CrossbarSpec extra;
    extra.size = 32;
    cfg.specs.push_back(extra);
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);  // two specs for xbar

    TrainConfig cfg2 = tiny_train_config();
    cfg2.lambda = 0.5;  // lambda outside xbar_ar
    CHECK_THROWS_AS(cfg2.validate(), std::invalid_argument);

    TrainConfig cfg3 = tiny_train_config(Variant::multixbar);
    cfg3.specs.clear();
    CHECK_THROWS_AS(cfg3.validate(), std::invalid_argument);
}
