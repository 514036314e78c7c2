#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "xnas/supernet.hpp"

using namespace xnas;

namespace {

SupernetConfig small_config() {
    SupernetConfig cfg;
    cfg.in_channels = 3;
    cfg.input_h = 16;
    cfg.input_w = 16;
    cfg.classes = 2;
    cfg.width = 2;
    cfg.seed = 42;
    return cfg;
}

MixedOp make_op2(int slot, int channels, Rng& rng) {
    MixedOp op;
    op.slot = slot;
    op.in_channels = channels;
    op.out_channels = channels;
    op.conv3_w = Tensor::randn({channels, channels, 3, 3}, rng, 0.3);
    op.conv5_w = Tensor::randn({channels, channels, 5, 5}, rng, 0.3);
    return op;
}

}  // namespace

TEST_CASE("mixed op: one-hot skip is the identity") {
    Rng rng(1);
    MixedOp op = make_op2(2, 3, rng);
    Tensor x = Tensor::randn({2, 3, 6, 6}, rng);
    Tensor p = Tensor::from_data({4}, {0.0, 0.0, 0.0, 1.0});  // skip
    Tensor y = op.forward_soft(x, p);
    CHECK(y.values() == x.values());
}

TEST_CASE("mixed op: uniform skip+avgpool preserves constants") {
    Rng rng(2);
    MixedOp op = make_op2(2, 2, rng);
    Tensor x = Tensor::full({1, 2, 5, 5}, 1.75);
    Tensor p = Tensor::from_data({4}, {0.5, 0.0, 0.0, 0.5});  // avgpool + skip
    Tensor y = op.forward_soft(x, p);
    for (double v : y.values()) CHECK(v == doctest::Approx(1.75).epsilon(1e-12));
}

TEST_CASE("mixed op: matches hand-composed mixture") {
    Rng rng(3);
    MixedOp op;
    op.slot = 1;  // Op-1
    op.in_channels = 2;
    op.out_channels = 2;
    op.conv3_w = Tensor::randn({2, 2, 3, 3}, rng, 0.4);
    op.conv5_w = Tensor::randn({2, 2, 5, 5}, rng, 0.4);
    Tensor x = Tensor::randn({1, 2, 7, 7}, rng);
    Tensor p = Tensor::from_data({2}, {0.3, 0.7});
    Tensor y = op.forward_soft(x, p);

    Tensor ref3 = conv2d(x, op.conv3_w, 1, 1);
    Tensor ref5 = conv2d(x, op.conv5_w, 1, 2);
    for (std::size_t i = 0; i < y.values().size(); ++i) {
        const double ref = 0.3 * ref3.values()[i] + 0.7 * ref5.values()[i];
        CHECK(std::fabs(y.values()[i] - ref) < 1e-12);
    }
}

TEST_CASE("mixed op: gated sum uses coefficient one") {
    Rng rng(4);
    MixedOp op = make_op2(2, 2, rng);
    Tensor x = Tensor::randn({1, 2, 6, 6}, rng);
    Tensor y = op.forward_gated(x, {1, 0, 0, 1});  // avgpool + skip
    Tensor pool = avgpool2d(x, 3, 1, 1);
    for (std::size_t i = 0; i < y.values().size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(pool.values()[i] + x.values()[i]).epsilon(1e-12));
    CHECK_THROWS_AS(op.forward_gated(x, {0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("supernet forward shape and finiteness") {
    SupernetConfig cfg = small_config();
    cfg.classes = 10;
    Supernet net(cfg);
    Rng rng(5);
    Tensor x = Tensor::randn({2, 3, 16, 16}, rng, 0.5);
    Tensor logits = net.forward(x, RunMode::train);
    CHECK(logits.shape() == std::vector<int>{2, 10});
    for (double v : logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("supernet rejects too-small inputs") {
    Supernet net(small_config());
    Tensor x = Tensor::zeros({1, 3, 8, 8});
    CHECK_THROWS_AS(net.forward(x, RunMode::eval), std::invalid_argument);
    SupernetConfig bad = small_config();
    bad.input_h = 8;
    CHECK_THROWS_AS(Supernet{bad}, std::invalid_argument);
}

TEST_CASE("supernet with zero weights emits uniform logits") {
    Supernet net(small_config());
    for (auto& p : net.params())
        if (p.crossbar_mapped || p.name.ends_with("bias"))
            for (double& v : p.tensor.values()) v = 0.0;
    Rng rng(6);
    Tensor x = Tensor::randn({2, 3, 16, 16}, rng);
    Tensor logits = net.forward(x, RunMode::train);
    for (int n = 0; n < 2; ++n)
        for (int k = 0; k < 2; ++k)
            CHECK(logits.values()[n * 2 + k] == doctest::Approx(logits.values()[n * 2]));
}

TEST_CASE("alpha gradients match finite differences") {
    Supernet net(small_config());
    Rng rng(7);
    Tensor x = Tensor::randn({2, 3, 16, 16}, rng, 0.5);
    std::vector<int> labels = {0, 1};
    auto forward = [&] { return cross_entropy(net.forward(x, RunMode::eval), labels); };
    for (int slot = 0; slot < kSlotCount; ++slot) {
        auto r = xnas::testing::check_gradient(forward, net.arch().alpha[slot], 1e-5, 1e-4);
        CHECK_MESSAGE(r.ok, "slot ", slot, ": ", r.detail);
    }
}

TEST_CASE("alpha gradients are live after one backward pass") {
    Supernet net(small_config());
    Rng rng(8);
    Tensor x = Tensor::randn({2, 3, 16, 16}, rng, 0.5);
    net.zero_all_grads();
    Tensor loss = cross_entropy(net.forward(x, RunMode::train), {0, 1});
    backward(loss);
    int live = 0;
    for (int slot = 0; slot < kSlotCount; ++slot) {
        bool nonzero = false;
        for (double g : net.arch().alpha[slot].grad()) nonzero = nonzero || g != 0.0;
        if (nonzero) ++live;
    }
    CHECK(live >= 8);
}

TEST_CASE("shifting a slot's alpha by a constant leaves the output unchanged") {
    Supernet net(small_config());
    Rng rng(9);
    Tensor x = Tensor::randn({1, 3, 16, 16}, rng, 0.5);
    for (auto& a : net.arch().alpha)
        for (double& v : a.values()) v = rng.uniform(-0.5, 0.5);

    NoGradGuard guard;
    Tensor before = net.forward(x, RunMode::eval);
    for (double& v : net.arch().alpha[3].values()) v += 7.5;
    Tensor after = net.forward(x, RunMode::eval);
    for (std::size_t i = 0; i < before.values().size(); ++i)
        CHECK(std::fabs(before.values()[i] - after.values()[i]) < 1e-12);
}

TEST_CASE("architecture string round trip") {
    const std::string canonical =
        "Conv3x3,Conv5x5 → Conv3x3,Conv5x5 → AvgPool → Conv3x3,Conv5x5 → "
        "AvgPool → Conv5x5 → AvgPool,skip → Conv5x5 → Conv3x3";
    GateSet gates = parse_arch(canonical);
    CHECK(gates[0] == std::vector<std::uint8_t>{1, 1});
    CHECK(gates[2] == std::vector<std::uint8_t>{1, 0, 0, 0});
    CHECK(gates[6] == std::vector<std::uint8_t>{1, 0, 0, 1});
    CHECK(serialize_arch(gates) == canonical);
}

TEST_CASE("architecture parser rejects malformed strings") {
    CHECK_THROWS_AS(parse_arch("Conv3x3"), std::invalid_argument);
    // AvgPool is not a valid Op-1 constituent (slot 0)
    CHECK_THROWS_AS(
        parse_arch("AvgPool → Conv3x3 → AvgPool → Conv3x3 → AvgPool → "
                   "Conv3x3 → AvgPool → Conv3x3 → AvgPool"),
        std::invalid_argument);
    // skip is not a valid Op-1 constituent either
    CHECK_THROWS_AS(
        parse_arch("skip → Conv3x3 → AvgPool → Conv3x3 → AvgPool → "
                   "Conv3x3 → AvgPool → Conv3x3 → AvgPool"),
        std::invalid_argument);
}

TEST_CASE("parser accepts spaces after commas") {
    const std::string spaced =
        "Conv3x3, Conv5x5 → Conv5x5 → AvgPool → Conv3x3 → AvgPool → "
        "Conv3x3 → AvgPool, skip → Conv3x3 → skip";
    GateSet gates = parse_arch(spaced);
    CHECK(gates[0] == std::vector<std::uint8_t>{1, 1});
    CHECK(gates[8] == std::vector<std::uint8_t>{0, 0, 0, 1});
}

TEST_CASE("gated and soft forward agree for a saturated slot choice") {
    SupernetConfig cfg = small_config();
    Supernet net(cfg);
    // saturate every slot's alpha onto one constituent
    GateSet gates;
    for (int slot = 0; slot < kSlotCount; ++slot) {
        const int n = slot_constituent_count(slot);
        gates[slot].assign(n, 0);
        const int choice = slot % n;
        gates[slot][choice] = 1;
        for (int j = 0; j < n; ++j)
            net.arch().alpha[slot].values()[j] = j == choice ? 60.0 : -60.0;
    }
    Rng rng(10);
    Tensor x = Tensor::randn({1, 3, 16, 16}, rng, 0.5);
    NoGradGuard guard;
    Tensor soft = net.forward(x, RunMode::eval);
    Tensor hard = net.forward(x, RunMode::eval, &gates);
    for (std::size_t i = 0; i < soft.values().size(); ++i)
        CHECK(soft.values()[i] == doctest::Approx(hard.values()[i]).epsilon(1e-9));
}

TEST_CASE("mapped layer list covers convs and classifier only") {
    Supernet net(small_config());
    const auto layers = net.mapped_layers();
    // stem 2 + 4 blocks * 2 ops * 2 convs + 3 downsamples + fc.weight
    CHECK(layers.size() == 2 + 16 + 3 + 1);
    for (const auto& [name, shape] : layers)
        CHECK((shape.size() == 4 || shape.size() == 2));
    CHECK(net.mapped_weights().size() == layers.size());
}
