#include "xnas/supernet.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "xnas/rng.hpp"

namespace xnas {

namespace {
const std::vector<OpKind> kOp1Kinds = {OpKind::conv3x3, OpKind::conv5x5};
const std::vector<OpKind> kOp2Kinds = {OpKind::avgpool, OpKind::conv3x3, OpKind::conv5x5,
                                       OpKind::skip};
constexpr const char* kArrow = " → ";
}  // namespace

bool slot_is_op1(int slot) { return slot == 0 || slot % 2 == 1; }

int slot_constituent_count(int slot) { return slot_is_op1(slot) ? 2 : 4; }

const std::vector<OpKind>& slot_constituents(int slot) {
    return slot_is_op1(slot) ? kOp1Kinds : kOp2Kinds;
}

const char* op_kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::conv3x3: return "Conv3x3";
        case OpKind::conv5x5: return "Conv5x5";
        case OpKind::avgpool: return "AvgPool";
        case OpKind::skip: return "skip";
    }
    throw std::logic_error("unknown op kind");
}

std::string serialize_arch(const GateSet& gates) {
    std::ostringstream os;
    for (int slot = 0; slot < kSlotCount; ++slot) {
        if (slot > 0) os << kArrow;
        const auto& kinds = slot_constituents(slot);
        if (gates[slot].size() != kinds.size())
            throw std::invalid_argument("serialize_arch: gate width mismatch at slot " +
                                        std::to_string(slot));
        bool first = true;
        bool any = false;
        for (std::size_t j = 0; j < kinds.size(); ++j) {
            if (!gates[slot][j]) continue;
            if (!first) os << ",";
            os << op_kind_name(kinds[j]);
            first = false;
            any = true;
        }
        if (!any) throw std::invalid_argument("serialize_arch: slot " + std::to_string(slot) +
                                              " retains no operation");
    }
    return os.str();
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    std::size_t b = s.find_last_not_of(" \t");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, const std::string& sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = s.find(sep, pos);
        if (next == std::string::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, next - pos));
        pos = next + sep.size();
    }
    return out;
}

}  // namespace

GateSet parse_arch(const std::string& text) {
    const auto slots = split(text, "→");
    if (static_cast<int>(slots.size()) != kSlotCount)
        throw std::invalid_argument("parse_arch: expected " + std::to_string(kSlotCount) +
                                    " slots, got " + std::to_string(slots.size()));
    GateSet gates;
    for (int slot = 0; slot < kSlotCount; ++slot) {
        const auto& kinds = slot_constituents(slot);
        gates[slot].assign(kinds.size(), 0);
        for (const std::string& raw : split(slots[slot], ",")) {
            const std::string name = trim(raw);
            bool found = false;
            for (std::size_t j = 0; j < kinds.size(); ++j) {
                if (name == op_kind_name(kinds[j])) {
                    if (gates[slot][j])
                        throw std::invalid_argument("parse_arch: duplicate op in slot " +
                                                    std::to_string(slot));
                    gates[slot][j] = 1;
                    found = true;
                    break;
                }
            }
            if (!found)
                throw std::invalid_argument("parse_arch: '" + name + "' is not valid in slot " +
                                            std::to_string(slot));
        }
        bool any = false;
        for (auto g : gates[slot]) any = any || g;
        if (!any)
            throw std::invalid_argument("parse_arch: slot " + std::to_string(slot) + " is empty");
    }
    return gates;
}

ArchParams ArchParams::zeros() {
    ArchParams a;
    for (int slot = 0; slot < kSlotCount; ++slot)
        a.alpha[slot] = Tensor::zeros({slot_constituent_count(slot)}, true);
    return a;
}

std::vector<Tensor> ArchParams::tensors() const {
    return {alpha.begin(), alpha.end()};
}

std::vector<double> ArchParams::probabilities(int slot) const {
    NoGradGuard guard;
    return softmax(alpha[slot]).values();
}

void SupernetConfig::validate() const {
    if (in_channels < 1 || classes < 2 || width < 1)
        throw std::invalid_argument("SupernetConfig: bad channel/class/width settings");
    if (input_h < 16 || input_w < 16)
        throw std::invalid_argument(
            "SupernetConfig: input must be at least 16x16 to survive three downsampling "
            "blocks and the final pool");
}

namespace {
int halve(int x) { return (x - 1) / 2 + 1; }  // conv/pool k3 s2 p1 output size
}  // namespace

int SupernetConfig::pooled_h() const { return halve(halve(halve(halve(input_h)))); }
int SupernetConfig::pooled_w() const { return halve(halve(halve(halve(input_w)))); }
int SupernetConfig::fc_in_features() const { return block_width(3) * pooled_h() * pooled_w(); }

std::vector<int> SupernetConfig::slot_conv_shape(int slot, OpKind kind) const {
    if (kind != OpKind::conv3x3 && kind != OpKind::conv5x5)
        throw std::invalid_argument("slot_conv_shape: not a conv constituent");
    const int k = kind == OpKind::conv3x3 ? 3 : 5;
    const int in = slot == 0 ? in_channels : block_width((slot - 1) / 2);
    const int out = slot == 0 ? width : block_width((slot - 1) / 2);
    return {out, in, k, k};
}

Tensor MixedOp::forward_soft(const Tensor& x, const Tensor& p) const {
    const auto& kinds = slot_constituents(slot);
    if (p.size() != static_cast<int>(kinds.size()))
        throw std::invalid_argument("mixed op: probability vector width mismatch");
    Tensor acc;
    for (std::size_t j = 0; j < kinds.size(); ++j) {
        Tensor o;
        switch (kinds[j]) {
            case OpKind::conv3x3: o = conv2d(x, conv3_w, 1, 1); break;
            case OpKind::conv5x5: o = conv2d(x, conv5_w, 1, 2); break;
            case OpKind::avgpool: o = avgpool2d(x, 3, 1, 1); break;
            case OpKind::skip: o = x; break;
        }
        Tensor term = scale(o, pick(p, static_cast<int>(j)));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

Tensor MixedOp::forward_gated(const Tensor& x, const std::vector<std::uint8_t>& keep) const {
    const auto& kinds = slot_constituents(slot);
    if (keep.size() != kinds.size())
        throw std::invalid_argument("mixed op: gate width mismatch");
    Tensor acc;
    for (std::size_t j = 0; j < kinds.size(); ++j) {
        if (!keep[j]) continue;
        Tensor o;
        switch (kinds[j]) {
            case OpKind::conv3x3: o = conv2d(x, conv3_w, 1, 1); break;
            case OpKind::conv5x5: o = conv2d(x, conv5_w, 1, 2); break;
            case OpKind::avgpool: o = avgpool2d(x, 3, 1, 1); break;
            case OpKind::skip: o = x; break;
        }
        acc = acc.defined() ? add(acc, o) : o;
    }
    if (!acc.defined()) throw std::invalid_argument("mixed op: no constituent retained");
    return acc;
}

namespace {

Tensor kaiming_conv(const std::vector<int>& shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
    return Tensor::randn(shape, rng, std::sqrt(2.0 / fan_in), true);
}

}  // namespace

Supernet::Supernet(const SupernetConfig& config) : cfg_(config) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.seed, 0x53504e45ULL));  // init stream
    arch_ = ArchParams::zeros();

    auto add_param = [&](const std::string& name, Tensor t, bool mapped) {
        params_.push_back({name, t, mapped});
        return t;
    };
    auto add_buffer = [&](const std::string& name, Tensor t) {
        buffers_.push_back({name, t, false});
        return t;
    };
    auto make_bn = [&](const std::string& prefix, int ch, Tensor& gamma, Tensor& beta,
                       Tensor& mean, Tensor& var) {
        gamma = add_param(prefix + ".gamma", Tensor::full({ch}, 1.0, true), false);
        beta = add_param(prefix + ".beta", Tensor::zeros({ch}, true), false);
        mean = add_buffer(prefix + ".running_mean", Tensor::zeros({ch}));
        var = add_buffer(prefix + ".running_var", Tensor::full({ch}, 1.0));
    };
    auto make_mixed = [&](const std::string& prefix, int slot) {
        MixedOp op;
        op.slot = slot;
        const int in = slot == 0 ? cfg_.in_channels : cfg_.block_width((slot - 1) / 2);
        const int out = slot == 0 ? cfg_.width : in;
        op.in_channels = in;
        op.out_channels = out;
        op.conv3_w = add_param(prefix + ".conv3", kaiming_conv({out, in, 3, 3}, rng), true);
        op.conv5_w = add_param(prefix + ".conv5", kaiming_conv({out, in, 5, 5}, rng), true);
        return op;
    };

    stem_ = make_mixed("stem.op1", 0);
    make_bn("stem.bn", cfg_.width, stem_bn_gamma_, stem_bn_beta_, stem_bn_mean_, stem_bn_var_);

    for (int b = 0; b < 4; ++b) {
        const std::string bp = "block" + std::to_string(b + 1);
        const int ch = cfg_.block_width(b);
        blocks_[b].op1 = make_mixed(bp + ".op1", 2 * b + 1);
        make_bn(bp + ".bn1", ch, blocks_[b].bn1_gamma, blocks_[b].bn1_beta, blocks_[b].bn1_mean,
                blocks_[b].bn1_var);
        blocks_[b].op2 = make_mixed(bp + ".op2", 2 * b + 2);
        make_bn(bp + ".bn2", ch, blocks_[b].bn2_gamma, blocks_[b].bn2_beta, blocks_[b].bn2_mean,
                blocks_[b].bn2_var);
        if (b < 3) {
            const std::string dp = "down" + std::to_string(b + 1);
            downs_[b].conv_w =
                add_param(dp + ".conv", kaiming_conv({cfg_.block_width(b + 1), ch, 3, 3}, rng), true);
            make_bn(dp + ".bn", cfg_.block_width(b + 1), downs_[b].bn_gamma, downs_[b].bn_beta,
                    downs_[b].bn_mean, downs_[b].bn_var);
        }
    }

    const int fc_in = cfg_.fc_in_features();
    fc_w_ = add_param("fc.weight",
                      Tensor::randn({cfg_.classes, fc_in}, rng, std::sqrt(2.0 / fc_in), true), true);
    fc_b_ = add_param("fc.bias", Tensor::zeros({cfg_.classes}, true), false);
}

Tensor Supernet::mixed(const MixedOp& op, const Tensor& x, const GateSet* gates) {
    if (gates) return op.forward_gated(x, (*gates)[op.slot]);
    Tensor p = softmax(arch_.alpha[op.slot]);
    return op.forward_soft(x, p);
}

Tensor Supernet::forward(const Tensor& x, RunMode mode, const GateSet* gates) {
    if (!x.defined() || x.ndim() != 4)
        throw std::invalid_argument("supernet: input must be [N,C,H,W]");
    if (x.dim(1) != cfg_.in_channels)
        throw std::invalid_argument("supernet: input channel mismatch");
    if (x.dim(2) < 16 || x.dim(3) < 16)
        throw std::invalid_argument("supernet: input must be at least 16x16");
    const bool train = mode == RunMode::train;

    Tensor t = mixed(stem_, x, gates);
    t = batchnorm2d(t, stem_bn_gamma_, stem_bn_beta_, stem_bn_mean_, stem_bn_var_, train);
    t = relu(t);

    for (int b = 0; b < 4; ++b) {
        Block& blk = blocks_[b];
        Tensor s = mixed(blk.op1, t, gates);
        s = batchnorm2d(s, blk.bn1_gamma, blk.bn1_beta, blk.bn1_mean, blk.bn1_var, train);
        s = relu(s);
        s = mixed(blk.op2, s, gates);
        s = batchnorm2d(s, blk.bn2_gamma, blk.bn2_beta, blk.bn2_mean, blk.bn2_var, train);
        t = relu(add(s, t));
        if (b < 3) {
            Down& d = downs_[b];
            t = conv2d(t, d.conv_w, 2, 1);
            t = batchnorm2d(t, d.bn_gamma, d.bn_beta, d.bn_mean, d.bn_var, train);
        }
    }

    t = avgpool2d(t, 3, 2, 1);
    t = flatten(t);
    return linear(t, fc_w_, fc_b_);
}

std::vector<Tensor> Supernet::param_tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
}

std::vector<Tensor> Supernet::mapped_weights() const {
    std::vector<Tensor> out;
    for (const auto& p : params_)
        if (p.crossbar_mapped) out.push_back(p.tensor);
    return out;
}

std::vector<std::pair<std::string, std::vector<int>>> Supernet::mapped_layers() const {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    for (const auto& p : params_)
        if (p.crossbar_mapped) out.emplace_back(p.name, p.tensor.shape());
    return out;
}

void Supernet::set_params_requires_grad(bool v) {
    for (auto& p : params_) p.tensor.set_requires_grad(v);
}

void Supernet::set_alpha_requires_grad(bool v) {
    for (auto& a : arch_.alpha) a.set_requires_grad(v);
}

void Supernet::zero_all_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
    for (auto& a : arch_.alpha) a.zero_grad();
}

std::uint64_t Supernet::weight_checksum() const {
    std::uint64_t h = 0x9ae16a3b2f90404fULL;
    for (const auto& p : params_) h = checksum_combine(h, checksum(p.tensor));
    for (const auto& b : buffers_) h = checksum_combine(h, checksum(b.tensor));
    return h;
}

std::uint64_t Supernet::alpha_checksum() const {
    std::uint64_t h = 0xc3a5c85c97cb3127ULL;
    for (const auto& a : arch_.alpha) h = checksum_combine(h, checksum(a));
    return h;
}

}  // namespace xnas
