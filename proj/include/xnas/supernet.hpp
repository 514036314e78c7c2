#ifndef XNAS_SUPERNET_HPP
#define XNAS_SUPERNET_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xnas/ops.hpp"
#include "xnas/tensor.hpp"

namespace xnas {

// Searchable operations. Op-1 slots choose among {Conv3x3, Conv5x5}; Op-2
// slots among {AvgPool, Conv3x3, Conv5x5, skip}. Convolutions use 'same'
// padding at stride 1 so every constituent preserves the block's shape.
enum class OpKind { conv3x3, conv5x5, avgpool, skip };

constexpr int kSlotCount = 9;  // stem Op-1 plus (Op-1, Op-2) per residual block

bool slot_is_op1(int slot);
int slot_constituent_count(int slot);
const std::vector<OpKind>& slot_constituents(int slot);
const char* op_kind_name(OpKind kind);

// Retained-constituent mask per slot; the discrete architecture of a subnet.
using GateSet = std::array<std::vector<std::uint8_t>, kSlotCount>;

// Canonical text form: constituents joined by "," per slot, slots joined by
// " → " (arrow), e.g. "Conv3x3,Conv5x5 → AvgPool → ...".
std::string serialize_arch(const GateSet& gates);
GateSet parse_arch(const std::string& text);

// Per-slot architecture parameters; p_j = softmax(alpha)_j.
struct ArchParams {
    std::array<Tensor, kSlotCount> alpha;

    static ArchParams zeros();  // uniform probabilities
    std::vector<Tensor> tensors() const;
    // probability coefficients of one slot as plain numbers (no graph)
    std::vector<double> probabilities(int slot) const;
};

struct SupernetConfig {
    int in_channels = 3;
    int input_h = 16;
    int input_w = 16;
    int classes = 10;
    int width = 16;  // stem output channels; blocks run at w, 2w, 4w, 8w
    std::uint64_t seed = 0;

    void validate() const;
    int block_width(int block) const { return width << block; }  // block in 0..3
    int pooled_h() const;
    int pooled_w() const;
    int fc_in_features() const;
    // weight shape [O,C,k,k] of a conv constituent sitting in `slot`
    std::vector<int> slot_conv_shape(int slot, OpKind kind) const;
};

// One Op-1/Op-2 choice with owned weights for its parametric constituents.
struct MixedOp {
    int slot = 0;
    int in_channels = 0, out_channels = 0;
    Tensor conv3_w, conv5_w;

    // softmax-mixed output: sum_j p_j * o_j(x)
    Tensor forward_soft(const Tensor& x, const Tensor& p) const;
    // discrete subnet output: sum of retained constituents, coefficient 1
    Tensor forward_gated(const Tensor& x, const std::vector<std::uint8_t>& keep) const;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
    bool crossbar_mapped = false;  // conv/FC weights that land on arrays
};

enum class RunMode { train, eval };

// The full searchable network: stem Op-1, four residual blocks (Op-1 -> BN ->
// ReLU -> Op-2 -> BN, plus the block input, then ReLU), a downsampling
// Conv3x3/BN (stride 2, width doubling) after blocks I..III, and a final
// 3x3 stride-2 average pool feeding the classifier.
class Supernet {
public:
    explicit Supernet(const SupernetConfig& config);

    const SupernetConfig& config() const { return cfg_; }
    ArchParams& arch() { return arch_; }
    const ArchParams& arch() const { return arch_; }

    // logits [N, classes]; nullptr gates = softmax-mixed supernet forward
    Tensor forward(const Tensor& x, RunMode mode, const GateSet* gates = nullptr);

    // learnable parameters (weights, BN affine, classifier)
    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }
    // BN running statistics
    std::vector<NamedParam>& buffers() { return buffers_; }
    const std::vector<NamedParam>& buffers() const { return buffers_; }

    std::vector<Tensor> param_tensors() const;
    std::vector<Tensor> alpha_tensors() const { return arch_.tensors(); }
    // crossbar-mapped weight tensors, in a fixed order matching mapped_layers()
    std::vector<Tensor> mapped_weights() const;
    std::vector<std::pair<std::string, std::vector<int>>> mapped_layers() const;

    void set_params_requires_grad(bool v);
    void set_alpha_requires_grad(bool v);
    void zero_all_grads();

    std::uint64_t weight_checksum() const;  // params + buffers
    std::uint64_t alpha_checksum() const;

private:
    struct Block {
        MixedOp op1, op2;
        Tensor bn1_gamma, bn1_beta, bn1_mean, bn1_var;
        Tensor bn2_gamma, bn2_beta, bn2_mean, bn2_var;
    };
    struct Down {
        Tensor conv_w;
        Tensor bn_gamma, bn_beta, bn_mean, bn_var;
    };

    Tensor mixed(const MixedOp& op, const Tensor& x, const GateSet* gates);

    SupernetConfig cfg_;
    ArchParams arch_;
    MixedOp stem_;
    Tensor stem_bn_gamma_, stem_bn_beta_, stem_bn_mean_, stem_bn_var_;
    std::array<Block, 4> blocks_;
    std::array<Down, 3> downs_;
    Tensor fc_w_, fc_b_;
    std::vector<NamedParam> params_;
    std::vector<NamedParam> buffers_;
    bool training_ = false;
};

}  // namespace xnas

#endif
