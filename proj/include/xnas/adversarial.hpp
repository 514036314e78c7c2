#ifndef XNAS_ADVERSARIAL_HPP
#define XNAS_ADVERSARIAL_HPP

#include <functional>
#include <vector>

#include "xnas/rng.hpp"
#include "xnas/tensor.hpp"

namespace xnas {

// White-box PGD-n attack settings. Defaults follow the usual pixel-space
// budget: step 2/255, radius 8/255, inputs in [0,1].
struct AttackConfig {
    int steps = 7;
    double step_size = 2.0 / 255.0;
    double epsilon = 8.0 / 255.0;
    bool random_init = true;
    double lo = 0.0;
    double hi = 1.0;

    void validate() const;
};

struct AdvBatch {
    Tensor x_adv;
    Tensor x_clean;
    std::vector<int> labels;
};

// Forward pass of the attacked model: returns logits attached to the
// gradient graph. The callable is responsible for running the model in eval
// mode with frozen parameters; the attack never mutates model state.
using ModelForward = std::function<Tensor(const Tensor&)>;

// Iterated ascent on the cross-entropy loss, projected onto the l-inf ball
// of radius epsilon around the clean inputs and clamped to [lo, hi].
// x0 = clip(x + U(-eps, eps)) when random_init; each step moves by
// step_size * sign(grad_x) with sign(0) = 0.
AdvBatch pgd_attack(const ModelForward& model, const Tensor& x, const std::vector<int>& labels,
                    const AttackConfig& cfg, Rng& rng);

}  // namespace xnas

#endif
