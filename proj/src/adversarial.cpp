#include "xnas/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "xnas/ops.hpp"

namespace xnas {

void AttackConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("AttackConfig: steps must be >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("AttackConfig: step size must be > 0");
    if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
    if (!(lo < hi)) throw std::invalid_argument("AttackConfig: need lo < hi");
}

AdvBatch pgd_attack(const ModelForward& model, const Tensor& x, const std::vector<int>& labels,
                    const AttackConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto& clean = x.values();

    std::vector<double> cur(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        double v = clean[i];
        if (cfg.random_init) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
        cur[i] = std::clamp(v, cfg.lo, cfg.hi);
    }

    for (int step = 0; step < cfg.steps; ++step) {
        Tensor probe = Tensor::from_data(x.shape(), cur, true);
        Tensor logits = model(probe);
        if (!logits.tracked())
            throw std::logic_error("pgd_attack: model does not expose input gradients");
        Tensor loss = cross_entropy(logits, labels);
        backward(loss);
        const auto& g = probe.grad();
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            double v = cur[i] + cfg.step_size * s;
            v = std::clamp(v, clean[i] - cfg.epsilon, clean[i] + cfg.epsilon);
            cur[i] = std::clamp(v, cfg.lo, cfg.hi);
        }
    }

    AdvBatch batch;
    batch.x_adv = Tensor::from_data(x.shape(), std::move(cur));
    batch.x_clean = x;
    batch.labels = labels;
    return batch;
}

}  // namespace xnas
