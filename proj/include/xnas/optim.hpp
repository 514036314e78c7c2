#ifndef XNAS_OPTIM_HPP
#define XNAS_OPTIM_HPP

#include <cstdint>
#include <vector>

#include "xnas/tensor.hpp"

namespace xnas {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. A zero gradient yields an exactly-zero update,
// so untouched parameters stay bit-identical.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void step();
    void zero_grad();

    std::int64_t step_count() const { return t_; }

    // Flat state access for checkpointing.
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void restore_state(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
                       std::int64_t t);

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::int64_t t_ = 0;
};

}  // namespace xnas

#endif
