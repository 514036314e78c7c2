#include "xnas/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace xnas {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;  // no gradient accumulated: no update
        auto& vals = p.values();
        const auto& g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < vals.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            vals[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void Adam::restore_state(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
                         std::int64_t t) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw std::invalid_argument("Adam::restore_state: state count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (m[i].size() != params_[i].values().size() || v[i].size() != params_[i].values().size())
            throw std::invalid_argument("Adam::restore_state: state shape mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

}  // namespace xnas
