#include "xnas/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace xnas {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    d->values.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("tensor data length does not match shape");
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(data);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = rng.normal() * stddev;
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item() requires a single-element tensor");
    return d_->values[0];
}

std::vector<double>& Tensor::grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
}

void Tensor::zero_grad() {
    if (d_) d_->grad.assign(d_->values.size(), 0.0);
}

void accumulate_grad(TensorData& t, const double* src, std::int64_t n) {
    if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
    for (std::int64_t i = 0; i < n; ++i) t.grad[static_cast<std::size_t>(i)] += src[i];
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward expects a scalar loss tensor");
    auto root = loss.data_ptr();
    if (!root->node && !root->requires_grad)
        throw std::invalid_argument("backward on a tensor with no recorded graph");

    // Iterative post-order DFS; parents are visited in recorded order so the
    // reverse pass has a fixed, reproducible schedule.
    std::vector<TensorData*> topo;
    std::unordered_set<TensorData*> visited;
    struct Frame {
        TensorData* t;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (root->node) {
        stack.push_back({root.get(), 0});
        visited.insert(root.get());
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        const auto& parents = f.t->node->parents;
        if (f.next_parent < parents.size()) {
            TensorData* p = parents[f.next_parent++].get();
            if (p->node && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            topo.push_back(f.t);
            stack.pop_back();
        }
    }

    root->grad.assign(1, 1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorData* t = *it;
        if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
        t->node->backprop(*t);
    }
}

std::uint64_t checksum(const std::vector<double>& v) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v.data());
    const std::size_t n = v.size() * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t checksum(const Tensor& t) { return checksum(t.values()); }

std::uint64_t checksum_combine(std::uint64_t a, std::uint64_t b) {
    return mix_seed(a, b);
}

void throw_if_nonfinite(const std::vector<double>& v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error(what + ": non-finite value encountered");
}

}  // namespace xnas
