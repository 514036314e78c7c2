#ifndef XNAS_TENSOR_HPP
#define XNAS_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "xnas/rng.hpp"

namespace xnas {

// Dense double tensor with reverse-mode autodiff. Tensor is a shared handle;
// ops record a graph node on their output when gradients are enabled and at
// least one input participates. backward(loss) walks the recorded graph once,
// in reverse topological order, with a fixed summation order so repeated runs
// are bit-identical.
//
// Leaves that will be mutated in place (optimizer steps, noise injection)
// must only be mutated after any backward pass that uses them has run; the
// graph keeps references to values, not copies.

struct TensorData;

struct GraphNode {
    std::vector<std::shared_ptr<TensorData>> parents;
    // Receives the finished output record (values + grad) and accumulates
    // into the parents' grads.
    std::function<void(const TensorData& out)> backprop;
};

struct TensorData {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<GraphNode> node;  // null for leaves / untracked results
};

// Scoped switch that disables graph recording (evaluation-only forwards).
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(d_->values.size()); }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }
    double item() const;

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }
    // True when this tensor participates in gradient flow.
    bool tracked() const { return d_ && (d_->requires_grad || d_->node != nullptr); }

    std::vector<double>& grad();
    bool has_grad() const { return d_ && !d_->grad.empty(); }
    void zero_grad();

    std::shared_ptr<TensorData> data_ptr() const { return d_; }
    void set_node(std::shared_ptr<GraphNode> node) { d_->node = std::move(node); }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
};

// Fills .grad of every tensor the scalar loss depends on. Each recorded node
// is visited exactly once; grads accumulate across multiple uses.
void backward(const Tensor& loss);

std::int64_t shape_numel(const std::vector<int>& shape);
void accumulate_grad(TensorData& t, const double* src, std::int64_t n);

// FNV-1a over the raw byte representation; used for bit-exactness checks.
std::uint64_t checksum(const std::vector<double>& v);
std::uint64_t checksum(const Tensor& t);
std::uint64_t checksum_combine(std::uint64_t a, std::uint64_t b);

void throw_if_nonfinite(const std::vector<double>& v, const std::string& what);

}  // namespace xnas

#endif
