#ifndef XNAS_OPS_HPP
#define XNAS_OPS_HPP

#include <vector>

#include "xnas/tensor.hpp"

namespace xnas {

// Differentiable operations. All backward passes accumulate (+=) into input
// grads and only compute grads for inputs that are tracked, so frozen weights
// cost nothing in the reverse pass.

// Cross-correlation, no bias. input [N,C,H,W], weight [O,C,k,k].
// H' = (H + 2*padding - k)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding);

// Batch normalization over (N,H,W) per channel. Train mode normalizes with
// batch statistics (biased variance) and updates running stats in place with
// the given momentum; eval mode normalizes with the running stats. Zero
// variance is guarded by eps.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   double momentum = 0.1, double eps = 1e-5);

Tensor relu(const Tensor& input);

// Average pooling; zero-padded windows are averaged over the number of
// in-bounds cells, so constant inputs stay constant everywhere.
Tensor avgpool2d(const Tensor& input, int kernel, int stride, int padding);

// y = x * W^T + b. x [N,F], weight [out,F], bias [out].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Softmax over the last dimension; strictly positive, rows sum to 1.
Tensor softmax(const Tensor& input);

// Mean cross-entropy of logits [N,K] against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // same shape, elementwise
Tensor scale(const Tensor& x, const Tensor& s);      // s is a scalar tensor
Tensor mul_scalar(const Tensor& x, double c);
Tensor sum(const Tensor& x);                         // full reduction to scalar
Tensor pick(const Tensor& x, int index);             // scalar view of one element
Tensor flatten(const Tensor& x);                     // [N, ...] -> [N, rest]

}  // namespace xnas

#endif
