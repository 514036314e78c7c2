#include "xnas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace xnas {

namespace {

// Row-major accumulating matmul kernels with fixed loop order (deterministic
// summation). Loop orders chosen so the innermost index streams contiguously.

// C[M,N] += A[M,K] * B[K,N]
void mm_nn(const double* __restrict A, const double* __restrict B, double* __restrict C, int M,
           int K, int N) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * K;
        double* c = C + static_cast<std::size_t>(i) * N;
        int k = 0;
        for (; k + 4 <= K; k += 4) {
            const double a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
            const double* b0 = B + static_cast<std::size_t>(k) * N;
            const double* b1 = b0 + N;
            const double* b2 = b1 + N;
            const double* b3 = b2 + N;
            for (int j = 0; j < N; ++j)
                c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; k < K; ++k) {
            const double av = a[k];
            const double* b = B + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
void mm_nt(const double* A, const double* B, double* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * K;
        double* c = C + static_cast<std::size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<std::size_t>(j) * K;
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
void mm_tn(const double* __restrict A, const double* __restrict B, double* __restrict C, int M,
           int K, int N) {
    for (int i = 0; i < M; ++i) {
        double* c = C + static_cast<std::size_t>(i) * N;
        int k = 0;
        for (; k + 4 <= K; k += 4) {
            const double a0 = A[static_cast<std::size_t>(k) * M + i];
            const double a1 = A[static_cast<std::size_t>(k + 1) * M + i];
            const double a2 = A[static_cast<std::size_t>(k + 2) * M + i];
            const double a3 = A[static_cast<std::size_t>(k + 3) * M + i];
            const double* b0 = B + static_cast<std::size_t>(k) * N;
            const double* b1 = b0 + N;
            const double* b2 = b1 + N;
            const double* b3 = b2 + N;
            for (int j = 0; j < N; ++j)
                c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; k < K; ++k) {
            const double av = A[static_cast<std::size_t>(k) * M + i];
            const double* b = B + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

struct ConvDims {
    int N, C, H, W, O, k, OH, OW;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride, int padding) {
    if (input.ndim() != 4) throw std::invalid_argument("conv2d: input must be 4-D [N,C,H,W]");
    if (weight.ndim() != 4) throw std::invalid_argument("conv2d: weight must be 4-D [O,C,k,k]");
    if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    ConvDims d{};
    d.N = input.dim(0);
    d.C = input.dim(1);
    d.H = input.dim(2);
    d.W = input.dim(3);
    d.O = weight.dim(0);
    d.k = weight.dim(2);
    if (weight.dim(1) != d.C)
        throw std::invalid_argument("conv2d: weight channel count does not match input");
    if (weight.dim(3) != d.k) throw std::invalid_argument("conv2d: kernel must be square");
    if (d.H + 2 * padding < d.k || d.W + 2 * padding < d.k)
        throw std::invalid_argument("conv2d: input too small for kernel");
    d.OH = (d.H + 2 * padding - d.k) / stride + 1;
    d.OW = (d.W + 2 * padding - d.k) / stride + 1;
    return d;
}

// col [C*k*k, OH*OW] for one image, zero-padded.
void im2col(const double* x, const ConvDims& d, int stride, int padding, double* col) {
    const int L = d.OH * d.OW;
    for (int c = 0; c < d.C; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * d.H * d.W;
        for (int kh = 0; kh < d.k; ++kh) {
            for (int kw = 0; kw < d.k; ++kw) {
                double* row = col + static_cast<std::size_t>((c * d.k + kh) * d.k + kw) * L;
                for (int oh = 0; oh < d.OH; ++oh) {
                    const int ih = oh * stride - padding + kh;
                    double* out = row + static_cast<std::size_t>(oh) * d.OW;
                    if (ih < 0 || ih >= d.H) {
                        std::fill(out, out + d.OW, 0.0);
                        continue;
                    }
                    const double* xr = xc + static_cast<std::size_t>(ih) * d.W;
                    for (int ow = 0; ow < d.OW; ++ow) {
                        const int iw = ow * stride - padding + kw;
                        out[ow] = (iw >= 0 && iw < d.W) ? xr[iw] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add of a col buffer back into image gradients.
void col2im_acc(const double* col, const ConvDims& d, int stride, int padding, double* dx) {
    const int L = d.OH * d.OW;
    for (int c = 0; c < d.C; ++c) {
        double* xc = dx + static_cast<std::size_t>(c) * d.H * d.W;
        for (int kh = 0; kh < d.k; ++kh) {
            for (int kw = 0; kw < d.k; ++kw) {
                const double* row = col + static_cast<std::size_t>((c * d.k + kh) * d.k + kw) * L;
                for (int oh = 0; oh < d.OH; ++oh) {
                    const int ih = oh * stride - padding + kh;
                    if (ih < 0 || ih >= d.H) continue;
                    const double* in = row + static_cast<std::size_t>(oh) * d.OW;
                    double* xr = xc + static_cast<std::size_t>(ih) * d.W;
                    for (int ow = 0; ow < d.OW; ++ow) {
                        const int iw = ow * stride - padding + kw;
                        if (iw >= 0 && iw < d.W) xr[iw] += in[ow];
                    }
                }
            }
        }
    }
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->tracked()) return true;
    return false;
}

void attach(Tensor& out, std::vector<std::shared_ptr<TensorData>> parents,
            std::function<void(const TensorData&)> fn) {
    auto node = std::make_shared<GraphNode>();
    node->parents = std::move(parents);
    node->backprop = std::move(fn);
    out.set_node(std::move(node));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": operands must have identical shapes");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding) {
    const ConvDims d = conv_dims(input, weight, stride, padding);
    const int CKK = d.C * d.k * d.k;
    const int L = d.OH * d.OW;

    Tensor out = Tensor::zeros({d.N, d.O, d.OH, d.OW});
    std::vector<double> col(static_cast<std::size_t>(CKK) * L);
    for (int n = 0; n < d.N; ++n) {
        im2col(input.values().data() + static_cast<std::size_t>(n) * d.C * d.H * d.W, d, stride,
               padding, col.data());
        mm_nn(weight.values().data(), col.data(),
              out.values().data() + static_cast<std::size_t>(n) * d.O * L, d.O, CKK, L);
    }

    if (should_record({&input, &weight})) {
        auto xp = input.data_ptr();
        auto wp = weight.data_ptr();
        const bool need_dx = input.tracked();
        const bool need_dw = weight.tracked();
        attach(out, {xp, wp}, [=](const TensorData& o) {
            const int CKKb = d.C * d.k * d.k;
            const int Lb = d.OH * d.OW;
            std::vector<double> colb(static_cast<std::size_t>(CKKb) * Lb);
            std::vector<double> dcol;
            if (need_dx) dcol.resize(colb.size());
            if (need_dw && wp->grad.empty()) wp->grad.assign(wp->values.size(), 0.0);
            if (need_dx && xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            for (int n = 0; n < d.N; ++n) {
                const double* dout = o.grad.data() + static_cast<std::size_t>(n) * d.O * Lb;
                if (need_dw) {
                    im2col(xp->values.data() + static_cast<std::size_t>(n) * d.C * d.H * d.W, d,
                           stride, padding, colb.data());
                    mm_nt(dout, colb.data(), wp->grad.data(), d.O, Lb, CKKb);
                }
                if (need_dx) {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    mm_tn(wp->values.data(), dout, dcol.data(), CKKb, d.O, Lb);
                    col2im_acc(dcol.data(), d, stride, padding,
                               xp->grad.data() + static_cast<std::size_t>(n) * d.C * d.H * d.W);
                }
            }
        });
    }
    return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                   double eps) {
    if (input.ndim() != 4) throw std::invalid_argument("batchnorm2d: input must be 4-D");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (gamma.size() != C || beta.size() != C)
        throw std::invalid_argument("batchnorm2d: gamma/beta length must equal channel count");
    if (running_mean.size() != C || running_var.size() != C)
        throw std::invalid_argument("batchnorm2d: running stats length must equal channel count");

    const std::int64_t m = static_cast<std::int64_t>(N) * H * W;  // per-channel count
    const int HW = H * W;
    Tensor out = Tensor::zeros({N, C, H, W});
    std::vector<double> xhat(input.values().size());
    std::vector<double> invstd(static_cast<std::size_t>(C));

    const double* x = input.values().data();
    double* y = out.values().data();
    for (int c = 0; c < C; ++c) {
        double mean, var;
        if (training) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x + (static_cast<std::size_t>(n) * C + c) * HW;
                for (int i = 0; i < HW; ++i) s += p[i];
            }
            mean = s / static_cast<double>(m);
            double sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x + (static_cast<std::size_t>(n) * C + c) * HW;
                for (int i = 0; i < HW; ++i) {
                    const double dv = p[i] - mean;
                    sq += dv * dv;
                }
            }
            var = sq / static_cast<double>(m);
            running_mean.values()[c] = (1.0 - momentum) * running_mean.values()[c] + momentum * mean;
            const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            running_var.values()[c] = (1.0 - momentum) * running_var.values()[c] + momentum * unbiased;
        } else {
            mean = running_mean.values()[c];
            var = running_var.values()[c];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        invstd[c] = is;
        const double g = gamma.values()[c];
        const double b = beta.values()[c];
        for (int n = 0; n < N; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
                const double xh = (x[base + i] - mean) * is;
                xhat[base + i] = xh;
                y[base + i] = g * xh + b;
            }
        }
    }

    if (should_record({&input, &gamma, &beta})) {
        auto xp = input.data_ptr();
        auto gp = gamma.data_ptr();
        auto bp = beta.data_ptr();
        const bool need_dx = input.tracked();
        const bool need_dg = gamma.tracked();
        const bool need_db = beta.tracked();
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto is = std::make_shared<std::vector<double>>(std::move(invstd));
        attach(out, {xp, gp, bp}, [=](const TensorData& o) {
            if (need_dx && xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            if (need_dg && gp->grad.empty()) gp->grad.assign(gp->values.size(), 0.0);
            if (need_db && bp->grad.empty()) bp->grad.assign(bp->values.size(), 0.0);
            const double* dy = o.grad.data();
            for (int c = 0; c < C; ++c) {
                double sum_dy = 0.0, sum_dy_xh = 0.0;
                for (int n = 0; n < N; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) {
                        sum_dy += dy[base + i];
                        sum_dy_xh += dy[base + i] * (*xh)[base + i];
                    }
                }
                if (need_dg) gp->grad[c] += sum_dy_xh;
                if (need_db) bp->grad[c] += sum_dy;
                if (need_dx) {
                    const double g_is = gp->values[c] * (*is)[c];
                    if (training) {
                        const double inv_m = 1.0 / static_cast<double>(m);
                        for (int n = 0; n < N; ++n) {
                            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                            for (int i = 0; i < HW; ++i)
                                xp->grad[base + i] +=
                                    g_is * (dy[base + i] - sum_dy * inv_m -
                                            (*xh)[base + i] * sum_dy_xh * inv_m);
                        }
                    } else {
                        for (int n = 0; n < N; ++n) {
                            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                            for (int i = 0; i < HW; ++i) xp->grad[base + i] += g_is * dy[base + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const auto& x = input.values();
    auto& y = out.values();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;

    if (should_record({&input})) {
        auto xp = input.data_ptr();
        attach(out, {xp}, [xp](const TensorData& o) {
            if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                if (xp->values[i] > 0.0) xp->grad[i] += o.grad[i];
        });
    }
    return out;
}

Tensor avgpool2d(const Tensor& input, int kernel, int stride, int padding) {
    if (input.ndim() != 4) throw std::invalid_argument("avgpool2d: input must be 4-D");
    if (kernel <= 0 || stride <= 0) throw std::invalid_argument("avgpool2d: bad kernel/stride");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H + 2 * padding < kernel || W + 2 * padding < kernel)
        throw std::invalid_argument("avgpool2d: input too small for kernel");
    const int OH = (H + 2 * padding - kernel) / stride + 1;
    const int OW = (W + 2 * padding - kernel) / stride + 1;

    Tensor out = Tensor::zeros({N, C, OH, OW});
    const double* x = input.values().data();
    double* y = out.values().data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xc = x + (static_cast<std::size_t>(n) * C + c) * H * W;
            double* yc = y + (static_cast<std::size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const int h0 = oh * stride - padding, w0 = ow * stride - padding;
                    double s = 0.0;
                    int cnt = 0;
                    for (int kh = 0; kh < kernel; ++kh) {
                        const int ih = h0 + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < kernel; ++kw) {
                            const int iw = w0 + kw;
                            if (iw < 0 || iw >= W) continue;
                            s += xc[static_cast<std::size_t>(ih) * W + iw];
                            ++cnt;
                        }
                    }
                    yc[static_cast<std::size_t>(oh) * OW + ow] = s / static_cast<double>(cnt);
                }
        }

    if (should_record({&input})) {
        auto xp = input.data_ptr();
        attach(out, {xp}, [=](const TensorData& o) {
            if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            const double* dy = o.grad.data();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double* gx = xp->grad.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                    const double* gy = dy + (static_cast<std::size_t>(n) * C + c) * OH * OW;
                    for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow) {
                            const int h0 = oh * stride - padding, w0 = ow * stride - padding;
                            int cnt = 0;
                            for (int kh = 0; kh < kernel; ++kh) {
                                const int ih = h0 + kh;
                                if (ih < 0 || ih >= H) continue;
                                for (int kw = 0; kw < kernel; ++kw) {
                                    const int iw = w0 + kw;
                                    if (iw >= 0 && iw < W) ++cnt;
                                }
                            }
                            const double g = gy[static_cast<std::size_t>(oh) * OW + ow] /
                                             static_cast<double>(cnt);
                            for (int kh = 0; kh < kernel; ++kh) {
                                const int ih = h0 + kh;
                                if (ih < 0 || ih >= H) continue;
                                for (int kw = 0; kw < kernel; ++kw) {
                                    const int iw = w0 + kw;
                                    if (iw >= 0 && iw < W)
                                        gx[static_cast<std::size_t>(ih) * W + iw] += g;
                                }
                            }
                        }
                }
        });
    }
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.ndim() != 2 || weight.ndim() != 2)
        throw std::invalid_argument("linear: input and weight must be 2-D");
    const int N = input.dim(0), F = input.dim(1);
    const int OF = weight.dim(0);
    if (weight.dim(1) != F) throw std::invalid_argument("linear: weight/input feature mismatch");
    if (bias.size() != OF) throw std::invalid_argument("linear: bias length mismatch");

    Tensor out = Tensor::zeros({N, OF});
    double* y = out.values().data();
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < OF; ++j) y[static_cast<std::size_t>(n) * OF + j] = bias.values()[j];
    mm_nt(input.values().data(), weight.values().data(), y, N, F, OF);

    if (should_record({&input, &weight, &bias})) {
        auto xp = input.data_ptr();
        auto wp = weight.data_ptr();
        auto bp = bias.data_ptr();
        const bool need_dx = input.tracked();
        const bool need_dw = weight.tracked();
        const bool need_db = bias.tracked();
        attach(out, {xp, wp, bp}, [=](const TensorData& o) {
            const double* dy = o.grad.data();
            if (need_dx) {
                if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
                mm_nn(dy, wp->values.data(), xp->grad.data(), N, OF, F);
            }
            if (need_dw) {
                if (wp->grad.empty()) wp->grad.assign(wp->values.size(), 0.0);
                mm_tn(dy, xp->values.data(), wp->grad.data(), OF, N, F);
            }
            if (need_db) {
                if (bp->grad.empty()) bp->grad.assign(bp->values.size(), 0.0);
                for (int n = 0; n < N; ++n)
                    for (int j = 0; j < OF; ++j)
                        bp->grad[j] += dy[static_cast<std::size_t>(n) * OF + j];
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& input) {
    if (input.ndim() < 1) throw std::invalid_argument("softmax: input must have rank >= 1");
    const int K = input.dim(input.ndim() - 1);
    const std::int64_t rows = input.size() / K;

    Tensor out = Tensor::zeros(input.shape());
    const double* x = input.values().data();
    double* y = out.values().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * K;
        double* yr = y + r * K;
        double mx = xr[0];
        for (int j = 1; j < K; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (int j = 0; j < K; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        for (int j = 0; j < K; ++j) yr[j] /= s;
    }

    if (should_record({&input})) {
        auto xp = input.data_ptr();
        attach(out, {xp}, [xp, rows, K](const TensorData& o) {
            if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* p = o.values.data() + r * K;
                const double* g = o.grad.data() + r * K;
                double dot = 0.0;
                for (int j = 0; j < K; ++j) dot += p[j] * g[j];
                for (int j = 0; j < K; ++j) xp->grad[r * K + j] += p[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy: logits must be [N,K]");
    const int N = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw std::invalid_argument("cross_entropy: label count must match batch size");
    for (int y : labels)
        if (y < 0 || y >= K) throw std::invalid_argument("cross_entropy: label outside class range");

    auto probs = std::make_shared<std::vector<double>>(logits.values().size());
    const double* x = logits.values().data();
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const double* xr = x + static_cast<std::size_t>(n) * K;
        double mx = xr[0];
        for (int j = 1; j < K; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (int j = 0; j < K; ++j) {
            const double e = std::exp(xr[j] - mx);
            (*probs)[static_cast<std::size_t>(n) * K + j] = e;
            s += e;
        }
        for (int j = 0; j < K; ++j) (*probs)[static_cast<std::size_t>(n) * K + j] /= s;
        // log-sum-exp form: finite for any finite logits even when the true
        // class probability underflows to zero
        loss -= (xr[labels[n]] - mx) - std::log(s);
    }
    loss /= static_cast<double>(N);
    if (!std::isfinite(loss)) throw std::runtime_error("cross_entropy: non-finite loss");

    Tensor out = Tensor::scalar(loss);
    if (should_record({&logits})) {
        auto xp = logits.data_ptr();
        auto lab = std::make_shared<std::vector<int>>(labels);
        attach(out, {xp}, [=](const TensorData& o) {
            if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            const double g = o.grad[0] / static_cast<double>(N);
            for (int n = 0; n < N; ++n)
                for (int j = 0; j < K; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(n) * K + j;
                    const double onehot = (j == (*lab)[n]) ? 1.0 : 0.0;
                    xp->grad[idx] += g * ((*probs)[idx] - onehot);
                }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& y = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] + bv[i];

    if (should_record({&a, &b})) {
        auto ap = a.data_ptr();
        auto bp = b.data_ptr();
        const bool na = a.tracked(), nb = b.tracked();
        attach(out, {ap, bp}, [=](const TensorData& o) {
            const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
            if (na) accumulate_grad(*ap, o.grad.data(), n);
            if (nb) accumulate_grad(*bp, o.grad.data(), n);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& y = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] * bv[i];

    if (should_record({&a, &b})) {
        auto ap = a.data_ptr();
        auto bp = b.data_ptr();
        const bool na = a.tracked(), nb = b.tracked();
        attach(out, {ap, bp}, [=](const TensorData& o) {
            if (na) {
                if (ap->grad.empty()) ap->grad.assign(ap->values.size(), 0.0);
                for (std::size_t i = 0; i < o.grad.size(); ++i)
                    ap->grad[i] += bp->values[i] * o.grad[i];
            }
            if (nb) {
                if (bp->grad.empty()) bp->grad.assign(bp->values.size(), 0.0);
                for (std::size_t i = 0; i < o.grad.size(); ++i)
                    bp->grad[i] += ap->values[i] * o.grad[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw std::invalid_argument("scale: scale factor must be a scalar tensor");
    const double sv = s.values()[0];
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& y = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = sv * xv[i];

    if (should_record({&x, &s})) {
        auto xp = x.data_ptr();
        auto sp = s.data_ptr();
        const bool nx = x.tracked(), ns = s.tracked();
        attach(out, {xp, sp}, [=](const TensorData& o) {
            if (nx) {
                if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
                const double sb = sp->values[0];
                for (std::size_t i = 0; i < o.grad.size(); ++i) xp->grad[i] += sb * o.grad[i];
            }
            if (ns) {
                if (sp->grad.empty()) sp->grad.assign(1, 0.0);
                double acc = 0.0;
                for (std::size_t i = 0; i < o.grad.size(); ++i) acc += xp->values[i] * o.grad[i];
                sp->grad[0] += acc;
            }
        });
    }
    return out;
}

Tensor mul_scalar(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& y = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = c * xv[i];

    if (should_record({&x})) {
        auto xp = x.data_ptr();
        attach(out, {xp}, [xp, c](const TensorData& o) {
            if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            for (std::size_t i = 0; i < o.grad.size(); ++i) xp->grad[i] += c * o.grad[i];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);

    if (should_record({&x})) {
        auto xp = x.data_ptr();
        attach(out, {xp}, [xp](const TensorData& o) {
            if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            const double g = o.grad[0];
            for (double& gv : xp->grad) gv += g;
        });
    }
    return out;
}

Tensor pick(const Tensor& x, int index) {
    if (index < 0 || index >= x.size()) throw std::invalid_argument("pick: index out of range");
    Tensor out = Tensor::scalar(x.values()[static_cast<std::size_t>(index)]);

    if (should_record({&x})) {
        auto xp = x.data_ptr();
        attach(out, {xp}, [xp, index](const TensorData& o) {
            if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
            xp->grad[static_cast<std::size_t>(index)] += o.grad[0];
        });
    }
    return out;
}

Tensor flatten(const Tensor& x) {
    if (x.ndim() < 2) throw std::invalid_argument("flatten: input must have rank >= 2");
    const int N = x.dim(0);
    const int rest = static_cast<int>(x.size() / N);
    Tensor out = Tensor::from_data({N, rest}, x.values());

    if (should_record({&x})) {
        auto xp = x.data_ptr();
        attach(out, {xp}, [xp](const TensorData& o) {
            accumulate_grad(*xp, o.grad.data(), static_cast<std::int64_t>(o.grad.size()));
        });
    }
    return out;
}

}  // namespace xnas
