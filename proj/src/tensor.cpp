#include "fgs/tensor.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "fgs/rng.hpp"

namespace fgs {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(shape, std::vector<float>(shape_numel(shape), 0.0f), requires_grad);
}

Tensor Tensor::full(const Shape& shape, float v, bool requires_grad) {
    return Tensor(shape, std::vector<float>(shape_numel(shape), v), requires_grad);
}

Tensor Tensor::scalar(float v, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<float>{v}, requires_grad);
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

void assert_finite(const Tensor& t, const char* what) {
    for (float v : t.data()) {
        if (!std::isfinite(v)) throw Error(std::string("non-finite value in ") + what);
    }
}

namespace {

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<float> value,
                                      std::vector<std::shared_ptr<TensorNode>> parents) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->requires_grad = false;
    for (auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

// Row-major C = alpha * op(A) * op(B) + beta * C.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
           const float* a, int lda, const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

struct ConvGeom {
    int batch, in_h, in_w, in_c;
    int k_h, k_w, out_c;
    int stride;
    int out_h, out_w;
    int pad_top, pad_left;
};

ConvGeom conv_geometry(const Shape& in, const Shape& kshape, int stride, Padding padding) {
    ConvGeom g{};
    g.batch = in[0];
    g.in_h = in[1];
    g.in_w = in[2];
    g.in_c = in[3];
    g.k_h = kshape[0];
    g.k_w = kshape[1];
    g.out_c = kshape[3];
    g.stride = stride;
    if (padding == Padding::Same) {
        g.out_h = (g.in_h + stride - 1) / stride;
        g.out_w = (g.in_w + stride - 1) / stride;
        int pad_h = std::max((g.out_h - 1) * stride + g.k_h - g.in_h, 0);
        int pad_w = std::max((g.out_w - 1) * stride + g.k_w - g.in_w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        g.out_h = (g.in_h - g.k_h) / stride + 1;
        g.out_w = (g.in_w - g.k_w) / stride + 1;
        g.pad_top = 0;
        g.pad_left = 0;
    }
    return g;
}

// Patch matrix: one row per output position, KhKwCin columns.
void im2col(const float* in, const ConvGeom& g, float* col) {
    const int patch = g.k_h * g.k_w * g.in_c;
    for (int n = 0; n < g.batch; ++n) {
        const float* img = in + static_cast<std::size_t>(n) * g.in_h * g.in_w * g.in_c;
        for (int oh = 0; oh < g.out_h; ++oh) {
            for (int ow = 0; ow < g.out_w; ++ow) {
                float* row = col + (static_cast<std::size_t>(n) * g.out_h * g.out_w +
                                    static_cast<std::size_t>(oh) * g.out_w + ow) *
                                       patch;
                for (int kh = 0; kh < g.k_h; ++kh) {
                    int ih = oh * g.stride - g.pad_top + kh;
                    float* dst = row + kh * g.k_w * g.in_c;
                    if (ih < 0 || ih >= g.in_h) {
                        std::memset(dst, 0, sizeof(float) * g.k_w * g.in_c);
                        continue;
                    }
                    for (int kw = 0; kw < g.k_w; ++kw) {
                        int iw = ow * g.stride - g.pad_left + kw;
                        if (iw < 0 || iw >= g.in_w) {
                            std::memset(dst + kw * g.in_c, 0, sizeof(float) * g.in_c);
                        } else {
                            std::memcpy(dst + kw * g.in_c,
                                        img + (static_cast<std::size_t>(ih) * g.in_w + iw) * g.in_c,
                                        sizeof(float) * g.in_c);
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of the patch-matrix gradient back onto the input image.
void col2im_add(const float* col, const ConvGeom& g, float* in_grad) {
    const int patch = g.k_h * g.k_w * g.in_c;
    for (int n = 0; n < g.batch; ++n) {
        float* img = in_grad + static_cast<std::size_t>(n) * g.in_h * g.in_w * g.in_c;
        for (int oh = 0; oh < g.out_h; ++oh) {
            for (int ow = 0; ow < g.out_w; ++ow) {
                const float* row = col + (static_cast<std::size_t>(n) * g.out_h * g.out_w +
                                          static_cast<std::size_t>(oh) * g.out_w + ow) *
                                             patch;
                for (int kh = 0; kh < g.k_h; ++kh) {
                    int ih = oh * g.stride - g.pad_top + kh;
                    if (ih < 0 || ih >= g.in_h) continue;
                    for (int kw = 0; kw < g.k_w; ++kw) {
                        int iw = ow * g.stride - g.pad_left + kw;
                        if (iw < 0 || iw >= g.in_w) continue;
                        float* dst = img + (static_cast<std::size_t>(ih) * g.in_w + iw) * g.in_c;
                        const float* src = row + (kh * g.k_w + kw) * g.in_c;
                        for (int c = 0; c < g.in_c; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, Padding padding) {
    if (input.ndim() != 4)
        throw DimensionError("conv2d expects NHWC input, got " + shape_str(input.shape()));
    if (kernel.ndim() != 4)
        throw DimensionError("conv2d expects KhKwCinCout kernel, got " + shape_str(kernel.shape()));
    if (kernel.dim(2) != input.dim(3))
        throw DimensionError("conv2d channel mismatch: input C=" + std::to_string(input.dim(3)) +
                             " kernel Cin=" + std::to_string(kernel.dim(2)));
    if (bias.numel() != static_cast<std::size_t>(kernel.dim(3)))
        throw DimensionError("conv2d bias length != Cout");
    if (stride < 1) throw ContractError("conv2d stride must be >= 1");

    ConvGeom g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
    if (g.out_h <= 0 || g.out_w <= 0)
        throw DimensionError("conv2d kernel larger than input in valid mode");

    const int rows = g.batch * g.out_h * g.out_w;
    const int patch = g.k_h * g.k_w * g.in_c;
    auto col = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows) * patch);
    im2col(input.data().data(), g, col->data());

    std::vector<float> out(static_cast<std::size_t>(rows) * g.out_c);
    sgemm(false, false, rows, g.out_c, patch, 1.0f, col->data(), patch,
          kernel.data().data(), g.out_c, 0.0f, out.data(), g.out_c);
    const float* b = bias.data().data();
    for (int r = 0; r < rows; ++r) {
        float* o = out.data() + static_cast<std::size_t>(r) * g.out_c;
        for (int c = 0; c < g.out_c; ++c) o[c] += b[c];
    }

    auto node = make_node({g.batch, g.out_h, g.out_w, g.out_c}, std::move(out),
                          {input.node(), kernel.node(), bias.node()});
    if (node->requires_grad) {
        auto in_n = input.node(), k_n = kernel.node(), b_n = bias.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, k_n, b_n, g, col, rows, patch]() {
            const float* dy = raw->grad.data();
            if (b_n->requires_grad) {
                b_n->ensure_grad();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < g.out_c; ++c)
                        b_n->grad[static_cast<std::size_t>(c)] +=
                            dy[static_cast<std::size_t>(r) * g.out_c + c];
            }
            if (k_n->requires_grad) {
                k_n->ensure_grad();
                sgemm(true, false, patch, g.out_c, rows, 1.0f, col->data(), patch, dy,
                      g.out_c, 1.0f, k_n->grad.data(), g.out_c);
            }
            if (in_n->requires_grad) {
                in_n->ensure_grad();
                std::vector<float> dcol(static_cast<std::size_t>(rows) * patch);
                sgemm(false, true, rows, patch, g.out_c, 1.0f, dy, g.out_c,
                      k_n->value.data(), g.out_c, 0.0f, dcol.data(), patch);
                col2im_add(dcol.data(), g, in_n->grad.data());
            }
        };
    }
    return Tensor(node);
}

Tensor maxpool2d(const Tensor& input) {
    if (input.ndim() != 4)
        throw DimensionError("maxpool2d expects NHWC input, got " + shape_str(input.shape()));
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const int oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw DimensionError("maxpool2d input smaller than 2x2");

    std::vector<float> out(static_cast<std::size_t>(n) * oh * ow * c);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    const float* in = input.data().data();
    for (int b = 0; b < n; ++b) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                for (int ch = 0; ch < c; ++ch) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::uint32_t best_idx = 0;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            std::size_t idx =
                                ((static_cast<std::size_t>(b) * h + 2 * y + dy) * w + 2 * x + dx) * c + ch;
                            if (in[idx] > best) {
                                best = in[idx];
                                best_idx = static_cast<std::uint32_t>(idx);
                            }
                        }
                    }
                    std::size_t o = ((static_cast<std::size_t>(b) * oh + y) * ow + x) * c + ch;
                    out[o] = best;
                    (*argmax)[o] = best_idx;
                }
            }
        }
    }
    auto node = make_node({n, oh, ow, c}, std::move(out), {input.node()});
    if (node->requires_grad) {
        auto in_n = input.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, argmax]() {
            in_n->ensure_grad();
            for (std::size_t i = 0; i < raw->grad.size(); ++i)
                in_n->grad[(*argmax)[i]] += raw->grad[i];
        };
    }
    return Tensor(node);
}

Tensor upsample2d(const Tensor& input) {
    if (input.ndim() != 4)
        throw DimensionError("upsample2d expects NHWC input, got " + shape_str(input.shape()));
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const int oh = 2 * h, ow = 2 * w;
    std::vector<float> out(static_cast<std::size_t>(n) * oh * ow * c);
    const float* in = input.data().data();
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const float* src = in + ((static_cast<std::size_t>(b) * h + y / 2) * w + x / 2) * c;
                float* dst = out.data() + ((static_cast<std::size_t>(b) * oh + y) * ow + x) * c;
                std::memcpy(dst, src, sizeof(float) * c);
            }
    auto node = make_node({n, oh, ow, c}, std::move(out), {input.node()});
    if (node->requires_grad) {
        auto in_n = input.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, n, h, w, c, oh, ow]() {
            in_n->ensure_grad();
            for (int b = 0; b < n; ++b)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x) {
                        std::size_t src = ((static_cast<std::size_t>(b) * oh + y) * ow + x) * c;
                        std::size_t dst = ((static_cast<std::size_t>(b) * h + y / 2) * w + x / 2) * c;
                        for (int ch = 0; ch < c; ++ch)
                            in_n->grad[dst + ch] += raw->grad[src + ch];
                    }
        };
    }
    return Tensor(node);
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (input.ndim() != 2 || weights.ndim() != 2)
        throw DimensionError("dense expects 2-D input and weights, got " +
                             shape_str(input.shape()) + " x " + shape_str(weights.shape()));
    const int b = input.dim(0), f = input.dim(1), u = weights.dim(1);
    if (weights.dim(0) != f)
        throw DimensionError("dense feature mismatch: input F=" + std::to_string(f) +
                             " weights rows=" + std::to_string(weights.dim(0)));
    if (bias.numel() != static_cast<std::size_t>(u))
        throw DimensionError("dense bias length != units");

    std::vector<float> out(static_cast<std::size_t>(b) * u);
    sgemm(false, false, b, u, f, 1.0f, input.data().data(), f, weights.data().data(), u,
          0.0f, out.data(), u);
    for (int r = 0; r < b; ++r)
        for (int col = 0; col < u; ++col)
            out[static_cast<std::size_t>(r) * u + col] += bias.data()[static_cast<std::size_t>(col)];

    auto node = make_node({b, u}, std::move(out), {input.node(), weights.node(), bias.node()});
    if (node->requires_grad) {
        auto in_n = input.node(), w_n = weights.node(), b_n = bias.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, w_n, b_n, b, f, u]() {
            const float* dy = raw->grad.data();
            if (b_n->requires_grad) {
                b_n->ensure_grad();
                for (int r = 0; r < b; ++r)
                    for (int col = 0; col < u; ++col)
                        b_n->grad[static_cast<std::size_t>(col)] += dy[static_cast<std::size_t>(r) * u + col];
            }
            if (w_n->requires_grad) {
                w_n->ensure_grad();
                sgemm(true, false, f, u, b, 1.0f, in_n->value.data(), f, dy, u, 1.0f,
                      w_n->grad.data(), u);
            }
            if (in_n->requires_grad) {
                in_n->ensure_grad();
                sgemm(false, true, b, f, u, 1.0f, dy, u, w_n->value.data(), u, 1.0f,
                      in_n->grad.data(), f);
            }
        };
    }
    return Tensor(node);
}

Tensor relu(const Tensor& x) {
    std::vector<float> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0f, x.data()[i]);
    auto node = make_node(x.shape(), std::move(out), {x.node()});
    if (node->requires_grad) {
        auto in_n = x.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n]() {
            in_n->ensure_grad();
            for (std::size_t i = 0; i < raw->grad.size(); ++i)
                if (in_n->value[i] > 0.0f) in_n->grad[i] += raw->grad[i];
        };
    }
    return Tensor(node);
}

Tensor sigmoid(const Tensor& x) {
    std::vector<float> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 1.0f / (1.0f + std::exp(-x.data()[i]));
    auto node = make_node(x.shape(), std::move(out), {x.node()});
    if (node->requires_grad) {
        auto in_n = x.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n]() {
            in_n->ensure_grad();
            for (std::size_t i = 0; i < raw->grad.size(); ++i) {
                float s = raw->value[i];
                in_n->grad[i] += raw->grad[i] * s * (1.0f - s);
            }
        };
    }
    return Tensor(node);
}

Tensor softmax(const Tensor& x) {
    if (x.ndim() != 2) throw DimensionError("softmax expects BxK input, got " + shape_str(x.shape()));
    const int b = x.dim(0), k = x.dim(1);
    std::vector<float> out(x.numel());
    for (int r = 0; r < b; ++r) {
        const float* row = x.data().data() + static_cast<std::size_t>(r) * k;
        float* o = out.data() + static_cast<std::size_t>(r) * k;
        float mx = row[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        float sum = 0.0f;
        for (int i = 0; i < k; ++i) {
            o[i] = std::exp(row[i] - mx);
            sum += o[i];
        }
        for (int i = 0; i < k; ++i) o[i] /= sum;
    }
    auto node = make_node(x.shape(), std::move(out), {x.node()});
    if (node->requires_grad) {
        auto in_n = x.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, b, k]() {
            in_n->ensure_grad();
            for (int r = 0; r < b; ++r) {
                const float* s = raw->value.data() + static_cast<std::size_t>(r) * k;
                const float* dy = raw->grad.data() + static_cast<std::size_t>(r) * k;
                float dot = 0.0f;
                for (int i = 0; i < k; ++i) dot += s[i] * dy[i];
                float* dx = in_n->grad.data() + static_cast<std::size_t>(r) * k;
                for (int i = 0; i < k; ++i) dx[i] += s[i] * (dy[i] - dot);
            }
        };
    }
    return Tensor(node);
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Mode mode, float eps, float momentum,
                   std::vector<float>& running_mean, std::vector<float>& running_var) {
    if (input.ndim() != 4)
        throw DimensionError("batchnorm2d expects NHWC input, got " + shape_str(input.shape()));
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c))
        throw DimensionError("batchnorm2d gamma/beta length != channels");
    if (mode == Mode::Train && n < 1) throw ContractError("batchnorm2d train mode needs batch >= 1");

    const std::size_t m = static_cast<std::size_t>(n) * h * w;
    const float* in = input.data().data();
    std::vector<float> mean(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
    if (mode == Mode::Train) {
        std::vector<double> acc(static_cast<std::size_t>(c), 0.0), acc2(static_cast<std::size_t>(c), 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (int ch = 0; ch < c; ++ch) {
                float v = in[i * c + ch];
                acc[static_cast<std::size_t>(ch)] += v;
                acc2[static_cast<std::size_t>(ch)] += static_cast<double>(v) * v;
            }
        for (int ch = 0; ch < c; ++ch) {
            double mu = acc[static_cast<std::size_t>(ch)] / static_cast<double>(m);
            mean[static_cast<std::size_t>(ch)] = static_cast<float>(mu);
            var[static_cast<std::size_t>(ch)] = static_cast<float>(
                std::max(0.0, acc2[static_cast<std::size_t>(ch)] / static_cast<double>(m) - mu * mu));
        }
        for (int ch = 0; ch < c; ++ch) {
            running_mean[static_cast<std::size_t>(ch)] =
                momentum * running_mean[static_cast<std::size_t>(ch)] + (1.0f - momentum) * mean[static_cast<std::size_t>(ch)];
            running_var[static_cast<std::size_t>(ch)] =
                momentum * running_var[static_cast<std::size_t>(ch)] + (1.0f - momentum) * var[static_cast<std::size_t>(ch)];
        }
    } else {
        mean.assign(running_mean.begin(), running_mean.end());
        var.assign(running_var.begin(), running_var.end());
    }

    std::vector<float> invstd(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch)
        invstd[static_cast<std::size_t>(ch)] = 1.0f / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);

    auto xhat = std::make_shared<std::vector<float>>(input.numel());
    std::vector<float> out(input.numel());
    const float* g = gamma.data().data();
    const float* be = beta.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (int ch = 0; ch < c; ++ch) {
            std::size_t idx = i * c + ch;
            float xh = (in[idx] - mean[static_cast<std::size_t>(ch)]) * invstd[static_cast<std::size_t>(ch)];
            (*xhat)[idx] = xh;
            out[idx] = g[ch] * xh + be[ch];
        }

    auto node = make_node(input.shape(), std::move(out), {input.node(), gamma.node(), beta.node()});
    if (node->requires_grad) {
        auto in_n = input.node(), g_n = gamma.node(), b_n = beta.node();
        TensorNode* raw = node.get();
        auto invstd_s = std::make_shared<std::vector<float>>(std::move(invstd));
        bool train = (mode == Mode::Train);
        node->backward_fn = [raw, in_n, g_n, b_n, xhat, invstd_s, m, c, train]() {
            const float* dy = raw->grad.data();
            if (b_n->requires_grad) {
                b_n->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (int ch = 0; ch < c; ++ch) b_n->grad[static_cast<std::size_t>(ch)] += dy[i * c + ch];
            }
            if (g_n->requires_grad) {
                g_n->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (int ch = 0; ch < c; ++ch)
                        g_n->grad[static_cast<std::size_t>(ch)] += dy[i * c + ch] * (*xhat)[i * c + ch];
            }
            if (in_n->requires_grad) {
                in_n->ensure_grad();
                if (train) {
                    // dx = g*invstd/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                    std::vector<double> s1(static_cast<std::size_t>(c), 0.0), s2(static_cast<std::size_t>(c), 0.0);
                    for (std::size_t i = 0; i < m; ++i)
                        for (int ch = 0; ch < c; ++ch) {
                            double dxh = static_cast<double>(dy[i * c + ch]) * g_n->value[static_cast<std::size_t>(ch)];
                            s1[static_cast<std::size_t>(ch)] += dxh;
                            s2[static_cast<std::size_t>(ch)] += dxh * (*xhat)[i * c + ch];
                        }
                    for (std::size_t i = 0; i < m; ++i)
                        for (int ch = 0; ch < c; ++ch) {
                            std::size_t idx = i * c + ch;
                            double dxh = static_cast<double>(dy[idx]) * g_n->value[static_cast<std::size_t>(ch)];
                            double dx = (*invstd_s)[static_cast<std::size_t>(ch)] / static_cast<double>(m) *
                                        (static_cast<double>(m) * dxh - s1[static_cast<std::size_t>(ch)] -
                                         (*xhat)[idx] * s2[static_cast<std::size_t>(ch)]);
                            in_n->grad[idx] += static_cast<float>(dx);
                        }
                } else {
                    for (std::size_t i = 0; i < m; ++i)
                        for (int ch = 0; ch < c; ++ch)
                            in_n->grad[i * c + ch] += dy[i * c + ch] *
                                                      g_n->value[static_cast<std::size_t>(ch)] *
                                                      (*invstd_s)[static_cast<std::size_t>(ch)];
                }
            }
        };
    }
    return Tensor(node);
}

Tensor dropout(const Tensor& input, float rate, Mode mode, std::uint64_t seed) {
    if (rate < 0.0f || rate > 1.0f) throw ContractError("dropout rate must be in [0,1]");
    if (mode == Mode::Infer || rate == 0.0f) {
        // Identity pass-through, still a graph node so gradients flow.
        auto node = make_node(input.shape(), input.data(), {input.node()});
        if (node->requires_grad) {
            auto in_n = input.node();
            TensorNode* raw = node.get();
            node->backward_fn = [raw, in_n]() {
                in_n->ensure_grad();
                for (std::size_t i = 0; i < raw->grad.size(); ++i) in_n->grad[i] += raw->grad[i];
            };
        }
        return Tensor(node);
    }
    Rng rng(seed);
    auto mask = std::make_shared<std::vector<float>>(input.numel());
    const float keep_scale = rate >= 1.0f ? 0.0f : 1.0f / (1.0f - rate);
    for (auto& v : *mask) v = (rng.uniform() < rate) ? 0.0f : keep_scale;
    std::vector<float> out(input.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data()[i] * (*mask)[i];
    auto node = make_node(input.shape(), std::move(out), {input.node()});
    if (node->requires_grad) {
        auto in_n = input.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, mask]() {
            in_n->ensure_grad();
            for (std::size_t i = 0; i < raw->grad.size(); ++i)
                in_n->grad[i] += raw->grad[i] * (*mask)[i];
        };
    }
    return Tensor(node);
}

Tensor reshape(const Tensor& input, const Shape& shape) {
    if (shape_numel(shape) != input.numel())
        throw DimensionError("reshape numel mismatch: " + shape_str(input.shape()) + " -> " +
                             shape_str(shape));
    auto node = make_node(shape, input.data(), {input.node()});
    if (node->requires_grad) {
        auto in_n = input.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n]() {
            in_n->ensure_grad();
            for (std::size_t i = 0; i < raw->grad.size(); ++i) in_n->grad[i] += raw->grad[i];
        };
    }
    return Tensor(node);
}

Tensor flatten(const Tensor& input) {
    int b = input.dim(0);
    return reshape(input, {b, static_cast<int>(input.numel()) / b});
}

Tensor scale(const Tensor& input, float factor) {
    std::vector<float> out(input.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data()[i] * factor;
    auto node = make_node(input.shape(), std::move(out), {input.node()});
    if (node->requires_grad) {
        auto in_n = input.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, factor]() {
            in_n->ensure_grad();
            for (std::size_t i = 0; i < raw->grad.size(); ++i)
                in_n->grad[i] += raw->grad[i] * factor;
        };
    }
    return Tensor(node);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw DimensionError("mse shape mismatch: " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    const std::size_t n = pred.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = static_cast<double>(pred.data()[i]) - target.data()[i];
        acc += d * d;
    }
    auto node = make_node({1}, {static_cast<float>(acc / static_cast<double>(n))},
                          {pred.node(), target.node()});
    if (node->requires_grad) {
        auto p_n = pred.node(), t_n = target.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, p_n, t_n, n]() {
            float dy = raw->grad[0];
            float s = 2.0f / static_cast<float>(n);
            if (p_n->requires_grad) {
                p_n->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    p_n->grad[i] += dy * s * (p_n->value[i] - t_n->value[i]);
            }
            if (t_n->requires_grad) {
                t_n->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    t_n->grad[i] -= dy * s * (p_n->value[i] - t_n->value[i]);
            }
        };
    }
    return Tensor(node);
}

Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2)
        throw DimensionError("cross_entropy expects BxK logits, got " + shape_str(logits.shape()));
    const int b = logits.dim(0), k = logits.dim(1);
    if (labels.size() != static_cast<std::size_t>(b))
        throw ContractError("cross_entropy label count != batch size");
    for (int l : labels)
        if (l < 0 || l >= k) throw ContractError("cross_entropy label out of range: " + std::to_string(l));

    // Per-row log-sum-exp with max subtraction; probabilities saved for backward.
    auto probs = std::make_shared<std::vector<float>>(logits.numel());
    double acc = 0.0;
    for (int r = 0; r < b; ++r) {
        const float* row = logits.data().data() + static_cast<std::size_t>(r) * k;
        float* p = probs->data() + static_cast<std::size_t>(r) * k;
        float mx = row[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) sum += std::exp(static_cast<double>(row[i]) - mx);
        double lse = mx + std::log(sum);
        acc += lse - row[labels[static_cast<std::size_t>(r)]];
        for (int i = 0; i < k; ++i)
            p[i] = static_cast<float>(std::exp(static_cast<double>(row[i]) - lse));
    }
    auto labels_s = std::make_shared<std::vector<int>>(labels);
    auto node = make_node({1}, {static_cast<float>(acc / b)}, {logits.node()});
    if (node->requires_grad) {
        auto in_n = logits.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, probs, labels_s, b, k]() {
            in_n->ensure_grad();
            float dy = raw->grad[0] / static_cast<float>(b);
            for (int r = 0; r < b; ++r) {
                float* dx = in_n->grad.data() + static_cast<std::size_t>(r) * k;
                const float* p = probs->data() + static_cast<std::size_t>(r) * k;
                int lab = (*labels_s)[static_cast<std::size_t>(r)];
                for (int i = 0; i < k; ++i) dx[i] += dy * (p[i] - (i == lab ? 1.0f : 0.0f));
            }
        };
    }
    return Tensor(node);
}

Tensor nll_from_probs(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.ndim() != 2)
        throw DimensionError("nll_from_probs expects BxK probabilities, got " + shape_str(probs.shape()));
    const int b = probs.dim(0), k = probs.dim(1);
    if (labels.size() != static_cast<std::size_t>(b))
        throw ContractError("nll_from_probs label count != batch size");
    double acc = 0.0;
    for (int r = 0; r < b; ++r) {
        int lab = labels[static_cast<std::size_t>(r)];
        if (lab < 0 || lab >= k)
            throw ContractError("label out of range: " + std::to_string(lab));
        float p = std::clamp(probs.data()[static_cast<std::size_t>(r) * k + lab], 1e-7f, 1.0f - 1e-7f);
        acc += -std::log(static_cast<double>(p));
    }
    auto labels_s = std::make_shared<std::vector<int>>(labels);
    auto node = make_node({1}, {static_cast<float>(acc / b)}, {probs.node()});
    if (node->requires_grad) {
        auto in_n = probs.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, labels_s, b, k]() {
            in_n->ensure_grad();
            float dy = raw->grad[0] / static_cast<float>(b);
            for (int r = 0; r < b; ++r) {
                std::size_t idx = static_cast<std::size_t>(r) * k + (*labels_s)[static_cast<std::size_t>(r)];
                float p = std::clamp(in_n->value[idx], 1e-7f, 1.0f - 1e-7f);
                in_n->grad[idx] += dy * (-1.0f / p);
            }
        };
    }
    return Tensor(node);
}

Tensor bce_loss(const Tensor& pred, const std::vector<float>& target) {
    if (pred.numel() != target.size())
        throw DimensionError("bce pred/target length mismatch");
    const std::size_t n = pred.numel();
    constexpr float kClampLo = 1e-7f;
    constexpr float kClampHi = 1.0f - 1e-7f;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        float p = std::clamp(pred.data()[i], kClampLo, kClampHi);
        float t = target[i];
        acc += -(t * std::log(static_cast<double>(p)) + (1.0 - t) * std::log(1.0 - static_cast<double>(p)));
    }
    auto target_s = std::make_shared<std::vector<float>>(target);
    auto node = make_node({1}, {static_cast<float>(acc / static_cast<double>(n))}, {pred.node()});
    if (node->requires_grad) {
        auto in_n = pred.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, target_s, n]() {
            in_n->ensure_grad();
            float dy = raw->grad[0] / static_cast<float>(n);
            for (std::size_t i = 0; i < n; ++i) {
                float p = std::clamp(in_n->value[i], 1e-7f, 1.0f - 1e-7f);
                float t = (*target_s)[i];
                in_n->grad[i] += dy * (-t / p + (1.0f - t) / (1.0f - p));
            }
        };
    }
    return Tensor(node);
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    auto node = make_node({1}, {static_cast<float>(acc)}, {x.node()});
    if (node->requires_grad) {
        auto in_n = x.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n]() {
            in_n->ensure_grad();
            for (std::size_t i = 0; i < in_n->grad.size(); ++i) in_n->grad[i] += raw->grad[0];
        };
    }
    return Tensor(node);
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    std::vector<float> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto node = make_node(a.shape(), std::move(out), {a.node(), b.node()});
    if (node->requires_grad) {
        auto a_n = a.node(), b_n = b.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, a_n, b_n]() {
            for (auto& n : {a_n, b_n}) {
                n->ensure_grad();
                for (std::size_t i = 0; i < raw->grad.size(); ++i) n->grad[i] += raw->grad[i];
            }
        };
    }
    return Tensor(node);
}

Tensor weighted_sum(const Tensor& x, const std::vector<float>& weights) {
    if (weights.size() != x.numel())
        throw DimensionError("weighted_sum weight count != tensor numel");
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        acc += static_cast<double>(x.data()[i]) * weights[i];
    auto w = std::make_shared<std::vector<float>>(weights);
    auto node = make_node({1}, {static_cast<float>(acc)}, {x.node()});
    if (node->requires_grad) {
        auto in_n = x.node();
        TensorNode* raw = node.get();
        node->backward_fn = [raw, in_n, w]() {
            in_n->ensure_grad();
            for (std::size_t i = 0; i < in_n->grad.size(); ++i)
                in_n->grad[i] += raw->grad[0] * (*w)[i];
        };
    }
    return Tensor(node);
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward requires a scalar loss");

    // Iterative post-order DFS; nodes end up in topological order.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            TensorNode* p = node->parents[child++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (TensorNode* n : order) n->grad.assign(n->value.size(), 0.0f);
    loss.node()->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

}  // namespace fgs
