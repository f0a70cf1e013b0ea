#pragma once

// Minimal dense-network engine: tensors, dense layers, activations, losses,
// masked pooling and Adam. No ML framework; backward passes are exact
// gradients of the forward maps and are validated against finite differences
// in the tests. Templated on the scalar: float for training, double for
// gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "deepnoc/error.hpp"
#include "deepnoc/kernels.hpp"
#include "deepnoc/rng.hpp"

namespace deepnoc {

enum class Activation : std::uint8_t { Identity = 0, Relu, Sigmoid, Softmax };

template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        std::size_t total = 1;
        for (int d : shape) total *= static_cast<std::size_t>(d);
        data.assign(total, T(0));
    }
    std::size_t size() const { return data.size(); }
};

// ---- activations ------------------------------------------------------------

template <class T>
void softmax_row(const T* x, T* p, int n) {
    T mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    T sum = T(0);
    for (int i = 0; i < n; ++i) {
        p[i] = std::exp(x[i] - mx);
        sum += p[i];
    }
    for (int i = 0; i < n; ++i) p[i] /= sum;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& x) {
    std::vector<T> p(x.size());
    softmax_row(x.data(), p.data(), static_cast<int>(x.size()));
    return p;
}

template <class T>
void apply_activation(T* y, std::size_t n, int width, Activation act) {
    switch (act) {
        case Activation::Identity:
            break;
        case Activation::Relu:
            for (std::size_t i = 0; i < n; ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
            break;
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-y[i]));
            break;
        case Activation::Softmax:
            for (std::size_t row = 0; row * width < n; ++row) {
                T* r = y + row * static_cast<std::size_t>(width);
                std::vector<T> tmp(r, r + width);
                softmax_row(tmp.data(), r, width);
            }
            break;
    }
}

// dz from dy using only the activation outputs y. For softmax this applies the
// full Jacobian, which is required when the outputs feed deeper layers.
template <class T>
void activation_backward_row(const T* y, const T* dy, T* dz, int width, Activation act) {
    switch (act) {
        case Activation::Identity:
            for (int i = 0; i < width; ++i) dz[i] = dy[i];
            break;
        case Activation::Relu:
            for (int i = 0; i < width; ++i) dz[i] = y[i] > T(0) ? dy[i] : T(0);
            break;
        case Activation::Sigmoid:
            for (int i = 0; i < width; ++i) dz[i] = dy[i] * y[i] * (T(1) - y[i]);
            break;
        case Activation::Softmax: {
            T dot = T(0);
            for (int i = 0; i < width; ++i) dot += dy[i] * y[i];
            for (int i = 0; i < width; ++i) dz[i] = y[i] * (dy[i] - dot);
            break;
        }
    }
}

// ---- dense layer ------------------------------------------------------------

template <class T>
struct DenseLayer {
    std::string name;
    int in = 0;
    int out = 0;
    Activation act = Activation::Identity;
    Tensor<T> weights; // [in x out]
    Tensor<T> bias;    // [out]

    DenseLayer() = default;
    DenseLayer(std::string n, int i, int o, Activation a)
        : name(std::move(n)), in(i), out(o), act(a),
          weights(std::vector<int>{i, o}), bias(std::vector<int>{o}) {}

    // Glorot-uniform weights, zero bias.
    void init(Rng& rng) {
        const double bound = std::sqrt(6.0 / (in + out));
        for (T& w : weights.data) w = static_cast<T>(rng.uniform(-bound, bound));
        std::fill(bias.data.begin(), bias.data.end(), T(0));
    }
};

// y = act(x W + b), x is [n x in].
template <class T>
void dense_forward(const DenseLayer<T>& layer, const T* x, int n, T* y) {
    kernels::matmul_bias(x, n, layer.in, layer.weights.data.data(), layer.bias.data.data(), y,
                         layer.out);
    apply_activation(y, static_cast<std::size_t>(n) * layer.out, layer.out, layer.act);
}

// Exact gradients of dense_forward. `dy` is the loss gradient w.r.t. y;
// `dz_extra`, when given, is added to the pre-activation gradient (used to
// inject the softmax/cross-entropy shortcut). dx, dw and db are accumulated,
// so callers zero them before a backward chain.
template <class T>
void dense_backward(const DenseLayer<T>& layer, const T* x, const T* y, const T* dy, int n, T* dx,
                    T* dw, T* db, std::vector<T>& dz_buf, const T* dz_extra = nullptr) {
    dz_buf.assign(static_cast<std::size_t>(n) * layer.out, T(0));
    for (int i = 0; i < n; ++i) {
        activation_backward_row(y + static_cast<std::size_t>(i) * layer.out,
                                dy + static_cast<std::size_t>(i) * layer.out,
                                dz_buf.data() + static_cast<std::size_t>(i) * layer.out, layer.out,
                                layer.act);
    }
    if (dz_extra) {
        for (std::size_t i = 0; i < dz_buf.size(); ++i) dz_buf[i] += dz_extra[i];
    }
    if (dx) kernels::matmul_nt(dz_buf.data(), n, layer.out, layer.weights.data.data(), dx, layer.in);
    kernels::accum_grad(x, dz_buf.data(), n, layer.in, layer.out, dw, db);
}

// ---- losses -----------------------------------------------------------------

// loss = -ln p[target]; grad w.r.t. the logits is p - one_hot.
template <class T>
std::pair<T, std::vector<T>> categorical_cross_entropy(const std::vector<T>& p,
                                                       const std::vector<T>& one_hot) {
    if (p.size() != one_hot.size()) throw DataError("cross-entropy shape mismatch");
    T loss = T(0);
    std::vector<T> grad(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (one_hot[i] != T(0)) {
            loss -= one_hot[i] * std::log(std::max(p[i], T(1e-12)));
        }
        grad[i] = p[i] - one_hot[i];
    }
    return {loss, std::move(grad)};
}

// loss = mean((pred - target)^2); grad = 2 (pred - target) / n.
template <class T>
std::pair<T, std::vector<T>> mse_loss(const std::vector<T>& pred, const std::vector<T>& target) {
    if (pred.size() != target.size()) throw DataError("mse shape mismatch");
    const T inv_n = T(1) / static_cast<T>(pred.size());
    T loss = T(0);
    std::vector<T> grad(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T d = pred[i] - target[i];
        loss += d * d;
        grad[i] = T(2) * d * inv_n;
    }
    return {loss * inv_n, std::move(grad)};
}

// ---- masked pooling ---------------------------------------------------------

// pooled[2d] = [masked mean || masked max] of x[n x d]; an all-zero mask
// yields zeros. argmax records the winning row per feature (first row wins
// ties), -1 when the mask is empty.
template <class T>
void masked_pool_forward(const T* x, const std::uint8_t* mask, int n, int d, T* pooled,
                         int* argmax) {
    int active = 0;
    for (int i = 0; i < n; ++i) active += mask[i] ? 1 : 0;
    if (active == 0) {
        std::fill(pooled, pooled + 2 * d, T(0));
        std::fill(argmax, argmax + d, -1);
        return;
    }
    std::fill(pooled, pooled + 2 * d, T(0));
    std::fill(argmax, argmax + d, -1);
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const T* row = x + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            pooled[j] += row[j];
            if (argmax[j] < 0 || row[j] > pooled[d + j]) {
                pooled[d + j] = row[j];
                argmax[j] = i;
            }
        }
    }
    const T inv = T(1) / static_cast<T>(active);
    for (int j = 0; j < d; ++j) pooled[j] *= inv;
}

template <class T>
std::vector<T> masked_pool(const std::vector<T>& x, const std::vector<std::uint8_t>& mask, int d) {
    const int n = static_cast<int>(mask.size());
    std::vector<T> pooled(2 * static_cast<std::size_t>(d));
    std::vector<int> argmax(static_cast<std::size_t>(d));
    masked_pool_forward(x.data(), mask.data(), n, d, pooled.data(), argmax.data());
    return pooled;
}

// Routes mean gradients to every active row and max gradients to the argmax
// rows. dx is accumulated.
template <class T>
void masked_pool_backward(const std::uint8_t* mask, int n, int d, const int* argmax,
                          const T* dpooled, T* dx) {
    int active = 0;
    for (int i = 0; i < n; ++i) active += mask[i] ? 1 : 0;
    if (active == 0) return;
    const T inv = T(1) / static_cast<T>(active);
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        T* row = dx + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) row[j] += dpooled[j] * inv;
    }
    for (int j = 0; j < d; ++j) {
        if (argmax[j] >= 0) dx[static_cast<std::size_t>(argmax[j]) * d + j] += dpooled[d + j];
    }
}

// ---- Adam -------------------------------------------------------------------

template <class T>
struct AdamState {
    double lr = 1e-5;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long t = 0;
    std::vector<T> m;
    std::vector<T> v;

    void reset(std::size_t n) {
        t = 0;
        m.assign(n, T(0));
        v.assign(n, T(0));
    }
};

// One bias-corrected Adam update over a flat parameter vector. Named blocks
// allow non-finite gradients to be reported against the offending layer.
struct ParamBlock {
    std::string name;
    std::size_t offset;
    std::size_t count;
};

template <class T>
void adam_step(AdamState<T>& state, std::vector<T>& params, const std::vector<T>& grads,
               const std::vector<ParamBlock>& blocks = {}) {
    if (params.size() != grads.size() || state.m.size() != params.size())
        throw DataError("adam_step shape mismatch");
    for (const ParamBlock& block : blocks) {
        for (std::size_t i = block.offset; i < block.offset + block.count; ++i) {
            if (!std::isfinite(static_cast<double>(grads[i])))
                throw NumericError("non-finite gradient in parameter block '" + block.name + "'");
        }
    }
    if (blocks.empty()) {
        for (const T g : grads) {
            if (!std::isfinite(static_cast<double>(g)))
                throw NumericError("non-finite gradient");
        }
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    const T beta1 = static_cast<T>(state.beta1);
    const T beta2 = static_cast<T>(state.beta2);
    const std::int64_t n = static_cast<std::int64_t>(params.size());
#pragma omp parallel for schedule(static) if (n >= 4096)
    for (std::int64_t i = 0; i < n; ++i) {
        const T g = grads[static_cast<std::size_t>(i)];
        T& m = state.m[static_cast<std::size_t>(i)];
        T& v = state.v[static_cast<std::size_t>(i)];
        m = beta1 * m + (T(1) - beta1) * g;
        v = beta2 * v + (T(1) - beta2) * g * g;
        const double mhat = static_cast<double>(m) / c1;
        const double vhat = static_cast<double>(v) / c2;
        params[static_cast<std::size_t>(i)] -=
            static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
}

} // namespace deepnoc
