#pragma once

// Dense-layer compute kernels. Each kernel has a serial reference and an
// OpenMP variant; the parallel loops split work so that every output element
// is accumulated in the same order as the serial code, so both variants
// produce bit-identical results. bench/bench_kernels compares their speed.

#include <cstddef>

#include <omp.h>

namespace deepnoc::kernels {

inline constexpr int kOmpRowThreshold = 32; // skip thread fan-out for tiny inputs

// ---- Y[n x out] = X[n x in] * W[in x out] + b[out] -------------------------

template <class T>
inline void matmul_bias_row(const T* x, int in, const T* w, const T* b, T* y, int out) {
    for (int j = 0; j < out; ++j) y[j] = b[j];
    for (int k = 0; k < in; ++k) {
        const T a = x[k];
        if (a == T(0)) continue;
        const T* wrow = w + static_cast<std::size_t>(k) * out;
        for (int j = 0; j < out; ++j) y[j] += a * wrow[j];
    }
}

template <class T>
void matmul_bias_serial(const T* x, int n, int in, const T* w, const T* b, T* y, int out) {
    for (int i = 0; i < n; ++i) {
        matmul_bias_row(x + static_cast<std::size_t>(i) * in, in, w, b,
                        y + static_cast<std::size_t>(i) * out, out);
    }
}

template <class T>
void matmul_bias_omp(const T* x, int n, int in, const T* w, const T* b, T* y, int out) {
#pragma omp parallel for schedule(static) if (n >= kOmpRowThreshold)
    for (int i = 0; i < n; ++i) {
        matmul_bias_row(x + static_cast<std::size_t>(i) * in, in, w, b,
                        y + static_cast<std::size_t>(i) * out, out);
    }
}

// ---- dX[n x in] += dY[n x out] * W^T ----------------------------------------

template <class T>
inline void matmul_nt_row(const T* dy, int out, const T* w, T* dx, int in) {
    for (int j = 0; j < in; ++j) {
        const T* wrow = w + static_cast<std::size_t>(j) * out;
        T acc = T(0);
        for (int k = 0; k < out; ++k) acc += dy[k] * wrow[k];
        dx[j] += acc;
    }
}

template <class T>
void matmul_nt_serial(const T* dy, int n, int out, const T* w, T* dx, int in) {
    for (int i = 0; i < n; ++i) {
        matmul_nt_row(dy + static_cast<std::size_t>(i) * out, out, w,
                      dx + static_cast<std::size_t>(i) * in, in);
    }
}

template <class T>
void matmul_nt_omp(const T* dy, int n, int out, const T* w, T* dx, int in) {
#pragma omp parallel for schedule(static) if (n >= kOmpRowThreshold)
    for (int i = 0; i < n; ++i) {
        matmul_nt_row(dy + static_cast<std::size_t>(i) * out, out, w,
                      dx + static_cast<std::size_t>(i) * in, in);
    }
}

// ---- dW[in x out] += X^T * dY ; db[out] += column sums of dY ---------------
// Both variants accumulate over i in ascending order for every (j, k) cell.

template <class T>
void accum_grad_serial(const T* x, const T* dy, int n, int in, int out, T* dw, T* db) {
    for (int j = 0; j < in; ++j) {
        T* wrow = dw + static_cast<std::size_t>(j) * out;
        for (int i = 0; i < n; ++i) {
            const T a = x[static_cast<std::size_t>(i) * in + j];
            if (a == T(0)) continue;
            const T* dyrow = dy + static_cast<std::size_t>(i) * out;
            for (int k = 0; k < out; ++k) wrow[k] += a * dyrow[k];
        }
    }
    for (int i = 0; i < n; ++i) {
        const T* dyrow = dy + static_cast<std::size_t>(i) * out;
        for (int k = 0; k < out; ++k) db[k] += dyrow[k];
    }
}

template <class T>
void accum_grad_omp(const T* x, const T* dy, int n, int in, int out, T* dw, T* db) {
#pragma omp parallel for schedule(static) if (in >= kOmpRowThreshold)
    for (int j = 0; j < in; ++j) {
        T* wrow = dw + static_cast<std::size_t>(j) * out;
        for (int i = 0; i < n; ++i) {
            const T a = x[static_cast<std::size_t>(i) * in + j];
            if (a == T(0)) continue;
            const T* dyrow = dy + static_cast<std::size_t>(i) * out;
            for (int k = 0; k < out; ++k) wrow[k] += a * dyrow[k];
        }
    }
    for (int i = 0; i < n; ++i) {
        const T* dyrow = dy + static_cast<std::size_t>(i) * out;
        for (int k = 0; k < out; ++k) db[k] += dyrow[k];
    }
}

// Default entry points. Inside an active OpenMP parallel region the nested
// `parallel for` collapses to a single-thread team, so callers that
// parallelize across profiles get serial kernels automatically.

template <class T>
void matmul_bias(const T* x, int n, int in, const T* w, const T* b, T* y, int out) {
    matmul_bias_omp(x, n, in, w, b, y, out);
}

template <class T>
void matmul_nt(const T* dy, int n, int out, const T* w, T* dx, int in) {
    matmul_nt_omp(dy, n, out, w, dx, in);
}

template <class T>
void accum_grad(const T* x, const T* dy, int n, int in, int out, T* dw, T* db) {
    accum_grad_omp(x, dy, n, in, out, dw, db);
}

} // namespace deepnoc::kernels
