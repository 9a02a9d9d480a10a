#include "af3d/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <cblas.h>

namespace af3d::ops {

namespace {

constexpr double kNormEps = 1e-5;

void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, float alpha, const float* a, int lda,
               const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, double alpha, const double* a, int lda,
               const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Valid output range [lo, hi) for a tap offset `off` along an axis of length n.
inline void tap_range(int off, int n, int& lo, int& hi) {
    lo = std::max(0, -off);
    hi = std::min(n, n - off);
}

template <typename T>
void im2col3(const T* in, int cin, Dims3 d, T* col) {
    const std::size_t s = d.count();
    for (int c = 0; c < cin; ++c) {
        const T* src = in + c * s;
        for (int t = 0; t < 27; ++t) {
            const int oz = t / 9 - 1;
            const int oy = (t / 3) % 3 - 1;
            const int ox = t % 3 - 1;
            T* dst = col + (static_cast<std::size_t>(c) * 27 + t) * s;
            int z0, z1, y0, y1, x0, x1;
            tap_range(oz, d.z, z0, z1);
            tap_range(oy, d.y, y0, y1);
            tap_range(ox, d.x, x0, x1);
            std::fill(dst, dst + s, T(0));
            for (int z = z0; z < z1; ++z) {
                for (int y = y0; y < y1; ++y) {
                    const T* row_in = src + (static_cast<std::size_t>(z + oz) * d.y + (y + oy)) * d.x + ox;
                    T* row_out = dst + (static_cast<std::size_t>(z) * d.y + y) * d.x;
                    for (int x = x0; x < x1; ++x) {
                        row_out[x] = row_in[x];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im3_add(const T* col, int cin, Dims3 d, T* gin) {
    const std::size_t s = d.count();
    for (int c = 0; c < cin; ++c) {
        T* dst = gin + c * s;
        for (int t = 0; t < 27; ++t) {
            const int oz = t / 9 - 1;
            const int oy = (t / 3) % 3 - 1;
            const int ox = t % 3 - 1;
            const T* src = col + (static_cast<std::size_t>(c) * 27 + t) * s;
            int z0, z1, y0, y1, x0, x1;
            tap_range(oz, d.z, z0, z1);
            tap_range(oy, d.y, y0, y1);
            tap_range(ox, d.x, x0, x1);
            for (int z = z0; z < z1; ++z) {
                for (int y = y0; y < y1; ++y) {
                    T* row_g = dst + (static_cast<std::size_t>(z + oz) * d.y + (y + oy)) * d.x + ox;
                    const T* row_c = src + (static_cast<std::size_t>(z) * d.y + y) * d.x;
                    for (int x = x0; x < x1; ++x) {
                        row_g[x] += row_c[x];
                    }
                }
            }
        }
    }
}

// Gathers 2x2x2 blocks of a fine grid `fine` (size 2*coarse) into rows (c*8 + t) over coarse voxels.
template <typename T>
void gather_blocks(const T* fine, int channels, Dims3 coarse, T* col) {
    const Dims3 f{coarse.z * 2, coarse.y * 2, coarse.x * 2};
    const std::size_t sf = f.count();
    const std::size_t sc = coarse.count();
    for (int c = 0; c < channels; ++c) {
        const T* src = fine + c * sf;
        for (int t = 0; t < 8; ++t) {
            const int tz = t >> 2;
            const int ty = (t >> 1) & 1;
            const int tx = t & 1;
            T* dst = col + (static_cast<std::size_t>(c) * 8 + t) * sc;
            for (int z = 0; z < coarse.z; ++z) {
                for (int y = 0; y < coarse.y; ++y) {
                    const T* row = src + (static_cast<std::size_t>(2 * z + tz) * f.y + (2 * y + ty)) * f.x + tx;
                    T* out = dst + (static_cast<std::size_t>(z) * coarse.y + y) * coarse.x;
                    for (int x = 0; x < coarse.x; ++x) {
                        out[x] = row[2 * x];
                    }
                }
            }
        }
    }
}

// Inverse of gather_blocks; adds when `accumulate`, otherwise overwrites.
template <typename T>
void scatter_blocks(const T* col, int channels, Dims3 coarse, T* fine, bool accumulate) {
    const Dims3 f{coarse.z * 2, coarse.y * 2, coarse.x * 2};
    const std::size_t sf = f.count();
    const std::size_t sc = coarse.count();
    for (int c = 0; c < channels; ++c) {
        T* dst = fine + c * sf;
        for (int t = 0; t < 8; ++t) {
            const int tz = t >> 2;
            const int ty = (t >> 1) & 1;
            const int tx = t & 1;
            const T* src = col + (static_cast<std::size_t>(c) * 8 + t) * sc;
            for (int z = 0; z < coarse.z; ++z) {
                for (int y = 0; y < coarse.y; ++y) {
                    T* row = dst + (static_cast<std::size_t>(2 * z + tz) * f.y + (2 * y + ty)) * f.x + tx;
                    const T* in = src + (static_cast<std::size_t>(z) * coarse.y + y) * coarse.x;
                    if (accumulate) {
                        for (int x = 0; x < coarse.x; ++x) {
                            row[2 * x] += in[x];
                        }
                    } else {
                        for (int x = 0; x < coarse.x; ++x) {
                            row[2 * x] = in[x];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void add_bias(T* out, const T* bias, int channels, std::size_t n) {
    if (bias == nullptr) {
        return;
    }
    for (int c = 0; c < channels; ++c) {
        T* row = out + c * n;
        const T b = bias[c];
        for (std::size_t i = 0; i < n; ++i) {
            row[i] += b;
        }
    }
}

template <typename T>
void bias_grad(const T* gout, int channels, std::size_t n, T* gbias) {
    if (gbias == nullptr) {
        return;
    }
    for (int c = 0; c < channels; ++c) {
        const T* row = gout + c * n;
        T sum = T(0);
        for (std::size_t i = 0; i < n; ++i) {
            sum += row[i];
        }
        gbias[c] += sum;
    }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b, T beta, T* c) {
    const int lda = trans_a ? m : k;
    const int ldb = trans_b ? k : n;
    blas_gemm(trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, n);
}

template <typename T>
void conv_forward(const T* in, int cin, Dims3 d, const T* w, const T* bias, int cout, int k, T* out,
                  std::vector<T>& scratch) {
    const int s = static_cast<int>(d.count());
    if (k == 1) {
        gemm<T>(false, false, cout, s, cin, T(1), w, in, T(0), out);
    } else {
        scratch.resize(static_cast<std::size_t>(cin) * 27 * s);
        im2col3(in, cin, d, scratch.data());
        gemm<T>(false, false, cout, s, cin * 27, T(1), w, scratch.data(), T(0), out);
    }
    add_bias(out, bias, cout, s);
}

template <typename T>
void conv_backward(const T* in, int cin, Dims3 d, const T* w, int cout, int k, const T* gout, T* gin, T* gw,
                   T* gbias, std::vector<T>& scratch) {
    const int s = static_cast<int>(d.count());
    bias_grad(gout, cout, s, gbias);
    if (k == 1) {
        if (gw != nullptr) {
            gemm<T>(false, true, cout, cin, s, T(1), gout, in, T(1), gw);
        }
        if (gin != nullptr) {
            gemm<T>(true, false, cin, s, cout, T(1), w, gout, T(1), gin);
        }
        return;
    }
    const std::size_t col_size = static_cast<std::size_t>(cin) * 27 * s;
    scratch.resize(col_size);
    if (gw != nullptr) {
        im2col3(in, cin, d, scratch.data());
        gemm<T>(false, true, cout, cin * 27, s, T(1), gout, scratch.data(), T(1), gw);
    }
    if (gin != nullptr) {
        gemm<T>(true, false, cin * 27, s, cout, T(1), w, gout, T(0), scratch.data());
        col2im3_add(scratch.data(), cin, d, gin);
    }
}

template <typename T>
void down_forward(const T* in, int cin, Dims3 d, const T* w, const T* bias, int cout, T* out,
                  std::vector<T>& scratch) {
    const Dims3 c{d.z / 2, d.y / 2, d.x / 2};
    const int s = static_cast<int>(c.count());
    scratch.resize(static_cast<std::size_t>(cin) * 8 * s);
    gather_blocks(in, cin, c, scratch.data());
    gemm<T>(false, false, cout, s, cin * 8, T(1), w, scratch.data(), T(0), out);
    add_bias(out, bias, cout, s);
}

template <typename T>
void down_backward(const T* in, int cin, Dims3 d, const T* w, int cout, const T* gout, T* gin, T* gw, T* gbias,
                   std::vector<T>& scratch) {
    const Dims3 c{d.z / 2, d.y / 2, d.x / 2};
    const int s = static_cast<int>(c.count());
    bias_grad(gout, cout, s, gbias);
    scratch.resize(static_cast<std::size_t>(cin) * 8 * s);
    if (gw != nullptr) {
        gather_blocks(in, cin, c, scratch.data());
        gemm<T>(false, true, cout, cin * 8, s, T(1), gout, scratch.data(), T(1), gw);
    }
    if (gin != nullptr) {
        gemm<T>(true, false, cin * 8, s, cout, T(1), w, gout, T(0), scratch.data());
        scatter_blocks(scratch.data(), cin, c, gin, true);
    }
}

template <typename T>
void up_forward(const T* in, int cin, Dims3 d, const T* w, const T* bias, int cout, T* out, std::vector<T>& scratch) {
    const int s = static_cast<int>(d.count());
    scratch.resize(static_cast<std::size_t>(cout) * 8 * s);
    gemm<T>(true, false, cout * 8, s, cin, T(1), w, in, T(0), scratch.data());
    scatter_blocks(scratch.data(), cout, d, out, false);
    add_bias(out, bias, cout, d.count() * 8);
}

template <typename T>
void up_backward(const T* in, int cin, Dims3 d, const T* w, int cout, const T* gout, T* gin, T* gw, T* gbias,
                 std::vector<T>& scratch) {
    const int s = static_cast<int>(d.count());
    bias_grad(gout, cout, d.count() * 8, gbias);
    scratch.resize(static_cast<std::size_t>(cout) * 8 * s);
    gather_blocks(gout, cout, d, scratch.data());
    if (gin != nullptr) {
        gemm<T>(false, false, cin, s, cout * 8, T(1), w, scratch.data(), T(1), gin);
    }
    if (gw != nullptr) {
        gemm<T>(false, true, cin, cout * 8, s, T(1), in, scratch.data(), T(1), gw);
    }
}

template <typename T>
void norm_forward(T* x, int channels, std::size_t n, const T* gamma, const T* beta, bool instance, T* xhat,
                  T* inv_std) {
    for (int c = 0; c < channels; ++c) {
        T* row = x + c * n;
        T* hat = xhat + c * n;
        double mean = 0.0;
        double istd = 1.0;
        if (instance) {
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                sum += row[i];
            }
            mean = sum / static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dv = row[i] - mean;
                var += dv * dv;
            }
            var /= static_cast<double>(n);
            istd = 1.0 / std::sqrt(var + kNormEps);
        }
        inv_std[c] = static_cast<T>(istd);
        const T m = static_cast<T>(mean);
        const T is = static_cast<T>(istd);
        const T g = gamma[c];
        const T b = beta[c];
        for (std::size_t i = 0; i < n; ++i) {
            hat[i] = (row[i] - m) * is;
            row[i] = g * hat[i] + b;
        }
    }
}

template <typename T>
void norm_backward(const T* gy, int channels, std::size_t n, const T* gamma, const T* xhat, const T* inv_std,
                   bool instance, T* gx, T* ggamma, T* gbeta) {
    for (int c = 0; c < channels; ++c) {
        const T* g = gy + c * n;
        const T* hat = xhat + c * n;
        T* out = gx + c * n;
        double sum_g = 0.0;
        double sum_gh = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum_g += g[i];
            sum_gh += static_cast<double>(g[i]) * hat[i];
        }
        ggamma[c] += static_cast<T>(sum_gh);
        gbeta[c] += static_cast<T>(sum_g);
        const T gm = gamma[c];
        if (!instance) {
            for (std::size_t i = 0; i < n; ++i) {
                out[i] = g[i] * gm;
            }
            continue;
        }
        // dx = gamma * inv_std / n * (n g - sum g - xhat * sum(g xhat))
        const double inv_n = 1.0 / static_cast<double>(n);
        const T scale = static_cast<T>(gm * inv_std[c]);
        const T mean_g = static_cast<T>(sum_g * inv_n);
        const T mean_gh = static_cast<T>(sum_gh * inv_n);
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = scale * (g[i] - mean_g - hat[i] * mean_gh);
        }
    }
}

template <typename T>
void relu_forward(T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = x[i] > T(0) ? x[i] : T(0);
    }
}

template <typename T>
void relu_backward(const T* y, T* gy, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        gy[i] = y[i] > T(0) ? gy[i] : T(0);
    }
}

#define AF3D_INSTANTIATE_OPS(T)                                                                                     \
    template void gemm<T>(bool, bool, int, int, int, T, const T*, const T*, T, T*);                                 \
    template void conv_forward<T>(const T*, int, Dims3, const T*, const T*, int, int, T*, std::vector<T>&);         \
    template void conv_backward<T>(const T*, int, Dims3, const T*, int, int, const T*, T*, T*, T*,                  \
                                   std::vector<T>&);                                                                \
    template void down_forward<T>(const T*, int, Dims3, const T*, const T*, int, T*, std::vector<T>&);              \
    template void down_backward<T>(const T*, int, Dims3, const T*, int, const T*, T*, T*, T*, std::vector<T>&);     \
    template void up_forward<T>(const T*, int, Dims3, const T*, const T*, int, T*, std::vector<T>&);                \
    template void up_backward<T>(const T*, int, Dims3, const T*, int, const T*, T*, T*, T*, std::vector<T>&);       \
    template void norm_forward<T>(T*, int, std::size_t, const T*, const T*, bool, T*, T*);                          \
    template void norm_backward<T>(const T*, int, std::size_t, const T*, const T*, const T*, bool, T*, T*, T*);     \
    template void relu_forward<T>(T*, std::size_t);                                                                 \
    template void relu_backward<T>(const T*, T*, std::size_t);

AF3D_INSTANTIATE_OPS(float)
AF3D_INSTANTIATE_OPS(double)

#undef AF3D_INSTANTIATE_OPS

}  // namespace af3d::ops
