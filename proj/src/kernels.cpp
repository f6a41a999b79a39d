#include "scen/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace scen::kernels {

void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
        float* __restrict o = out.data.data() + i * n;
        const float* ai = a.data.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const float av = ai[p];
            if (av == 0.0f) continue;
            const float* __restrict bp = b.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * bp[j];
        }
    }
}

void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    // out[i][p] += sum_j a[i][j] * b[p][j]; transpose b once so the inner
    // loop is a contiguous axpy like gemm_nn.
    const std::size_t m = a.rows, n = a.cols, k = b.rows;
    std::vector<float> bt(n * k);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b.data[p * n + j];
    }
    for (std::size_t i = 0; i < m; ++i) {
        float* __restrict o = out.data.data() + i * k;
        const float* ai = a.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const float av = ai[j];
            if (av == 0.0f) continue;
            const float* __restrict bj = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) o[p] += av * bj[p];
        }
    }
}

void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    // out[p][j] += sum_i a[i][p] * b[i][j]
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    for (std::size_t i = 0; i < m; ++i) {
        const float* ai = a.data.data() + i * k;
        const float* __restrict bi = b.data.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float av = ai[p];
            if (av == 0.0f) continue;
            float* __restrict o = out.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * bi[j];
        }
    }
}

void softmax_inplace(std::span<float> row) {
    if (row.empty()) return;
    const float mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float& v : row) {
        v = std::exp(v - mx);
        z += v;
    }
    const float inv = static_cast<float>(1.0 / z);
    for (float& v : row) v *= inv;
}

}  // namespace scen::kernels
