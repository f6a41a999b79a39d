#pragma once

#include <span>

#include "scen/tensor.hpp"

// Dense float kernels. All loops run in a fixed order so results are
// bit-reproducible for identical inputs on a given build.
namespace scen::kernels {

// out = a * b  (out pre-shaped; overwritten)
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out);
// out += a * b^T
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);
// out += a^T * b
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);

// Numerically stable in-place softmax with a double-precision normaliser.
void softmax_inplace(std::span<float> row);

}  // namespace scen::kernels
