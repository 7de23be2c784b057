// SPDX-License-Identifier: Apache-2.0
//
// Dense forward kernels and their analytic reverse-mode companions.
// Backward functions accumulate into caller-provided gradient tensors so a
// parameter reused by several ops collects every contribution. All kernels
// are pure and single-threaded; summation runs row-major with ascending
// inner index.
#pragma once

#include <cstdint>
#include <vector>

#include "dmoe/tensor.hpp"

namespace dmoe {

// y = x @ W + b. x: (n, in), W: (in, out), b: (out).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
void affine_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor& gx, Tensor& gw,
                     Tensor& gb);

// a @ b for 2D tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

// a @ transpose(b). a: (m, k), b: (n, k) -> (m, n). Lets a row basis double
// as an output projection without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
void matmul_nt_backward(const Tensor& a, const Tensor& b, const Tensor& gy, Tensor& ga,
                        Tensor& gb);

// Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2))), elementwise.
Tensor gelu(const Tensor& x);
void gelu_backward(const Tensor& x, const Tensor& gy, Tensor& gx);

struct LayerNormCache {
    Tensor xhat;                   // normalized input
    std::vector<double> inv_std;   // 1 / sqrt(var + eps), per row
};

// Normalizes over the last axis with population variance and eps = 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  LayerNormCache* cache = nullptr);
void layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma, const Tensor& gy,
                         Tensor& gx, Tensor& ggamma, Tensor& gbeta);

// Row softmax with max subtraction.
Tensor softmax(const Tensor& x);
void softmax_backward(const Tensor& y, const Tensor& gy, Tensor& gx);

struct AttentionCache {
    Tensor probs;  // (Tq, Tk) attention weights; zero where masked
};

// Single-head scaled dot-product attention. q: (Tq, dh), k/v: (Tk, dh);
// scores scale by 1/sqrt(dh). With causal=true, query i attends to keys
// j <= i only (requires Tq == Tk).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                 AttentionCache* cache = nullptr);
void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                        const AttentionCache& cache, const Tensor& gy, Tensor& gq, Tensor& gk,
                        Tensor& gv);

struct CrossEntropyCache {
    Tensor probs;          // row softmax of the logits
    std::int64_t count = 0;  // unmasked rows
};

// Mean next-token NLL over unmasked rows. logits: (n, V); targets/mask
// length n, mask nonzero = contributes. Throws DegenerateBatchError when
// every row is masked.
double cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                     const std::vector<std::uint8_t>& mask, CrossEntropyCache* cache = nullptr);
void cross_entropy_backward(const CrossEntropyCache& cache,
                            const std::vector<std::int32_t>& targets,
                            const std::vector<std::uint8_t>& mask, double gloss, Tensor& glogits);

}  // namespace dmoe
