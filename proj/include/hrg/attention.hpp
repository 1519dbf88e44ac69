#pragma once

#include "hrg/tensor.hpp"

namespace hrg {

// Projection weights for one multi-head attention block. No biases: the
// residual paths around these blocks require that a zero attention output
// leave the stream bitwise untouched.
struct AttentionParams {
    Tensor wq, wk, wv, wo;  // [C x C] each
    int num_heads = 2;
};

// MAC counts of the two stages whose cost depends on token count squared.
struct AttentionStageMacs {
    uint64_t score = 0;  // q k^T
    uint64_t mix = 0;    // weights v
    uint64_t total() const { return score + mix; }
};

// q_tokens [R x C], kv_tokens [S x C]; optional 0/1 mask [R x S].
// Per-head scores are scaled by 1/sqrt(C/heads). Under a mask, weights at
// masked positions are exactly zero; an all-zero mask row yields an
// all-zero output row (callers gate the residual for passthrough).
Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens,
                            const AttentionParams& params,
                            const Tensor* mask = nullptr,
                            AttentionStageMacs* stage_macs = nullptr);

}  // namespace hrg
