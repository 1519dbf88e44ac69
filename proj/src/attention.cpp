#include "hrg/attention.hpp"

#include <cmath>

namespace hrg {

Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens,
                            const AttentionParams& params, const Tensor* mask,
                            AttentionStageMacs* stage_macs) {
    const int c = q_tokens.cols();
    if (kv_tokens.cols() != c) {
        throw ShapeError("multi_head_attention: channel mismatch " +
                         shape_str(q_tokens.shape()) + " vs " +
                         shape_str(kv_tokens.shape()));
    }
    const int heads = params.num_heads;
    if (heads < 1 || c % heads != 0) {
        throw ShapeError("multi_head_attention: channels " + std::to_string(c) +
                         " not divisible by heads " + std::to_string(heads));
    }
    if (mask != nullptr &&
        (mask->rank() != 2 || mask->dim(0) != q_tokens.rows() ||
         mask->dim(1) != kv_tokens.rows())) {
        throw ShapeError("multi_head_attention: mask shape " +
                         shape_str(mask->shape()) + " does not cover " +
                         std::to_string(q_tokens.rows()) + "x" +
                         std::to_string(kv_tokens.rows()));
    }

    const int d = c / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    const Tensor q = matmul(q_tokens, params.wq);
    const Tensor k = matmul(kv_tokens, params.wk);
    const Tensor v = matmul(kv_tokens, params.wv);

    std::vector<Tensor> head_out;
    head_out.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(q, h * d, d);
        const Tensor kh = slice_cols(k, h * d, d);
        const Tensor vh = slice_cols(v, h * d, d);

        const uint64_t before_score = op_counter().mac_count;
        const Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
        if (stage_macs != nullptr) {
            stage_macs->score += op_counter().mac_count - before_score;
        }

        const Tensor weights =
            mask != nullptr ? masked_softmax_rows(scores, *mask) : softmax_rows(scores);

        const uint64_t before_mix = op_counter().mac_count;
        const Tensor mixed = matmul(weights, vh);
        if (stage_macs != nullptr) {
            stage_macs->mix += op_counter().mac_count - before_mix;
        }
        head_out.push_back(mixed);
    }
    return matmul(concat_cols(head_out), params.wo);
}

}  // namespace hrg
