#pragma once

#include "hrg/attention.hpp"
#include "hrg/rng.hpp"
#include "hrg/tensor.hpp"

namespace hrg {

// One pre-norm transformer block: LN -> MHSA -> add, LN -> FFN(GELU) -> add.
struct EncoderLayerParams {
    Tensor ln1_gain, ln1_bias;
    AttentionParams attn;
    Tensor ln2_gain, ln2_bias;
    Tensor ffn_w1;  // [C x H]
    Tensor ffn_w2;  // [H x C]
};

struct TemporalEncoderParams {
    std::vector<EncoderLayerParams> layers;
    double pe_scale = 0.1;  // weight of the sinusoidal positions added to input
};

// [T x C] sinusoidal table, sin on even channels, cos on odd.
Tensor sinusoidal_positions(int frame_count, int channels);

// x holds `batch` videos stacked video-major: [(batch*T) x C]. Attention
// runs over each video's T frames independently; no cross-video mixing.
Tensor temporal_encode(const Tensor& x, int batch, int frame_count,
                       const TemporalEncoderParams& params);

}  // namespace hrg
