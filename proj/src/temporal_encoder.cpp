#include "hrg/temporal_encoder.hpp"

#include <cmath>

namespace hrg {

Tensor sinusoidal_positions(int frame_count, int channels) {
    std::vector<double> pe(static_cast<size_t>(frame_count) * channels);
    for (int t = 0; t < frame_count; ++t) {
        for (int k = 0; k < channels; ++k) {
            const double rate =
                std::pow(10000.0, -2.0 * (k / 2) / static_cast<double>(channels));
            const double angle = t * rate;
            pe[static_cast<size_t>(t) * channels + k] =
                (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from_data({frame_count, channels}, std::move(pe));
}

Tensor temporal_encode(const Tensor& x, int batch, int frame_count,
                       const TemporalEncoderParams& params) {
    if (x.rank() != 2 || x.rows() != batch * frame_count) {
        throw ShapeError("temporal_encode: input " + shape_str(x.shape()) +
                         " does not hold " + std::to_string(batch) + " videos of " +
                         std::to_string(frame_count) + " frames");
    }
    const int channels = x.cols();
    const Tensor pe = scale(sinusoidal_positions(frame_count, channels),
                            params.pe_scale);

    std::vector<Tensor> encoded;
    encoded.reserve(static_cast<size_t>(batch));
    std::vector<int> idx(static_cast<size_t>(frame_count));
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < frame_count; ++t) idx[static_cast<size_t>(t)] = b * frame_count + t;
        Tensor h = add(gather_rows(x, idx), pe);
        for (const EncoderLayerParams& layer : params.layers) {
            const Tensor normed1 = layer_norm(h, layer.ln1_gain, layer.ln1_bias);
            h = add(h, multi_head_attention(normed1, normed1, layer.attn));
            const Tensor normed2 = layer_norm(h, layer.ln2_gain, layer.ln2_bias);
            const Tensor hidden = gelu(matmul(normed2, layer.ffn_w1));
            h = add(h, matmul(hidden, layer.ffn_w2));
        }
        encoded.push_back(h);
    }
    return concat_rows(encoded);
}

}  // namespace hrg
