#include "hrg/isc.hpp"

#include "hrg/rng.hpp"

namespace hrg {

const char* mask_strategy_name(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::Adaptive: return "adaptive";
        case MaskStrategy::SupportSupport: return "support-support";
        case MaskStrategy::QuerySupport: return "query-support";
        case MaskStrategy::Full: return "full";
    }
    return "?";
}

MaskStrategy mask_strategy_from_name(const std::string& name) {
    if (name == "adaptive") return MaskStrategy::Adaptive;
    if (name == "support-support") return MaskStrategy::SupportSupport;
    if (name == "query-support") return MaskStrategy::QuerySupport;
    if (name == "full") return MaskStrategy::Full;
    throw ConfigError("unknown mask strategy '" + name + "'");
}

InteractionMask build_mask(MaskStrategy strategy, int way, int shot,
                           int query_count) {
    const int nk = way * shot;
    if (nk < 1 || query_count < 0) {
        throw ContractError("build_mask: need NK >= 1 and L >= 0");
    }
    const int s = nk + query_count;
    std::vector<double> j(static_cast<size_t>(s) * s, 0.0);
    auto allow = [&](int row, int col) { j[static_cast<size_t>(row) * s + col] = 1.0; };
    for (int row = 0; row < s; ++row) {
        for (int col = 0; col < s; ++col) {
            switch (strategy) {
                case MaskStrategy::Adaptive:
                    if (col < nk) allow(row, col);
                    break;
                case MaskStrategy::SupportSupport:
                    if (row < nk && col < nk) allow(row, col);
                    break;
                case MaskStrategy::QuerySupport:
                    if (row >= nk && col < nk) allow(row, col);
                    break;
                case MaskStrategy::Full:
                    allow(row, col);
                    break;
            }
        }
    }
    std::vector<double> gate(static_cast<size_t>(s), 0.0);
    for (int row = 0; row < s; ++row) {
        for (int col = 0; col < s; ++col) {
            if (j[static_cast<size_t>(row) * s + col] != 0.0) {
                gate[static_cast<size_t>(row)] = 1.0;
                break;
            }
        }
    }
    InteractionMask mask;
    mask.support_count = nk;
    mask.query_count = query_count;
    mask.j = Tensor::from_data({s, s}, std::move(j));
    mask.row_gate = Tensor::from_data({s}, std::move(gate));
    return mask;
}

std::pair<Tensor, Tensor> inter_video_correlate(
    const Tensor& f_s, int support_count, const Tensor& f_q, int query_count,
    int frame_count, const InteractionMask& mask, const IscParams& params,
    AttentionStageMacs* stage_macs) {
    const int s = support_count + query_count;
    if (mask.support_count != support_count || mask.query_count != query_count) {
        throw ShapeError("inter_video_correlate: mask built for " +
                         std::to_string(mask.support_count) + "+" +
                         std::to_string(mask.query_count) + " videos, got " +
                         std::to_string(support_count) + "+" +
                         std::to_string(query_count));
    }
    if (f_s.rank() != 2 || f_s.rows() != support_count * frame_count) {
        throw ShapeError("inter_video_correlate: support " + shape_str(f_s.shape()) +
                         " does not hold " + std::to_string(support_count) +
                         " videos of " + std::to_string(frame_count) + " frames");
    }
    if (query_count > 0 &&
        (!f_q.defined() || f_q.rank() != 2 ||
         f_q.rows() != query_count * frame_count || f_q.cols() != f_s.cols())) {
        throw ShapeError("inter_video_correlate: query shape inconsistent with support " +
                         shape_str(f_s.shape()));
    }

    // video-major [(S*T) x C]
    const Tensor all = query_count > 0 ? concat_rows({f_s, f_q}) : f_s;

    // One residual block per temporal slice; all-zero mask rows keep the
    // identity because the attention branch is gated per row.
    std::vector<Tensor> slices;
    slices.reserve(static_cast<size_t>(frame_count));
    std::vector<int> idx(static_cast<size_t>(s));
    for (int t = 0; t < frame_count; ++t) {
        for (int v = 0; v < s; ++v) idx[static_cast<size_t>(v)] = v * frame_count + t;
        const Tensor tokens = gather_rows(all, idx);
        const Tensor normed = layer_norm(tokens, params.ln_gain, params.ln_bias);
        const Tensor attn =
            multi_head_attention(normed, normed, params.attn, &mask.j, stage_macs);
        slices.push_back(add(tokens, colwise_mul(attn, mask.row_gate)));
    }

    // Slices are time-major; permute back to video-major before splitting.
    const Tensor stacked = concat_rows(slices);  // row (t*S + v)
    std::vector<int> support_idx(static_cast<size_t>(support_count) * frame_count);
    std::vector<int> query_idx(static_cast<size_t>(query_count) * frame_count);
    for (int v = 0; v < s; ++v) {
        for (int t = 0; t < frame_count; ++t) {
            const int src = t * s + v;
            if (v < support_count) {
                support_idx[static_cast<size_t>(v) * frame_count + t] = src;
            } else {
                query_idx[static_cast<size_t>(v - support_count) * frame_count + t] = src;
            }
        }
    }
    Tensor out_s = gather_rows(stacked, support_idx);
    Tensor out_q = query_count > 0 ? gather_rows(stacked, query_idx) : Tensor();
    return {std::move(out_s), std::move(out_q)};
}

AttentionStageMacs count_interaction_macs(InteractionMode mode, int way,
                                          int shot, int query_count,
                                          int frame_count, int channels,
                                          int heads) {
    if (way < 1 || shot < 1 || query_count < 0 || frame_count < 1 ||
        channels < heads || heads < 1 || channels % heads != 0) {
        throw ContractError("count_interaction_macs: invalid sizes");
    }
    NoGradGuard no_grad;
    Rng rng(0);
    const int s = way * shot + query_count;
    auto random_matrix = [&](int r, int c) {
        std::vector<double> v(static_cast<size_t>(r) * c);
        for (double& x : v) x = rng.normal(0.0, 0.05);
        return Tensor::from_data({r, c}, std::move(v));
    };

    AttentionParams attn;
    attn.num_heads = heads;
    attn.wq = random_matrix(channels, channels);
    attn.wk = random_matrix(channels, channels);
    attn.wv = random_matrix(channels, channels);
    attn.wo = random_matrix(channels, channels);

    AttentionStageMacs macs;
    if (mode == InteractionMode::Factorized) {
        IscParams params;
        params.ln_gain = Tensor::full({channels}, 1.0);
        params.ln_bias = Tensor::zeros({channels});
        params.attn = attn;
        const Tensor f_s = random_matrix(way * shot * frame_count, channels);
        const Tensor f_q = query_count > 0
                               ? random_matrix(query_count * frame_count, channels)
                               : Tensor();
        const InteractionMask mask =
            build_mask(MaskStrategy::Full, way, shot, query_count);
        inter_video_correlate(f_s, way * shot, f_q, query_count, frame_count,
                              mask, params, &macs);
    } else {
        const Tensor tokens = random_matrix(s * frame_count, channels);
        multi_head_attention(tokens, tokens, attn, nullptr, &macs);
    }
    return macs;
}

}  // namespace hrg
