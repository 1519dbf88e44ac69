#pragma once

#include <string>
#include <utility>

#include "hrg/attention.hpp"
#include "hrg/tensor.hpp"

namespace hrg {

// Who attends whom across the sample axis. Index layout everywhere: first
// NK rows/cols are support videos (class-major), last L are queries.
enum class MaskStrategy { Adaptive, SupportSupport, QuerySupport, Full };

const char* mask_strategy_name(MaskStrategy s);
MaskStrategy mask_strategy_from_name(const std::string& name);

struct InteractionMask {
    int support_count = 0;  // NK
    int query_count = 0;    // L
    Tensor j;               // [(NK+L) x (NK+L)] of 0/1
    Tensor row_gate;        // [NK+L], 1 where a row attends anything

    int total() const { return support_count + query_count; }
};

// Adaptive: every row attends all supports, never queries.
// SupportSupport: support rows attend supports; query rows pass through.
// QuerySupport: query rows attend supports; support rows pass through.
// Full: all ones.
InteractionMask build_mask(MaskStrategy strategy, int way, int shot,
                           int query_count);

struct IscParams {
    Tensor ln_gain, ln_bias;
    AttentionParams attn;
};

// Sample-axis attention at each temporal position, one pre-norm residual
// block gated by the mask. Rows whose mask is all-zero come out bitwise
// equal to their input. f_s is [(NK*T) x C] video-major, f_q [(L*T) x C].
std::pair<Tensor, Tensor> inter_video_correlate(
    const Tensor& f_s, int support_count, const Tensor& f_q, int query_count,
    int frame_count, const InteractionMask& mask, const IscParams& params,
    AttentionStageMacs* stage_macs = nullptr);

enum class InteractionMode { Factorized, Dense };

// Instrumented MAC counts of the attention-score and value-mixing stages.
// Factorized runs the per-temporal-slice scheme above; Dense attends over
// all (NK+L)*T tokens jointly.
AttentionStageMacs count_interaction_macs(InteractionMode mode, int way,
                                          int shot, int query_count,
                                          int frame_count, int channels,
                                          int heads);

}  // namespace hrg
