#pragma once

#include <string>
#include <vector>

#include "hrg/attention.hpp"
#include "hrg/tensor.hpp"

namespace hrg {

// Fixed-capacity store of temporal patterns carried across tasks. Entries
// are plain state, deliberately outside the gradient graph. Frozen banks
// reject updates; retrieval is always permitted.
struct KnowledgeBank {
    int capacity = 0;   // G
    int channels = 0;   // C
    double momentum = 0.99;
    bool frozen = false;
    int occupancy = 0;
    std::vector<double> entries;  // capacity*channels, first occupancy rows live

    static KnowledgeBank create(int capacity, int channels, double momentum);

    const double* entry(int g) const { return entries.data() + static_cast<size_t>(g) * channels; }
    double* entry(int g) { return entries.data() + static_cast<size_t>(g) * channels; }
};

void freeze_bank(KnowledgeBank& bank);
void unfreeze_bank(KnowledgeBank& bank);

// For each prototype row in order: append while the bank has room;
// otherwise fold into the most cosine-similar entry (ties to the lower
// index) as entry <- momentum*entry + (1-momentum)*prototype.
void update_bank(KnowledgeBank& bank, const Tensor& prototypes);

enum class RetrievalWeighting { Softmax, Uniform };

const char* retrieval_weighting_name(RetrievalWeighting w);
RetrievalWeighting retrieval_weighting_from_name(const std::string& name);

struct IktParams {
    Tensor key_proj, value_proj;  // prototype construction
    Tensor ln_gain, ln_bias;      // pre-norm for the aggregation cross-attention
    AttentionParams attn;         // aggregation cross-attention
};

// p_hat = softmax(p K^T / sqrt(C)) V + p over the flattened support tokens.
Tensor construct_prototypes(const Tensor& prototypes, const Tensor& support_tokens,
                            const IktParams& params);

// Per prototype row independently: top-O most cosine-similar bank entries
// (O = max(1, floor(kappa*occupancy)), ties to the lower index), combined
// with softmax weights over the selected similarities or a uniform mean.
// Empty bank yields a zero matrix.
Tensor retrieve(const Tensor& p_hat, const KnowledgeBank& bank, double kappa,
                RetrievalWeighting weighting = RetrievalWeighting::Softmax);

// p_bar = p_hat + p_ret; support tokens cross-attend to the p_bar rows with
// pre-norm and residual.
Tensor aggregate(const Tensor& support_tokens, const Tensor& p_hat,
                 const Tensor& p_ret, const IktParams& params,
                 AttentionStageMacs* stage_macs = nullptr);

}  // namespace hrg
