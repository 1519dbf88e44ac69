#include "hrg/ikt.hpp"

#include <algorithm>
#include <cmath>

#include "hrg/kernels.hpp"

namespace hrg {

KnowledgeBank KnowledgeBank::create(int capacity, int channels, double momentum) {
    if (capacity < 1 || channels < 1) {
        throw ContractError("KnowledgeBank: capacity and channels must be positive");
    }
    if (momentum < 0.0 || momentum > 1.0) {
        throw ContractError("KnowledgeBank: momentum must be in [0,1]");
    }
    KnowledgeBank bank;
    bank.capacity = capacity;
    bank.channels = channels;
    bank.momentum = momentum;
    bank.entries.assign(static_cast<size_t>(capacity) * channels, 0.0);
    return bank;
}

void freeze_bank(KnowledgeBank& bank) { bank.frozen = true; }
void unfreeze_bank(KnowledgeBank& bank) { bank.frozen = false; }

namespace {

double cosine(const double* a, const double* b, int n) {
    const auto& k = kern::active();
    const double num = k.dot(a, b, static_cast<size_t>(n));
    const double na = std::sqrt(k.dot(a, a, static_cast<size_t>(n)));
    const double nb = std::sqrt(k.dot(b, b, static_cast<size_t>(n)));
    return num / (std::max(na, 1e-12) * std::max(nb, 1e-12));
}

}  // namespace

void update_bank(KnowledgeBank& bank, const Tensor& prototypes) {
    if (bank.frozen) {
        throw ContractError("update_bank: bank is frozen");
    }
    if (prototypes.rank() != 2 || prototypes.cols() != bank.channels) {
        throw ShapeError("update_bank: prototypes " + shape_str(prototypes.shape()) +
                         " do not match bank channels " + std::to_string(bank.channels));
    }
    const int m = prototypes.rows();
    const int c = bank.channels;
    const double* p = prototypes.values().data();
    for (int i = 0; i < m; ++i) {
        const double* row = p + static_cast<size_t>(i) * c;
        if (bank.occupancy < bank.capacity) {
            std::copy_n(row, c, bank.entry(bank.occupancy));
            bank.occupancy += 1;
            continue;
        }
        int best = 0;
        double best_sim = cosine(row, bank.entry(0), c);
        for (int g = 1; g < bank.occupancy; ++g) {
            const double sim = cosine(row, bank.entry(g), c);
            if (sim > best_sim) {
                best_sim = sim;
                best = g;
            }
        }
        double* target = bank.entry(best);
        const double mu = bank.momentum;
        for (int k = 0; k < c; ++k) {
            target[k] = mu * target[k] + (1.0 - mu) * row[k];
        }
    }
}

const char* retrieval_weighting_name(RetrievalWeighting w) {
    return w == RetrievalWeighting::Softmax ? "softmax" : "uniform";
}

RetrievalWeighting retrieval_weighting_from_name(const std::string& name) {
    if (name == "softmax") return RetrievalWeighting::Softmax;
    if (name == "uniform") return RetrievalWeighting::Uniform;
    throw ConfigError("unknown retrieval weighting '" + name + "'");
}

Tensor construct_prototypes(const Tensor& prototypes, const Tensor& support_tokens,
                            const IktParams& params) {
    if (prototypes.rank() != 2 || support_tokens.rank() != 2 ||
        prototypes.cols() != support_tokens.cols()) {
        throw ShapeError("construct_prototypes: prototypes " +
                         shape_str(prototypes.shape()) + " vs tokens " +
                         shape_str(support_tokens.shape()));
    }
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(prototypes.cols()));
    const Tensor keys = matmul(support_tokens, params.key_proj);
    const Tensor vals = matmul(support_tokens, params.value_proj);
    const Tensor attn =
        softmax_rows(scale(matmul(prototypes, transpose(keys)), inv_sqrt_c));
    return add(matmul(attn, vals), prototypes);
}

Tensor retrieve(const Tensor& p_hat, const KnowledgeBank& bank, double kappa,
                RetrievalWeighting weighting) {
    if (kappa <= 0.0 || kappa > 1.0) {
        throw ContractError("retrieve: kappa must be in (0, 1]");
    }
    if (p_hat.rank() != 2 || p_hat.cols() != bank.channels) {
        throw ShapeError("retrieve: prototypes " + shape_str(p_hat.shape()) +
                         " do not match bank channels " + std::to_string(bank.channels));
    }
    const int m = p_hat.rows();
    const int c = bank.channels;
    if (bank.occupancy == 0) {
        return Tensor::zeros({m, c});
    }
    const int top = std::max(1, static_cast<int>(std::floor(kappa * bank.occupancy)));

    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        // Selection runs on values; ties break toward the lower bank index.
        const double* row = p_hat.values().data() + static_cast<size_t>(i) * c;
        std::vector<std::pair<double, int>> sims;
        sims.reserve(static_cast<size_t>(bank.occupancy));
        for (int g = 0; g < bank.occupancy; ++g) {
            sims.emplace_back(cosine(row, bank.entry(g), c), g);
        }
        std::partial_sort(sims.begin(), sims.begin() + top, sims.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });

        std::vector<double> selected_raw(static_cast<size_t>(top) * c);
        std::vector<double> selected_unit(static_cast<size_t>(top) * c);
        for (int o = 0; o < top; ++o) {
            const double* e = bank.entry(sims[static_cast<size_t>(o)].second);
            std::copy_n(e, c, selected_raw.data() + static_cast<size_t>(o) * c);
            const double norm = std::max(
                std::sqrt(kern::active().dot(e, e, static_cast<size_t>(c))), 1e-12);
            for (int k = 0; k < c; ++k) {
                selected_unit[static_cast<size_t>(o) * c + k] = e[k] / norm;
            }
        }
        const Tensor raw = Tensor::from_data({top, c}, std::move(selected_raw));

        if (weighting == RetrievalWeighting::Uniform) {
            std::vector<double> mean(static_cast<size_t>(c), 0.0);
            for (int o = 0; o < top; ++o) {
                for (int k = 0; k < c; ++k) {
                    mean[static_cast<size_t>(k)] += raw.at(o, k) / top;
                }
            }
            rows.push_back(Tensor::from_data({1, c}, std::move(mean)));
            continue;
        }

        // Softmax weights over the selected cosine similarities, kept on the
        // graph so gradients reach p_hat through the weighting.
        const Tensor unit_entries = Tensor::from_data({top, c}, std::move(selected_unit));
        const Tensor prow = gather_rows(p_hat, {i});
        const Tensor sumsq = row_sum(mul(prow, prow));
        const Tensor norm = sqrt_elem(add_scalar(sumsq, 1e-24));
        const Tensor unit_row = colwise_div(prow, norm);
        const Tensor cos_sims = matmul(unit_row, transpose(unit_entries));  // [1 x top]
        const Tensor weights = softmax_rows(cos_sims);
        rows.push_back(matmul(weights, raw));
    }
    return concat_rows(rows);
}

Tensor aggregate(const Tensor& support_tokens, const Tensor& p_hat,
                 const Tensor& p_ret, const IktParams& params,
                 AttentionStageMacs* stage_macs) {
    const Tensor p_bar = add(p_hat, p_ret);
    const Tensor normed = layer_norm(support_tokens, params.ln_gain, params.ln_bias);
    const Tensor attn =
        multi_head_attention(normed, p_bar, params.attn, nullptr, stage_macs);
    return add(support_tokens, attn);
}

}  // namespace hrg
