#pragma once

#include <string>
#include <vector>

#include "hrg/tensor.hpp"

namespace hrg {

enum class MetricKind { Otam, Bimhm };

const char* metric_name(MetricKind m);
MetricKind metric_from_name(const std::string& name);

// d[i][j] = 1 - cosine(q_i, s_j), clamped into [0, 2].
Tensor cosine_distance_matrix(const Tensor& q, const Tensor& s);

// Frame-wise arithmetic mean of K same-shape sequences.
Tensor class_prototype(const std::vector<Tensor>& members);

// Otam -> soft_dtw(d, gamma); Bimhm -> bimhm(d) (gamma unused).
Tensor metric_distance(const Tensor& dist, MetricKind metric, double gamma);

// logits[l][n] = -metric(query l, prototype n) / tau.
Tensor episode_logits(const std::vector<Tensor>& queries,
                      const std::vector<Tensor>& prototypes, MetricKind metric,
                      double gamma, double tau);

}  // namespace hrg
