#include "hrg/metrics.hpp"

namespace hrg {

const char* metric_name(MetricKind m) {
    return m == MetricKind::Otam ? "otam" : "bimhm";
}

MetricKind metric_from_name(const std::string& name) {
    if (name == "otam") return MetricKind::Otam;
    if (name == "bimhm") return MetricKind::Bimhm;
    throw ConfigError("unknown metric '" + name + "'");
}

namespace {

Tensor unit_rows(const Tensor& x) {
    const Tensor sumsq = row_sum(mul(x, x));
    const Tensor norm = sqrt_elem(add_scalar(sumsq, 1e-24));
    return colwise_div(x, norm);
}

}  // namespace

Tensor cosine_distance_matrix(const Tensor& q, const Tensor& s) {
    if (q.rank() != 2 || s.rank() != 2 || q.cols() != s.cols()) {
        throw ShapeError("cosine_distance_matrix: " + shape_str(q.shape()) +
                         " vs " + shape_str(s.shape()));
    }
    const Tensor sims = matmul(unit_rows(q), transpose(unit_rows(s)));
    return add_scalar(scale(clamp(sims, -1.0, 1.0), -1.0), 1.0);
}

Tensor class_prototype(const std::vector<Tensor>& members) {
    if (members.empty()) throw ContractError("class_prototype: no members");
    Tensor acc = members[0];
    for (size_t i = 1; i < members.size(); ++i) acc = add(acc, members[i]);
    return members.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(members.size()));
}

Tensor metric_distance(const Tensor& dist, MetricKind metric, double gamma) {
    return metric == MetricKind::Otam ? soft_dtw(dist, gamma) : bimhm(dist);
}

Tensor episode_logits(const std::vector<Tensor>& queries,
                      const std::vector<Tensor>& prototypes, MetricKind metric,
                      double gamma, double tau) {
    if (queries.empty() || prototypes.empty()) {
        throw ContractError("episode_logits: empty queries or prototypes");
    }
    if (tau <= 0.0) throw ContractError("episode_logits: tau must be positive");
    std::vector<Tensor> cells;
    cells.reserve(queries.size() * prototypes.size());
    for (const Tensor& q : queries) {
        for (const Tensor& p : prototypes) {
            cells.push_back(metric_distance(cosine_distance_matrix(q, p), metric, gamma));
        }
    }
    const Tensor distances = stack_scalars(
        cells, {static_cast<int>(queries.size()), static_cast<int>(prototypes.size())});
    return scale(distances, -1.0 / tau);
}

}  // namespace hrg
