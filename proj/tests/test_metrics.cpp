#include <doctest.h>

#include <cmath>
#include <cstring>

#include "hrg/metrics.hpp"
#include "testing.hpp"

using hrg::Tensor;
using hrgtest::random_tensor;

TEST_CASE("hard dtw equals brute-force path enumeration") {
    hrg::Rng rng(81);
    for (int trial = 0; trial < 200; ++trial) {
        const int tq = 1 + rng.uniform_int(5);
        const int ts = 1 + rng.uniform_int(5);
        std::vector<double> d(static_cast<size_t>(tq) * ts);
        for (double& v : d) v = std::abs(rng.normal());
        const double expected = hrgtest::brute_force_dtw(d, tq, ts, 0.0);
        const double got = hrg::soft_dtw(Tensor::from_data({tq, ts}, d), 0.0).at(0);
        CHECK(std::abs(got - expected) < 1e-12);
    }
}

TEST_CASE("soft dtw equals brute-force soft-min over paths") {
    hrg::Rng rng(82);
    for (int trial = 0; trial < 50; ++trial) {
        const int tq = 1 + rng.uniform_int(4);
        const int ts = 1 + rng.uniform_int(4);
        std::vector<double> d(static_cast<size_t>(tq) * ts);
        for (double& v : d) v = std::abs(rng.normal());
        for (double gamma : {1e-3, 0.1, 1.0}) {
            const double expected = hrgtest::brute_force_dtw(d, tq, ts, gamma);
            const double got =
                hrg::soft_dtw(Tensor::from_data({tq, ts}, d), gamma).at(0);
            CHECK(std::abs(got - expected) < 1e-9);
        }
    }
}

TEST_CASE("soft dtw at small gamma approaches the hard value") {
    hrg::Rng rng(83);
    for (int trial = 0; trial < 40; ++trial) {
        const int tq = 2 + rng.uniform_int(4);
        const int ts = 2 + rng.uniform_int(4);
        std::vector<double> d(static_cast<size_t>(tq) * ts);
        for (double& v : d) v = std::abs(rng.normal());  // unit-scale costs
        const Tensor dist = Tensor::from_data({tq, ts}, d);
        const double hard = hrg::soft_dtw(dist, 0.0).at(0);
        const double soft = hrg::soft_dtw(dist, 1e-3).at(0);
        CHECK(std::abs(soft - hard) < 1e-2);
    }
}

TEST_CASE("dtw examples and transpose symmetry") {
    const Tensor diag = Tensor::from_data({2, 2}, {0.0, 1.0, 1.0, 0.0});
    CHECK(hrg::soft_dtw(diag, 0.0).at(0) == 0.0);
    CHECK(hrg::soft_dtw(Tensor::from_data({1, 1}, {0.73}), 0.0).at(0) == 0.73);

    hrg::Rng rng(84);
    for (int trial = 0; trial < 30; ++trial) {
        const int tq = 1 + rng.uniform_int(5), ts = 1 + rng.uniform_int(5);
        const Tensor d = random_tensor(rng, {tq, ts}, 1.0, false);
        const Tensor dt = hrg::transpose(d);
        CHECK(hrg::soft_dtw(d, 0.0).at(0) == doctest::Approx(hrg::soft_dtw(dt, 0.0).at(0)).epsilon(1e-12));
        CHECK(hrg::bimhm(d).at(0) == doctest::Approx(hrg::bimhm(dt).at(0)).epsilon(1e-12));
    }
}

TEST_CASE("bimhm trivial values and naive oracle") {
    CHECK(hrg::bimhm(Tensor::zeros({3, 4})).at(0) == 0.0);

    // zero diagonal (identical sequences) gives zero
    const Tensor zero_diag =
        Tensor::from_data({3, 3}, {0, 2, 3, 2, 0, 5, 3, 5, 0});
    CHECK(hrg::bimhm(zero_diag).at(0) == 0.0);

    hrg::Rng rng(85);
    for (int trial = 0; trial < 50; ++trial) {
        const int tq = 1 + rng.uniform_int(4), ts = 1 + rng.uniform_int(4);
        std::vector<double> d(static_cast<size_t>(tq) * ts);
        for (double& v : d) v = std::abs(rng.normal());
        const double got = hrg::bimhm(Tensor::from_data({tq, ts}, d)).at(0);
        CHECK(got == doctest::Approx(hrgtest::naive_bimhm(d, tq, ts)).epsilon(1e-12));
    }
}

TEST_CASE("cosine distance matrix stays in range with tiny self-distance") {
    hrg::Rng rng(86);
    const Tensor x = random_tensor(rng, {6, 9}, 2.0, false);
    const Tensor y = random_tensor(rng, {4, 9}, 2.0, false);
    const Tensor d = hrg::cosine_distance_matrix(x, y);
    for (int64_t i = 0; i < d.size(); ++i) {
        CHECK(d.at(i) >= 0.0);
        CHECK(d.at(i) <= 2.0);
    }
    const Tensor self = hrg::cosine_distance_matrix(x, x);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(self.at(i, i)) < 1e-12);

    // self alignment distance is numerically zero for both metrics
    CHECK(std::abs(hrg::soft_dtw(self, 0.0).at(0)) < 1e-12);
    CHECK(std::abs(hrg::bimhm(self).at(0)) < 1e-12);
}

TEST_CASE("class prototype arithmetic") {
    hrg::Rng rng(87);
    const Tensor a = random_tensor(rng, {4, 6}, 1.0, false);

    const Tensor single = hrg::class_prototype({a});
    CHECK(std::memcmp(single.values().data(), a.values().data(),
                      a.values().size() * sizeof(double)) == 0);

    const Tensor twice = hrg::class_prototype({a, a});
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(twice.at(i) == doctest::Approx(a.at(i)).epsilon(1e-15));
    }

    const Tensor neg = hrg::scale(a, -1.0);
    const Tensor zero = hrg::class_prototype({a, neg});
    for (int64_t i = 0; i < zero.size(); ++i) CHECK(zero.at(i) == 0.0);
}

TEST_CASE("episode logits: identity query wins, tau and permutation behave") {
    hrg::Rng rng(88);
    std::vector<Tensor> protos;
    for (int n = 0; n < 3; ++n) protos.push_back(random_tensor(rng, {5, 8}, 1.0, false));
    const std::vector<Tensor> queries = {protos[0], random_tensor(rng, {5, 8}, 1.0, false)};

    const Tensor logits = hrg::episode_logits(queries, protos, hrg::MetricKind::Otam, 0.0, 0.1);
    CHECK(logits.rows() == 2);
    CHECK(logits.cols() == 3);
    CHECK(std::abs(logits.at(0, 0)) < 1e-10);  // zero distance to own class
    CHECK(logits.at(0, 1) < logits.at(0, 0));
    CHECK(logits.at(0, 2) < logits.at(0, 0));

    // argmax is invariant to the temperature
    auto argmax_row = [](const Tensor& m, int row) {
        int best = 0;
        for (int j = 1; j < m.cols(); ++j) {
            if (m.at(row, j) > m.at(row, best)) best = j;
        }
        return best;
    };
    for (double tau : {0.05, 0.1, 1.0, 10.0}) {
        const Tensor l2 = hrg::episode_logits(queries, protos, hrg::MetricKind::Otam, 0.0, tau);
        for (int row = 0; row < 2; ++row) {
            CHECK(argmax_row(l2, row) == argmax_row(logits, row));
        }
    }

    // permuting the class order permutes logit columns identically
    const std::vector<Tensor> permuted = {protos[2], protos[0], protos[1]};
    const Tensor lp = hrg::episode_logits(queries, permuted, hrg::MetricKind::Otam, 0.0, 0.1);
    for (int row = 0; row < 2; ++row) {
        CHECK(lp.at(row, 1) == logits.at(row, 0));
        CHECK(lp.at(row, 2) == logits.at(row, 1));
        CHECK(lp.at(row, 0) == logits.at(row, 2));
    }

    // bimhm route works through the same interface
    const Tensor lb = hrg::episode_logits(queries, protos, hrg::MetricKind::Bimhm, 0.0, 0.1);
    CHECK(std::abs(lb.at(0, 0)) < 1e-10);
}

TEST_CASE("soft dtw gradient through the cosine distance matrix") {
    hrg::Rng rng(89);
    const Tensor q = random_tensor(rng, {4, 6}, 1.0);
    const Tensor s = random_tensor(rng, {4, 6}, 1.0);
    const double err = hrgtest::fd_max_rel_err(
        [&] { return hrg::soft_dtw(hrg::cosine_distance_matrix(q, s), 0.1); },
        {q, s});
    CHECK(err < 1e-5);
}

TEST_CASE("bimhm gradient through the cosine distance matrix") {
    hrg::Rng rng(90);
    const Tensor q = random_tensor(rng, {3, 6}, 1.0);
    const Tensor s = random_tensor(rng, {5, 6}, 1.0);
    const double err = hrgtest::fd_max_rel_err(
        [&] { return hrg::bimhm(hrg::cosine_distance_matrix(q, s)); }, {q, s});
    CHECK(err < 1e-5);
}
