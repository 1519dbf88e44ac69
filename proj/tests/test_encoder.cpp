#include <doctest.h>

#include <cmath>
#include <cstring>

#include "hrg/temporal_encoder.hpp"
#include "testing.hpp"

using hrg::Tensor;
using hrgtest::fd_max_rel_err;
using hrgtest::random_tensor;

namespace {

hrg::TemporalEncoderParams make_params(hrg::Rng& rng, int channels, int heads,
                                       int layers) {
    hrg::TemporalEncoderParams params;
    params.pe_scale = 0.1;
    const std::vector<double> ones(static_cast<size_t>(channels), 1.0);
    const std::vector<double> zeros(static_cast<size_t>(channels), 0.0);
    for (int l = 0; l < layers; ++l) {
        hrg::EncoderLayerParams layer;
        layer.ln1_gain = Tensor::parameter({channels}, ones);
        layer.ln1_bias = Tensor::parameter({channels}, zeros);
        layer.attn.num_heads = heads;
        layer.attn.wq = random_tensor(rng, {channels, channels}, 0.1);
        layer.attn.wk = random_tensor(rng, {channels, channels}, 0.1);
        layer.attn.wv = random_tensor(rng, {channels, channels}, 0.1);
        layer.attn.wo = random_tensor(rng, {channels, channels}, 0.1);
        layer.ln2_gain = Tensor::parameter({channels}, ones);
        layer.ln2_bias = Tensor::parameter({channels}, zeros);
        layer.ffn_w1 = random_tensor(rng, {channels, 2 * channels}, 0.1);
        layer.ffn_w2 = random_tensor(rng, {2 * channels, channels}, 0.1);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

}  // namespace

TEST_CASE("encoder preserves shape") {
    hrg::Rng rng(41);
    const auto params = make_params(rng, 8, 2, 1);
    for (int batch : {1, 3}) {
        for (int frames : {4, 7}) {
            const Tensor x = random_tensor(rng, {batch * frames, 8}, 1.0, false);
            const Tensor y = hrg::temporal_encode(x, batch, frames, params);
            CHECK(y.shape() == x.shape());
        }
    }
    CHECK_THROWS_AS(
        hrg::temporal_encode(Tensor::zeros({5, 8}), 2, 3, params), hrg::ShapeError);
}

TEST_CASE("identical videos produce identical outputs (no cross-video mixing)") {
    hrg::Rng rng(42);
    const int t = 5, c = 8;
    const auto params = make_params(rng, c, 2, 1);
    const Tensor one = random_tensor(rng, {t, c}, 1.0, false);
    const Tensor two = hrg::concat_rows({one, one});
    const Tensor y = hrg::temporal_encode(two, 2, t, params);
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j < c; ++j) {
            CHECK(y.at(i, j) == y.at(t + i, j));
        }
    }
}

TEST_CASE("batch permutation equivariance is bitwise") {
    hrg::Rng rng(43);
    const int batch = 4, t = 3, c = 8;
    const auto params = make_params(rng, c, 2, 1);
    const Tensor x = random_tensor(rng, {batch * t, c}, 1.0, false);

    const std::vector<int> perm = {2, 0, 3, 1};
    std::vector<int> row_perm;
    for (int b : perm) {
        for (int i = 0; i < t; ++i) row_perm.push_back(b * t + i);
    }
    const Tensor y_then_perm =
        hrg::gather_rows(hrg::temporal_encode(x, batch, t, params), row_perm);
    const Tensor perm_then_y =
        hrg::temporal_encode(hrg::gather_rows(x, row_perm), batch, t, params);
    CHECK(std::memcmp(y_then_perm.values().data(), perm_then_y.values().data(),
                      y_then_perm.values().size() * sizeof(double)) == 0);
}

TEST_CASE("temporal sensitivity: frame reversal changes the output") {
    hrg::Rng rng(44);
    const int t = 6, c = 8;
    const auto params = make_params(rng, c, 2, 1);
    const Tensor x = random_tensor(rng, {t, c}, 1.0, false);
    std::vector<int> reversed(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) reversed[static_cast<size_t>(i)] = t - 1 - i;

    const Tensor y = hrg::temporal_encode(x, 1, t, params);
    const Tensor y_rev =
        hrg::gather_rows(hrg::temporal_encode(hrg::gather_rows(x, reversed), 1, t, params),
                         reversed);
    double max_diff = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(y.at(i) - y_rev.at(i)));
    }
    CHECK(max_diff > 0.0);
}

TEST_CASE("encoder gradients match finite differences") {
    hrg::Rng rng(45);
    const int t = 3, c = 4;
    const auto params = make_params(rng, c, 2, 1);
    const Tensor x = random_tensor(rng, {2 * t, c}, 1.0);
    const Tensor w = random_tensor(rng, {2 * t, c}, 1.0, false);

    std::vector<Tensor> leaves = {x};
    const auto& layer = params.layers[0];
    for (const Tensor& p : {layer.attn.wq, layer.attn.wk, layer.attn.wv,
                            layer.attn.wo, layer.ffn_w1, layer.ffn_w2,
                            layer.ln1_gain, layer.ln1_bias, layer.ln2_gain,
                            layer.ln2_bias}) {
        leaves.push_back(p);
    }
    const double err = fd_max_rel_err(
        [&] {
            return hrg::sum_all(hrg::mul(hrg::temporal_encode(x, 2, t, params), w));
        },
        leaves, 1e-5, 6);
    CHECK(err < 1e-4);
}

TEST_CASE("sinusoidal table shape and range") {
    const Tensor pe = hrg::sinusoidal_positions(6, 10);
    CHECK(pe.shape() == hrg::Shape{6, 10});
    for (int64_t i = 0; i < pe.size(); ++i) {
        CHECK(pe.at(i) <= 1.0);
        CHECK(pe.at(i) >= -1.0);
    }
    // position 0: sin channels are 0, cos channels are 1
    for (int k = 0; k < 10; ++k) {
        CHECK(pe.at(0, k) == (k % 2 == 0 ? 0.0 : 1.0));
    }
}
