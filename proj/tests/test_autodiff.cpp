#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "orbit/autodiff.hpp"
#include "orbit/nn_ops.hpp"
#include "orbit/rng.hpp"

using namespace orbit;

namespace {

Tensor<double> random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed, double scale = 1.0,
                             double offset = 0.0) {
    Tensor<double> t(std::move(shape));
    SplitMix64 rng(seed);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale + offset;
    return t;
}

// Central-difference check of every element of every parameter against the
// tape's gradients.
void check_grads(const std::vector<Var<double>>& params, const std::function<Var<double>()>& make_loss,
                 double tol = 1e-6, double h = 1e-5) {
    for (const auto& p : params) p->zero_grad();
    Var<double> loss = make_loss();
    backward(loss);

    std::vector<Tensor<double>> analytic;
    for (const auto& p : params)
        analytic.push_back(p->grad.numel() ? p->grad : Tensor<double>(p->value.shape()));

    auto value = [&]() {
        NoGradGuard no_grad;
        return make_loss()->value[0];
    };

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::int64_t i = 0; i < params[pi]->value.numel(); ++i) {
            const double saved = params[pi]->value[i];
            params[pi]->value[i] = saved + h;
            const double plus = value();
            params[pi]->value[i] = saved - h;
            const double minus = value();
            params[pi]->value[i] = saved;
            const double numeric = (plus - minus) / (2 * h);
            const double a = analytic[pi][i];
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            INFO("param " << pi << " element " << i << " analytic " << a << " numeric " << numeric);
            REQUIRE(err < tol);
        }
    }
}

// Direct convolution, the independent oracle for the im2col/GEMM path.
Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride,
                            int pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const std::int64_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
    const std::int64_t cout = ws[0], kh = ws[2], kw = ws[3];
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    Tensor<double> y({n, cout, ho, wo});
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t oc = 0; oc < cout; ++oc)
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    double acc = b.numel() ? b[oc] : 0.0;
                    for (std::int64_t ic = 0; ic < cin; ++ic)
                        for (std::int64_t ky = 0; ky < kh; ++ky)
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t iy = oy * stride - pad + ky;
                                const std::int64_t ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                acc += x.at4(in, ic, iy, ix) * w.at4(oc, ic, ky, kx);
                            }
                    y.at4(in, oc, oy, ox) = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("conv2d forward matches the direct convolution oracle") {
    struct Case {
        std::vector<std::int64_t> xshape, wshape;
        int stride, pad;
    };
    const std::vector<Case> cases = {
        {{2, 3, 8, 8}, {4, 3, 3, 3}, 1, 1},
        {{1, 3, 9, 9}, {2, 3, 7, 7}, 2, 3},
        {{2, 4, 6, 6}, {8, 4, 1, 1}, 1, 0},
        {{1, 2, 7, 5}, {3, 2, 3, 3}, 2, 1},
    };
    int seed = 100;
    for (const Case& c : cases) {
        Var<double> x = make_var(random_tensor(c.xshape, static_cast<std::uint64_t>(seed++)));
        Var<double> w = make_var(random_tensor(c.wshape, static_cast<std::uint64_t>(seed++)));
        Var<double> b = make_var(random_tensor({c.wshape[0]}, static_cast<std::uint64_t>(seed++)));
        Var<double> y = conv2d(x, w, b, c.stride, c.pad);
        Tensor<double> expected = naive_conv2d(x->value, w->value, b->value, c.stride, c.pad);
        REQUIRE(y->value.shape() == expected.shape());
        for (std::int64_t i = 0; i < y->value.numel(); ++i)
            REQUIRE(y->value[i] == Catch::Approx(expected[i]).margin(1e-10));
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    Var<double> x = make_var(random_tensor({2, 2, 5, 5}, 1), true);
    Var<double> w = make_var(random_tensor({3, 2, 3, 3}, 2, 0.5), true);
    Var<double> b = make_var(random_tensor({3}, 3, 0.1), true);
    check_grads({x, w, b}, [&]() {
        Var<double> y = conv2d(x, w, b, 1, 1);
        return mse_loss(y, make_var(Tensor<double>::full(y->value.shape(), 0.3)));
    });
}

TEST_CASE("strided conv2d gradients match finite differences") {
    Var<double> x = make_var(random_tensor({1, 3, 9, 9}, 4), true);
    Var<double> w = make_var(random_tensor({2, 3, 7, 7}, 5, 0.2), true);
    Var<double> b = make_var(random_tensor({2}, 6, 0.1), true);
    check_grads({x, w, b}, [&]() {
        Var<double> y = conv2d(x, w, b, 2, 3);
        return mse_loss(y, make_var(Tensor<double>::full(y->value.shape(), -0.1)));
    });
}

TEST_CASE("batch_norm training-mode gradients match finite differences") {
    Var<double> x = make_var(random_tensor({2, 3, 4, 4}, 7), true);
    Var<double> gamma = make_var(random_tensor({3}, 8, 0.3, 1.0), true);
    Var<double> beta = make_var(random_tensor({3}, 9, 0.3), true);
    auto stats = std::make_shared<BatchNormStats<double>>(3);
    check_grads(
        {x, gamma, beta},
        [&]() {
            Var<double> y = batch_norm(x, gamma, beta, stats, /*training=*/true);
            return mse_loss(y, make_var(Tensor<double>::full(y->value.shape(), 0.2)));
        },
        5e-6);
}

TEST_CASE("batch_norm eval-mode gradients match finite differences") {
    Var<double> x = make_var(random_tensor({2, 3, 4, 4}, 10), true);
    Var<double> gamma = make_var(random_tensor({3}, 11, 0.3, 1.0), true);
    Var<double> beta = make_var(random_tensor({3}, 12, 0.3), true);
    auto stats = std::make_shared<BatchNormStats<double>>(3);
    stats->running_mean = random_tensor({3}, 13, 0.2);
    stats->running_var = random_tensor({3}, 14, 0.1, 1.0);
    check_grads({x, gamma, beta}, [&]() {
        Var<double> y = batch_norm(x, gamma, beta, stats, /*training=*/false);
        return mse_loss(y, make_var(Tensor<double>::full(y->value.shape(), 0.0)));
    });
}

TEST_CASE("batch_norm updates running statistics only in training mode") {
    Var<double> x = make_var(random_tensor({4, 2, 3, 3}, 15), false);
    Var<double> gamma = make_var(Tensor<double>::full({2}, 1.0), false);
    Var<double> beta = make_var(Tensor<double>({2}), false);
    auto stats = std::make_shared<BatchNormStats<double>>(2);
    batch_norm(x, gamma, beta, stats, /*training=*/false);
    REQUIRE(stats->running_mean[0] == 0.0);
    REQUIRE(stats->running_var[0] == 1.0);
    batch_norm(x, gamma, beta, stats, /*training=*/true);
    REQUIRE(stats->running_mean[0] != 0.0);
    REQUIRE(stats->running_var[0] != 1.0);
}

TEST_CASE("max_pool2d gradients match finite differences") {
    // Distinct values keep the argmax stable under the probe step.
    Tensor<double> xt({1, 2, 6, 6});
    SplitMix64 rng(16);
    for (std::int64_t i = 0; i < xt.numel(); ++i) xt[i] = static_cast<double>(i % 37) + 0.01 * rng.uniform();
    Var<double> x = make_var(xt, true);
    check_grads({x}, [&]() {
        Var<double> y = max_pool2d(x, 3, 2, 1);
        return mse_loss(y, make_var(Tensor<double>::full(y->value.shape(), 1.0)));
    });
}

TEST_CASE("relu and sigmoid gradients match finite differences") {
    // Values bounded away from the ReLU kink.
    Tensor<double> xt({2, 2, 3, 3});
    SplitMix64 rng(17);
    for (std::int64_t i = 0; i < xt.numel(); ++i) {
        const double v = rng.normal();
        xt[i] = v + (v >= 0 ? 0.05 : -0.05);
    }
    Var<double> x = make_var(xt, true);
    check_grads({x}, [&]() {
        return l1_loss(sigmoid(relu(x)), make_var(Tensor<double>::full(xt.shape(), 2.0)));
    });
}

TEST_CASE("pixel_shuffle is the definitional rearrangement") {
    Tensor<double> xt({1, 4, 1, 1}, {1.0, 2.0, 3.0, 4.0});
    Var<double> y = pixel_shuffle(make_var(xt), 2);
    REQUIRE(y->value.shape() == std::vector<std::int64_t>{1, 1, 2, 2});
    REQUIRE(y->value[0] == 1.0);  // (0,0) <- channel 0
    REQUIRE(y->value[1] == 2.0);  // (0,1) <- channel 1
    REQUIRE(y->value[2] == 3.0);  // (1,0) <- channel 2
    REQUIRE(y->value[3] == 4.0);  // (1,1) <- channel 3
}

TEST_CASE("pixel_shuffle preserves the multiset of values") {
    const Tensor<double> xt = random_tensor({2, 8, 3, 3}, 18);
    Var<double> y = pixel_shuffle(make_var(xt), 2);
    std::vector<double> a(xt.vec()), b(y->value.vec());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    REQUIRE(a == b);
}

TEST_CASE("pixel_shuffle with r=1 is the identity") {
    const Tensor<double> xt = random_tensor({1, 3, 2, 2}, 19);
    Var<double> y = pixel_shuffle(make_var(xt), 1);
    REQUIRE(y->value.vec() == xt.vec());
}

TEST_CASE("pixel_shuffle rejects indivisible channel counts") {
    REQUIRE_THROWS_AS(pixel_shuffle(make_var(Tensor<double>({1, 3, 2, 2})), 2), ShapeError);
}

TEST_CASE("pixel_shuffle gradients match finite differences") {
    Var<double> x = make_var(random_tensor({1, 8, 2, 2}, 20), true);
    check_grads({x}, [&]() {
        Var<double> y = pixel_shuffle(x, 2);
        return mse_loss(y, make_var(Tensor<double>::full(y->value.shape(), 0.5)));
    });
}

TEST_CASE("concat_channels gradients match finite differences") {
    Var<double> a = make_var(random_tensor({2, 2, 3, 3}, 21), true);
    Var<double> b = make_var(random_tensor({2, 3, 3, 3}, 22), true);
    check_grads({a, b}, [&]() {
        Var<double> y = concat_channels(a, b);
        return mse_loss(y, make_var(Tensor<double>::full(y->value.shape(), 0.1)));
    });
}

TEST_CASE("channel_affine and add gradients match finite differences") {
    Var<double> a = make_var(random_tensor({1, 3, 4, 4}, 23), true);
    Var<double> b = make_var(random_tensor({1, 3, 4, 4}, 24), true);
    check_grads({a, b}, [&]() {
        Var<double> y = add(channel_affine(a, {2.0, 0.5, 1.5}, {0.1, -0.2, 0.0}), b);
        return mse_loss(y, make_var(Tensor<double>::full(y->value.shape(), 0.4)));
    });
}

TEST_CASE("residual/skip graphs accumulate gradients correctly") {
    // x feeds two paths that rejoin; the tape must add both contributions.
    Var<double> x = make_var(random_tensor({1, 2, 3, 3}, 25), true);
    Var<double> w = make_var(random_tensor({2, 2, 3, 3}, 26, 0.3), true);
    check_grads({x, w}, [&]() {
        Var<double> y = add(conv2d(x, w, 1, 1), x);
        Var<double> z = concat_channels(y, x);
        return mse_loss(z, make_var(Tensor<double>::full(z->value.shape(), 0.2)));
    });
}

TEST_CASE("l1_loss value and symmetry") {
    Var<double> a = make_var(Tensor<double>({1, 1, 2, 2}, {0.1, 0.5, 0.3, 0.9}));
    Var<double> b = make_var(Tensor<double>({1, 1, 2, 2}, {0.2, 0.6, 0.4, 1.0}));
    REQUIRE(l1_loss(a, b)->value[0] == Catch::Approx(0.1).margin(1e-12));
    REQUIRE(l1_loss(b, a)->value[0] == l1_loss(a, b)->value[0]);
}

TEST_CASE("add_scaled combines scalar terms with gradients") {
    Var<double> a = make_var(random_tensor({1, 1, 2, 2}, 27), true);
    check_grads({a}, [&]() {
        Var<double> t1 = mse_loss(a, make_var(Tensor<double>::full({1, 1, 2, 2}, 0.5)));
        Var<double> t2 = l1_loss(a, make_var(Tensor<double>::full({1, 1, 2, 2}, 3.0)));
        return add_scaled(t1, t2, 0.7);
    });
}

TEST_CASE("no_grad mode builds no graph") {
    Var<double> x = make_var(random_tensor({1, 2, 2, 2}, 28), true);
    NoGradGuard no_grad;
    Var<double> y = relu(x);
    REQUIRE_FALSE(y->requires_grad);
    REQUIRE(y->parents.empty());
}

TEST_CASE("backward twice on rebuilt graphs is deterministic") {
    Var<double> x = make_var(random_tensor({1, 2, 4, 4}, 29), true);
    Var<double> w = make_var(random_tensor({4, 2, 3, 3}, 30, 0.4), true);
    auto run = [&]() {
        for (const auto& p : {x, w}) p->zero_grad();
        Var<double> loss = mse_loss(conv2d(x, w, 1, 1),
                                    make_var(Tensor<double>::full({1, 4, 4, 4}, 0.25)));
        backward(loss);
        return w->grad.vec();
    };
    const std::vector<double> g1 = run();
    const std::vector<double> g2 = run();
    REQUIRE(g1 == g2);
}
