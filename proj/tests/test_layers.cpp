#include <doctest.h>

#include <cmath>
#include <functional>

#include "tleap/layers.hpp"
#include "tleap/rng.hpp"

using namespace tleap;
using nn::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[size_t(i)] = rng.uniform(lo, hi);
    return t;
}

/// Naive direct 3-D convolution, stride 1: the oracle for Conv3d.
Tensor<double> conv3d_reference(const Tensor<double>& x, const Tensor<double>& w,
                                const Tensor<double>& bias, int pt, int ph, int pw) {
    const int64_t b = x.dim(0), cin = x.dim(1), ti = x.dim(2), hi = x.dim(3),
                  wi = x.dim(4);
    const int64_t cout = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
    const int64_t to = ti + 2 * pt - kt + 1, ho = hi + 2 * ph - kh + 1,
                  wo = wi + 2 * pw - kw + 1;
    Tensor<double> y({b, cout, to, ho, wo});
    for (int64_t s = 0; s < b; ++s)
        for (int64_t oc = 0; oc < cout; ++oc)
            for (int64_t t = 0; t < to; ++t)
                for (int64_t yy = 0; yy < ho; ++yy)
                    for (int64_t xx = 0; xx < wo; ++xx) {
                        double acc = bias[size_t(oc)];
                        for (int64_t ic = 0; ic < cin; ++ic)
                            for (int64_t dt = 0; dt < kt; ++dt)
                                for (int64_t dy = 0; dy < kh; ++dy)
                                    for (int64_t dx = 0; dx < kw; ++dx) {
                                        const int64_t st = t + dt - pt;
                                        const int64_t sy = yy + dy - ph;
                                        const int64_t sx = xx + dx - pw;
                                        if (st < 0 || st >= ti || sy < 0 || sy >= hi ||
                                            sx < 0 || sx >= wi)
                                            continue;
                                        acc += x[size_t(
                                                   (((s * cin + ic) * ti + st) * hi + sy) *
                                                       wi +
                                                   sx)] *
                                               w[size_t(
                                                   (((oc * cin + ic) * kt + dt) * kh + dy) *
                                                       kw +
                                                   dx)];
                                    }
                        y[size_t((((s * cout + oc) * to + t) * ho + yy) * wo + xx)] = acc;
                    }
    return y;
}

/// L(y) = sum(y * r) with fixed random r: a scalar objective whose exact
/// output gradient is r.
struct ProbeLoss {
    Tensor<double> r;
    double value(const Tensor<double>& y) const {
        double s = 0;
        for (int64_t i = 0; i < y.numel(); ++i) s += y[size_t(i)] * r[size_t(i)];
        return s;
    }
};

/// Central-difference check of every parameter and input gradient of a
/// layer under the probe loss.
void gradcheck_layer(nn::Layer<double>& layer, Tensor<double> x, Rng& rng,
                     double eps = 1e-5, double tol = 1e-6) {
    Tensor<double> y = layer.forward(x, true);
    ProbeLoss loss{random_tensor(y.shape(), rng)};

    for (auto* p : layer.params()) p->grad.zero();
    Tensor<double> gx = layer.backward(x, loss.r);

    auto fd = [&](std::function<double*(void)> elem) {
        double* v = elem();
        const double saved = *v;
        *v = saved + eps;
        const double up = loss.value(layer.forward(x, true));
        *v = saved - eps;
        const double down = loss.value(layer.forward(x, true));
        *v = saved;
        layer.forward(x, true);  // restore caches for any later backward
        return (up - down) / (2 * eps);
    };

    for (int64_t i = 0; i < x.numel(); ++i) {
        const double numeric = fd([&]() { return &x[size_t(i)]; });
        CHECK(gx[size_t(i)] == doctest::Approx(numeric).epsilon(tol).scale(1.0));
    }
    for (auto* p : layer.params()) {
        if (!p->trainable) continue;
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            // re-zero and recompute the analytic grad because fd() mutated caches
            for (auto* q : layer.params()) q->grad.zero();
            layer.forward(x, true);
            layer.backward(x, loss.r);
            const double analytic = p->grad[size_t(i)];
            const double numeric = fd([&]() { return &p->value[size_t(i)]; });
            CHECK(analytic == doctest::Approx(numeric).epsilon(tol).scale(1.0));
        }
    }
}

}  // namespace

TEST_CASE("Conv3d forward matches the naive reference (temporal extent 2)") {
    Rng rng(11);
    nn::Conv3d<double> conv("c", 2, 3, 3, 3, 3, 1, 1, 1);
    for (auto* p : conv.params())
        for (int64_t i = 0; i < p->value.numel(); ++i)
            p->value[size_t(i)] = rng.uniform(-0.5, 0.5);
    Tensor<double> x = random_tensor({2, 2, 2, 6, 5}, rng);
    Tensor<double> y = conv.forward(x, false);
    Tensor<double> ref = conv3d_reference(x, conv.weight().value, conv.bias().value,
                                          1, 1, 1);
    REQUIRE(y.same_shape(ref));
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y[size_t(i)] == doctest::Approx(ref[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("Conv3d middle-slice fast path equals the generic computation") {
    Rng rng(12);
    // same weights, one layer sees extent-1 input (fast path), the other
    // the same values embedded at the middle of a zero-padded extent run
    nn::Conv3d<double> conv("c", 2, 3, 3, 3, 3, 1, 1, 1);
    for (auto* p : conv.params())
        for (int64_t i = 0; i < p->value.numel(); ++i)
            p->value[size_t(i)] = rng.uniform(-0.5, 0.5);
    Tensor<double> x = random_tensor({1, 2, 1, 6, 6}, rng);

    Tensor<double> y_fast = conv.forward(x, false);  // Ti==1, kt==3 -> fast path
    Tensor<double> ref = conv3d_reference(x, conv.weight().value, conv.bias().value,
                                          1, 1, 1);
    // reference keeps all temporal taps; output extent 1 + 2 - 3 + 1 = 1
    REQUIRE(y_fast.same_shape(ref));
    for (int64_t i = 0; i < y_fast.numel(); ++i)
        CHECK(y_fast[size_t(i)] == doctest::Approx(ref[size_t(i)]).epsilon(1e-12));

    // gradients of the outer temporal slices must be exactly zero
    conv.forward(x, true);
    for (auto* p : conv.params()) p->grad.zero();
    Tensor<double> gy = random_tensor(y_fast.shape(), rng);
    conv.backward(x, gy);
    const auto& w = conv.weight();
    for (int64_t oc = 0; oc < 3; ++oc)
        for (int64_t ic = 0; ic < 2; ++ic)
            for (int64_t dt = 0; dt < 3; ++dt)
                for (int64_t k = 0; k < 9; ++k) {
                    const double g = w.grad[size_t((((oc * 2 + ic) * 3 + dt) * 9) + k)];
                    if (dt != 1)
                        CHECK(g == 0.0);
                }
}

TEST_CASE("Conv3d gradients match finite differences") {
    Rng rng(13);
    nn::Conv3d<double> conv("c", 2, 2, 3, 3, 3, 1, 1, 1);
    for (auto* p : conv.params())
        for (int64_t i = 0; i < p->value.numel(); ++i)
            p->value[size_t(i)] = rng.uniform(-0.5, 0.5);
    gradcheck_layer(conv, random_tensor({1, 2, 2, 4, 4}, rng), rng);
}

TEST_CASE("ConvTranspose3d doubles spatial size and matches finite differences") {
    Rng rng(14);
    nn::ConvTranspose3d<double> tconv("t", 2, 2, 3, 1);
    for (auto* p : tconv.params())
        for (int64_t i = 0; i < p->value.numel(); ++i)
            p->value[size_t(i)] = rng.uniform(-0.5, 0.5);
    Tensor<double> x = random_tensor({1, 2, 1, 3, 4}, rng);
    Tensor<double> y = tconv.forward(x, false);
    CHECK(y.shape() == std::vector<int64_t>({1, 2, 1, 6, 8}));
    gradcheck_layer(tconv, x, rng);
}

TEST_CASE("ConvTranspose3d static geometry (kt=1)") {
    Rng rng(15);
    nn::ConvTranspose3d<double> tconv("t", 3, 2, 1, 0);
    Tensor<double> x = random_tensor({2, 3, 1, 5, 5}, rng);
    Tensor<double> y = tconv.forward(x, false);
    CHECK(y.shape() == std::vector<int64_t>({2, 2, 1, 10, 10}));
}

TEST_CASE("MaxPool3d collapses the temporal extent and routes gradients") {
    Rng rng(16);
    nn::MaxPool3d<double> pool(2, 2, 2);
    Tensor<double> x = random_tensor({1, 2, 4, 4, 4}, rng);
    Tensor<double> y = pool.forward(x, true);
    CHECK(y.shape() == std::vector<int64_t>({1, 2, 2, 2, 2}));
    gradcheck_layer(pool, x, rng, 1e-7, 1e-6);  // small eps: avoid crossing argmax ties
}

TEST_CASE("BatchNorm training gradients match finite differences") {
    Rng rng(17);
    nn::BatchNorm<double> bn("b", 3, 0.1, 1e-5);
    // nudge gamma/beta off their init so the check is not at a special point
    auto ps = bn.params();
    for (int64_t i = 0; i < 3; ++i) {
        ps[0]->value[size_t(i)] = 1.0 + 0.2 * rng.uniform();
        ps[1]->value[size_t(i)] = 0.3 * rng.uniform();
    }
    gradcheck_layer(bn, random_tensor({2, 3, 1, 3, 3}, rng), rng, 1e-6, 1e-4);
}

TEST_CASE("BatchNorm with fused ReLU matches finite differences and a manual chain") {
    Rng rng(20);
    nn::BatchNorm<double> fused("b", 2, 0.1, 1e-5, true);
    auto ps = fused.params();
    for (int64_t i = 0; i < 2; ++i) {
        ps[0]->value[size_t(i)] = 1.0 + 0.3 * rng.uniform();
        ps[1]->value[size_t(i)] = 0.5;  // keeps activations off the ReLU kink
    }
    Tensor<double> x = random_tensor({2, 2, 1, 4, 4}, rng);
    gradcheck_layer(fused, x, rng, 1e-6, 1e-4);

    // forward equals separate BN then ReLU
    nn::BatchNorm<double> plain("b", 2, 0.1, 1e-5, false);
    auto qs = plain.params();
    for (int64_t i = 0; i < 2; ++i) {
        qs[0]->value[size_t(i)] = ps[0]->value[size_t(i)];
        qs[1]->value[size_t(i)] = ps[1]->value[size_t(i)];
    }
    nn::ReLU<double> relu;
    Tensor<double> a = fused.forward(x, true);
    Tensor<double> b = relu.forward(plain.forward(x, true), true);
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(a[size_t(i)] == doctest::Approx(b[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("BatchNorm eval mode uses running statistics") {
    nn::BatchNorm<float> bn("b", 1);
    Tensor<float> x({2, 1, 1, 2, 2});
    for (int64_t i = 0; i < x.numel(); ++i) x[size_t(i)] = float(i);
    bn.forward(x, true);   // updates running stats
    Tensor<float> y = bn.forward(x, false);
    // running_mean = 0.9*0 + 0.1*mean(x) = 0.35; running_var from unbiased var
    auto ps = bn.params();
    CHECK(ps[2]->value[0] == doctest::Approx(0.35).epsilon(1e-5));
    const double expected_var = 1.0 * 0.9 + 0.1 * (42.0 / 7.0 * 8.0 / 8.0);  // biased 5.25 -> unbiased 6.0
    CHECK(ps[3]->value[0] == doctest::Approx(expected_var).epsilon(1e-4));
    // eval output for x=0: (0 - 0.35)/sqrt(var+eps)
    CHECK(y[0] == doctest::Approx(-0.35 / std::sqrt(expected_var + 1e-5)).epsilon(1e-4));
}

TEST_CASE("SpatialSoftmax normalizes per map and matches finite differences") {
    Rng rng(18);
    nn::SpatialSoftmax<double> sm;
    Tensor<double> x = random_tensor({2, 3, 1, 4, 4}, rng, -2.0, 2.0);
    Tensor<double> y = sm.forward(x, true);
    for (int64_t r = 0; r < 6; ++r) {
        double sum = 0;
        for (int64_t i = 0; i < 16; ++i) sum += y[size_t(r * 16 + i)];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    gradcheck_layer(sm, x, rng, 1e-6, 1e-5);
}

TEST_CASE("ReLU gradcheck") {
    Rng rng(19);
    nn::ReLU<double> relu;
    // keep values away from the kink at 0
    Tensor<double> x = random_tensor({1, 2, 1, 3, 3}, rng);
    for (int64_t i = 0; i < x.numel(); ++i)
        if (std::abs(x[size_t(i)]) < 0.05) x[size_t(i)] = 0.1;
    gradcheck_layer(relu, x, rng);
}
