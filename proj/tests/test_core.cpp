#include <doctest.h>

#include <cmath>

#include "dsdg/error.hpp"
#include "dsdg/layers.hpp"
#include "dsdg/ops.hpp"
#include "dsdg/verify.hpp"

using namespace dsdg;

namespace {

// Direct 2-D cross-correlation used as an independent reference.
Tensor naive_conv(const Tensor& x, const Tensor& w, int stride, int pad) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int o = w.dim(0), k = w.dim(2);
    const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    Tensor y({n, o, oh, ow});
    for (int s = 0; s < n; ++s)
        for (int oc = 0; oc < o; ++oc)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    double acc = 0.0;
                    for (int ic = 0; ic < c; ++ic)
                        for (int a = 0; a < k; ++a)
                            for (int b = 0; b < k; ++b) {
                                const int yy = i * stride - pad + a, xx = j * stride - pad + b;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                                acc += x.at(s, ic, yy, xx) * w.at(oc, ic, a, b);
                            }
                    y.at(s, oc, i, j) = acc;
                }
    return y;
}

double max_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_SUITE("core") {
    TEST_CASE("tensor reshape keeps storage and rejects a different element count") {
        Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
        const Tensor r = t.reshaped({3, 2});
        CHECK(r.storage() == t.storage());
        CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
        CHECK(t.sum() == 21.0);
        CHECK(t.max_abs() == 6.0);
    }

    TEST_CASE("backward of a product accumulates through shared inputs") {
        Var x = Var::parameter(Tensor({1}, 3.0));
        const Var y = ops::sum(x * x + x * 2.0);  // dy/dx = 2x + 2
        backward(y);
        CHECK(x.grad()[0] == doctest::Approx(8.0));
    }

    TEST_CASE("no-grad guard drops graph edges") {
        Var x = Var::parameter(Tensor({2}, 1.0));
        NoGradGuard ng;
        const Var y = ops::square(x);
        CHECK(y.node()->parents.empty());
        CHECK_FALSE(grad_enabled());
    }

    TEST_CASE("conv2d matches a direct loop for several strides and paddings") {
        Rng rng(3);
        for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}, std::pair{2, 0}}) {
            const Tensor x = rng.normal_tensor({2, 5, 9, 8});
            const Tensor w = rng.normal_tensor({7, 5, 3, 3});
            const Var y = ops::conv2d(Var::constant(x), Var::constant(w), Var{}, stride, pad);
            CHECK(max_diff(y.value(), naive_conv(x, w, stride, pad)) < 1e-12);
        }
    }

    TEST_CASE("transposed convolution is the adjoint of convolution") {
        Rng rng(4);
        const Tensor w = rng.normal_tensor({6, 4, 4, 4});  // conv: 6 out, 4 in
        const Tensor x = rng.normal_tensor({1, 4, 8, 8});
        const Tensor y = rng.normal_tensor({1, 6, 4, 4});
        const Tensor cx = ops::conv2d(Var::constant(x), Var::constant(w), Var{}, 2, 1).value();
        // conv_transpose2d weights are [in, out, k, k] with in = conv's out.
        const Tensor ty = ops::conv_transpose2d(Var::constant(y), Var::constant(w), Var{}, 2, 1).value();
        CHECK(dot(cx, y) == doctest::Approx(dot(x, ty)).epsilon(1e-12));
    }

    TEST_CASE("depthwise convolution equals a grouped direct loop") {
        Rng rng(5);
        const Tensor x = rng.normal_tensor({2, 3, 7, 7});
        const Tensor w = rng.normal_tensor({3, 1, 3, 3});
        const Tensor y = ops::depthwise_conv2d(Var::constant(x), Var::constant(w), Var{}, 2, 1).value();
        for (int c = 0; c < 3; ++c) {
            Tensor xc({2, 1, 7, 7}), wc({1, 1, 3, 3});
            for (int s = 0; s < 2; ++s)
                for (int i = 0; i < 49; ++i) xc[s * 49 + i] = x[(s * 3 + c) * 49 + i];
            for (int i = 0; i < 9; ++i) wc[i] = w[c * 9 + i];
            const Tensor ref = naive_conv(xc, wc, 2, 1);
            for (int s = 0; s < 2; ++s)
                for (int i = 0; i < 16; ++i) CHECK(y[(s * 3 + c) * 16 + i] == doctest::Approx(ref[s * 16 + i]));
        }
    }

    TEST_CASE("central difference convolution") {
        Rng rng(6);
        const Tensor w = rng.normal_tensor({4, 3, 3, 3});
        const Var wv = Var::constant(w);

        SUBCASE("theta 0 is vanilla convolution") {
            const Tensor x = rng.normal_tensor({2, 3, 6, 6});
            const Tensor a = cdc_conv(Var::constant(x), wv, Var{}, 0.0).value();
            CHECK(max_diff(a, naive_conv(x, w, 1, 1)) < 1e-12);
        }
        SUBCASE("constant input gives (1 - theta) c sum(w) away from the border") {
            const double c = 0.37, theta = 0.7;
            const Tensor y = cdc_conv(Var::constant(Tensor({1, 3, 6, 6}, c)), wv, Var{}, theta).value();
            for (int o = 0; o < 4; ++o) {
                double ksum = 0.0;
                for (int i = 0; i < 27; ++i) ksum += w[o * 27 + i];
                for (int i = 1; i < 5; ++i)
                    for (int j = 1; j < 5; ++j) CHECK(y.at(0, o, i, j) == doctest::Approx((1 - theta) * c * ksum));
            }
        }
        SUBCASE("linear in the input") {
            const Tensor x1 = rng.normal_tensor({1, 3, 5, 5}), x2 = rng.normal_tensor({1, 3, 5, 5});
            Tensor mix = x1;
            for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.0 * x1[i] - 0.5 * x2[i];
            const Tensor a = cdc_conv(Var::constant(mix), wv, Var{}, 0.7).value();
            const Tensor b1 = cdc_conv(Var::constant(x1), wv, Var{}, 0.7).value();
            const Tensor b2 = cdc_conv(Var::constant(x2), wv, Var{}, 0.7).value();
            Tensor b = b1;
            for (std::size_t i = 0; i < b.size(); ++i) b[i] = 2.0 * b1[i] - 0.5 * b2[i];
            CHECK(max_diff(a, b) < 1e-12);
        }
    }

    TEST_CASE("cross entropy of logits (1, 0, 0) with label 0") {
        const Var logits = Var::constant(Tensor({1, 3}, {1.0, 0.0, 0.0}));
        CHECK(ops::cross_entropy(logits, {0}).item() == doctest::Approx(0.5514).epsilon(1e-4));
        CHECK_THROWS_AS(ops::cross_entropy(logits, {3}), LabelError);
    }

    TEST_CASE("max pooling and nearest resize") {
        const Tensor x({1, 1, 2, 2}, {1, 4, 3, 2});
        CHECK(ops::max_pool2d(Var::constant(x), 2, 2, 0).value()[0] == 4.0);
        const Tensor up = ops::resize_nearest(Var::constant(x), 4, 4).value();
        CHECK(up.at(0, 0, 0, 0) == 1.0);
        CHECK(up.at(0, 0, 1, 3) == 4.0);
        CHECK(up.at(0, 0, 3, 0) == 3.0);
    }

    TEST_CASE("every differentiable op passes a finite-difference check") {
        Rng rng(8);
        Var x = Var::parameter(rng.uniform_tensor({2, 3, 4, 4}, 0.2, 1.0));
        Var w = Var::parameter(rng.normal_tensor({2, 3, 3, 3}, 0.0, 0.3));
        Var b = Var::parameter(rng.normal_tensor({2}));
        Var wt = Var::parameter(rng.normal_tensor({3, 2, 4, 4}, 0.0, 0.3));
        Var dw = Var::parameter(rng.normal_tensor({3, 1, 3, 3}, 0.0, 0.3));
        const LossFn loss = [&] {
            Var y = cdc_conv(x, w, b, 0.6);
            y = ops::tanh(y) + ops::exp(ops::scale(y, 0.1)) + ops::log(ops::square(y) + 1.0);
            Var t = ops::conv_transpose2d(x, wt, Var{}, 2, 1);
            Var d = ops::depthwise_conv2d(ops::sqrt(x), dw, Var{}, 1, 1);
            return ops::sum(ops::square(y)) + ops::mean(ops::abs(t)) + ops::sum(ops::leaky_relu(d, 0.2) / (x + 1.0));
        };
        const ParamList params{{"x", x}, {"w", w}, {"b", b}, {"wt", wt}, {"dw", dw}};
        const GradCheckReport r = fd_gradient(loss, params, 1e-6, rng, 16, 1e-3);
        CHECK(r.max_rel_error < 1e-5);
    }
}
