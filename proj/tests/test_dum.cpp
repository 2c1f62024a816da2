#include <doctest.h>

#include <cmath>

#include "dsdg/dum.hpp"
#include "dsdg/error.hpp"
#include "dsdg/ops.hpp"
#include "dsdg/verify.hpp"

using namespace dsdg;

namespace {

UncertainDepth constant_ud(double mu, double sigma, int size = kDepthSize) {
    return {Tensor({size, size}, mu), Tensor({size, size}, sigma)};
}

}  // namespace

TEST_SUITE("dum") {
    TEST_CASE("zero heads give mean zero and unit sigma") {
        Rng rng(1);
        DepthUncertaintyHead head(64, rng);
        for (Conv2d* c : {&head.mean_head, &head.logvar_head}) {
            c->weight.mutable_value().fill(0.0);
            c->bias.mutable_value().fill(0.0);
        }
        const UncertainDepth ud = dum_forward(head, Var::constant(Tensor({1, 64, 32, 32}, 0.0)));
        CHECK(ud.mu.shape() == Shape{32, 32});
        CHECK(ud.mu.max_abs() == 0.0);
        for (double s : ud.sigma.values()) CHECK(s == 1.0);
    }

    TEST_CASE("heads are deterministic and sigma is positive") {
        Rng rng(2);
        const DepthUncertaintyHead head(64, rng);
        const Var f = Var::constant(rng.normal_tensor({2, 64, 8, 8}));
        const UncertainDepth a = dum_forward(head, f, 1), b = dum_forward(head, f, 1);
        CHECK(a.mu == b.mu);
        CHECK(a.sigma == b.sigma);
        for (double s : a.sigma.values()) CHECK(s > 0.0);
    }

    TEST_CASE("depth sampling") {
        const UncertainDepth ud = constant_ud(0.5, 0.1);
        CHECK(sample_depth(ud, Tensor({32, 32}, 0.0)).grid == ud.mu);
        const DepthMap d = sample_depth(ud, Tensor({32, 32}, 1.0));
        for (double v : d.grid.values()) CHECK(v == doctest::Approx(0.6));
        // unclamped
        const DepthMap big = sample_depth(ud, Tensor({32, 32}, 10.0));
        CHECK(big.grid[0] == doctest::Approx(1.5));
        CHECK_THROWS_AS(sample_depth(ud, Tensor({16, 16}, 0.0)), ShapeError);
    }

    TEST_CASE("depth sampling is affine in the noise") {
        Rng rng(3);
        const UncertainDepth ud{rng.normal_tensor({4, 4}), rng.uniform_tensor({4, 4}, 0.1, 2.0)};
        const Tensor e1 = rng.normal_tensor({4, 4}), e2 = rng.normal_tensor({4, 4});
        Tensor mix = e1;
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.3 * e1[i] + 0.7 * e2[i];
        const Tensor a = sample_depth(ud, e1).grid, b = sample_depth(ud, e2).grid, m = sample_depth(ud, mix).grid;
        for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == doctest::Approx(0.3 * a[i] + 0.7 * b[i]));
    }

    TEST_CASE("KL regularizer") {
        const DepthMap zero = DepthMap::zeros(1);
        CHECK(loss_kl_dum(constant_ud(0.0, 1.0), DepthMap::zeros()) == 0.0);
        CHECK(loss_kl_dum(constant_ud(1.0, 1.0, 1), zero) == doctest::Approx(0.5));
    }

    TEST_CASE("KL regularizer rejects nonpositive sigma and mismatched shapes") {
        CHECK_THROWS_AS(loss_kl_dum(constant_ud(0.0, 0.0), DepthMap::zeros()), DomainError);
        CHECK_THROWS_AS(loss_kl_dum(constant_ud(0.0, 1.0, 8), DepthMap::zeros()), ShapeError);
    }

    TEST_CASE("KL is nonnegative and zero only at the target with unit sigma") {
        Rng rng(4);
        for (int t = 0; t < 50; ++t) {
            const UncertainDepth ud{rng.normal_tensor({3, 3}), rng.uniform_tensor({3, 3}, 0.05, 3.0)};
            CHECK(loss_kl_dum(ud, DepthMap{rng.uniform_tensor({3, 3}, 0.0, 1.0)}) > 0.0);
        }
    }

    TEST_CASE("sigma is stationary at one") {
        Rng rng(5);
        Var mu = Var::parameter(rng.normal_tensor({2, 1, 4, 4}));
        Var logvar = Var::parameter(Tensor({2, 1, 4, 4}, 0.0));
        const Var target = Var::constant(rng.uniform_tensor({2, 1, 4, 4}, 0.0, 1.0));
        backward(ops::sum(loss_kl_dum(DepthDistribution{mu, logvar}, target)));
        CHECK(logvar.grad().max_abs() < 1e-15);
        // the analytic zero agrees with a central difference
        const ParamList p{{"logvar", logvar}};
        const auto r = fd_gradient([&] { return ops::sum(loss_kl_dum(DepthDistribution{mu, logvar}, target)); }, p, 1e-5,
                                   rng, 16);
        CHECK(std::abs(r.numeric) < 1e-8);
    }

    TEST_CASE("inference returns the mean and ignores sigma") {
        Rng rng(6);
        UncertainDepth ud{rng.normal_tensor({32, 32}), rng.uniform_tensor({32, 32}, 0.1, 1.0)};
        const DepthMap a = infer_depth(ud);
        ud.sigma = rng.uniform_tensor({32, 32}, 2.0, 3.0);
        CHECK(infer_depth(ud).grid == a.grid);
        CHECK(a.grid == ud.mu);
    }

    TEST_CASE("batched and unbatched KL agree") {
        Rng rng(7);
        const Tensor mu = rng.normal_tensor({1, 1, 5, 5}), lv = rng.normal_tensor({1, 1, 5, 5}, 0.0, 0.5);
        const Tensor gt = rng.uniform_tensor({5, 5}, 0.0, 1.0);
        const DepthDistribution dist{Var::constant(mu), Var::constant(lv)};
        const double batched = loss_kl_dum(dist, Var::constant(gt.reshaped({1, 1, 5, 5}))).item();
        CHECK(batched == doctest::Approx(loss_kl_dum(to_uncertain_depth(dist, 0), DepthMap{gt})));
    }
}
