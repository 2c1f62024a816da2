#include <doctest.h>

#include <cmath>

#include "dsdg/ops.hpp"
#include "dsdg/verify.hpp"

using namespace dsdg;

TEST_SUITE("verify") {
    TEST_CASE("relative error") {
        CHECK(relative_error(1.0, 1.0) == 0.0);
        CHECK(relative_error(2.0, 1.0) == 0.5);
        CHECK(relative_error(1e-12, 0.0) == doctest::Approx(1e-4));  // floor of 1e-8 in the denominator
    }

    TEST_CASE("finite differences of a quadratic are exact up to rounding") {
        Rng rng(1);
        Var x = Var::parameter(rng.normal_tensor({6}));
        const ParamList p{{"x", x}};
        const auto r = fd_gradient([&] { return ops::sum(ops::square(x) * 3.0 + x); }, p, 1e-4, rng, 6);
        CHECK(r.coordinates == 6);
        CHECK(r.max_rel_error < 1e-9);
    }

    TEST_CASE("central difference error is second order in the step") {
        // f = exp(x) at x = 0.3: the truncation error is h^2 f'''/6
        auto err = [](double h) {
            Rng rng(2);
            Var x = Var::parameter(Tensor({1}, 0.3));
            const ParamList p{{"x", x}};
            const auto r = fd_gradient([&] { return ops::sum(ops::exp(x)); }, p, h, rng, 1);
            return std::abs(r.numeric - r.analytic);
        };
        const double e1 = err(1e-2), e2 = err(5e-3);
        CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.01));
        CHECK(e1 == doctest::Approx(1e-4 * std::exp(0.3) / 6).epsilon(0.01));
    }

    TEST_CASE("kink detection skips coordinates that straddle a ReLU corner") {
        Rng rng(3);
        Var x = Var::parameter(Tensor({3}, {1e-7, 0.5, -0.5}));
        const ParamList p{{"x", x}};
        const auto r = fd_gradient([&] { return ops::sum(ops::relu(x)); }, p, 1e-5, rng, 3, 1e-3);
        CHECK(r.skipped_kinks == 1);
        CHECK(r.max_rel_error < 1e-9);
    }

    TEST_CASE("Monte-Carlo KL") {
        Rng rng(4);
        const std::vector<double> zero{0.0, 0.0}, one{1.0, 1.0};
        const McEstimate same = mc_kl(zero, one, zero, 100000, rng);
        CHECK(std::abs(same.value) < 1e-12);  // the log ratio is identically zero
        const std::vector<double> mu{1.0}, sigma{1.0}, target{0.0};
        const McEstimate shifted = mc_kl(mu, sigma, target, 200000, rng);
        CHECK(std::abs(shifted.value - 0.5) < 4 * shifted.stderr_);
        const std::vector<double> mu2{0.3, -0.2}, s2{0.5, 1.5}, t2{0.1, 0.0};
        const McEstimate mean = mc_kl(mu2, s2, t2, 200000, rng, Reduction::mean);
        double closed = 0.0;
        for (int i = 0; i < 2; ++i)
            closed += 0.5 * ((mu2[i] - t2[i]) * (mu2[i] - t2[i]) + s2[i] * s2[i] - 1 - std::log(s2[i] * s2[i])) / 2;
        CHECK(std::abs(mean.value - closed) < 4 * mean.stderr_);
    }

    TEST_CASE("sweep and fast EER agree on random score sets") {
        Rng rng(5);
        for (int t = 0; t < 200; ++t) {
            std::vector<ScoredSample> s;
            const int n = 2 + static_cast<int>(rng.index(40));
            for (int i = 0; i < n; ++i)
                s.push_back({std::round(rng.uniform() * 20) / 20, i % 2 ? Label::live : Label::spoof, std::nullopt, ""});
            const EerResult a = eer(s), b = sweep_eer(s);
            CHECK(a.eer == b.eer);
            CHECK(a.threshold == b.threshold);
        }
    }

    TEST_CASE("the oracle suite passes on a fixed seed") {
        Rng rng(6);
        for (const auto& r : cdc_oracles(rng)) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
        for (const auto& r : metric_oracles(rng, 100, 64)) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
        for (const auto& r : gradient_oracles(rng, 2)) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
    }
}
