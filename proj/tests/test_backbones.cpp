#include <doctest.h>

#include "dsdg/backbones.hpp"
#include "dsdg/error.hpp"
#include "dsdg/ops.hpp"

using namespace dsdg;

namespace {
constexpr BackboneKind kAllKinds[] = {BackboneKind::depthnet, BackboneKind::cdcn, BackboneKind::resnet,
                                      BackboneKind::mobilenetv2};
}

TEST_SUITE("backbones") {
    TEST_CASE("kind names round trip and unknown names fail") {
        for (BackboneKind k : kAllKinds) CHECK(parse_backbone_kind(to_string(k)) == k);
        CHECK_THROWS_AS(parse_backbone_kind("vgg"), ConfigError);
    }

    TEST_CASE("spec validation") {
        BackboneSpec s;
        CHECK_NOTHROW(s.validate());
        s.cdc_theta = 1.5;
        CHECK_THROWS_AS(s.validate(), ConfigError);
        s = {};
        s.width = 0.0;
        CHECK_THROWS_AS(s.validate(), ConfigError);
    }

    TEST_CASE("every kind maps H x W to 64 x H/8 x W/8") {
        for (BackboneKind k : kAllKinds) {
            CAPTURE(to_string(k));
            Rng rng(1);
            const auto net = build_backbone(BackboneSpec{k, 0.7, 0.125}, rng);
            CHECK(net->kind() == k);
            const Var y = net->forward(Var::constant(rng.uniform_tensor({2, 3, 64, 64}, 0.0, 1.0)));
            CHECK(y.shape() == Shape{2, 64, 8, 8});
            CHECK(y.value().all_finite());
        }
    }

    TEST_CASE("full-width parameter counts") {
        Rng rng(2);
        const auto depthnet = build_backbone(BackboneSpec{BackboneKind::depthnet, 0.7, 1.0}, rng);
        const auto cdcn = build_backbone(BackboneSpec{BackboneKind::cdcn, 0.7, 1.0}, rng);
        const double dn = static_cast<double>(count_parameters(depthnet->parameters()));
        const double cd = static_cast<double>(count_parameters(cdcn->parameters()));
        CHECK(std::abs(dn / 2.25e6 - 1.0) < 0.1);
        CHECK(std::abs(cd / 2.33e6 - 1.0) < 0.1);
    }

    TEST_CASE("forward is deterministic on frozen parameters") {
        Rng rng(5);
        const auto net = build_backbone(BackboneSpec{BackboneKind::mobilenetv2, 0.7, 0.125}, rng);
        const Var x = Var::constant(rng.uniform_tensor({1, 3, 32, 32}, 0.0, 1.0));
        CHECK(net->forward(x).value() == net->forward(x).value());
    }
}
