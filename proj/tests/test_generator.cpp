#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dsdg/error.hpp"
#include "dsdg/generator.hpp"
#include "dsdg/ops.hpp"
#include "support.hpp"

using namespace dsdg;

namespace {

Var row(std::vector<double> v) {
    const int d = static_cast<int>(v.size());
    return Var::constant(Tensor({1, d}, std::move(v)));
}

GaussianVars standard(int n, int d) {
    return {Var::constant(Tensor({n, d}, 0.0)), Var::constant(Tensor({n, d}, 1.0))};
}

GeneratorConfig tiny_arch() { return GeneratorConfig{32, 8, 4, 2, 2}; }

bool same_params(const ParamList& a, const ParamList& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].name != b[i].name || !(a[i].var.value() == b[i].var.value())) return false;
    return true;
}

}  // namespace

TEST_SUITE("generator") {
    TEST_CASE("classification loss") {
        Rng rng(1);
        Linear fc(4, 3, rng);
        SUBCASE("zero classifier gives log K") {
            fc.weight.mutable_value().fill(0.0);
            fc.bias.mutable_value().fill(0.0);
            const Var z = Var::constant(rng.normal_tensor({5, 4}));
            CHECK(loss_cls(fc, z, {0, 1, 2, 0, 1}).item() == doctest::Approx(std::log(3.0)));
        }
        SUBCASE("logits (1, 0, 0) with the first class") {
            fc = Linear(3, 3, rng);
            fc.weight.mutable_value() = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
            fc.bias.mutable_value().fill(0.0);
            CHECK(loss_cls(fc, row({1, 0, 0}), {0}).item() == doctest::Approx(0.5514).epsilon(1e-4));
        }
    }

    TEST_CASE("orthogonality loss is the absolute cosine") {
        CHECK(loss_ort(row({1, 0}), row({0, 1})).item() == doctest::Approx(0.0));
        CHECK(loss_ort(row({1, 1}), row({2, 2})).item() == doctest::Approx(1.0));
        CHECK(loss_ort(row({1, 1}), row({-2, -2})).item() == doctest::Approx(1.0));
        CHECK(loss_ort(row({1, 0}), row({1, 1})).item() == doctest::Approx(1.0 / std::numbers::sqrt2));
        CHECK_THROWS_AS(loss_ort(row({0, 0}), row({1, 1})), DomainError);
        CHECK_THROWS_AS(loss_ort(row({1, 0}), row({1, 1, 1})), ShapeError);
    }

    TEST_CASE("latent KL") {
        CHECK(loss_kl_gen(standard(3, 5), standard(3, 5), standard(3, 5)).item() == doctest::Approx(0.0));

        LatentTriple t;
        t.zt_s = {{1.0, 0.0}, {1.0, 1.0}};
        t.zi_s = {{0.0, 0.0}, {1.0, 1.0}};
        t.zi_l = {{0.0, 0.0}, {1.0, 1.0}};
        CHECK(loss_kl_gen(t) == doctest::Approx(0.5));

        t.zt_s.sigma[0] = 0.0;
        CHECK_THROWS_AS(loss_kl_gen(t), DomainError);
    }

    TEST_CASE("batched KL is the per-sample sum averaged over the batch") {
        GaussianVars a = standard(2, 3);
        a.mu.mutable_value()[0] = 2.0;  // sample 0 contributes 2, sample 1 contributes 0
        CHECK(loss_kl_gen(a, standard(2, 3), standard(2, 3)).item() == doctest::Approx(1.0));
    }

    TEST_CASE("reconstruction loss is mean absolute error over both images") {
        const Var img = Var::constant(Tensor({1, 3, 4, 4}, 0.3));
        CHECK(loss_rec(img, img, img, img).item() == doctest::Approx(0.0));
        const Var off = Var::constant(Tensor({1, 3, 4, 4}, 0.4));
        CHECK(loss_rec(img, off, img, img).item() == doctest::Approx(0.1));
        CHECK_THROWS_AS(loss_rec(img, img, Var::constant(Tensor({1, 3, 2, 2})), img), ShapeError);
    }

    TEST_CASE("identity discrepancy compares per-sample means") {
        CHECK(loss_mmd(row({1, 1}), row({0, 0})).item() == doctest::Approx(1.0));
        CHECK(loss_mmd(row({2, 0}), row({0, 2})).item() == doctest::Approx(0.0));
    }

    TEST_CASE("pair loss with channel-mean features") {
        const ChannelMeanEmbedder emb;
        Tensor a({1, 3, 4, 4}, 0.2);
        Tensor b = a;
        for (int i = 0; i < 16; ++i) b[16 + i] += 1.0;  // channel 1 shifted by one
        CHECK(loss_pair(emb, Var::constant(a), Var::constant(a)).item() == doctest::Approx(0.0));
        CHECK(loss_pair(emb, Var::constant(a), Var::constant(b)).item() == doctest::Approx(1.0));
    }

    TEST_CASE("total loss weights with every part equal to one") {
        const GenLossParts<double> ones{1, 1, 1, 1, 1, 1};
        const GenLossWeights w;
        CHECK(gen_total_loss(ones, w, GenMode::paired) == doctest::Approx(68.0));
        CHECK(gen_total_loss(ones, w, GenMode::unpaired) == doctest::Approx(13.0));
        GenLossWeights neg;
        neg.lambda_pair = -1.0;
        CHECK_THROWS_AS(gen_total_loss(ones, neg, GenMode::paired), ConfigError);
    }

    TEST_CASE("reparameterization") {
        const LatentGaussian g{{1.0, -2.0}, {0.5, 2.0}};
        const std::vector<double> eps{2.0, -1.0};
        CHECK(reparameterize(g, eps) == std::vector<double>{2.0, -4.0});
        const std::vector<double> zero{0.0, 0.0};
        CHECK(reparameterize(g, zero) == g.mu);
        CHECK_THROWS_AS(reparameterize(g, std::vector<double>{1.0}), ShapeError);
    }

    TEST_CASE("zeroed heads map any image to the standard normal") {
        Generator g(tiny_arch(), 3);
        for (auto& h : g.enc_l.heads) {
            h.weight.mutable_value().fill(0.0);
            h.bias.mutable_value().fill(0.0);
        }
        const LatentGaussian z = g.encode_live(Image({3, 32, 32}, 0.0));
        REQUIRE(z.dim() == 8);
        for (std::size_t i = 0; i < z.dim(); ++i) {
            CHECK(z.mu[i] == 0.0);
            CHECK(z.sigma[i] == 1.0);
        }
    }

    TEST_CASE("decoder outputs an image pair in [0, 1]") {
        const Generator g(tiny_arch(), 4);
        const std::vector<double> z(8, 0.3);
        const auto [live, spoof] = g.decode(z, z, z);
        CHECK(live.shape() == Shape{3, 32, 32});
        CHECK(spoof.shape() == Shape{3, 32, 32});
        for (double v : spoof.values()) CHECK((v >= 0.0 && v <= 1.0));
    }

    TEST_CASE("generation") {
        const Generator g(tiny_arch(), 5);
        const DepthMap depth = toy_live_depth();

        SUBCASE("zero samples is empty and negative counts are rejected") {
            CHECK(generate_pairs(g, 0, 1, depth).empty());
            CHECK_THROWS_AS(generate_pairs(g, -1, 1, depth), ConfigError);
        }
        SUBCASE("the live identity latent copies the spoof identity latent") {
            int seen = 0;
            generate_pairs_stream(g, 5, 9, depth, [&](std::size_t i, PairedSample&& p, const GeneratedLatents& z) {
                CHECK(i == static_cast<std::size_t>(seen++));
                CHECK(z.zi_l == z.zi_s);
                CHECK(p.spoof_depth.is_zero());
                CHECK(p.live_depth.grid == depth.grid);
                CHECK(p.spoof_type == kGeneratedSpoofType);
            }, 2);
            CHECK(seen == 5);
        }
        SUBCASE("same seed gives identical samples; chunking changes only rounding") {
            const auto a = generate_pairs(g, 4, 7, depth);
            const auto again = generate_pairs(g, 4, 7, depth);
            std::vector<PairedSample> b;
            generate_pairs_stream(g, 4, 7, depth, [&](std::size_t, PairedSample&& p, const GeneratedLatents&) {
                b.push_back(std::move(p));
            }, 3);
            REQUIRE(b.size() == 4);
            for (int i = 0; i < 4; ++i) {
                CHECK(a[i].live == again[i].live);
                CHECK(a[i].spoof == again[i].spoof);
                for (std::size_t k = 0; k < a[i].spoof.size(); ++k) {
                    CHECK(std::abs(a[i].live[k] - b[i].live[k]) < 1e-12);
                    CHECK(std::abs(a[i].spoof[k] - b[i].spoof[k]) < 1e-12);
                }
            }
            const auto c = generate_pairs(g, 4, 8, depth);
            CHECK_FALSE(a[0].spoof == c[0].spoof);
        }
    }

    TEST_CASE("spoof type index folds unseen names into one class") {
        const SpoofTypeIndex idx({"print", "replay", kUnknownSpoofType});
        CHECK(idx.index("replay") == 1);
        CHECK(idx.index("mask") == 2);
    }

    TEST_CASE("training") {
        const auto corpus = synth_toy_dataset(3, {"print", "replay"}, 32, 1);
        GenTrainConfig cfg;
        cfg.batch_size = 4;
        cfg.lr = 1e-3;
        cfg.seed = 6;

        SUBCASE("zero steps leaves the initial parameters") {
            cfg.steps = 0;
            const auto tg = train_generator(corpus, tiny_arch(), cfg);
            CHECK(tg.history.empty());
            Rng rng(6);
            GeneratorConfig arch = tiny_arch();
            arch.n_spoof_types = tg.spoof_types.size();
            const Generator fresh(arch, rng);
            CHECK(same_params(tg.model.parameters(), fresh.parameters()));
        }
        SUBCASE("same seed reproduces the loss history and weights") {
            cfg.steps = 3;
            const auto a = train_generator(corpus, tiny_arch(), cfg);
            const auto b = train_generator(corpus, tiny_arch(), cfg);
            REQUIRE(a.history.size() == 3);
            for (int i = 0; i < 3; ++i) CHECK(a.history[i].total == b.history[i].total);
            CHECK(same_params(a.model.parameters(), b.model.parameters()));
            for (const auto& h : a.history) CHECK(std::isfinite(h.total));
        }
        SUBCASE("the callback can stop training early") {
            cfg.steps = 10;
            const auto tg = train_generator(corpus, tiny_arch(), cfg, nullptr,
                                            [](const GenStepRecord& r) { return r.step < 1; });
            CHECK(tg.history.size() == 2);
        }
        SUBCASE("checkpoint round trip") {
            cfg.steps = 1;
            const auto tg = train_generator(corpus, tiny_arch(), cfg);
            dsdg::test::TempDir dir;
            save_generator(dir / "g.ckpt", tg, nlohmann::json{{"note", "x"}});
            nlohmann::json meta;
            const auto back = load_generator(dir / "g.ckpt", &meta);
            CHECK(meta["note"] == "x");
            CHECK(same_params(back.model.parameters(), tg.model.parameters()));
            CHECK(back.spoof_types.names() == tg.spoof_types.names());
            CHECK(back.live_depth_prior.grid == tg.live_depth_prior.grid);
        }
    }
}
