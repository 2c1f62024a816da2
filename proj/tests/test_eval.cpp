#include <doctest.h>

#include <cmath>
#include <set>

#include "dsdg/error.hpp"
#include "dsdg/eval.hpp"
#include "support.hpp"

using namespace dsdg;

namespace {

std::vector<ScoredSample> scored(std::initializer_list<double> live, std::initializer_list<double> spoof) {
    std::vector<ScoredSample> out;
    for (double s : live) out.push_back({s, Label::live, std::nullopt, ""});
    for (double s : spoof) out.push_back({s, Label::spoof, std::string("print"), ""});
    return out;
}

const WarningSink quiet = [](const std::string&) {};

}  // namespace

TEST_SUITE("eval") {
    TEST_CASE("score is the mean of the predicted depth") {
        CHECK(score(UncertainDepth{Tensor({32, 32}, 0.0), Tensor({32, 32}, 1.0)}) == 0.0);
        CHECK(score(UncertainDepth{Tensor({32, 32}, 1.0), Tensor({32, 32}, 1.0)}) == 1.0);
        Tensor board({32, 32});
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) board[i * 32 + j] = (i + j) % 2;
        CHECK(score(UncertainDepth{board, Tensor({32, 32}, 1.0)}) == 0.5);
    }

    TEST_CASE("confusion counts with live as the positive class") {
        const auto s = scored({0.9, 0.5, 0.2}, {0.1, 0.5, 0.7});
        const Confusion c = confusion(s, 0.5);
        CHECK(c.tp == 2);
        CHECK(c.fn == 1);
        CHECK(c.fp == 2);
        CHECK(c.tn == 1);
        CHECK(c.total() == 6);
    }

    TEST_CASE("error rates from counts") {
        CHECK(metrics(Confusion{10, 10, 0, 0}).acer == 0.0);
        const ErrorRates r = metrics(Confusion{9, 8, 2, 1});
        CHECK(r.apcer == 0.2);
        CHECK(r.bpcer == 0.1);
        CHECK(r.acer == 0.15);
    }

    TEST_CASE("degenerate thresholds") {
        const auto s = scored({0.6, 0.8}, {0.1, 0.3});
        const ErrorRates low = metrics(confusion(s, -1.0));
        CHECK(low.apcer == 1.0);
        CHECK(low.bpcer == 0.0);
        const ErrorRates high = metrics(confusion(s, 2.0));
        CHECK(high.apcer == 0.0);
        CHECK(high.bpcer == 1.0);
    }

    TEST_CASE("zero denominators yield zero with a warning") {
        std::vector<std::string> warnings;
        const ErrorRates r = metrics(Confusion{5, 0, 0, 1}, [&](const std::string& w) { warnings.push_back(w); });
        CHECK(r.apcer == 0.0);
        CHECK(r.bpcer == doctest::Approx(1.0 / 6));
        CHECK(warnings.size() == 1);
    }

    TEST_CASE("ACER is the mean of APCER and BPCER for every count vector") {
        for (long fp = 0; fp <= 12; ++fp)
            for (long tn = 0; tn <= 12; ++tn)
                for (long fn = 0; fn <= 12; fn += 3)
                    for (long tp = 0; tp <= 12; tp += 4) {
                        const ErrorRates r = metrics(Confusion{tp, tn, fp, fn}, quiet);
                        const double mean = 0.5 * (r.apcer + r.bpcer);
                        CHECK(std::abs(r.acer - mean) <= std::abs(mean) * 2.3e-16);
                        CHECK((r.apcer >= 0 && r.apcer <= 1 && r.bpcer >= 0 && r.bpcer <= 1));
                    }
    }

    TEST_CASE("equal error rate") {
        SUBCASE("separable") {
            const EerResult e = eer(scored({0.8, 0.9, 0.7}, {0.1, 0.3}));
            CHECK(e.eer == 0.0);
            CHECK(e.threshold == doctest::Approx(0.5));
        }
        SUBCASE("fully inverted") {
            CHECK(eer(scored({0.1, 0.2}, {0.8, 0.9})).eer == 1.0);
        }
        SUBCASE("four samples") {
            const EerResult e = eer(scored({0.9, 0.6}, {0.7, 0.2}));
            CHECK(e.eer == 0.5);
            CHECK(e.threshold == doctest::Approx(0.65));
        }
        SUBCASE("single class") {
            CHECK_THROWS_AS(eer(scored({0.1, 0.2}, {})), LabelError);
        }
        SUBCASE("non-finite score") {
            CHECK_THROWS_AS(eer(scored({NAN}, {0.1})), DomainError);
        }
    }

    TEST_CASE("half total error rate") {
        const auto dev = scored({0.6, 0.8}, {0.2, 0.4});
        CHECK(hter(dev, dev) == eer(dev).eer);
        CHECK(hter(dev, scored({0.55, 0.9}, {0.0, 0.45})) == 0.0);
        CHECK(hter(dev, scored({0.45, 0.7, 0.9, 0.55}, {0.3, 0.52, 0.1, 0.2})) == 0.25);
    }

    TEST_CASE("monotone rates as the threshold rises") {
        Rng rng(1);
        std::vector<ScoredSample> s;
        for (int i = 0; i < 60; ++i)
            s.push_back({rng.uniform(), i % 3 == 0 ? Label::spoof : Label::live, std::nullopt, ""});
        double prev_apcer = 2.0, prev_bpcer = -1.0;
        for (int k = -1; k <= 101; ++k) {
            const ErrorRates r = metrics(confusion(s, k / 100.0));
            CHECK(r.apcer <= prev_apcer);
            CHECK(r.bpcer >= prev_bpcer);
            prev_apcer = r.apcer;
            prev_bpcer = r.bpcer;
        }
    }

    TEST_CASE("leave one type out on a thirteen-type corpus") {
        std::vector<SampleRecord> recs;
        for (int id = 0; id < 3; ++id) {
            SampleRecord live;
            live.image_path = "l" + std::to_string(id);
            live.identity_id = std::to_string(id);
            recs.push_back(live);
            for (int t = 0; t < 13; ++t) {
                SampleRecord sp = live;
                sp.label = Label::spoof;
                sp.spoof_type = "type" + std::to_string(t);
                sp.image_path = "s" + std::to_string(id) + "_" + std::to_string(t);
                recs.push_back(sp);
            }
        }
        const auto folds = leave_one_type_out(recs);
        REQUIRE(folds.size() == 13);
        std::set<std::string> names;
        for (const auto& f : folds) {
            names.insert(f.name);
            for (const auto& r : f.train) CHECK(r.spoof_type != std::optional<std::string>(f.name));
            int live = 0;
            for (const auto& r : f.test) {
                if (r.label == Label::live) ++live;
                else CHECK(*r.spoof_type == f.name);
            }
            CHECK(live == 3);
            CHECK(f.test.size() == 6);
            CHECK(f.train.size() == 3 + 36);
        }
        CHECK(names.size() == 13);
    }

    TEST_CASE("one fold reproduces intra evaluation") {
        const auto test = scored({0.9, 0.4, 0.7}, {0.1, 0.5});
        const Fold fold{"all", {}, {}, std::vector<SampleRecord>(5)};
        const ProtocolReport rep = run_protocol({fold}, Protocol::intra,
                                                [&](const Fold&, const std::vector<SampleRecord>&) { return test; }, quiet);
        REQUIRE(rep.folds.size() == 1);
        const EvalReport direct = evaluate_at(test, eer(test).threshold, quiet);
        CHECK(rep.folds[0].rates.acer == direct.rates.acer);
        CHECK(rep.acer.mean == direct.rates.acer);
        CHECK(rep.acer.stddev == 0.0);
    }

    TEST_CASE("aggregate of three folds") {
        std::vector<EvalReport> folds(3);
        const double acers[] = {0.1, 0.2, 0.6};
        for (int i = 0; i < 3; ++i) folds[i].rates.acer = acers[i];
        const ProtocolReport rep = aggregate(Protocol::cross_type_loo, {"a", "b", "c"}, folds);
        CHECK(rep.acer.mean == doctest::Approx(0.3));
        CHECK(rep.acer.stddev == doctest::Approx(std::sqrt((0.04 + 0.01 + 0.09) / 3)));
        CHECK(mean_std({}).mean == 0.0);
    }

    TEST_CASE("cross dataset requires a dev split and reports HTER") {
        const auto dev = scored({0.6, 0.8}, {0.2, 0.4});
        const auto test = scored({0.45, 0.7, 0.9, 0.55}, {0.3, 0.52, 0.1, 0.2});
        const EvalReport r = evaluate_split(test, dev, Protocol::cross_dataset, quiet);
        REQUIRE(r.hter.has_value());
        CHECK(*r.hter == 0.25);
        CHECK(r.threshold == doctest::Approx(0.5));
        CHECK_THROWS_AS(evaluate_split(test, {}, Protocol::cross_dataset, quiet), ConfigError);
    }

    TEST_CASE("score-file evaluation groups spoof types into folds") {
        auto test = scored({0.9, 0.8}, {0.1, 0.2});
        test[3].spoof_type = "replay";
        const ProtocolReport rep = evaluate_scores(test, {}, Protocol::cross_type_loo, quiet);
        REQUIRE(rep.folds.size() == 2);
        for (const auto& f : rep.folds) CHECK(f.counts.total() == 3);
    }

    TEST_CASE("score files round trip and reject malformed lines") {
        dsdg::test::TempDir dir;
        const auto s = scored({0.9, 0.25}, {0.125});
        write_scores(dir / "s.tsv", s);
        const auto back = read_scores(dir / "s.tsv");
        REQUIRE(back.size() == 3);
        for (int i = 0; i < 3; ++i) {
            CHECK(back[i].score == s[i].score);
            CHECK(back[i].label == s[i].label);
            CHECK(back[i].spoof_type == s[i].spoof_type);
        }
        dsdg::test::write_text(dir / "bad.tsv", "a\tlive\t0.5\nb\tspoof\tnan\n");
        try {
            read_scores(dir / "bad.tsv");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }

    TEST_CASE("protocol names") {
        for (Protocol p : {Protocol::intra, Protocol::cross_type_loo, Protocol::cross_dataset})
            CHECK(parse_protocol(to_string(p)) == p);
        CHECK_THROWS_AS(parse_protocol("loo"), ConfigError);
    }
}
