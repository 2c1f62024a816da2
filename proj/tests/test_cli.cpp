#include <doctest.h>

#include <fstream>
#include <iterator>

#include "dsdg/cli.hpp"
#include "dsdg/error.hpp"
#include "dsdg/eval.hpp"
#include "dsdg/run_config.hpp"
#include "support.hpp"

using namespace dsdg;
using dsdg::test::TempDir;
namespace fs = std::filesystem;

namespace {

int dsdg_cmd(std::vector<std::string> args) {
    args.insert(args.begin(), "dsdg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::dsdg_main(static_cast<int>(argv.size()), argv.data());
}

int fas_cmd(std::vector<std::string> args) {
    args.insert(args.begin(), "fas");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::fas_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// A tiny configuration for end-to-end runs over a toy corpus in `dir`.
fs::path tiny_config(const TempDir& dir) {
    REQUIRE(dsdg_cmd({"synth-toy", "--out", (dir / "toy").string(), "--identities", "2", "--size", "32", "--seed",
                      "1"}) == 0);
    dsdg::test::write_text(dir / "run.cfg",
                           "data.manifest = toy/manifest.tsv\n"
                           "gen.latent_dim = 4\ngen.base_channels = 4\ngen.stages = 2\ngen.steps = 2\n"
                           "gen.batch_size = 2\ngen.lr = 1e-3\n"
                           "generate.n = 3\n"
                           "backbone.width = 0.125\n"
                           "fas.steps = 2\nfas.batch_size = 4\n"
                           "eval.test_manifest = toy/manifest.tsv\n");
    return dir / "run.cfg";
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("defaults") {
        const RunConfig c;
        CHECK(c.gen.weights.lambda_mmd == 50.0);
        CHECK(c.gen.weights.lambda_pair == 5.0);
        CHECK(c.gen.weights.lambda_ort == 1.0);
        CHECK(c.gen.weights.lambda_cls == 10.0);
        CHECK(c.gen.lr == 2e-4);
        CHECK(c.fas.lr == 1e-3);
        CHECK(c.fas.weights.lambda_kl == 1e-3);
        CHECK(c.fas.weights.lambda_g == 0.1);
        CHECK(c.fas.weights.ratio_r == 0.75);
        CHECK(c.generate.n == 20000);
        CHECK(c.backbone.cdc_theta == 0.7);
        CHECK(c.gen.latent_dim == 128);
    }

    TEST_CASE("config text") {
        SUBCASE("round trip through text") {
            RunConfig c;
            c.gen.lr = 0.1 + 0.2;
            c.fas.weights.ratio_r = 0.5;
            c.backbone.kind = BackboneKind::resnet;
            c.data.manifest = "/data/m.tsv";
            CHECK(parse_run_config(c.to_text()) == c);
        }
        SUBCASE("unknown key names the line") {
            try {
                parse_run_config("gen.lr = 1e-3\ngen.learning_rate = 1\n");
                FAIL("expected an error");
            } catch (const Error& e) {
                CHECK(std::string(e.what()).find("gen.learning_rate") != std::string::npos);
                CHECK(std::string(e.what()).find("line 2") != std::string::npos);
            }
        }
        SUBCASE("malformed values") {
            CHECK_THROWS_AS(parse_run_config("gen.steps = ten\n"), Error);
            CHECK_THROWS_AS(parse_run_config("gen.steps 10\n"), Error);
            CHECK_THROWS_AS(parse_run_config("backbone.kind = vgg\n"), Error);
        }
        SUBCASE("validation catches out-of-range values") {
            RunConfig c;
            c.fas.weights.ratio_r = 1.5;
            CHECK_THROWS_AS(c.validate(), ConfigError);
        }
        SUBCASE("relative paths resolve against the config directory") {
            const RunConfig c = parse_run_config("data.manifest = a/m.tsv\n", "/base");
            CHECK(c.data.manifest == fs::path("/base/a/m.tsv"));
        }
        SUBCASE("overrides and diffs") {
            RunConfig c;
            apply_override(c, "fas.lambda_g=0.5");
            CHECK(c.fas.weights.lambda_g == 0.5);
            CHECK(config_diff(RunConfig{}, c) == std::vector<std::string>{"fas.lambda_g"});
            CHECK_THROWS_AS(apply_override(c, "fas.lambda_g"), ConfigError);
            CHECK_THROWS_AS(apply_override(c, "nope=1"), ConfigError);
        }
        SUBCASE("every key reads back what was set") {
            const RunConfig c;
            for (const auto& k : RunConfig::keys()) {
                RunConfig d;
                d.set(k, c.get(k));
                CHECK(d == c);
            }
        }
    }

    TEST_CASE("run directory refuses a different configuration") {
        TempDir dir;
        RunConfig c;
        const RunDir run = RunDir::open(dir / "run", c);
        CHECK(fs::exists(run.snapshot()));
        for (const auto& sub : {run.checkpoints(), run.reports(), run.heatmaps()}) CHECK(fs::is_directory(sub));
        CHECK_NOTHROW(RunDir::open(dir / "run", c));
        CHECK(RunDir::attach(dir / "run").config() == c);
        c.fas.steps = 5;
        try {
            RunDir::open(dir / "run", c);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("fas.steps") != std::string::npos);
        }
    }

    TEST_CASE("exit codes") {
        TempDir dir;
        CHECK(dsdg_cmd({"no-such-command"}) == 1);
        CHECK(dsdg_cmd({"--help"}) == 0);
        CHECK(fas_cmd({"eval", "--scores", (dir / "missing.tsv").string()}) == 1);
        const fs::path cfg = tiny_config(dir);
        CHECK(dsdg_cmd({"train-gen", "-c", cfg.string(), "-r", (dir / "bad").string(), "--set", "nope=1"}) == 1);
        CHECK(dsdg_cmd({"train-gen", "-c", cfg.string(), "-r", (dir / "nan").string(), "--set", "gen.lr=1e300", "--set",
                        "gen.steps=20"}) == 2);
    }

    TEST_CASE("end-to-end pipeline on a toy corpus") {
        TempDir dir;
        const fs::path cfg = tiny_config(dir);
        const std::string a = (dir / "a").string(), b = (dir / "b").string();
        REQUIRE(dsdg_cmd({"train-gen", "-c", cfg.string(), "-r", a}) == 0);
        REQUIRE(dsdg_cmd({"train-gen", "-c", cfg.string(), "-r", b}) == 0);
        CHECK(slurp(dir / "a/checkpoints/generator.ckpt") == slurp(dir / "b/checkpoints/generator.ckpt"));
        // completed artifacts are kept on resume
        CHECK(dsdg_cmd({"train-gen", "-c", cfg.string(), "-r", a}) == 0);

        REQUIRE(dsdg_cmd({"generate", "-r", a}) == 0);
        const auto gen = load_manifest(dir / "a/generated/manifest.tsv");
        CHECK(gen.size() == 6);
        CHECK(dsdg_cmd({"generate", "--ckpt", (dir / "a/checkpoints/generator.ckpt").string(), "--n", "3", "--out",
                        (dir / "standalone").string()}) == 0);
        CHECK(slurp(dir / "standalone/spoof/000002.ppm") == slurp(dir / "a/generated/spoof/000002.ppm"));

        REQUIRE(fas_cmd({"train", "-c", cfg.string(), "-r", a}) == 0);
        const std::string history = slurp(dir / "a/history.log");
        CHECK(history.find("gen\t1\t") != std::string::npos);
        CHECK(history.find("fas\t1\t") != std::string::npos);

        REQUIRE(fas_cmd({"eval", "-r", a}) == 0);
        const auto report = nlohmann::json::parse(slurp(dir / "a/reports/eval.json"));
        CHECK(report["aggregate"].contains("acer"));
        CHECK(read_scores(dir / "a/reports/scores_test.tsv").size() == 6);

        REQUIRE(fas_cmd({"heatmap", "-r", a, "--limit", "2"}) == 0);
        CHECK(fs::exists(dir / "a/heatmaps/000001_sigma.pgm"));
        CHECK(fs::exists(dir / "a/heatmaps/000001_sigma.txt"));
        CHECK_FALSE(fs::exists(dir / "a/heatmaps/000002_mu.pgm"));

        // evaluation of a score file written by the run
        CHECK(fas_cmd({"eval", "--scores", (dir / "a/reports/scores_test.tsv").string(), "--protocol", "cross_type_loo",
                       "--out", (dir / "loo.json").string()}) == 0);
        CHECK(nlohmann::json::parse(slurp(dir / "loo.json"))["folds"].size() == 2);
    }
}
