#include "dsdg/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>

#include "dsdg/error.hpp"
#include "dsdg/eval.hpp"
#include "dsdg/generator.hpp"
#include "dsdg/verify.hpp"

namespace dsdg::cli {

namespace fs = std::filesystem;

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& key : RunConfig::keys()) j[key] = cfg.get(key);
    return j;
}

namespace {

// Options shared by every command that runs inside a run directory.
struct RunOptions {
    std::string config_file;
    std::string run_dir;
    std::vector<std::string> overrides;

    void attach_to(CLI::App& cmd, bool run_required = true) {
        cmd.add_option("-c,--config", config_file, "Configuration file (dotted key = value)");
        auto* run = cmd.add_option("-r,--run", run_dir, "Run directory");
        if (run_required) run->required();
        cmd.add_option("--set", overrides, "Override one key, key=value (repeatable)");
    }

    // Without --config an existing run's snapshot is the base.
    RunConfig load() const {
        RunConfig cfg;
        if (!config_file.empty())
            cfg = load_run_config(config_file);
        else if (!run_dir.empty() && fs::exists(fs::path(run_dir) / "config.snapshot"))
            cfg = RunDir::attach(run_dir).config();
        for (const auto& o : overrides) apply_override(cfg, o);
        cfg.validate();
        return cfg;
    }
};

// Checkpoints are written beside the target and renamed into place, so a file
// at the final path is always complete.
template <class Save>
void save_atomically(const fs::path& path, Save save) {
    fs::path tmp = path;
    tmp += ".partial";
    save(tmp);
    fs::rename(tmp, path);
}

void log_line(std::ostream& out, const std::string& line) {
    out << line << '\n';
    out.flush();
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(8) << v;
    return os.str();
}

int skip_complete(const fs::path& artifact, const char* what) {
    std::cerr << what << " already complete: " << artifact.string() << '\n';
    return 0;
}

// --- dsdg commands -------------------------------------------------------------

int cmd_train_gen(const RunOptions& opts) {
    const RunConfig cfg = opts.load();
    const RunDir run = RunDir::open(opts.run_dir, cfg);
    if (fs::exists(run.generator_checkpoint())) return skip_complete(run.generator_checkpoint(), "train-gen");
    if (cfg.data.manifest.empty()) throw ConfigError("data.manifest is required");

    const auto pairs = build_pairs(load_manifest(cfg.data.manifest), parse_pairing(cfg.data.pairing));
    GeneratorConfig arch;
    arch.latent_dim = cfg.gen.latent_dim;
    arch.base_channels = cfg.gen.base_channels;
    arch.stages = cfg.gen.stages;
    GenTrainConfig tc;
    tc.steps = cfg.gen.steps;
    tc.batch_size = cfg.gen.batch_size;
    tc.lr = cfg.gen.lr;
    tc.weights = cfg.gen.weights;
    tc.seed = cfg.gen.seed;

    std::ofstream history = run.open_history();
    log_line(history, "# train-gen step total kl rec mmd pair ort cls");
    const TrainedGenerator tg = train_generator(pairs, arch, tc, nullptr, [&](const GenStepRecord& r) {
        const auto& p = r.parts;
        log_line(history, "gen\t" + std::to_string(r.step) + '\t' + fmt(r.total) + '\t' + fmt(p.kl) + '\t' + fmt(p.rec) +
                              '\t' + fmt(p.mmd) + '\t' + fmt(p.pair) + '\t' + fmt(p.ort) + '\t' + fmt(p.cls));
        if (r.step % 50 == 0 || r.step + 1 == tc.steps)
            std::cerr << "train-gen step " << r.step << " loss " << fmt(r.total) << '\n';
        return true;
    });
    save_atomically(run.generator_checkpoint(), [&](const fs::path& p) { save_generator(p, tg, to_json(cfg)); });
    std::cout << "generator checkpoint: " << run.generator_checkpoint().string() << '\n';
    return 0;
}

struct GenerateOptions {
    RunOptions run;
    std::string checkpoint;
    std::string out;
    std::optional<int> n;
    std::optional<std::uint64_t> seed;
};

// Writes live/, spoof/, depth/ and manifest.tsv under `out`.
void write_generated(const TrainedGenerator& tg, int n, std::uint64_t seed, const fs::path& out) {
    for (const char* sub : {"live", "spoof", "depth"}) fs::create_directories(out / sub);
    std::vector<SampleRecord> records;
    records.reserve(2 * static_cast<std::size_t>(std::max(n, 0)));
    generate_pairs_stream(tg.model, n, seed, tg.live_depth_prior, [&](std::size_t i, PairedSample&& p, const GeneratedLatents&) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "%06zu", i);
        SampleRecord live{out / "live" / (std::string(stem) + ".ppm"), Label::live, p.identity_id, std::nullopt,
                          out / "depth" / (std::string(stem) + ".txt")};
        SampleRecord spoof{out / "spoof" / (std::string(stem) + ".ppm"), Label::spoof, p.identity_id, p.spoof_type,
                           std::nullopt};
        write_ppm(live.image_path, p.live);
        write_depth_text(*live.depth_path, p.live_depth);
        write_ppm(spoof.image_path, p.spoof);
        records.push_back(std::move(live));
        records.push_back(std::move(spoof));
        if ((i + 1) % 1000 == 0) std::cerr << "generated " << i + 1 << " pairs\n";
    });
    save_atomically(out / "manifest.tsv", [&](const fs::path& p) { write_manifest(p, records); });
    std::cout << "generated " << n << " pairs: " << (out / "manifest.tsv").string() << '\n';
}

int cmd_generate(GenerateOptions o) {
    if (!o.checkpoint.empty()) {
        // Standalone form: checkpoint in, directory out.
        if (!o.run.run_dir.empty()) throw ConfigError("use either --ckpt or --run, not both");
        if (o.out.empty()) throw ConfigError("--out is required with --ckpt");
        const int n = o.n.value_or(RunConfig{}.generate.n);
        if (n < 0) throw ConfigError("--n must be nonnegative");
        write_generated(load_generator(o.checkpoint), n, o.seed.value_or(0), fs::absolute(o.out));
        return 0;
    }
    if (o.run.run_dir.empty()) throw ConfigError("dsdg generate needs --run or --ckpt");
    if (o.n) o.run.overrides.push_back("generate.n=" + std::to_string(*o.n));
    if (o.seed) o.run.overrides.push_back("generate.seed=" + std::to_string(*o.seed));
    const RunConfig cfg = o.run.load();
    const RunDir run = RunDir::open(o.run.run_dir, cfg);
    const fs::path out = o.out.empty() ? run.generated() : fs::absolute(o.out);
    if (fs::exists(out / "manifest.tsv")) return skip_complete(out / "manifest.tsv", "generate");
    if (!fs::exists(run.generator_checkpoint()))
        throw ResolutionError("no generator checkpoint in " + run.root().string() + "; run train-gen first");
    write_generated(load_generator(run.generator_checkpoint()), cfg.generate.n, cfg.generate.seed, out);
    return 0;
}

struct ToyOptions {
    std::string out;
    int identities = 8;
    std::vector<std::string> types{"print", "replay"};
    int size = 64;
    std::uint64_t seed = 0;
};

int cmd_synth_toy(const ToyOptions& o) {
    const auto pairs = synth_toy_dataset(o.identities, o.types, o.size, o.seed);
    const auto records = export_pairs(o.out, pairs);
    std::cout << "wrote " << records.size() << " records: " << (fs::path(o.out) / "manifest.tsv").string() << '\n';
    return 0;
}

// --- fas commands --------------------------------------------------------------

std::vector<LabeledImage> generated_pool(const RunConfig& cfg, const RunDir& run) {
    fs::path manifest = cfg.fas.generated_manifest;
    if (manifest.empty() && fs::exists(run.generated() / "manifest.tsv")) manifest = run.generated() / "manifest.tsv";
    if (manifest.empty()) return {};
    return load_labeled(load_manifest(manifest));
}

int cmd_train_fas(const RunOptions& opts) {
    const RunConfig cfg = opts.load();
    const RunDir run = RunDir::open(opts.run_dir, cfg);
    if (fs::exists(run.fas_checkpoint())) return skip_complete(run.fas_checkpoint(), "fas train");
    if (cfg.data.manifest.empty()) throw ConfigError("data.manifest is required");

    const auto real = load_labeled(load_manifest(cfg.data.manifest));
    const auto generated = generated_pool(cfg, run);
    Rng rng(cfg.fas.seed);
    FasModel model(cfg.backbone, rng);
    FasTrainConfig tc{cfg.fas.steps, cfg.fas.batch_size, cfg.fas.lr, cfg.fas.weights};

    std::ofstream history = run.open_history();
    log_line(history, "# fas-train step total mse kl gen_mse gen_kl n_real n_generated");
    train_fas(model, real, generated, tc, rng, [&](const FasStepRecord& r) {
        const auto& t = r.terms;
        log_line(history, "fas\t" + std::to_string(r.step) + '\t' + fmt(r.total) + '\t' + fmt(t.mse) + '\t' + fmt(t.kl) +
                              '\t' + fmt(t.gen_mse) + '\t' + fmt(t.gen_kl) + '\t' + std::to_string(r.n_real) + '\t' +
                              std::to_string(r.n_generated));
        if (r.step % 20 == 0 || r.step + 1 == tc.steps)
            std::cerr << "fas step " << r.step << " loss " << fmt(r.total) << '\n';
        return true;
    });
    save_atomically(run.fas_checkpoint(), [&](const fs::path& p) { save_fas_model(p, model, to_json(cfg)); });
    std::cout << "fas checkpoint: " << run.fas_checkpoint().string() << '\n';
    return 0;
}

std::vector<ScoredSample> score_manifest(const FasModel& model, const fs::path& manifest) {
    std::vector<ScoredSample> out;
    for (const auto& r : load_manifest(manifest)) {
        ScoredSample s;
        s.score = score(model, read_image(r.image_path));
        s.label = r.label;
        s.spoof_type = r.spoof_type;
        s.source = r.image_path.string();
        out.push_back(std::move(s));
    }
    return out;
}

struct EvalOptions {
    RunOptions run;
    std::string scores;
    std::string dev_scores;
    std::string protocol;
    std::string out;
};

int cmd_eval(const EvalOptions& o) {
    std::vector<ScoredSample> test, dev;
    std::string protocol_name = o.protocol;
    fs::path report_path = o.out;
    if (!o.scores.empty()) {
        test = read_scores(o.scores);
        if (!o.dev_scores.empty()) dev = read_scores(o.dev_scores);
        if (protocol_name.empty()) protocol_name = "intra";
    } else {
        if (o.run.run_dir.empty()) throw ConfigError("fas eval needs --scores or --run");
        const RunDir run = o.run.config_file.empty() && o.run.overrides.empty() ? RunDir::attach(o.run.run_dir)
                                                                                 : RunDir::open(o.run.run_dir, o.run.load());
        const RunConfig& cfg = run.config();
        if (cfg.eval.test_manifest.empty()) throw ConfigError("eval.test_manifest is required");
        const FasModel model = load_fas_model(run.fas_checkpoint());
        test = score_manifest(model, cfg.eval.test_manifest);
        write_scores(run.reports() / "scores_test.tsv", test);
        if (!cfg.eval.dev_manifest.empty()) {
            dev = score_manifest(model, cfg.eval.dev_manifest);
            write_scores(run.reports() / "scores_dev.tsv", dev);
        }
        if (protocol_name.empty()) protocol_name = cfg.eval.protocol;
        if (report_path.empty()) report_path = run.reports() / "eval.json";
    }
    const Protocol protocol = parse_protocol(protocol_name);
    const ProtocolReport report = evaluate_scores(test, dev, protocol);
    const std::string json = to_json(report).dump(2);
    if (report_path.empty()) {
        std::cout << json << '\n';
    } else {
        if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
        std::ofstream(report_path) << json << '\n';
        std::cout << "report: " << report_path.string() << '\n';
    }
    std::cerr << "protocol " << protocol_name << ": APCER " << fmt(report.apcer.mean) << " BPCER "
              << fmt(report.bpcer.mean) << " ACER " << fmt(report.acer.mean) << " EER " << fmt(report.eer.mean);
    if (protocol == Protocol::cross_dataset) std::cerr << " HTER " << fmt(report.hter.mean);
    std::cerr << '\n';
    return 0;
}

struct HeatmapOptions {
    std::string run_dir;
    std::string checkpoint;
    std::string manifest;
    std::string out;
    int limit = 0;
};

int cmd_heatmap(const HeatmapOptions& o) {
    fs::path checkpoint = o.checkpoint, manifest = o.manifest, out = o.out;
    if (!o.run_dir.empty()) {
        const RunDir run = RunDir::attach(o.run_dir);
        if (checkpoint.empty()) checkpoint = run.fas_checkpoint();
        if (manifest.empty()) manifest = run.config().eval.test_manifest;
        if (out.empty()) out = run.heatmaps();
    }
    if (checkpoint.empty()) throw ConfigError("fas heatmap needs --run or --checkpoint");
    if (manifest.empty()) throw ConfigError("fas heatmap needs --manifest (or eval.test_manifest in the run)");
    if (out.empty()) throw ConfigError("fas heatmap needs --out when no run directory is given");
    if (o.limit < 0) throw ConfigError("--limit must be nonnegative");

    const FasModel model = load_fas_model(checkpoint);
    fs::create_directories(out);
    std::vector<SampleRecord> records = load_manifest(manifest);
    if (o.limit > 0 && static_cast<std::size_t>(o.limit) < records.size()) records.resize(o.limit);

    std::vector<std::pair<std::string, UncertainDepth>> maps;
    double sigma_max = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "%06zu", i);
        UncertainDepth ud = model.predict(read_image(records[i].image_path));
        sigma_max = std::max(sigma_max, ud.sigma.max_abs());
        maps.emplace_back(stem, std::move(ud));
    }
    // sigma images share one scale so brightness is comparable across files.
    std::ofstream index(out / "index.tsv");
    index << "# stem\timage\tlabel\tmean_mu\tmean_sigma\tsigma_scale\n";
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const auto& [stem, ud] = maps[i];
        Tensor sigma = ud.sigma;
        write_pgm(out / (stem + "_mu.pgm"), ud.mu);
        write_depth_text(out / (stem + "_sigma.txt"), DepthMap{sigma});
        if (sigma_max > 0.0)
            for (double& v : sigma.values()) v /= sigma_max;
        write_pgm(out / (stem + "_sigma.pgm"), sigma);
        index << stem << '\t' << records[i].image_path.string() << '\t' << to_string(records[i].label) << '\t'
              << fmt(ud.mu.mean()) << '\t' << fmt(ud.sigma.mean()) << '\t' << fmt(sigma_max) << '\n';
    }
    std::cout << "wrote " << maps.size() << " heatmaps to " << out.string() << '\n';
    return 0;
}

int cmd_verify(std::uint64_t seed) {
    const auto results = run_oracle_suite(seed);
    bool all = true;
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        all = all && r.passed;
    }
    return all ? 0 : 1;
}

// Maps library exceptions onto exit codes.
int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed checkpoint or report: " << e.what() << '\n';
        return 1;
    }
}

int parse_or_exit(CLI::App& app, int argc, const char* const* argv) {
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? -1 : 1;  // -1: help printed, nothing to run
    }
    return 0;
}

}  // namespace

int dsdg_main(int argc, const char* const* argv) {
    CLI::App app{"Spoof-pair generator: training, sampling and toy corpora"};
    app.require_subcommand(1);

    RunOptions train_opts;
    auto* train = app.add_subcommand("train-gen", "Train the generator on a paired manifest");
    train_opts.attach_to(*train);

    GenerateOptions gen_opts;
    auto* generate = app.add_subcommand("generate", "Sample pairs from a trained generator");
    gen_opts.run.attach_to(*generate, false);
    generate->add_option("--ckpt", gen_opts.checkpoint, "Generator checkpoint (standalone form)");
    generate->add_option("--n", gen_opts.n, "Number of pairs (generate.n)");
    generate->add_option("--seed", gen_opts.seed, "Sampling seed (generate.seed)");
    generate->add_option("--out", gen_opts.out, "Output directory (default: <run>/generated)");

    ToyOptions toy;
    auto* synth = app.add_subcommand("synth-toy", "Write a synthetic paired corpus with a manifest");
    synth->add_option("--out", toy.out, "Output directory")->required();
    synth->add_option("--identities", toy.identities, "Number of identities");
    synth->add_option("--types", toy.types, "Spoof type names")->delimiter(',');
    synth->add_option("--size", toy.size, "Image side (multiple of 32)");
    synth->add_option("--seed", toy.seed, "Seed");

    if (const int rc = parse_or_exit(app, argc, argv); rc != 0) return rc < 0 ? 0 : rc;
    return guarded([&] {
        if (*train) return cmd_train_gen(train_opts);
        if (*generate) return cmd_generate(gen_opts);
        return cmd_synth_toy(toy);
    });
}

int fas_main(int argc, const char* const* argv) {
    CLI::App app{"Depth-supervised anti-spoofing: training, evaluation, heatmaps and oracles"};
    app.require_subcommand(1);

    RunOptions train_opts;
    auto* train = app.add_subcommand("train", "Train backbone and uncertainty head");
    train_opts.attach_to(*train);

    EvalOptions eval_opts;
    auto* eval = app.add_subcommand("eval", "Evaluate a score file or a trained run");
    eval_opts.run.attach_to(*eval, false);
    eval->add_option("--scores", eval_opts.scores, "Test scores: path<TAB>label<TAB>score[<TAB>spoof_type]");
    eval->add_option("--dev", eval_opts.dev_scores, "Development scores for threshold selection");
    eval->add_option("--protocol", eval_opts.protocol, "intra, cross_type_loo or cross_dataset");
    eval->add_option("--out", eval_opts.out, "Report path (JSON)");

    HeatmapOptions hm;
    auto* heatmap = app.add_subcommand("heatmap", "Export predicted depth and sigma maps");
    heatmap->add_option("-r,--run", hm.run_dir, "Run directory");
    heatmap->add_option("--checkpoint", hm.checkpoint, "FAS checkpoint (overrides the run's)");
    heatmap->add_option("--manifest", hm.manifest, "Images to export");
    heatmap->add_option("--out", hm.out, "Output directory (default: <run>/heatmaps)");
    heatmap->add_option("--limit", hm.limit, "Export at most this many images (0: all)");

    std::uint64_t verify_seed = 0;
    auto* verify = app.add_subcommand("verify", "Run the oracle suite; exit 0 iff every oracle passes");
    verify->add_option("--seed", verify_seed, "Seed for random check points");

    if (const int rc = parse_or_exit(app, argc, argv); rc != 0) return rc < 0 ? 0 : rc;
    return guarded([&] {
        if (*train) return cmd_train_fas(train_opts);
        if (*eval) return cmd_eval(eval_opts);
        if (*heatmap) return cmd_heatmap(hm);
        return cmd_verify(verify_seed);
    });
}

}  // namespace dsdg::cli
