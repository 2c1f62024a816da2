#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "dsdg/backbones.hpp"
#include "dsdg/fas_train.hpp"
#include "dsdg/generator.hpp"

namespace dsdg {

// Every tunable of a run. Text form is one `dotted.key = value` per line;
// '#' starts a comment. Unknown keys are rejected.
struct RunConfig {
    struct Data {
        std::filesystem::path manifest;
        std::string pairing = "by_identity";
    } data;

    struct Gen {
        int latent_dim = 128;
        int base_channels = 16;
        int stages = 4;
        int steps = 1000;
        int batch_size = 16;
        double lr = 2e-4;
        std::uint64_t seed = 0;
        GenLossWeights weights;
    } gen;

    struct Generate {
        int n = 20000;
        std::uint64_t seed = 0;
    } generate;

    BackboneSpec backbone;

    struct Fas {
        int steps = 1000;
        int batch_size = 8;
        double lr = 1e-3;
        std::uint64_t seed = 0;
        FasLossWeights weights;
        // Empty: the run directory's generated/manifest.tsv when present.
        std::filesystem::path generated_manifest;
    } fas;

    struct Eval {
        std::string protocol = "intra";
        std::filesystem::path dev_manifest;
        std::filesystem::path test_manifest;
    } eval;

    // Throws ConfigError naming the key on unknown keys or malformed values.
    void set(std::string_view key, std::string_view value);
    std::string get(std::string_view key) const;
    static const std::vector<std::string>& keys();

    void validate() const;
    std::string to_text() const;

    friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_text() == b.to_text(); }
};

// Relative paths in the text resolve against `base_dir`.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
// "key=value"; relative paths resolve against the working directory.
void apply_override(RunConfig& cfg, std::string_view assignment);
// Keys whose values differ.
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b);

// Layout: config.snapshot, checkpoints/, history.log, reports/, heatmaps/.
class RunDir {
public:
    // Creates the layout and writes the snapshot, or checks an existing
    // snapshot and throws ConfigError listing the differing keys.
    static RunDir open(const std::filesystem::path& root, const RunConfig& cfg);
    // Existing run directory; its snapshot becomes the configuration.
    static RunDir attach(const std::filesystem::path& root);

    const std::filesystem::path& root() const { return root_; }
    const RunConfig& config() const { return config_; }
    std::filesystem::path snapshot() const { return root_ / "config.snapshot"; }
    std::filesystem::path checkpoints() const { return root_ / "checkpoints"; }
    std::filesystem::path history() const { return root_ / "history.log"; }
    std::filesystem::path reports() const { return root_ / "reports"; }
    std::filesystem::path heatmaps() const { return root_ / "heatmaps"; }
    std::filesystem::path generated() const { return root_ / "generated"; }

    std::filesystem::path generator_checkpoint() const { return checkpoints() / "generator.ckpt"; }
    std::filesystem::path fas_checkpoint() const { return checkpoints() / "fas.ckpt"; }

    // Appends to history.log.
    std::ofstream open_history() const;

private:
    std::filesystem::path root_;
    RunConfig config_;
};

}  // namespace dsdg
