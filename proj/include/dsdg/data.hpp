#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dsdg/tensor.hpp"

namespace dsdg {

inline constexpr int kDepthSize = 32;
inline constexpr const char* kUnknownSpoofType = "unknown";

enum class Label { live, spoof };

std::string to_string(Label label);
Label parse_label(const std::string& text);

// 3 x H x W, values in [0, 1].
using Image = Tensor;

// Ground-truth or predicted depth grid, values in [0, 1] for ground truth.
struct DepthMap {
    Tensor grid;  // [rows, cols]

    static DepthMap zeros(int size = kDepthSize) { return {Tensor({size, size}, 0.0)}; }
    int rows() const { return grid.dim(0); }
    int cols() const { return grid.dim(1); }
    bool is_zero() const { return grid.max_abs() == 0.0; }
};

struct SampleRecord {
    std::filesystem::path image_path;
    Label label = Label::live;
    std::string identity_id;
    std::optional<std::string> spoof_type;  // absent for live
    std::optional<std::filesystem::path> depth_path;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct PairedSample {
    Image live;
    Image spoof;
    std::string identity_id;
    std::string spoof_type;
    DepthMap live_depth;
    DepthMap spoof_depth;
    // False for unpaired corpora: the live slot then holds a stand-in live
    // image of another identity and identity-based losses are skipped.
    bool paired = true;
};

// One image with its supervision, as consumed by depth-supervised training.
struct LabeledImage {
    Image image;
    DepthMap depth;
    Label label = Label::live;
    std::string identity_id;
    std::string spoof_type;  // empty for live
    std::string source;      // file path or synthetic tag
};

enum class Pairing { by_identity, none };
Pairing parse_pairing(const std::string& text);

// --- manifests ------------------------------------------------------------

// Tab-separated: image_path, label, identity_id, spoof_type|-, depth_path|-.
// Relative paths resolve against the manifest's directory.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

// --- image and depth files --------------------------------------------------

Image read_image(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);
// Grayscale, values clamped to [0, 1] then scaled to 8 bits.
void write_pgm(const std::filesystem::path& path, const Tensor& grid);

// Text grids (whitespace separated, row-major) or .pgm images divided by 255.
DepthMap load_depth(const std::filesystem::path& path);
void write_depth_text(const std::filesystem::path& path, const DepthMap& depth);
void validate_ground_truth(const DepthMap& depth, const std::string& what);

// Area-averages (downsampling by an integer factor) or nearest-samples the
// grid to size x size.
DepthMap resample_depth(const DepthMap& depth, int size);

// --- pairing ----------------------------------------------------------------

struct PairIndex {
    std::size_t spoof;
    std::size_t live;
};

// by_identity: each spoof with the lowest-index live of its identity.
// none: each spoof with live records taken round-robin.
std::vector<PairIndex> pair_indices(const std::vector<SampleRecord>& records, Pairing pairing);
std::vector<PairedSample> build_pairs(const std::vector<SampleRecord>& records, Pairing pairing);

std::vector<LabeledImage> load_labeled(const std::vector<SampleRecord>& records);
// Splits pairs into individual images; a live image shared by several pairs
// of one identity is emitted once.
std::vector<LabeledImage> unpair(const std::vector<PairedSample>& pairs);

// --- toy corpus -------------------------------------------------------------

// Smooth dome in [0, 1] used as live ground truth for synthetic faces.
DepthMap toy_live_depth(int size = kDepthSize);
DepthMap mean_live_depth(const std::vector<PairedSample>& pairs);

// One live image per identity and one spoof per (identity, type), in
// identity-major order. Each type applies a distinct texture perturbation.
std::vector<PairedSample> synth_toy_dataset(int n_identities, const std::vector<std::string>& spoof_types,
                                            int image_size, std::uint64_t seed);

// Writes images (PPM), depth grids (text) and manifest.tsv under dir.
std::vector<SampleRecord> export_pairs(const std::filesystem::path& dir, const std::vector<PairedSample>& pairs);

// Replaces a centred square covering `fraction` of each side with a box blur.
Image blur_region(const Image& image, double fraction, int radius);

}  // namespace dsdg
