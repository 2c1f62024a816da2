#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsdg/data.hpp"
#include "dsdg/layers.hpp"

namespace dsdg {

// Diagonal Gaussian of one latent factor for one sample.
struct LatentGaussian {
    std::vector<double> mu;
    std::vector<double> sigma;  // strictly positive

    std::size_t dim() const { return mu.size(); }
};

// Spoof-pattern factor, spoof-image identity factor, live-image identity factor.
struct LatentTriple {
    LatentGaussian zt_s;
    LatentGaussian zi_s;
    LatentGaussian zi_l;
};

// Batched factor inside the graph: mu and sigma are [N, d].
struct GaussianVars {
    Var mu;
    Var sigma;
};

struct GeneratorConfig {
    int image_size = 256;
    int latent_dim = 128;
    int base_channels = 16;
    int stages = 4;
    int n_spoof_types = 1;

    void validate() const;
};

struct GenLossWeights {
    double lambda_mmd = 50.0;
    double lambda_pair = 5.0;
    double lambda_ort = 1.0;
    double lambda_cls = 10.0;

    void validate() const;
};

enum class GenMode { paired, unpaired };

// Maps images to fixed-length identity features. The production setting uses
// a pretrained face-recognition network; the library ships a deterministic
// stand-in.
class IdentityEmbedder {
public:
    virtual ~IdentityEmbedder() = default;
    // images [N, 3, H, W] -> [N, F]
    virtual Var embed(const Var& images) const = 0;
};

// Per-channel global average.
class ChannelMeanEmbedder final : public IdentityEmbedder {
public:
    Var embed(const Var& images) const override;
};

// Stride-2 convolutional trunk followed by one (mu, log-variance) linear head
// per latent factor. sigma = exp(logvar / 2).
class Encoder {
public:
    Encoder() = default;
    Encoder(const GeneratorConfig& cfg, int n_factors, std::string name, Rng& rng);

    // images in [0, 1]; returns one GaussianVars per factor.
    std::vector<GaussianVars> forward(const Var& images) const;
    void collect(ParamList& out) const;

    std::vector<Conv2d> trunk;
    std::vector<Linear> heads;  // each emits [mu | logvar]

private:
    std::string name_;
    int latent_dim_ = 0;
};

// Linear lift of the concatenated triple, then transposed convolutions up to
// a 6-channel tanh image split into (live_hat, spoof_hat).
class Decoder {
public:
    Decoder() = default;
    Decoder(const GeneratorConfig& cfg, Rng& rng);

    // z [N, 3d] -> [N, 6, H, W] in [-1, 1]
    Var forward(const Var& z) const;
    void collect(ParamList& out) const;

    Linear lift;
    std::vector<ConvTranspose2d> ups;

private:
    int top_channels_ = 0;
    int top_side_ = 0;
};

class Generator {
public:
    Generator(const GeneratorConfig& cfg, std::uint64_t seed);
    Generator(const GeneratorConfig& cfg, Rng& rng);

    const GeneratorConfig& config() const { return cfg_; }

    GaussianVars encode_live(const Var& live_images) const;
    std::pair<GaussianVars, GaussianVars> encode_spoof(const Var& spoof_images) const;
    // Returns (live_hat, spoof_hat) in decoder range [-1, 1].
    std::pair<Var, Var> decode(const Var& zt_s, const Var& zi_s, const Var& zi_l) const;
    Var classify(const Var& zt_s) const { return classifier.forward(zt_s); }

    // Single-image conveniences.
    LatentGaussian encode_live(const Image& live) const;
    std::pair<LatentGaussian, LatentGaussian> encode_spoof(const Image& spoof) const;
    // Images mapped back to [0, 1].
    std::pair<Image, Image> decode(std::span<const double> zt_s, std::span<const double> zi_s,
                                   std::span<const double> zi_l) const;

    ParamList parameters() const;

    Encoder enc_l;
    Encoder enc_s;
    Decoder dec;
    Linear classifier;

private:
    GeneratorConfig cfg_;
};

// [N, 3, H, W] batch from images; values mapped [0, 1] -> [-1, 1] when
// to_signed is set.
Var stack_images(const std::vector<const Image*>& images, bool to_signed = false);
Image unstack_image(const Tensor& batch, int index, bool from_signed = false);

// z = mu + eps * sigma
Var reparameterize(const GaussianVars& g, const Tensor& noise);
std::vector<double> reparameterize(const LatentGaussian& g, std::span<const double> noise);

// --- loss terms (batched; each is averaged over the batch) ------------------

Var loss_cls(const Linear& classifier_fc, const Var& zt_s, const std::vector<int>& labels);
Var loss_ort(const Var& zt_s, const Var& zi_s);
Var loss_kl_gen(const GaussianVars& zt_s, const GaussianVars& zi_s, const GaussianVars& zi_l);
double loss_kl_gen(const LatentTriple& triple);
Var loss_rec(const Var& live_hat, const Var& spoof_hat, const Var& live, const Var& spoof);
Var loss_mmd(const Var& zi_s, const Var& zi_l);
Var loss_pair(const IdentityEmbedder& embedder, const Var& live_hat, const Var& spoof_hat);

template <class T>
struct GenLossParts {
    T kl{}, rec{}, mmd{}, pair{}, ort{}, cls{};
};

// L = kl + rec + l1*mmd + l2*pair + l3*ort + l4*cls; unpaired drops mmd and pair.
template <class T>
T gen_total_loss(const GenLossParts<T>& p, const GenLossWeights& w, GenMode mode) {
    w.validate();
    T total = p.kl + p.rec;
    if (mode == GenMode::paired) total = total + p.mmd * w.lambda_mmd + p.pair * w.lambda_pair;
    total = total + p.ort * w.lambda_ort + p.cls * w.lambda_cls;
    return total;
}

// --- training ----------------------------------------------------------------

// Maps spoof-type names to class indices; names outside the known list share
// one trailing "unknown" class.
class SpoofTypeIndex {
public:
    SpoofTypeIndex() = default;
    explicit SpoofTypeIndex(std::vector<std::string> class_names) : names_(std::move(class_names)) {}
    static SpoofTypeIndex from_corpus(const std::vector<PairedSample>& corpus,
                                      const std::vector<std::string>& known = {});

    int index(const std::string& name) const;
    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }

private:
    std::vector<std::string> names_;
};

struct GenTrainConfig {
    int steps = 0;
    int batch_size = 16;
    double lr = 2e-4;
    GenLossWeights weights;
    std::uint64_t seed = 0;
    std::vector<std::string> known_spoof_types;  // empty: taken from the corpus
};

struct GenStepRecord {
    int step = 0;
    double total = 0.0;
    GenLossParts<double> parts;
};

struct TrainedGenerator {
    Generator model;
    SpoofTypeIndex spoof_types;
    GenMode mode = GenMode::paired;
    DepthMap live_depth_prior;  // ground truth assigned to generated live images
    std::vector<GenStepRecord> history;
};

// Called after every step; return false to stop early.
using GenStepCallback = std::function<bool(const GenStepRecord&)>;

TrainedGenerator train_generator(const std::vector<PairedSample>& corpus, GeneratorConfig arch,
                                 const GenTrainConfig& cfg, const IdentityEmbedder* embedder = nullptr,
                                 const GenStepCallback& on_step = {});

// Forward pass and loss terms for one batch with explicit reparameterization
// noise (three [N, d] tensors: zt_s, zi_s, zi_l).
GenLossParts<Var> generator_loss_terms(const Generator& g, const std::vector<const PairedSample*>& batch,
                                       const std::vector<int>& labels, const std::array<Tensor, 3>& noise,
                                       const IdentityEmbedder& embedder, GenMode mode);

// --- generation ----------------------------------------------------------------

struct GeneratedLatents {
    std::vector<double> zt_s;
    std::vector<double> zi_s;
    std::vector<double> zi_l;
};

inline constexpr const char* kGeneratedSpoofType = "generated";

// Draws zt_s, zi_s ~ N(0, I), copies zi_l := zi_s and decodes. Samples are
// delivered in draw order; latents are exposed for inspection.
void generate_pairs_stream(const Generator& g, int n, std::uint64_t seed, const DepthMap& live_depth,
                           const std::function<void(std::size_t, PairedSample&&, const GeneratedLatents&)>& sink,
                           int chunk = 64);
std::vector<PairedSample> generate_pairs(const Generator& g, int n, std::uint64_t seed, const DepthMap& live_depth);

// Checkpoint round trip for a trained generator.
void save_generator(const std::filesystem::path& path, const TrainedGenerator& tg, const nlohmann::json& config_snapshot);
TrainedGenerator load_generator(const std::filesystem::path& path, nlohmann::json* config_snapshot = nullptr);

}  // namespace dsdg
