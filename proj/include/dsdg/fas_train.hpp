#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <json.hpp>

#include "dsdg/backbones.hpp"
#include "dsdg/data.hpp"
#include "dsdg/dum.hpp"

namespace dsdg {

struct FasLossWeights {
    double lambda_kl = 1e-3;
    double lambda_g = 0.1;
    double ratio_r = 0.75;  // share of real samples per batch

    void validate() const;
};

struct BatchSplit {
    int n_real = 0;
    int n_generated = 0;
};

// n_real = round(r * B); when 0 < r < 1 each share keeps at least one slot.
BatchSplit batch_split(int batch_size, double ratio_r);

// Draws pool indices without replacement, reshuffling at every epoch boundary.
class EpochSampler {
public:
    explicit EpochSampler(std::size_t pool_size) : size_(pool_size) {}
    std::size_t next(Rng& rng);
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

struct TrainBatch {
    std::vector<const LabeledImage*> real;
    std::vector<const LabeledImage*> generated;
};

// Real draws come first, then generated draws, each from its own sampler.
TrainBatch compose_batch(const std::vector<LabeledImage>& real_pool, const std::vector<LabeledImage>& gen_pool,
                         int batch_size, double ratio_r, EpochSampler& real_sampler, EpochSampler& gen_sampler,
                         Rng& rng);

double loss_mse_depth(const DepthMap& pred, const DepthMap& target);
// Per-sample pixel mean, [N, 1].
Var loss_mse_depth(const Var& pred, const Var& target);

template <class T>
struct FasLossTerms {
    T mse{}, kl{};          // real samples
    T gen_mse{}, gen_kl{};  // generated samples
};

// L = mse + l_kl * kl + l_g * (gen_mse + l_kl * gen_kl); generated terms are
// skipped when the batch has none.
template <class T>
T fas_total_loss(const FasLossTerms<T>& t, const FasLossWeights& w, bool has_real = true, bool has_generated = true) {
    w.validate();
    T total{};
    bool started = false;
    if (has_real) {
        total = t.mse + t.kl * w.lambda_kl;
        started = true;
    }
    if (has_generated) {
        T gen = (t.gen_mse + t.gen_kl * w.lambda_kl) * w.lambda_g;
        total = started ? total + gen : gen;
    }
    return total;
}

// Backbone plus depth uncertainty head.
class FasModel {
public:
    FasModel(const BackboneSpec& spec, Rng& rng);

    const BackboneSpec& spec() const { return spec_; }
    DepthDistribution forward(const Var& images) const;
    ParamList parameters() const;

    // Inference on one image.
    UncertainDepth predict(const Image& image) const;

    std::unique_ptr<Backbone> backbone;
    DepthUncertaintyHead dum;

private:
    BackboneSpec spec_;
};

// Ground-truth grid resampled to the model's output resolution.
Tensor depth_target(const DepthMap& depth, int out_size);

// Loss terms of one mixed batch in a single forward pass. noise has the
// shape of the predicted mean, [N, 1, h, w]; sigma_fixed_at_one replaces the
// learned sigma by 1 (plain depth regression with noise).
FasLossTerms<Var> fas_loss_terms(const FasModel& model, const TrainBatch& batch, const Tensor& noise,
                                 bool sigma_fixed_at_one = false);

struct FasTrainConfig {
    int steps = 0;
    int batch_size = 8;
    double lr = 1e-3;
    FasLossWeights weights;
};

struct FasStepRecord {
    int step = 0;
    double total = 0.0;
    FasLossTerms<double> terms;
    int n_real = 0;
    int n_generated = 0;
};

using FasStepCallback = std::function<bool(const FasStepRecord&)>;

// Updates model in place; rng supplies batch order and depth noise.
std::vector<FasStepRecord> train_fas(FasModel& model, const std::vector<LabeledImage>& real_pool,
                                     const std::vector<LabeledImage>& gen_pool, const FasTrainConfig& cfg, Rng& rng,
                                     const FasStepCallback& on_step = {});

void save_fas_model(const std::filesystem::path& path, const FasModel& model, const nlohmann::json& config_snapshot);
FasModel load_fas_model(const std::filesystem::path& path, nlohmann::json* config_snapshot = nullptr);

}  // namespace dsdg
