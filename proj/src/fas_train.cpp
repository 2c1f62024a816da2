#include "dsdg/fas_train.hpp"

#include <cmath>

#include "dsdg/checkpoint.hpp"
#include "dsdg/error.hpp"
#include "dsdg/ops.hpp"
#include "dsdg/optim.hpp"

namespace dsdg {

void FasLossWeights::validate() const {
    if (!(lambda_kl >= 0.0)) throw ConfigError("fas.lambda_kl must be nonnegative");
    if (!(lambda_g >= 0.0)) throw ConfigError("fas.lambda_g must be nonnegative");
    if (!(ratio_r >= 0.0 && ratio_r <= 1.0)) throw ConfigError("fas.ratio_r must lie in [0, 1]");
}

BatchSplit batch_split(int batch_size, double ratio_r) {
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (!(ratio_r >= 0.0 && ratio_r <= 1.0)) throw ConfigError("ratio r must lie in [0, 1]");
    int n_real = static_cast<int>(std::lround(ratio_r * batch_size));
    if (ratio_r > 0.0 && ratio_r < 1.0 && batch_size >= 2) n_real = std::clamp(n_real, 1, batch_size - 1);
    return {n_real, batch_size - n_real};
}

std::size_t EpochSampler::next(Rng& rng) {
    if (size_ == 0) throw ConfigError("cannot sample from an empty pool");
    if (cursor_ == order_.size()) {
        order_ = rng.permutation(size_);
        cursor_ = 0;
        ++epoch_;
    }
    return order_[cursor_++];
}

TrainBatch compose_batch(const std::vector<LabeledImage>& real_pool, const std::vector<LabeledImage>& gen_pool,
                         int batch_size, double ratio_r, EpochSampler& real_sampler, EpochSampler& gen_sampler,
                         Rng& rng) {
    const BatchSplit split = batch_split(batch_size, ratio_r);
    if (split.n_real > 0 && real_pool.empty()) throw ConfigError("batch needs real samples but the real pool is empty");
    if (split.n_generated > 0 && gen_pool.empty())
        throw ConfigError("batch needs generated samples but the generated pool is empty");
    TrainBatch batch;
    for (int i = 0; i < split.n_real; ++i) batch.real.push_back(&real_pool[real_sampler.next(rng)]);
    for (int i = 0; i < split.n_generated; ++i) batch.generated.push_back(&gen_pool[gen_sampler.next(rng)]);
    return batch;
}

double loss_mse_depth(const DepthMap& pred, const DepthMap& target) {
    if (pred.grid.shape() != target.grid.shape())
        throw ShapeError("loss_mse_depth: " + to_string(pred.grid.shape()) + " vs " + to_string(target.grid.shape()));
    double total = 0.0;
    for (std::size_t i = 0; i < pred.grid.size(); ++i) {
        const double d = pred.grid[i] - target.grid[i];
        total += d * d;
    }
    return total / static_cast<double>(pred.grid.size());
}

Var loss_mse_depth(const Var& pred, const Var& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("loss_mse_depth: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    return ops::mean_per_sample(ops::square(pred - target));
}

FasModel::FasModel(const BackboneSpec& spec, Rng& rng)
    : backbone(build_backbone(spec, rng)), dum(Backbone::kOutChannels, rng), spec_(spec) {}

DepthDistribution FasModel::forward(const Var& images) const { return dum.forward(backbone->forward(images)); }

ParamList FasModel::parameters() const {
    ParamList out;
    for (auto& p : backbone->parameters()) out.push_back({"backbone." + p.name, p.var});
    dum.collect(out, "dum");
    return out;
}

UncertainDepth FasModel::predict(const Image& image) const {
    NoGradGuard ng;
    const Shape& s = image.shape();
    Var x = Var::constant(image.reshaped({1, s[0], s[1], s[2]}));
    return to_uncertain_depth(forward(x), 0);
}

Tensor depth_target(const DepthMap& depth, int out_size) {
    return depth.rows() == out_size && depth.cols() == out_size ? depth.grid : resample_depth(depth, out_size).grid;
}

namespace {

// Row weights that average a per-sample [N, 1] loss over rows [begin, end).
Var row_mask(int n, int begin, int end) {
    Tensor m({n, 1}, 0.0);
    for (int i = begin; i < end; ++i) m[i] = 1.0 / (end - begin);
    return Var::constant(std::move(m));
}

}  // namespace

FasLossTerms<Var> fas_loss_terms(const FasModel& model, const TrainBatch& batch, const Tensor& noise,
                                 bool sigma_fixed_at_one) {
    std::vector<const LabeledImage*> all = batch.real;
    all.insert(all.end(), batch.generated.begin(), batch.generated.end());
    if (all.empty()) throw ConfigError("empty training batch");
    const int n = static_cast<int>(all.size());
    const Shape& img = all.front()->image.shape();
    if (img[1] != img[2]) throw ShapeError("training images must be square");
    const int out = img[1] / Backbone::kOutputStride;

    Tensor images({n, img[0], img[1], img[2]});
    Tensor targets({n, 1, out, out});
    const std::size_t isz = all.front()->image.size(), tsz = static_cast<std::size_t>(out) * out;
    for (int i = 0; i < n; ++i) {
        if (all[i]->image.shape() != img) throw ShapeError("mixed image sizes in training batch");
        std::copy_n(all[i]->image.data(), isz, images.data() + i * isz);
        const Tensor t = depth_target(all[i]->depth, out);
        std::copy_n(t.data(), tsz, targets.data() + i * tsz);
    }

    DepthDistribution dist = model.forward(Var::constant(std::move(images)));
    if (sigma_fixed_at_one) dist.logvar = Var::constant(Tensor(dist.mu.shape(), 0.0));
    const Var target = Var::constant(std::move(targets));
    const Var mse = loss_mse_depth(sample_depth(dist, noise), target);
    const Var kl = loss_kl_dum(dist, target);

    const int n_real = static_cast<int>(batch.real.size());
    FasLossTerms<Var> t;
    if (n_real > 0) {
        const Var m = row_mask(n, 0, n_real);
        t.mse = ops::sum(mse * m);
        t.kl = ops::sum(kl * m);
    }
    if (n_real < n) {
        const Var m = row_mask(n, n_real, n);
        t.gen_mse = ops::sum(mse * m);
        t.gen_kl = ops::sum(kl * m);
    }
    return t;
}

std::vector<FasStepRecord> train_fas(FasModel& model, const std::vector<LabeledImage>& real_pool,
                                     const std::vector<LabeledImage>& gen_pool, const FasTrainConfig& cfg, Rng& rng,
                                     const FasStepCallback& on_step) {
    cfg.weights.validate();
    if (cfg.steps < 0) throw ConfigError("fas.steps must be nonnegative");
    if (!(cfg.lr > 0.0)) throw ConfigError("fas.lr must be positive");
    const BatchSplit split = batch_split(cfg.batch_size, cfg.weights.ratio_r);
    if (split.n_real > 0 && real_pool.empty()) throw ConfigError("real pool is empty");
    if (split.n_generated > 0 && gen_pool.empty()) throw ConfigError("generated pool is empty");

    EpochSampler real_sampler(real_pool.size()), gen_sampler(gen_pool.size());
    Adam opt(model.parameters(), AdamOptions{cfg.lr});
    std::vector<FasStepRecord> history;
    for (int step = 0; step < cfg.steps; ++step) {
        const TrainBatch batch =
            compose_batch(real_pool, gen_pool, cfg.batch_size, cfg.weights.ratio_r, real_sampler, gen_sampler, rng);
        const int side = batch.real.empty() ? batch.generated.front()->image.dim(1) : batch.real.front()->image.dim(1);
        const int out = side / Backbone::kOutputStride;
        const Tensor noise = rng.normal_tensor({cfg.batch_size, 1, out, out});

        opt.zero_grad();
        const FasLossTerms<Var> terms = fas_loss_terms(model, batch, noise);
        const Var total = fas_total_loss(terms, cfg.weights, !batch.real.empty(), !batch.generated.empty());
        if (!std::isfinite(total.item()))
            throw NumericError("FAS loss became non-finite at step " + std::to_string(step));
        backward(total);
        opt.step();

        FasStepRecord rec;
        rec.step = step;
        rec.total = total.item();
        rec.n_real = static_cast<int>(batch.real.size());
        rec.n_generated = static_cast<int>(batch.generated.size());
        if (rec.n_real > 0) {
            rec.terms.mse = terms.mse.item();
            rec.terms.kl = terms.kl.item();
        }
        if (rec.n_generated > 0) {
            rec.terms.gen_mse = terms.gen_mse.item();
            rec.terms.gen_kl = terms.gen_kl.item();
        }
        history.push_back(rec);
        if (on_step && !on_step(rec)) break;
    }
    return history;
}

void save_fas_model(const std::filesystem::path& path, const FasModel& model, const nlohmann::json& config_snapshot) {
    nlohmann::json meta;
    meta["backbone"] = to_string(model.spec().kind);
    meta["cdc_theta"] = model.spec().cdc_theta;
    meta["width"] = model.spec().width;
    meta["config"] = config_snapshot;
    save_checkpoint(path, "fas-model", meta, model.parameters());
}

FasModel load_fas_model(const std::filesystem::path& path, nlohmann::json* config_snapshot) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "fas-model") throw ParseError(path.string() + ": expected a FAS checkpoint, found " + ck.kind);
    BackboneSpec spec;
    spec.kind = parse_backbone_kind(ck.meta.at("backbone").get<std::string>());
    spec.cdc_theta = ck.meta.at("cdc_theta");
    spec.width = ck.meta.at("width");
    Rng rng(0);
    FasModel model(spec, rng);
    ParamList params = model.parameters();
    load_params(params, ck);
    if (config_snapshot) *config_snapshot = ck.meta.at("config");
    return model;
}

}  // namespace dsdg
