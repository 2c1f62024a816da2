#include "dsdg/generator.hpp"

#include <algorithm>
#include <cmath>

#include "dsdg/checkpoint.hpp"
#include "dsdg/error.hpp"
#include "dsdg/ops.hpp"
#include "dsdg/optim.hpp"

namespace dsdg {

void GeneratorConfig::validate() const {
    if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (stages < 1) throw ConfigError("stages must be positive");
    if (n_spoof_types < 1) throw ConfigError("n_spoof_types must be positive");
    if (image_size < 1 || image_size % (1 << stages) != 0)
        throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by 2^" + std::to_string(stages));
}

void GenLossWeights::validate() const {
    for (double w : {lambda_mmd, lambda_pair, lambda_ort, lambda_cls})
        if (!(w >= 0.0)) throw ConfigError("generator loss weights must be nonnegative");
}

Var ChannelMeanEmbedder::embed(const Var& images) const { return ops::channel_mean(images); }

// --- networks ----------------------------------------------------------------

namespace {
constexpr double kLeak = 0.2;
// Heads start near (mu, logvar) = (0, 0) so the initial posterior is close to
// the prior.
constexpr double kHeadInitScale = 0.05;

int stage_channels(const GeneratorConfig& cfg, int stage) { return cfg.base_channels << stage; }
}  // namespace

Encoder::Encoder(const GeneratorConfig& cfg, int n_factors, std::string name, Rng& rng)
    : name_(std::move(name)), latent_dim_(cfg.latent_dim) {
    int in_ch = 3;
    for (int s = 0; s < cfg.stages; ++s) {
        const int out_ch = stage_channels(cfg, s);
        trunk.emplace_back(in_ch, out_ch, 4, 2, 1, true, rng);
        in_ch = out_ch;
    }
    const int side = cfg.image_size >> cfg.stages;
    const int flat = in_ch * side * side;
    for (int f = 0; f < n_factors; ++f)
        heads.emplace_back(flat, 2 * cfg.latent_dim, rng, kHeadInitScale * he_std(flat));
}

std::vector<GaussianVars> Encoder::forward(const Var& images) const {
    Var h = ops::add_scalar(ops::scale(images, 2.0), -1.0);
    for (std::size_t s = 0; s < trunk.size(); ++s) {
        h = ops::leaky_relu(trunk[s].forward(h), kLeak);
        check_finite(h, name_ + ".trunk" + std::to_string(s));
    }
    const int n = h.shape()[0];
    h = ops::reshape(h, {n, static_cast<int>(h.value().size() / n)});
    std::vector<GaussianVars> out;
    for (std::size_t f = 0; f < heads.size(); ++f) {
        Var both = heads[f].forward(h);
        check_finite(both, name_ + ".head" + std::to_string(f));
        Var mu = ops::slice(both, 0, latent_dim_);
        Var logvar = ops::slice(both, latent_dim_, 2 * latent_dim_);
        out.push_back({mu, ops::exp(ops::scale(logvar, 0.5))});
    }
    return out;
}

void Encoder::collect(ParamList& out) const {
    for (std::size_t s = 0; s < trunk.size(); ++s) trunk[s].collect(out, name_ + ".trunk" + std::to_string(s));
    for (std::size_t f = 0; f < heads.size(); ++f) heads[f].collect(out, name_ + ".head" + std::to_string(f));
}

Decoder::Decoder(const GeneratorConfig& cfg, Rng& rng)
    : top_channels_(stage_channels(cfg, cfg.stages - 1)), top_side_(cfg.image_size >> cfg.stages) {
    lift = Linear(3 * cfg.latent_dim, top_channels_ * top_side_ * top_side_, rng);
    int in_ch = top_channels_;
    for (int s = cfg.stages - 2; s >= -1; --s) {
        const int out_ch = s >= 0 ? stage_channels(cfg, s) : 6;
        ups.emplace_back(in_ch, out_ch, 4, 2, 1, rng);
        in_ch = out_ch;
    }
}

Var Decoder::forward(const Var& z) const {
    const int n = z.shape()[0];
    Var h = ops::relu(lift.forward(z));
    h = ops::reshape(h, {n, top_channels_, top_side_, top_side_});
    for (std::size_t s = 0; s < ups.size(); ++s) {
        h = ups[s].forward(h);
        h = s + 1 < ups.size() ? ops::relu(h) : ops::tanh(h);
        check_finite(h, "dec.up" + std::to_string(s));
    }
    return h;
}

void Decoder::collect(ParamList& out) const {
    lift.collect(out, "dec.lift");
    for (std::size_t s = 0; s < ups.size(); ++s) ups[s].collect(out, "dec.up" + std::to_string(s));
}

Generator::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : Generator(cfg, *std::make_unique<Rng>(seed)) {}

Generator::Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    enc_l = Encoder(cfg_, 1, "enc_l", rng);
    enc_s = Encoder(cfg_, 2, "enc_s", rng);
    dec = Decoder(cfg_, rng);
    classifier = Linear(cfg_.latent_dim, cfg_.n_spoof_types, rng, 1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim)));
}

GaussianVars Generator::encode_live(const Var& live_images) const { return enc_l.forward(live_images)[0]; }

std::pair<GaussianVars, GaussianVars> Generator::encode_spoof(const Var& spoof_images) const {
    auto f = enc_s.forward(spoof_images);
    return {f[0], f[1]};
}

std::pair<Var, Var> Generator::decode(const Var& zt_s, const Var& zi_s, const Var& zi_l) const {
    for (const Var* z : {&zt_s, &zi_s, &zi_l})
        if (z->value().rank() != 2 || z->shape()[1] != cfg_.latent_dim)
            throw ShapeError("decode: latent of shape " + to_string(z->shape()) + ", expected [N, " +
                             std::to_string(cfg_.latent_dim) + "]");
    Var out = dec.forward(ops::concat({zt_s, zi_s, zi_l}));
    return {ops::slice(out, 0, 3), ops::slice(out, 3, 6)};
}

namespace {
LatentGaussian to_latent(const GaussianVars& g, int row = 0) {
    const int d = g.mu.shape()[1];
    LatentGaussian out;
    out.mu.assign(g.mu.value().data() + row * d, g.mu.value().data() + (row + 1) * d);
    out.sigma.assign(g.sigma.value().data() + row * d, g.sigma.value().data() + (row + 1) * d);
    return out;
}

Var row_var(std::span<const double> v) {
    return Var::constant(Tensor({1, static_cast<int>(v.size())}, std::vector<double>(v.begin(), v.end())));
}
}  // namespace

LatentGaussian Generator::encode_live(const Image& live) const {
    NoGradGuard ng;
    return to_latent(encode_live(stack_images({&live})));
}

std::pair<LatentGaussian, LatentGaussian> Generator::encode_spoof(const Image& spoof) const {
    NoGradGuard ng;
    auto [t, i] = encode_spoof(stack_images({&spoof}));
    return {to_latent(t), to_latent(i)};
}

std::pair<Image, Image> Generator::decode(std::span<const double> zt_s, std::span<const double> zi_s,
                                          std::span<const double> zi_l) const {
    NoGradGuard ng;
    auto [l, s] = decode(row_var(zt_s), row_var(zi_s), row_var(zi_l));
    return {unstack_image(l.value(), 0, true), unstack_image(s.value(), 0, true)};
}

ParamList Generator::parameters() const {
    ParamList out;
    enc_l.collect(out);
    enc_s.collect(out);
    dec.collect(out);
    classifier.collect(out, "cls");
    return out;
}

Var stack_images(const std::vector<const Image*>& images, bool to_signed) {
    if (images.empty()) throw ShapeError("stack_images: empty batch");
    const Shape& s = images[0]->shape();
    if (s.size() != 3) throw ShapeError("stack_images: expected CxHxW, got " + to_string(s));
    Tensor out({static_cast<int>(images.size()), s[0], s[1], s[2]});
    const std::size_t sz = images[0]->size();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->shape() != s) throw ShapeError("stack_images: mixed image sizes in batch");
        double* dst = out.data() + i * sz;
        const double* src = images[i]->data();
        for (std::size_t k = 0; k < sz; ++k) dst[k] = to_signed ? 2.0 * src[k] - 1.0 : src[k];
    }
    return Var::constant(std::move(out));
}

Image unstack_image(const Tensor& batch, int index, bool from_signed) {
    const Shape& s = batch.shape();
    Image img({s[1], s[2], s[3]});
    const double* src = batch.data() + static_cast<std::size_t>(index) * img.size();
    for (std::size_t k = 0; k < img.size(); ++k)
        img[k] = from_signed ? std::clamp(0.5 * (src[k] + 1.0), 0.0, 1.0) : src[k];
    return img;
}

Var reparameterize(const GaussianVars& g, const Tensor& noise) {
    if (noise.shape() != g.mu.shape())
        throw ShapeError("reparameterize: noise " + to_string(noise.shape()) + " vs mu " + to_string(g.mu.shape()));
    return g.mu + Var::constant(noise) * g.sigma;
}

std::vector<double> reparameterize(const LatentGaussian& g, std::span<const double> noise) {
    if (noise.size() != g.dim() || g.sigma.size() != g.dim())
        throw ShapeError("reparameterize: noise of dimension " + std::to_string(noise.size()) + " for latent of dimension " +
                         std::to_string(g.dim()));
    std::vector<double> z(g.dim());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = g.mu[i] + noise[i] * g.sigma[i];
    return z;
}

// --- losses ------------------------------------------------------------------

Var loss_cls(const Linear& classifier_fc, const Var& zt_s, const std::vector<int>& labels) {
    return ops::cross_entropy(classifier_fc.forward(zt_s), labels);
}

Var loss_ort(const Var& zt_s, const Var& zi_s) {
    if (zt_s.shape() != zi_s.shape()) throw ShapeError("loss_ort: shape mismatch");
    Var nt = ops::sqrt(ops::sum_per_sample(ops::square(zt_s)));
    Var ni = ops::sqrt(ops::sum_per_sample(ops::square(zi_s)));
    for (std::size_t i = 0; i < nt.value().size(); ++i)
        if (nt.value()[i] == 0.0 || ni.value()[i] == 0.0) throw DomainError("loss_ort: zero vector has no direction");
    Var cosine = ops::sum_per_sample(zt_s * zi_s) / (nt * ni);
    return ops::mean(ops::abs(cosine));
}

namespace {
// Sum over dimensions of KL(N(mu, sigma^2) || N(0, 1)), per sample.
Var kl_to_standard(const GaussianVars& g) {
    for (double s : g.sigma.value().values())
        if (!(s > 0.0)) throw DomainError("KL: sigma must be strictly positive");
    Var terms = ops::square(g.mu) + ops::square(g.sigma) - ops::scale(ops::log(g.sigma), 2.0);
    return ops::scale(ops::add_scalar(terms, -1.0), 0.5);
}
}  // namespace

Var loss_kl_gen(const GaussianVars& zt_s, const GaussianVars& zi_s, const GaussianVars& zi_l) {
    const int n = zt_s.mu.shape()[0];
    Var total = ops::sum(kl_to_standard(zt_s)) + ops::sum(kl_to_standard(zi_s)) + ops::sum(kl_to_standard(zi_l));
    return ops::scale(total, 1.0 / n);
}

double loss_kl_gen(const LatentTriple& triple) {
    double total = 0.0;
    for (const LatentGaussian* g : {&triple.zt_s, &triple.zi_s, &triple.zi_l}) {
        if (g->sigma.size() != g->mu.size()) throw ShapeError("latent mu/sigma dimension mismatch");
        for (std::size_t i = 0; i < g->dim(); ++i) {
            const double s = g->sigma[i];
            if (!(s > 0.0)) throw DomainError("KL: sigma must be strictly positive");
            total += 0.5 * (g->mu[i] * g->mu[i] + s * s - 1.0 - std::log(s * s));
        }
    }
    return total;
}

Var loss_rec(const Var& live_hat, const Var& spoof_hat, const Var& live, const Var& spoof) {
    if (live_hat.shape() != live.shape() || spoof_hat.shape() != spoof.shape())
        throw ShapeError("loss_rec: reconstruction and target shapes differ");
    return ops::mean(ops::abs(live_hat - live)) + ops::mean(ops::abs(spoof_hat - spoof));
}

Var loss_mmd(const Var& zi_s, const Var& zi_l) {
    if (zi_s.shape() != zi_l.shape()) throw ShapeError("loss_mmd: dimension mismatch");
    return ops::mean(ops::abs(ops::mean_per_sample(zi_s) - ops::mean_per_sample(zi_l)));
}

Var loss_pair(const IdentityEmbedder& embedder, const Var& live_hat, const Var& spoof_hat) {
    Var diff = embedder.embed(spoof_hat) - embedder.embed(live_hat);
    return ops::mean(ops::sum_per_sample(ops::square(diff)));
}

// --- training ----------------------------------------------------------------

SpoofTypeIndex SpoofTypeIndex::from_corpus(const std::vector<PairedSample>& corpus, const std::vector<std::string>& known) {
    std::vector<std::string> names = known;
    if (names.empty()) {
        for (const auto& p : corpus)
            if (p.spoof_type != kUnknownSpoofType && std::find(names.begin(), names.end(), p.spoof_type) == names.end())
                names.push_back(p.spoof_type);
    }
    const bool any_unknown = std::any_of(corpus.begin(), corpus.end(), [&](const PairedSample& p) {
        return std::find(names.begin(), names.end(), p.spoof_type) == names.end();
    });
    if (any_unknown || names.empty()) names.push_back(kUnknownSpoofType);
    return SpoofTypeIndex(std::move(names));
}

int SpoofTypeIndex::index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it != names_.end()) return static_cast<int>(it - names_.begin());
    auto unk = std::find(names_.begin(), names_.end(), kUnknownSpoofType);
    if (unk == names_.end()) throw LabelError("spoof type '" + name + "' is not a known class");
    return static_cast<int>(unk - names_.begin());
}

GenLossParts<Var> generator_loss_terms(const Generator& g, const std::vector<const PairedSample*>& batch,
                                       const std::vector<int>& labels, const std::array<Tensor, 3>& noise,
                                       const IdentityEmbedder& embedder, GenMode mode) {
    std::vector<const Image*> lives, spoofs;
    for (const auto* p : batch) {
        lives.push_back(&p->live);
        spoofs.push_back(&p->spoof);
    }
    const Var live = stack_images(lives);
    const Var spoof = stack_images(spoofs);

    const GaussianVars zl = g.encode_live(live);
    const auto [zt, zi] = g.encode_spoof(spoof);
    const Var zt_z = reparameterize(zt, noise[0]);
    const Var zi_z = reparameterize(zi, noise[1]);
    const Var zl_z = reparameterize(zl, noise[2]);
    const auto [live_hat, spoof_hat] = g.decode(zt_z, zi_z, zl_z);

    GenLossParts<Var> parts;
    parts.kl = loss_kl_gen(zt, zi, zl);
    parts.rec = loss_rec(live_hat, spoof_hat, stack_images(lives, true), stack_images(spoofs, true));
    if (mode == GenMode::paired) {
        parts.mmd = loss_mmd(zi_z, zl_z);
        parts.pair = loss_pair(embedder, live_hat, spoof_hat);
    }
    parts.ort = loss_ort(zt_z, zi_z);
    parts.cls = loss_cls(g.classifier, zt_z, labels);
    return parts;
}

TrainedGenerator train_generator(const std::vector<PairedSample>& corpus, GeneratorConfig arch,
                                 const GenTrainConfig& cfg, const IdentityEmbedder* embedder,
                                 const GenStepCallback& on_step) {
    if (corpus.empty()) throw ConfigError("train_generator: empty corpus");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (cfg.steps < 0) throw ConfigError("steps must be nonnegative");
    cfg.weights.validate();

    const SpoofTypeIndex types = SpoofTypeIndex::from_corpus(corpus, cfg.known_spoof_types);
    arch.n_spoof_types = types.size();
    arch.image_size = corpus.front().live.dim(1);
    const bool all_paired = std::all_of(corpus.begin(), corpus.end(), [](const PairedSample& p) { return p.paired; });
    const GenMode mode = all_paired ? GenMode::paired : GenMode::unpaired;

    Rng rng(cfg.seed);
    TrainedGenerator out{Generator(arch, rng), types, mode, mean_live_depth(corpus), {}};
    const ChannelMeanEmbedder default_embedder;
    const IdentityEmbedder& emb = embedder ? *embedder : default_embedder;

    Adam opt(out.model.parameters(), AdamOptions{cfg.lr});
    const int batch = std::min<int>(cfg.batch_size, static_cast<int>(corpus.size()));
    const int d = arch.latent_dim;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<const PairedSample*> items;
        std::vector<int> labels;
        for (int b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                order = rng.permutation(corpus.size());
                cursor = 0;
            }
            const PairedSample& p = corpus[order[cursor++]];
            items.push_back(&p);
            labels.push_back(types.index(p.spoof_type));
        }
        std::array<Tensor, 3> noise{rng.normal_tensor({batch, d}), rng.normal_tensor({batch, d}),
                                    rng.normal_tensor({batch, d})};

        opt.zero_grad();
        const auto parts = generator_loss_terms(out.model, items, labels, noise, emb, mode);
        const Var total = gen_total_loss(parts, cfg.weights, mode);
        if (!std::isfinite(total.item()))
            throw NumericError("generator loss became non-finite at step " + std::to_string(step));
        backward(total);
        opt.step();

        GenStepRecord rec;
        rec.step = step;
        rec.total = total.item();
        rec.parts.kl = parts.kl.item();
        rec.parts.rec = parts.rec.item();
        rec.parts.mmd = parts.mmd.defined() ? parts.mmd.item() : 0.0;
        rec.parts.pair = parts.pair.defined() ? parts.pair.item() : 0.0;
        rec.parts.ort = parts.ort.item();
        rec.parts.cls = parts.cls.item();
        out.history.push_back(rec);
        if (on_step && !on_step(rec)) break;
    }
    return out;
}

// --- generation ----------------------------------------------------------------

void generate_pairs_stream(const Generator& g, int n, std::uint64_t seed, const DepthMap& live_depth,
                           const std::function<void(std::size_t, PairedSample&&, const GeneratedLatents&)>& sink,
                           int chunk) {
    if (n < 0) throw ConfigError("generate_pairs: n must be nonnegative");
    if (chunk < 1) throw ConfigError("generate_pairs: chunk must be positive");
    NoGradGuard ng;
    Rng rng(seed);
    const int d = g.config().latent_dim;
    for (int start = 0; start < n; start += chunk) {
        const int m = std::min(chunk, n - start);
        Tensor zt({m, d}), zi({m, d});
        for (int k = 0; k < m; ++k) {
            for (int j = 0; j < d; ++j) zt[static_cast<std::size_t>(k) * d + j] = rng.normal();
            for (int j = 0; j < d; ++j) zi[static_cast<std::size_t>(k) * d + j] = rng.normal();
        }
        const Tensor zl = zi;  // identity copy
        auto [live_hat, spoof_hat] = g.decode(Var::constant(zt), Var::constant(zi), Var::constant(zl));
        for (int k = 0; k < m; ++k) {
            GeneratedLatents lat;
            lat.zt_s.assign(zt.data() + k * d, zt.data() + (k + 1) * d);
            lat.zi_s.assign(zi.data() + k * d, zi.data() + (k + 1) * d);
            lat.zi_l.assign(zl.data() + k * d, zl.data() + (k + 1) * d);
            PairedSample p;
            p.live = unstack_image(live_hat.value(), k, true);
            p.spoof = unstack_image(spoof_hat.value(), k, true);
            char name[32];
            std::snprintf(name, sizeof name, "gen-%06d", start + k);
            p.identity_id = name;
            p.spoof_type = kGeneratedSpoofType;
            p.live_depth = live_depth;
            p.spoof_depth = DepthMap::zeros(live_depth.rows());
            sink(static_cast<std::size_t>(start + k), std::move(p), lat);
        }
    }
}

std::vector<PairedSample> generate_pairs(const Generator& g, int n, std::uint64_t seed, const DepthMap& live_depth) {
    std::vector<PairedSample> out;
    out.reserve(static_cast<std::size_t>(std::max(n, 0)));
    generate_pairs_stream(g, n, seed, live_depth,
                          [&](std::size_t, PairedSample&& p, const GeneratedLatents&) { out.push_back(std::move(p)); });
    return out;
}

void save_generator(const std::filesystem::path& path, const TrainedGenerator& tg, const nlohmann::json& config_snapshot) {
    const auto& c = tg.model.config();
    nlohmann::json meta;
    meta["image_size"] = c.image_size;
    meta["latent_dim"] = c.latent_dim;
    meta["base_channels"] = c.base_channels;
    meta["stages"] = c.stages;
    meta["n_spoof_types"] = c.n_spoof_types;
    meta["spoof_types"] = tg.spoof_types.names();
    meta["mode"] = tg.mode == GenMode::paired ? "paired" : "unpaired";
    meta["live_depth_prior"] = {{"shape", tg.live_depth_prior.grid.shape()}, {"values", tg.live_depth_prior.grid.storage()}};
    meta["config"] = config_snapshot;
    save_checkpoint(path, "dsdg-generator", meta, tg.model.parameters());
}

TrainedGenerator load_generator(const std::filesystem::path& path, nlohmann::json* config_snapshot) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "dsdg-generator") throw ParseError(path.string() + ": expected a generator checkpoint, found " + ck.kind);
    GeneratorConfig c;
    c.image_size = ck.meta.at("image_size");
    c.latent_dim = ck.meta.at("latent_dim");
    c.base_channels = ck.meta.at("base_channels");
    c.stages = ck.meta.at("stages");
    c.n_spoof_types = ck.meta.at("n_spoof_types");
    Rng rng(0);
    TrainedGenerator tg{Generator(c, rng), SpoofTypeIndex(ck.meta.at("spoof_types").get<std::vector<std::string>>()),
                        ck.meta.at("mode") == "paired" ? GenMode::paired : GenMode::unpaired,
                        DepthMap{Tensor(ck.meta.at("live_depth_prior").at("shape").get<Shape>(),
                                        ck.meta.at("live_depth_prior").at("values").get<std::vector<double>>())},
                        {}};
    ParamList params = tg.model.parameters();
    load_params(params, ck);
    if (config_snapshot) *config_snapshot = ck.meta.at("config");
    return tg;
}

}  // namespace dsdg
