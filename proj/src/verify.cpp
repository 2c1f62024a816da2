#include "dsdg/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dsdg/dum.hpp"
#include "dsdg/error.hpp"
#include "dsdg/fas_train.hpp"
#include "dsdg/generator.hpp"
#include "dsdg/ops.hpp"

namespace dsdg {

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

GradCheckReport fd_gradient(const LossFn& loss, const ParamList& params, double step, Rng& rng,
                            std::size_t coords_per_param, double kink_threshold) {
    if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
    for (const auto& p : params) {
        Var v = p.var;
        v.zero_grad();
    }
    const Var out = loss();
    const double centre = out.item();
    if (!std::isfinite(centre)) throw NumericError("loss is not finite at the check point");
    backward(out);

    GradCheckReport report;
    report.step = step;
    NoGradGuard ng;
    for (const auto& p : params) {
        Var v = p.var;
        const Tensor analytic = v.grad().empty() ? Tensor(v.shape(), 0.0) : v.grad();
        const std::size_t n = v.value().size();
        std::vector<std::size_t> coords;
        if (n <= coords_per_param) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (std::size_t k = 0; k < coords_per_param; ++k) coords.push_back(rng.index(n));
        }
        for (std::size_t i : coords) {
            const double saved = v.value()[i];
            v.mutable_value()[i] = saved + step;
            const double up = loss().item();
            v.mutable_value()[i] = saved - step;
            const double down = loss().item();
            v.mutable_value()[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("loss is not finite near coordinate " + std::to_string(i) + " of " + p.name);
            if (kink_threshold > 0.0 &&
                relative_error((up - centre) / step, (centre - down) / step) > kink_threshold) {
                ++report.skipped_kinks;
                continue;
            }
            const double numeric = (up - down) / (2.0 * step);
            const double err = relative_error(analytic[i], numeric);
            ++report.coordinates;
            if (err >= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = p.name;
                report.worst_index = i;
                report.analytic = analytic[i];
                report.numeric = numeric;
            }
        }
    }
    return report;
}

McEstimate mc_kl(std::span<const double> mu, std::span<const double> sigma, std::span<const double> target,
                 std::size_t n_samples, Rng& rng, Reduction reduction) {
    if (mu.size() != sigma.size() || mu.size() != target.size()) throw ShapeError("mc_kl: dimension mismatch");
    if (mu.empty()) throw ShapeError("mc_kl: empty input");
    if (n_samples < 2) throw ConfigError("mc_kl: need at least two samples");
    for (double s : sigma)
        if (!(s > 0.0)) throw DomainError("mc_kl: sigma must be strictly positive");
    const double scale = reduction == Reduction::mean ? 1.0 / static_cast<double>(mu.size()) : 1.0;

    // Welford accumulation of the per-draw log density ratio.
    double mean = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < n_samples; ++k) {
        double log_ratio = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const double eps = rng.normal();
            const double z = mu[i] + sigma[i] * eps;
            const double dz = z - target[i];
            log_ratio += -std::log(sigma[i]) - 0.5 * eps * eps + 0.5 * dz * dz;
        }
        log_ratio *= scale;
        const double delta = log_ratio - mean;
        mean += delta / static_cast<double>(k + 1);
        m2 += delta * (log_ratio - mean);
    }
    const double var = m2 / static_cast<double>(n_samples - 1);
    return {mean, std::sqrt(var / static_cast<double>(n_samples))};
}

EerResult sweep_eer(const std::vector<ScoredSample>& scores) {
    long n_live = 0, n_spoof = 0;
    std::vector<double> values;
    for (const auto& s : scores) {
        (s.label == Label::live ? n_live : n_spoof)++;
        values.push_back(s.score);
    }
    if (n_live == 0 || n_spoof == 0) throw LabelError("EER needs both live and spoof samples");
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());

    const auto quiet = [](const std::string&) {};
    if (values.size() == 1) {
        const ErrorRates r = metrics(confusion(scores, values[0]), quiet);
        return {0.5 * (r.apcer + r.bpcer), values[0]};
    }
    EerResult best;
    double best_gap = 0.0;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        const double t = 0.5 * (values[i] + values[i + 1]);
        const Confusion c = confusion(scores, t);
        const double apcer = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
        const double bpcer = static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp);
        const double gap = std::abs(apcer - bpcer);
        if (i == 0 || gap < best_gap) {
            best_gap = gap;
            best = {0.5 * (apcer + bpcer), t};
        }
    }
    return best;
}

// --- oracle suite -------------------------------------------------------------

namespace {

Var random_param(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    return Var::parameter(rng.uniform_tensor(std::move(shape), lo, hi));
}

std::string format(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

// Runs fd_gradient at `points` fresh inputs produced by `setup`.
// With `kink_threshold` set, at most a fifth of the probed coordinates may be
// skipped as straddling a kink.
OracleResult grad_case(const std::string& name, Rng& rng, int points, double tol,
                       const std::function<std::pair<LossFn, ParamList>(Rng&)>& setup, double kink_threshold = 0.0) {
    double worst = 0.0;
    std::string where;
    std::size_t probed = 0, skipped = 0;
    for (int k = 0; k < points; ++k) {
        auto [fn, params] = setup(rng);
        const GradCheckReport r = fd_gradient(fn, params, 1e-5, rng, 8, kink_threshold);
        probed += r.coordinates + r.skipped_kinks;
        skipped += r.skipped_kinks;
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            where = r.worst_param + "[" + std::to_string(r.worst_index) + "] analytic " + format(r.analytic) +
                    " numeric " + format(r.numeric);
        }
    }
    std::string detail = "max rel err " + format(worst) + " at " + where;
    if (kink_threshold > 0.0)
        detail += "; " + std::to_string(skipped) + "/" + std::to_string(probed) + " coordinates skipped at kinks";
    return {"grad " + name, worst < tol && 5 * skipped <= probed, detail};
}

constexpr int kCheckBatch = 3;
constexpr int kCheckDim = 5;
constexpr double kKinkThreshold = 1e-3;

// Zero-initialised biases can park a ReLU exactly on its kink; shifting
// every bias makes the check point generic.
void jitter_biases(const ParamList& params, Rng& rng) {
    for (const auto& p : params) {
        if (p.name.size() < 5 || p.name.compare(p.name.size() - 5, 5, ".bias") != 0) continue;
        Var v = p.var;
        for (double& b : v.mutable_value().values()) b += 0.1 * (rng.uniform() - 0.5);
    }
}

GaussianVars gaussian_from(const Var& mu, const Var& logvar) { return {mu, ops::exp(ops::scale(logvar, 0.5))}; }

}  // namespace

std::vector<OracleResult> gradient_oracles(Rng& rng, int points, double tol) {
    std::vector<OracleResult> out;
    constexpr int n = kCheckBatch, d = kCheckDim;

    out.push_back(grad_case("cls", rng, points, tol, [](Rng& r) {
        auto fc = std::make_shared<Linear>(kCheckDim, 4, r, 0.5);
        Var z = random_param(r, {n, d});
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(r.index(4)));
        ParamList p{{"z", z}};
        fc->collect(p, "fc");
        return std::pair{LossFn([fc, z, labels] { return loss_cls(*fc, z, labels); }), p};
    }));
    out.push_back(grad_case("ort", rng, points, tol, [](Rng& r) {
        Var a = random_param(r, {n, d}), b = random_param(r, {n, d});
        return std::pair{LossFn([a, b] { return loss_ort(a, b); }), ParamList{{"zt", a}, {"zi", b}}};
    }));
    out.push_back(grad_case("kl_gen", rng, points, tol, [](Rng& r) {
        std::vector<Var> v;
        for (int i = 0; i < 6; ++i) v.push_back(random_param(r, {n, d}));
        ParamList p;
        for (int i = 0; i < 6; ++i) p.push_back({(i % 2 ? "logvar" : "mu") + std::to_string(i / 2), v[i]});
        return std::pair{LossFn([v] {
                             return loss_kl_gen(gaussian_from(v[0], v[1]), gaussian_from(v[2], v[3]),
                                                gaussian_from(v[4], v[5]));
                         }),
                         p};
    }));
    out.push_back(grad_case("rec", rng, points, tol, [](Rng& r) {
        Var lh = random_param(r, {2, 3, 4, 4}), sh = random_param(r, {2, 3, 4, 4});
        Var l = Var::constant(r.uniform_tensor({2, 3, 4, 4}, -1, 1)), s = Var::constant(r.uniform_tensor({2, 3, 4, 4}, -1, 1));
        return std::pair{LossFn([=] { return loss_rec(lh, sh, l, s); }), ParamList{{"live_hat", lh}, {"spoof_hat", sh}}};
    }));
    out.push_back(grad_case("mmd", rng, points, tol, [](Rng& r) {
        Var a = random_param(r, {n, d}), b = random_param(r, {n, d});
        return std::pair{LossFn([a, b] { return loss_mmd(a, b); }), ParamList{{"zi_s", a}, {"zi_l", b}}};
    }));
    out.push_back(grad_case("pair", rng, points, tol, [](Rng& r) {
        Var a = random_param(r, {2, 3, 4, 4}), b = random_param(r, {2, 3, 4, 4});
        return std::pair{LossFn([a, b] { return loss_pair(ChannelMeanEmbedder{}, a, b); }),
                         ParamList{{"live_hat", a}, {"spoof_hat", b}}};
    }));
    out.push_back(grad_case("kl_dum", rng, points, tol, [](Rng& r) {
        Var mu = random_param(r, {2, 1, 4, 4}), lv = random_param(r, {2, 1, 4, 4});
        Var t = Var::constant(r.uniform_tensor({2, 1, 4, 4}, 0, 1));
        return std::pair{LossFn([=] { return ops::sum(loss_kl_dum(DepthDistribution{mu, lv}, t)); }),
                         ParamList{{"mu", mu}, {"logvar", lv}}};
    }));
    out.push_back(grad_case("mse_depth", rng, points, tol, [](Rng& r) {
        Var mu = random_param(r, {2, 1, 4, 4}), lv = random_param(r, {2, 1, 4, 4});
        Var t = Var::constant(r.uniform_tensor({2, 1, 4, 4}, 0, 1));
        Tensor eps = r.normal_tensor({2, 1, 4, 4});
        return std::pair{LossFn([=] { return ops::sum(loss_mse_depth(sample_depth(DepthDistribution{mu, lv}, eps), t)); }),
                         ParamList{{"mu", mu}, {"logvar", lv}}};
    }));
    return out;
}

std::vector<OracleResult> network_gradient_oracles(Rng& rng, double tol) {
    std::vector<OracleResult> out;
    const int points = 2;
    out.push_back(grad_case("generator_total", rng, points, tol, [](Rng& r) {
        GeneratorConfig cfg{16, 4, 2, 2, 2};
        auto g = std::make_shared<Generator>(cfg, r);
        auto batch = std::make_shared<std::vector<PairedSample>>();
        for (int i = 0; i < 2; ++i) {
            PairedSample p;
            p.live = r.uniform_tensor({3, 16, 16}, 0, 1);
            p.spoof = r.uniform_tensor({3, 16, 16}, 0, 1);
            batch->push_back(std::move(p));
        }
        std::array<Tensor, 3> noise{r.normal_tensor({2, 4}), r.normal_tensor({2, 4}), r.normal_tensor({2, 4})};
        LossFn fn = [g, batch, noise] {
            std::vector<const PairedSample*> items{&(*batch)[0], &(*batch)[1]};
            auto parts = generator_loss_terms(*g, items, {0, 1}, noise, ChannelMeanEmbedder{}, GenMode::paired);
            return gen_total_loss(parts, GenLossWeights{}, GenMode::paired);
        };
        jitter_biases(g->parameters(), r);
        return std::pair{fn, g->parameters()};
    }, kKinkThreshold));
    for (auto kind : {BackboneKind::cdcn, BackboneKind::resnet, BackboneKind::mobilenetv2}) {
        out.push_back(grad_case("fas_total_" + to_string(kind), rng, points, tol, [kind](Rng& r) {
            auto model = std::make_shared<FasModel>(BackboneSpec{kind, 0.7, 0.0625}, r);
            auto pool = std::make_shared<std::vector<LabeledImage>>();
            for (int i = 0; i < 2; ++i) {
                LabeledImage li;
                li.image = r.uniform_tensor({3, 16, 16}, 0, 1);
                li.depth = i == 0 ? toy_live_depth() : DepthMap::zeros();
                pool->push_back(std::move(li));
            }
            Tensor noise = r.normal_tensor({2, 1, 2, 2});
            LossFn fn = [model, pool, noise] {
                TrainBatch b{{&(*pool)[0]}, {&(*pool)[1]}};
                return fas_total_loss(fas_loss_terms(*model, b, noise), FasLossWeights{});
            };
            jitter_biases(model->parameters(), r);
            return std::pair{fn, model->parameters()};
        }, kKinkThreshold));
    }
    return out;
}

std::vector<OracleResult> kl_oracles(Rng& rng, int triples, std::size_t samples) {
    int gen_ok = 0, dum_ok = 0;
    double gen_worst = 0.0, dum_worst = 0.0;  // in standard errors
    for (int k = 0; k < triples; ++k) {
        // Latent triple: three factors of dimension 2, closed form summed.
        LatentTriple t;
        std::vector<double> mu, sigma, zero;
        for (LatentGaussian* g : {&t.zt_s, &t.zi_s, &t.zi_l}) {
            for (int i = 0; i < 2; ++i) {
                g->mu.push_back(rng.uniform() * 2.0 - 1.0);
                g->sigma.push_back(0.5 + rng.uniform());
                mu.push_back(g->mu.back());
                sigma.push_back(g->sigma.back());
                zero.push_back(0.0);
            }
        }
        const double closed = loss_kl_gen(t);
        const McEstimate mc = mc_kl(mu, sigma, zero, samples, rng, Reduction::sum);
        const double z = std::abs(mc.value - closed) / mc.stderr_;
        gen_worst = std::max(gen_worst, z);
        gen_ok += z < 3.0;

        // Depth distribution: 2x2 grid against a random target, pixel mean.
        UncertainDepth ud{Tensor({2, 2}), Tensor({2, 2})};
        DepthMap target{Tensor({2, 2})};
        for (std::size_t i = 0; i < 4; ++i) {
            ud.mu[i] = rng.uniform();
            ud.sigma[i] = 0.5 + rng.uniform();
            target.grid[i] = rng.uniform();
        }
        const double closed_dum = loss_kl_dum(ud, target);
        const McEstimate mc_dum = mc_kl(ud.mu.values(), ud.sigma.values(), target.grid.values(), samples, rng,
                                        Reduction::mean);
        const double zd = std::abs(mc_dum.value - closed_dum) / mc_dum.stderr_;
        dum_worst = std::max(dum_worst, zd);
        dum_ok += zd < 3.0;
    }
    auto detail = [triples](int ok, double worst) {
        return std::to_string(ok) + "/" + std::to_string(triples) + " within 3 stderr, worst " + format(worst) + " stderr";
    };
    return {{"kl latent closed form vs monte carlo", gen_ok == triples, detail(gen_ok, gen_worst)},
            {"kl depth closed form vs monte carlo", dum_ok == triples, detail(dum_ok, dum_worst)}};
}

std::vector<OracleResult> cdc_oracles(Rng& rng) {
    NoGradGuard ng;
    const Var x = Var::constant(rng.normal_tensor({2, 4, 9, 9}));
    const Var w = Var::constant(rng.normal_tensor({5, 4, 3, 3}));
    const Tensor vanilla = ops::conv2d(x, w, Var(), 1, 1).value();
    const Tensor cdc0 = cdc_conv(x, w, Var(), 0.0).value();
    double diff0 = 0.0;
    for (std::size_t i = 0; i < vanilla.size(); ++i) diff0 = std::max(diff0, std::abs(vanilla[i] - cdc0[i]));

    // Constant input: interior pixels see the full kernel.
    const double c = 0.37, theta = 0.7;
    const Var xc = Var::constant(Tensor({1, 4, 7, 7}, c));
    const Tensor y = cdc_conv(xc, w, Var(), theta).value();
    double diff_const = 0.0;
    for (int o = 0; o < 5; ++o) {
        double wsum = 0.0;
        for (int k = 0; k < 36; ++k) wsum += w.value()[o * 36 + k];
        const double expected = (1.0 - theta) * c * wsum;
        for (int h = 1; h < 6; ++h)
            for (int ww = 1; ww < 6; ++ww) diff_const = std::max(diff_const, std::abs(y.at(0, o, h, ww) - expected));
    }
    return {{"cdc theta=0 equals vanilla convolution", diff0 < 1e-6, "max abs diff " + format(diff0)},
            {"cdc constant input equals (1-theta) c sum(w)", diff_const < 1e-6, "max abs diff " + format(diff_const)}};
}

std::vector<OracleResult> metric_oracles(Rng& rng, int sets, int max_samples) {
    int agree = 0;
    std::string first_mismatch;
    for (int k = 0; k < sets; ++k) {
        const int n = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(max_samples - 1)));
        std::vector<ScoredSample> s(n);
        // Coarse grids force ties on some sets.
        const bool coarse = k % 3 == 0;
        for (int i = 0; i < n; ++i) {
            s[i].label = i == 0 ? Label::live : i == 1 ? Label::spoof : (rng.uniform() < 0.5 ? Label::live : Label::spoof);
            const double shift = s[i].label == Label::live ? 0.3 * rng.uniform() : 0.0;
            s[i].score = coarse ? std::round(10.0 * (rng.uniform() + shift)) / 10.0 : rng.uniform() + shift;
        }
        const EerResult a = eer(s), b = sweep_eer(s);
        if (a.eer == b.eer && a.threshold == b.threshold)
            ++agree;
        else if (first_mismatch.empty())
            first_mismatch = "set " + std::to_string(k) + ": eer " + format(a.eer) + "@" + format(a.threshold) +
                             " vs sweep " + format(b.eer) + "@" + format(b.threshold);
    }
    const ErrorRates r = metrics(Confusion{9, 8, 2, 1});
    const bool fixed = r.apcer == 0.2 && r.bpcer == 0.1 && r.acer == 0.15;
    return {{"eer equals exhaustive sweep", agree == sets,
             std::to_string(agree) + "/" + std::to_string(sets) + " agree" +
                 (first_mismatch.empty() ? "" : "; " + first_mismatch)},
            {"counts (FP=2,TN=8,FN=1,TP=9) give (0.2, 0.1, 0.15)", fixed,
             "apcer " + format(r.apcer) + " bpcer " + format(r.bpcer) + " acer " + format(r.acer)}};
}

std::vector<OracleResult> run_oracle_suite(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<OracleResult> all;
    for (auto part : {gradient_oracles(rng), network_gradient_oracles(rng), kl_oracles(rng), cdc_oracles(rng), metric_oracles(rng)})
        all.insert(all.end(), part.begin(), part.end());
    return all;
}

}  // namespace dsdg
