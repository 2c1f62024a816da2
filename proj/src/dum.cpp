#include "dsdg/dum.hpp"

#include <cmath>

#include "dsdg/error.hpp"
#include "dsdg/ops.hpp"

namespace dsdg {

Var DepthDistribution::sigma() const { return ops::exp(ops::scale(logvar, 0.5)); }

DepthUncertaintyHead::DepthUncertaintyHead(int in_channels, Rng& rng)
    : mean_head(in_channels, 1, 3, 1, 1, true, rng), logvar_head(in_channels, 1, 3, 1, 1, true, rng) {
    // Log-variance starts near zero so the initial sigma is close to one.
    for (double& v : logvar_head.weight.mutable_value().values()) v *= 0.01;
}

DepthDistribution DepthUncertaintyHead::forward(const Var& features) const {
    DepthDistribution d{mean_head.forward(features), logvar_head.forward(features)};
    check_finite(d.mu, "dum.mean_head");
    check_finite(d.logvar, "dum.logvar_head");
    return d;
}

void DepthUncertaintyHead::collect(ParamList& out, const std::string& prefix) const {
    mean_head.collect(out, prefix + ".mean_head");
    logvar_head.collect(out, prefix + ".logvar_head");
}

UncertainDepth to_uncertain_depth(const DepthDistribution& dist, int index) {
    const Shape& s = dist.mu.shape();
    const int h = s[2], w = s[3];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    UncertainDepth ud{Tensor({h, w}), Tensor({h, w})};
    const double* mu = dist.mu.value().data() + index * plane;
    const double* lv = dist.logvar.value().data() + index * plane;
    for (std::size_t i = 0; i < plane; ++i) {
        ud.mu[i] = mu[i];
        ud.sigma[i] = std::exp(0.5 * lv[i]);
    }
    return ud;
}

UncertainDepth dum_forward(const DepthUncertaintyHead& head, const Var& features, int index) {
    NoGradGuard ng;
    return to_uncertain_depth(head.forward(features), index);
}

DepthMap sample_depth(const UncertainDepth& ud, const Tensor& noise) {
    if (noise.shape() != ud.mu.shape() || ud.sigma.shape() != ud.mu.shape())
        throw ShapeError("sample_depth: noise " + to_string(noise.shape()) + " vs mu " + to_string(ud.mu.shape()));
    Tensor d(ud.mu.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = ud.mu[i] + noise[i] * ud.sigma[i];
    return {d};
}

Var sample_depth(const DepthDistribution& dist, const Tensor& noise) {
    if (noise.shape() != dist.mu.shape())
        throw ShapeError("sample_depth: noise " + to_string(noise.shape()) + " vs mu " + to_string(dist.mu.shape()));
    return dist.mu + Var::constant(noise) * dist.sigma();
}

double loss_kl_dum(const UncertainDepth& ud, const DepthMap& target) {
    if (ud.mu.shape() != target.grid.shape() || ud.sigma.shape() != ud.mu.shape())
        throw ShapeError("loss_kl_dum: prediction " + to_string(ud.mu.shape()) + " vs target " +
                         to_string(target.grid.shape()));
    double total = 0.0;
    for (std::size_t i = 0; i < ud.mu.size(); ++i) {
        const double s = ud.sigma[i];
        if (!(s > 0.0)) throw DomainError("loss_kl_dum: sigma must be strictly positive");
        const double diff = ud.mu[i] - target.grid[i];
        total += 0.5 * (diff * diff + s * s - 1.0 - std::log(s * s));
    }
    return total / static_cast<double>(ud.mu.size());
}

Var loss_kl_dum(const DepthDistribution& dist, const Var& target) {
    if (target.shape() != dist.mu.shape())
        throw ShapeError("loss_kl_dum: prediction " + to_string(dist.mu.shape()) + " vs target " +
                         to_string(target.shape()));
    Var terms = ops::square(dist.mu - target) + ops::exp(dist.logvar) - dist.logvar;
    return ops::scale(ops::add_scalar(ops::mean_per_sample(terms), -1.0), 0.5);
}

DepthMap infer_depth(const UncertainDepth& ud) { return {ud.mu}; }

}  // namespace dsdg
