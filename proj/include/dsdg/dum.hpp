#pragma once

#include "dsdg/data.hpp"
#include "dsdg/layers.hpp"

namespace dsdg {

// Per-pixel Gaussian over depth: mu and sigma grids of equal shape, sigma > 0.
struct UncertainDepth {
    Tensor mu;
    Tensor sigma;
};

// Batched form inside the graph: mu and logvar are [N, 1, h, w].
struct DepthDistribution {
    Var mu;
    Var logvar;

    Var sigma() const;
};

// Two parallel 3x3 heads over 64-channel features: one for the mean, one for
// the log-variance. sigma = exp(logvar / 2).
class DepthUncertaintyHead {
public:
    DepthUncertaintyHead() = default;
    DepthUncertaintyHead(int in_channels, Rng& rng);

    DepthDistribution forward(const Var& features) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Conv2d mean_head;
    Conv2d logvar_head;
};

// Unbatched distribution for sample `index` of a forward result.
UncertainDepth dum_forward(const DepthUncertaintyHead& head, const Var& features, int index = 0);
UncertainDepth to_uncertain_depth(const DepthDistribution& dist, int index);

// d = mu + eps * sigma, unclamped.
DepthMap sample_depth(const UncertainDepth& ud, const Tensor& noise);
Var sample_depth(const DepthDistribution& dist, const Tensor& noise);

// Mean over pixels of KL(N(mu, sigma^2) || N(target, 1)).
double loss_kl_dum(const UncertainDepth& ud, const DepthMap& target);
// Batched: per-sample pixel mean, returned as [N, 1].
Var loss_kl_dum(const DepthDistribution& dist, const Var& target);

// Inference uses the mean only.
DepthMap infer_depth(const UncertainDepth& ud);

}  // namespace dsdg
