#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dsdg/eval.hpp"
#include "dsdg/layers.hpp"

namespace dsdg {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at the worst coordinate
    double numeric = 0.0;
    double step = 0.0;
    std::size_t coordinates = 0;
    std::size_t skipped_kinks = 0;
};

// |a - f| / max(|a|, |f|, 1e-8)
double relative_error(double analytic, double numeric);

// Rebuilds the scalar loss from the current parameter values.
using LossFn = std::function<Var()>;

// Central differences on up to `coords_per_param` random coordinates of each
// parameter (all of them when the parameter is smaller). With a positive
// `kink_threshold`, a coordinate whose forward and backward one-sided slopes
// differ by more than that relative error straddles a nondifferentiable
// point (ReLU, max pooling) and is counted in `skipped_kinks` instead.
GradCheckReport fd_gradient(const LossFn& loss, const ParamList& params, double step, Rng& rng,
                            std::size_t coords_per_param = 8, double kink_threshold = 0.0);

struct McEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

enum class Reduction { sum, mean };

// Monte-Carlo estimate of KL(N(mu, sigma^2) || N(target, 1)) over independent
// coordinates, reduced across coordinates.
McEstimate mc_kl(std::span<const double> mu, std::span<const double> sigma, std::span<const double> target,
                 std::size_t n_samples, Rng& rng, Reduction reduction = Reduction::sum);

// Exhaustive midpoint sweep; matches eer() on every input.
EerResult sweep_eer(const std::vector<ScoredSample>& scores);

// --- oracle suite -------------------------------------------------------------

struct OracleResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Gradient checks of every loss term at `points` random inputs each.
std::vector<OracleResult> gradient_oracles(Rng& rng, int points = 10, double tolerance = 1e-4);
// Whole objectives through small generator and FAS networks. Coordinates
// straddling a ReLU kink are skipped; preactivations within ~1e-8 of a kink
// still bias the central difference, hence the looser tolerance.
std::vector<OracleResult> network_gradient_oracles(Rng& rng, double tolerance = 5e-3);
// Closed-form KL terms against Monte-Carlo estimates (3 standard errors).
std::vector<OracleResult> kl_oracles(Rng& rng, int triples = 20, std::size_t samples = 1'000'000);
// Central-difference convolution degeneracy and constant-input checks.
std::vector<OracleResult> cdc_oracles(Rng& rng);
// eer() against sweep_eer() on random score sets plus the fixed count case.
std::vector<OracleResult> metric_oracles(Rng& rng, int sets = 1000, int max_samples = 256);

std::vector<OracleResult> run_oracle_suite(std::uint64_t seed);

}  // namespace dsdg
