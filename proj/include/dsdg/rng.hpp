#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dsdg/tensor.hpp"

namespace dsdg {

// The single seeded random stream a run draws from.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0);
    Tensor uniform_tensor(Shape shape, double lo, double hi);
    std::vector<std::size_t> permutation(std::size_t n);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dsdg
