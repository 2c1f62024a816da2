#pragma once

#include <vector>

#include "dsdg/layers.hpp"

namespace dsdg {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(ParamList params, AdamOptions options);

    // Applies one update from the accumulated gradients.
    void step();
    void zero_grad();
    long steps_taken() const { return t_; }

private:
    ParamList params_;
    AdamOptions opt_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace dsdg
