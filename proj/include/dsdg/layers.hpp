#pragma once

#include <string>
#include <vector>

#include "dsdg/autograd.hpp"
#include "dsdg/rng.hpp"

namespace dsdg {

struct NamedParam {
    std::string name;
    Var var;
};
using ParamList = std::vector<NamedParam>;

std::size_t count_parameters(const ParamList& params);
void zero_grad(ParamList& params);

// Throws NumericError naming the layer when activations blow up.
void check_finite(const Var& v, const std::string& layer);

// He-normal std for a fan-in.
double he_std(int fan_in);

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, Rng& rng);

    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Var weight;
    Var bias;  // undefined when built without bias
    int stride = 1;
    int pad = 0;
};

// Central difference convolution:
//   y(p0) = sum_n w(pn) x(p0 + pn) - theta * x(p0) * sum_n w(pn)
Var cdc_conv(const Var& x, const Var& weight, const Var& bias, double theta, int stride = 1, int pad = 1);

class CdcConv2d {
public:
    CdcConv2d() = default;
    CdcConv2d(int in_ch, int out_ch, double theta, Rng& rng);

    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Conv2d conv;
    double theta = 0.7;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng);

    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Var weight;
    Var bias;
    int stride = 1;
    int pad = 0;
};

class DepthwiseConv2d {
public:
    DepthwiseConv2d() = default;
    DepthwiseConv2d(int channels, int kernel, int stride, int pad, Rng& rng);

    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Var weight;
    Var bias;
    int stride = 1;
    int pad = 0;
};

class Linear {
public:
    Linear() = default;
    // init_std <= 0 selects He-normal.
    Linear(int in_features, int out_features, Rng& rng, double init_std = 0.0);

    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Var weight;
    Var bias;
};

}  // namespace dsdg
