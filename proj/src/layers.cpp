#include "dsdg/layers.hpp"

#include <cmath>

#include "dsdg/error.hpp"
#include "dsdg/ops.hpp"

namespace dsdg {

std::size_t count_parameters(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var.value().size();
    return n;
}

void zero_grad(ParamList& params) {
    for (auto& p : params) p.var.zero_grad();
}

void check_finite(const Var& v, const std::string& layer) {
    if (!v.value().all_finite()) throw NumericError("non-finite activation at " + layer);
}

double he_std(int fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride_, int pad_, bool with_bias, Rng& rng)
    : weight(Var::parameter(rng.normal_tensor({out_ch, in_ch, kernel, kernel}, 0.0, he_std(in_ch * kernel * kernel)))),
      stride(stride_),
      pad(pad_) {
    if (with_bias) bias = Var::parameter(Tensor({out_ch}, 0.0));
}

Var Conv2d::forward(const Var& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Var cdc_conv(const Var& x, const Var& weight, const Var& bias, double theta, int stride, int pad) {
    if (theta < 0.0 || theta > 1.0) throw DomainError("cdc theta must lie in [0, 1]");
    Var out = ops::conv2d(x, weight, bias, stride, pad);
    if (theta == 0.0) return out;
    Var center = ops::conv2d(x, ops::kernel_sum(weight), Var(), stride, 0);
    return out - theta * center;
}

CdcConv2d::CdcConv2d(int in_ch, int out_ch, double theta_, Rng& rng)
    : conv(in_ch, out_ch, 3, 1, 1, false, rng), theta(theta_) {}

Var CdcConv2d::forward(const Var& x) const { return cdc_conv(x, conv.weight, conv.bias, theta, conv.stride, conv.pad); }

void CdcConv2d::collect(ParamList& out, const std::string& prefix) const { conv.collect(out, prefix); }

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride_, int pad_, Rng& rng)
    : weight(Var::parameter(rng.normal_tensor({in_ch, out_ch, kernel, kernel}, 0.0, he_std(in_ch * kernel * kernel / (stride_ * stride_))))),
      bias(Var::parameter(Tensor({out_ch}, 0.0))),
      stride(stride_),
      pad(pad_) {}

Var ConvTranspose2d::forward(const Var& x) const { return ops::conv_transpose2d(x, weight, bias, stride, pad); }

void ConvTranspose2d::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

DepthwiseConv2d::DepthwiseConv2d(int channels, int kernel, int stride_, int pad_, Rng& rng)
    : weight(Var::parameter(rng.normal_tensor({channels, 1, kernel, kernel}, 0.0, he_std(kernel * kernel)))),
      bias(Var::parameter(Tensor({channels}, 0.0))),
      stride(stride_),
      pad(pad_) {}

Var DepthwiseConv2d::forward(const Var& x) const { return ops::depthwise_conv2d(x, weight, bias, stride, pad); }

void DepthwiseConv2d::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Linear::Linear(int in_features, int out_features, Rng& rng, double init_std)
    : weight(Var::parameter(
          rng.normal_tensor({out_features, in_features}, 0.0, init_std > 0.0 ? init_std : he_std(in_features)))),
      bias(Var::parameter(Tensor({out_features}, 0.0))) {}

Var Linear::forward(const Var& x) const { return ops::linear(x, weight, bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

}  // namespace dsdg
