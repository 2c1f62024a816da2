#include "dsdg/optim.hpp"

#include <cmath>

namespace dsdg {

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), opt_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.var.shape(), 0.0);
        v_.emplace_back(p.var.shape(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Var& p = params_[k].var;
        const Tensor& g = p.grad();
        if (g.empty()) continue;
        Tensor& w = p.mutable_value();
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
            w[i] -= opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
        }
    }
}

void Adam::zero_grad() { dsdg::zero_grad(params_); }

}  // namespace dsdg
