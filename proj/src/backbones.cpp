#include "dsdg/backbones.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dsdg/error.hpp"
#include "dsdg/ops.hpp"

namespace dsdg {

std::string to_string(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::depthnet: return "depthnet";
        case BackboneKind::cdcn: return "cdcn";
        case BackboneKind::resnet: return "resnet";
        case BackboneKind::mobilenetv2: return "mobilenetv2";
    }
    return "?";
}

BackboneKind parse_backbone_kind(const std::string& text) {
    for (auto k : {BackboneKind::depthnet, BackboneKind::cdcn, BackboneKind::resnet, BackboneKind::mobilenetv2})
        if (to_string(k) == text) return k;
    throw ConfigError("unknown backbone kind '" + text + "' (expected depthnet, cdcn, resnet or mobilenetv2)");
}

void BackboneSpec::validate() const {
    if (cdc_theta < 0.0 || cdc_theta > 1.0) throw ConfigError("backbone.cdc_theta must lie in [0, 1]");
    if (!(width > 0.0)) throw ConfigError("backbone.width must be positive");
}

namespace {

int scaled(int channels, double width) { return std::max(1, static_cast<int>(std::lround(channels * width))); }

void require_image_batch(const Var& x) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % Backbone::kOutputStride != 0 || s[3] % Backbone::kOutputStride != 0)
        throw ShapeError("backbone input must be [N, 3, H, W] with H, W divisible by 8; got " + to_string(s));
}

// 3x3 stride-1 convolution that is either plain (with bias) or central
// difference (without bias).
class Conv3 {
public:
    Conv3() = default;
    Conv3(int in_ch, int out_ch, bool cdc, double theta, Rng& rng) : cdc_(cdc) {
        if (cdc)
            cdc_conv_ = CdcConv2d(in_ch, out_ch, theta, rng);
        else
            conv_ = Conv2d(in_ch, out_ch, 3, 1, 1, true, rng);
    }
    Var forward(const Var& x) const { return cdc_ ? cdc_conv_.forward(x) : conv_.forward(x); }
    void collect(ParamList& out, const std::string& prefix) const {
        cdc_ ? cdc_conv_.collect(out, prefix) : conv_.collect(out, prefix);
    }

private:
    bool cdc_ = false;
    Conv2d conv_;
    CdcConv2d cdc_conv_;
};

// Stem, three (128, 196, 128, pool) blocks, multi-scale concat, head.
class DepthNetFamily final : public Backbone {
public:
    DepthNetFamily(const BackboneSpec& spec, Rng& rng) : kind_(spec.kind) {
        const bool cdc = spec.kind == BackboneKind::cdcn;
        const double w = spec.width;
        const int stem = scaled(64, w);
        const std::array<int, 3> block = {scaled(128, w), scaled(196, w), scaled(128, w)};
        stem_ = Conv3(3, stem, cdc, spec.cdc_theta, rng);
        int in_ch = stem;
        for (auto& b : blocks_) {
            for (std::size_t i = 0; i < 3; ++i) {
                b[i] = Conv3(in_ch, block[i], cdc, spec.cdc_theta, rng);
                in_ch = block[i];
            }
        }
        head_[0] = Conv3(3 * block[2], scaled(128, w), cdc, spec.cdc_theta, rng);
        head_[1] = Conv3(scaled(128, w), kOutChannels, cdc, spec.cdc_theta, rng);
    }

    Var forward(const Var& images) const override {
        require_image_batch(images);
        const int oh = images.shape()[2] / kOutputStride, ow = images.shape()[3] / kOutputStride;
        Var h = ops::relu(stem_.forward(images));
        std::vector<Var> scales;
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            for (const auto& conv : blocks_[b]) h = ops::relu(conv.forward(h));
            h = ops::max_pool2d(h, 3, 2, 1);
            check_finite(h, to_string(kind_) + ".block" + std::to_string(b));
            scales.push_back(h.shape()[2] == oh ? h : ops::resize_nearest(h, oh, ow));
        }
        h = ops::concat(scales);
        h = ops::relu(head_[0].forward(h));
        h = ops::relu(head_[1].forward(h));
        check_finite(h, to_string(kind_) + ".head");
        return h;
    }

    ParamList parameters() const override {
        ParamList out;
        stem_.collect(out, "stem");
        for (std::size_t b = 0; b < blocks_.size(); ++b)
            for (std::size_t i = 0; i < 3; ++i)
                blocks_[b][i].collect(out, "block" + std::to_string(b) + ".conv" + std::to_string(i));
        head_[0].collect(out, "head.conv0");
        head_[1].collect(out, "head.conv1");
        return out;
    }

    BackboneKind kind() const override { return kind_; }

private:
    BackboneKind kind_;
    Conv3 stem_;
    std::array<std::array<Conv3, 3>, 3> blocks_;
    std::array<Conv3, 2> head_;
};

// Two 3x3 convolutions with an identity or 1x1 projection shortcut.
struct BasicBlock {
    BasicBlock(int in_ch, int out_ch, int stride, Rng& rng)
        : conv1(in_ch, out_ch, 3, stride, 1, true, rng), conv2(out_ch, out_ch, 3, 1, 1, true, rng) {
        if (stride != 1 || in_ch != out_ch) shortcut = Conv2d(in_ch, out_ch, 1, stride, 0, true, rng);
        // Residual branch starts small so the unnormalized stack stays stable.
        for (double& v : conv2.weight.mutable_value().values()) v *= 0.1;
    }

    Var forward(const Var& x) const {
        Var skip = shortcut.weight.defined() ? shortcut.forward(x) : x;
        return ops::relu(conv2.forward(ops::relu(conv1.forward(x))) + skip);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        conv1.collect(out, prefix + ".conv1");
        conv2.collect(out, prefix + ".conv2");
        if (shortcut.weight.defined()) shortcut.collect(out, prefix + ".shortcut");
    }

    Conv2d conv1, conv2, shortcut;
};

class ResNetBackbone final : public Backbone {
public:
    ResNetBackbone(const BackboneSpec& spec, Rng& rng) {
        const double w = spec.width;
        stem_ = Conv2d(3, scaled(64, w), 3, 1, 1, true, rng);
        int in_ch = scaled(64, w);
        const std::array<int, 4> widths = {64, 128, 256, 512};
        for (std::size_t s = 0; s < widths.size(); ++s) {
            const int out_ch = scaled(widths[s], w);
            for (int b = 0; b < 2; ++b) {
                blocks_.emplace_back(in_ch, out_ch, s > 0 && b == 0 ? 2 : 1, rng);
                in_ch = out_ch;
            }
        }
        head_[0] = Conv2d(in_ch, scaled(128, w), 3, 1, 1, true, rng);
        head_[1] = Conv2d(scaled(128, w), kOutChannels, 3, 1, 1, true, rng);
    }

    Var forward(const Var& images) const override {
        require_image_batch(images);
        Var h = ops::relu(stem_.forward(images));
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            h = blocks_[b].forward(h);
            check_finite(h, "resnet.block" + std::to_string(b));
        }
        h = ops::relu(head_[0].forward(h));
        return ops::relu(head_[1].forward(h));
    }

    ParamList parameters() const override {
        ParamList out;
        stem_.collect(out, "stem");
        for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(out, "block" + std::to_string(b));
        head_[0].collect(out, "head.conv0");
        head_[1].collect(out, "head.conv1");
        return out;
    }

    BackboneKind kind() const override { return BackboneKind::resnet; }

private:
    Conv2d stem_;
    std::vector<BasicBlock> blocks_;
    std::array<Conv2d, 2> head_;
};

// Expand (1x1), depthwise 3x3, linear project (1x1); residual when shapes allow.
struct InvertedResidual {
    static constexpr int kExpansion = 6;

    InvertedResidual(int in_ch, int out_ch, int stride, Rng& rng)
        : expand(in_ch, in_ch * kExpansion, 1, 1, 0, true, rng),
          depthwise(in_ch * kExpansion, 3, stride, 1, rng),
          project(in_ch * kExpansion, out_ch, 1, 1, 0, true, rng),
          residual(stride == 1 && in_ch == out_ch) {}

    Var forward(const Var& x) const {
        Var h = ops::relu(expand.forward(x));
        h = ops::relu(depthwise.forward(h));
        h = project.forward(h);
        return residual ? h + x : h;
    }

    void collect(ParamList& out, const std::string& prefix) const {
        expand.collect(out, prefix + ".expand");
        depthwise.collect(out, prefix + ".depthwise");
        project.collect(out, prefix + ".project");
    }

    Conv2d expand;
    DepthwiseConv2d depthwise;
    Conv2d project;
    bool residual;
};

class MobileNetV2Backbone final : public Backbone {
public:
    MobileNetV2Backbone(const BackboneSpec& spec, Rng& rng) {
        const double w = spec.width;
        stem_ = Conv2d(3, scaled(32, w), 3, 1, 1, true, rng);
        int in_ch = scaled(32, w);
        const std::vector<std::vector<int>> stages = {{16, 24}, {32}, {64, 96}, {160, 320}};
        for (std::size_t s = 0; s < stages.size(); ++s) {
            for (std::size_t b = 0; b < stages[s].size(); ++b) {
                const int out_ch = scaled(stages[s][b], w);
                blocks_.emplace_back(in_ch, out_ch, s > 0 && b == 0 ? 2 : 1, rng);
                in_ch = out_ch;
            }
        }
        head_[0] = Conv2d(in_ch, scaled(128, w), 3, 1, 1, true, rng);
        head_[1] = Conv2d(scaled(128, w), kOutChannels, 3, 1, 1, true, rng);
    }

    Var forward(const Var& images) const override {
        require_image_batch(images);
        Var h = ops::relu(stem_.forward(images));
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            h = blocks_[b].forward(h);
            check_finite(h, "mobilenetv2.block" + std::to_string(b));
        }
        h = ops::relu(head_[0].forward(h));
        return ops::relu(head_[1].forward(h));
    }

    ParamList parameters() const override {
        ParamList out;
        stem_.collect(out, "stem");
        for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(out, "block" + std::to_string(b));
        head_[0].collect(out, "head.conv0");
        head_[1].collect(out, "head.conv1");
        return out;
    }

    BackboneKind kind() const override { return BackboneKind::mobilenetv2; }

private:
    Conv2d stem_;
    std::vector<InvertedResidual> blocks_;
    std::array<Conv2d, 2> head_;
};

}  // namespace

std::unique_ptr<Backbone> build_backbone(const BackboneSpec& spec, Rng& rng) {
    spec.validate();
    switch (spec.kind) {
        case BackboneKind::depthnet:
        case BackboneKind::cdcn: return std::make_unique<DepthNetFamily>(spec, rng);
        case BackboneKind::resnet: return std::make_unique<ResNetBackbone>(spec, rng);
        case BackboneKind::mobilenetv2: return std::make_unique<MobileNetV2Backbone>(spec, rng);
    }
    throw ConfigError("unknown backbone kind");
}

}  // namespace dsdg
