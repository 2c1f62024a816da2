#pragma once

#include <memory>
#include <string>

#include "dsdg/layers.hpp"

namespace dsdg {

enum class BackboneKind { depthnet, cdcn, resnet, mobilenetv2 };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& text);

struct BackboneSpec {
    BackboneKind kind = BackboneKind::cdcn;
    double cdc_theta = 0.7;  // cdcn only
    // Scales every internal channel count; the 64-channel output is fixed.
    double width = 1.0;

    void validate() const;
};

// Image [N, 3, H, W] in [0, 1] -> depth features [N, 64, H/8, W/8].
class Backbone {
public:
    static constexpr int kOutChannels = 64;
    static constexpr int kOutputStride = 8;

    virtual ~Backbone() = default;
    virtual Var forward(const Var& images) const = 0;
    virtual ParamList parameters() const = 0;
    virtual BackboneKind kind() const = 0;
};

std::unique_ptr<Backbone> build_backbone(const BackboneSpec& spec, Rng& rng);

}  // namespace dsdg
