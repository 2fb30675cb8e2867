#pragma once

#include <cstdint>
#include <vector>

#include "brainit/autodiff.hpp"
#include "brainit/datasets.hpp"
#include "brainit/layout.hpp"

namespace brainit::feat {

/// Frozen multi-scale conv feature extractor. Differentiable w.r.t. the
/// input image (the inversion loop needs that) but exposes no trainable
/// parameters.
class FeatureExtractorInterface {
public:
    virtual ~FeatureExtractorInterface() = default;
    virtual std::vector<std::int64_t> grids() const = 0;
    virtual std::vector<std::int64_t> channels() const = 0;
    /// image is [3, S, S]; returns one map [C_l, g_l, g_l] per level.
    virtual std::vector<nn::Var> forward(const nn::Var& image) const = 0;

    std::vector<Tensor> extract(const Tensor& image_chw) const;
    void check_layout(const ConvTokenLayout& layout) const;
};

/// Small random frozen CNN: one stride-1 conv at full resolution, then one
/// stride-2 conv per halving, LeakyReLU after each. Weights are a pure
/// function of the seed.
class ToyConvExtractor : public FeatureExtractorInterface {
public:
    ToyConvExtractor(std::int64_t input_size, std::vector<std::int64_t> chans, std::uint64_t seed);

    std::vector<std::int64_t> grids() const override { return grids_; }
    std::vector<std::int64_t> channels() const override { return chans_; }
    std::vector<nn::Var> forward(const nn::Var& image) const override;

private:
    std::int64_t input_size_;
    std::vector<std::int64_t> grids_, chans_;
    std::vector<nn::Var> weights_, biases_;  // frozen constants
};

/// Splits feature maps into per-position tokens under the layout's merge
/// rules and replicates channels up to the padded dim.
FeatureTokenSet extract_conv_tokens(const data::ImageRecord& image,
                                    const FeatureExtractorInterface& extractor,
                                    const ConvTokenLayout& layout);

/// Inverse of extract_conv_tokens: replication copies averaged back,
/// overlapping window positions averaged. Returns per-layer [C, g, g] maps.
std::vector<Tensor> untokenize(const FeatureTokenSet& tokens, const ConvTokenLayout& layout);

/// Stand-in for a pretrained semantic backbone: grid*grid tokens, each a
/// fixed random linear map of the downsampled image. Linear and seeded, so
/// token targets are exactly learnable and decodable in toy pipelines.
class ToySemanticBackbone {
public:
    ToySemanticBackbone(std::int64_t grid, std::int64_t d_out, std::int64_t feature_grid,
                        std::uint64_t seed);

    std::int64_t token_count() const { return grid_ * grid_; }
    std::int64_t d_out() const { return d_out_; }

    /// [grid*grid, d_out] semantic tokens for one image.
    Tensor tokens(const data::ImageRecord& image) const;

private:
    std::int64_t grid_, d_out_, feature_grid_;
    std::vector<Tensor> proj_;  // per token position, [F, d_out]
};

}  // namespace brainit::feat
