#pragma once

#include <cstdint>
#include <vector>

#include "brainit/autodiff.hpp"
#include "brainit/datasets.hpp"
#include "brainit/extractor.hpp"
#include "brainit/layout.hpp"

namespace brainit::dip {

struct DipConfig {
    std::int64_t input_channels = 32;
    std::int64_t width = 128;
    int scales = 3;              // resolution levels, bilinear upsampling
    int iterations = 2000;
    Real input_noise_sigma = 0.1;
    Real reg_noise_sigma = 1.0 / 30.0;
    Real ema = 0.99;
    std::vector<Real> layer_weights;  // empty: equal weights
    Real lr = 1e-3;
    Real stop_at_relative_l2 = 0.0;  // 0: run all iterations
    std::uint64_t seed = 0;
};

struct DipResult {
    data::ImageRecord image;       // generator EMA output, [S,S,3] in [0,1]
    std::vector<Real> loss_trace;  // one entry per iteration
    Real final_relative_l2 = 0;    // weighted feature-space relative L2
    int iterations_run = 0;
};

/// Weighted per-layer squared feature match, the inversion objective.
nn::Var feature_match_loss(const std::vector<nn::Var>& maps, const std::vector<Tensor>& targets,
                           const std::vector<Real>& weights);

/// sqrt(sum_l w_l ||map_l - target_l||^2 / sum_l w_l ||target_l||^2)
Real relative_feature_l2(const std::vector<Tensor>& maps, const std::vector<Tensor>& targets,
                         const std::vector<Real>& weights);

/// Optimizes an untrained encoder-decoder generator from fixed noise so
/// that the frozen extractor's features of its output match the target
/// tokens. Returns the exponential moving average of the iterates.
DipResult dip_invert(const feat::FeatureTokenSet& target,
                     const feat::FeatureExtractorInterface& extractor,
                     const feat::ConvTokenLayout& layout, const DipConfig& config);

/// Bilinear upsample of an [H,W,3] image for diffusion initialization.
Tensor upsample_for_diffusion(const Tensor& image, std::int64_t out_size = 256);

}  // namespace brainit::dip
