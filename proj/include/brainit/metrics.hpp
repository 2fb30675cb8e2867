#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "brainit/datasets.hpp"

namespace brainit::metrics {

/// Image -> flat feature vector. Must be deterministic with a fixed dim.
struct ExtractorSpec {
    std::string name;
    std::function<Tensor(const data::ImageRecord&)> features;
};

/// Image -> per-layer feature maps [C_l, g_l, g_l], with calibrated layer
/// weights, for the perceptual distance.
struct LayeredExtractorSpec {
    std::string name;
    std::function<std::vector<Tensor>(const data::ImageRecord&)> layers;
    std::vector<Real> weights;
};

struct MetricReport {
    std::map<std::string, Real> values;
    int n = 0;
    std::vector<std::string> extractors;
    std::uint64_t seed = 0;
};

/// Pearson correlation over flattened pixels; the reconstruction is resized
/// to the ground-truth resolution first. Zero-variance inputs give 0 with a
/// warning on stderr.
Real pixcorr(const data::ImageRecord& recon, const data::ImageRecord& gt);

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5) and the
/// standard stability constants for unit-range images, on luminance.
Real ssim_gray(const data::ImageRecord& recon, const data::ImageRecord& gt);
/// Per-channel SSIM averaged over RGB.
Real ssim_color(const data::ImageRecord& recon, const data::ImageRecord& gt);

/// Mean over all ordered pairs (i, j != i) of [corr(f(recon_i), f(gt_i)) >
/// corr(f(recon_i), f(gt_j))], ties credited 0.5.
Real two_way_identification(const std::vector<data::ImageRecord>& recons,
                            const std::vector<data::ImageRecord>& gts,
                            const ExtractorSpec& extractor);

/// Fraction of recons whose true ground truth outranks k-1 sampled
/// distractors (the full gallery when k equals the list size).
Real kway_retrieval(const std::vector<data::ImageRecord>& recons,
                    const std::vector<data::ImageRecord>& gts, const ExtractorSpec& extractor,
                    std::int64_t k, std::uint64_t seed);

/// Mean of 1 - corr(f(recon_i), f(gt_i)); lower is better.
Real correlation_distance(const std::vector<data::ImageRecord>& recons,
                          const std::vector<data::ImageRecord>& gts,
                          const ExtractorSpec& extractor);

/// Weighted per-layer distance between unit-normalized feature columns,
/// averaged over positions and images; lower is better.
Real perceptual_distance(const std::vector<data::ImageRecord>& recons,
                         const std::vector<data::ImageRecord>& gts,
                         const LayeredExtractorSpec& extractor);

/// Deterministic stand-ins for the pretrained feature backbones, registered
/// under the usual column names with a "toy:" prefix.
std::vector<ExtractorSpec> toy_extractor_registry(std::uint64_t seed);
LayeredExtractorSpec toy_perceptual_extractor(std::uint64_t seed);

/// Full metric table over aligned recon/gt lists with the toy registry.
MetricReport evaluate_all(const std::vector<data::ImageRecord>& recons,
                          const std::vector<data::ImageRecord>& gts, std::uint64_t seed);

}  // namespace brainit::metrics
