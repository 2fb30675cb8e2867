#pragma once

#include <cstdint>

#include "brainit/backend.hpp"
#include "brainit/dip.hpp"
#include "brainit/training.hpp"

namespace brainit::gen {

struct GenerationConfig {
    int steps = 38;
    int start = 14;
    bool refine = false;
    Real lowlevel_weight = 1.0;  // 0: init from pure noise instead of the low-level image
    std::uint64_t seed = 0;
};

/// Everything dual-branch inference needs besides the diffusion backend.
/// The low-level trio (model, extractor, layout) may be left null when only
/// the semantic path runs.
struct GenerationModels {
    const train::BitModel* semantic = nullptr;
    const train::BitModel* lowlevel = nullptr;
    const feat::FeatureExtractorInterface* extractor = nullptr;
    const feat::ConvTokenLayout* layout = nullptr;
    dip::DipConfig dip;
};

/// The low branch alone: predicted conv tokens, inverted through the frozen
/// extractor, upsampled to `out_size`.
data::ImageRecord lowlevel_only_generate(const data::FmriSample& fmri,
                                         const GenerationModels& models, std::int64_t out_size,
                                         std::uint64_t seed);

/// Low-level image noised at the start step initializes the reverse
/// diffusion run under semantic-token conditioning.
data::ImageRecord dual_branch_generate(const data::FmriSample& fmri,
                                       const GenerationModels& models,
                                       const DiffusionBackendInterface& backend,
                                       const GenerationConfig& config);

/// Reverse run over the full schedule from a pure-noise latent.
data::ImageRecord semantic_only_generate(const data::FmriSample& fmri,
                                         const GenerationModels& models,
                                         const DiffusionBackendInterface& backend,
                                         const GenerationConfig& config);

/// One image-to-image enhancement pass through the backend.
data::ImageRecord refine(const data::ImageRecord& image,
                         const DiffusionBackendInterface& backend);

}  // namespace brainit::gen
