#include "brainit/generation.hpp"

#include "brainit/image.hpp"
#include "brainit/rng.hpp"

namespace brainit::gen {

namespace {

void check_steps(const GenerationConfig& c) {
    if (c.steps < 1 || c.start < 0 || c.start >= c.steps)
        throw ArgumentError("generation: need 0 <= start < steps");
}

Tensor semantic_tokens(const data::FmriSample& fmri, const GenerationModels& models,
                       const DiffusionBackendInterface& backend) {
    if (models.semantic == nullptr) throw ConfigError("generation: no semantic model loaded");
    Tensor tokens = models.semantic->forward(fmri).value();
    if (tokens.dim(1) != backend.info().token_width)
        throw CapabilityError("generation: backend '" + backend.info().name + "' expects " +
                              std::to_string(backend.info().token_width) +
                              "-wide conditioning tokens, model emits " +
                              std::to_string(tokens.dim(1)));
    return tokens;
}

/// Latent the schedule starts from when no low-level image is used.
Tensor noise_init(std::int64_t size, std::uint64_t seed) {
    Rng rng = Rng::with_stream(seed, 0x9E01);
    Tensor init({size, size, 3});
    for (std::int64_t i = 0; i < init.numel(); ++i) init[i] = 0.5 + 0.5 * rng.normal();
    return init;
}

data::ImageRecord finish(const data::FmriSample& fmri, Tensor pixels, bool refine_pass,
                         const DiffusionBackendInterface& backend) {
    if (refine_pass) pixels = backend.refine(pixels);
    return {fmri.image_id, img::clip01(pixels)};
}

}  // namespace

data::ImageRecord lowlevel_only_generate(const data::FmriSample& fmri,
                                         const GenerationModels& models, std::int64_t out_size,
                                         std::uint64_t seed) {
    if (models.lowlevel == nullptr || models.extractor == nullptr || models.layout == nullptr)
        throw ConfigError("generation: low-level model, extractor, and layout are required");
    feat::FeatureTokenSet target;
    target.tokens = models.lowlevel->forward(fmri).value();
    target.kind = "conv-layer";
    target.layer_offsets = models.layout->layer_offsets();

    dip::DipConfig dc = models.dip;
    dc.seed = Rng::with_stream(seed, 0xD1F0).next_u64();
    auto inverted = dip::dip_invert(target, *models.extractor, *models.layout, dc);
    return {fmri.image_id, dip::upsample_for_diffusion(inverted.image.pixels, out_size)};
}

data::ImageRecord dual_branch_generate(const data::FmriSample& fmri,
                                       const GenerationModels& models,
                                       const DiffusionBackendInterface& backend,
                                       const GenerationConfig& config) {
    check_steps(config);
    const std::int64_t s = backend.info().image_size;
    Tensor cond = semantic_tokens(fmri, models, backend);

    Tensor init;
    if (config.lowlevel_weight == 0.0) {
        init = noise_init(s, config.seed);
    } else {
        init = lowlevel_only_generate(fmri, models, s, config.seed).pixels;
        if (config.lowlevel_weight != 1.0) {
            Tensor noise = noise_init(s, config.seed);
            for (std::int64_t i = 0; i < init.numel(); ++i)
                init[i] = config.lowlevel_weight * init[i] +
                          (1.0 - config.lowlevel_weight) * noise[i];
        }
    }

    Tensor latent = backend.add_noise(init, config.start, config.steps, config.seed);
    Tensor out = backend.denoise_from(latent, config.start, config.steps, cond, config.seed);
    return finish(fmri, std::move(out), config.refine, backend);
}

data::ImageRecord semantic_only_generate(const data::FmriSample& fmri,
                                         const GenerationModels& models,
                                         const DiffusionBackendInterface& backend,
                                         const GenerationConfig& config) {
    check_steps(config);
    Tensor cond = semantic_tokens(fmri, models, backend);
    Tensor latent = noise_init(backend.info().image_size, config.seed);
    Tensor out = backend.denoise_from(latent, 0, config.steps, cond, config.seed);
    return finish(fmri, std::move(out), config.refine, backend);
}

data::ImageRecord refine(const data::ImageRecord& image,
                         const DiffusionBackendInterface& backend) {
    return {image.image_id, img::clip01(backend.refine(image.pixels))};
}

}  // namespace brainit::gen
