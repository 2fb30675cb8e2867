#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "brainit/autodiff.hpp"
#include "brainit/errors.hpp"
#include "brainit/tensor.hpp"

namespace brainit::gen {

struct BackendInfo {
    std::int64_t image_size = 0;   // native square resolution
    std::int64_t token_width = 0;  // conditioning token dim
    bool trainable = false;
    std::string name;
};

/// Conditional image-to-image diffusion backend. Images cross this
/// boundary in pixel space, [H,W,3] in [0,1]; any latent handling is the
/// adapter's business. Schedules define zero noise at step 0.
class DiffusionBackendInterface {
public:
    virtual ~DiffusionBackendInterface() = default;
    virtual BackendInfo info() const = 0;

    /// Forward-noising operator at schedule index `step` of `total`.
    virtual Tensor add_noise(const Tensor& image, int step, int total,
                             std::uint64_t seed) const = 0;

    /// Runs the reverse process from `start_step` through `total - 1`
    /// conditioned on the given tokens.
    virtual Tensor denoise_from(const Tensor& latent, int start_step, int total,
                                const Tensor& cond_tokens, std::uint64_t seed) const = 0;

    /// One image-to-image enhancement pass; identity unless overridden.
    virtual Tensor refine(const Tensor& image) const { return image; }

    /// Noise-prediction training loss for joint training. Backends without
    /// trainable weights raise CapabilityError.
    virtual nn::Var denoise_training_loss(const nn::Var& cond_tokens, const Tensor& image,
                                          std::uint64_t seed);
    virtual std::map<std::string, nn::Var> trainable_params() { return {}; }
};

/// Denoiser is the identity; add_noise injects sigma_max * step/(total-1)
/// Gaussian noise (zero by default). The degenerate-contract backend.
class IdentityToyBackend : public DiffusionBackendInterface {
public:
    IdentityToyBackend(std::int64_t image_size, std::int64_t token_width, Real sigma_max = 0.0);
    BackendInfo info() const override;
    Tensor add_noise(const Tensor& image, int step, int total, std::uint64_t seed) const override;
    Tensor denoise_from(const Tensor& latent, int start_step, int total, const Tensor& cond_tokens,
                        std::uint64_t seed) const override;

private:
    std::int64_t image_size_, token_width_;
    Real sigma_max_;
};

/// Each reverse step shrinks toward the conditioning decode:
/// x <- (1-gamma) x + gamma decode(cond). decode maps the mean conditioning
/// token through a trainable linear head, so the whole reverse run has the
/// closed form x_T = (1-gamma)^(T-s) x_s + (1 - (1-gamma)^(T-s)) decode(c).
class LinearToyBackend : public DiffusionBackendInterface {
public:
    LinearToyBackend(std::int64_t image_size, std::int64_t token_width, Real gamma = 0.25,
                     Real sigma_max = 0.0, std::uint64_t seed = 0);
    BackendInfo info() const override;
    Tensor add_noise(const Tensor& image, int step, int total, std::uint64_t seed) const override;
    Tensor denoise_from(const Tensor& latent, int start_step, int total, const Tensor& cond_tokens,
                        std::uint64_t seed) const override;
    nn::Var denoise_training_loss(const nn::Var& cond_tokens, const Tensor& image,
                                  std::uint64_t seed) override;
    std::map<std::string, nn::Var> trainable_params() override;

    Tensor decode_cond(const Tensor& cond_tokens) const;
    nn::Var decode_cond(const nn::Var& cond_tokens) const;
    Real gamma() const { return gamma_; }

private:
    std::int64_t image_size_, token_width_;
    Real gamma_, sigma_max_;
    nn::Var decode_w_;  // [token_width, H*W*3], trainable
    nn::Var decode_b_;  // [H*W*3]
};

/// Adapter slot for the real pretrained backend. Weights do not ship with
/// this repository, so every operation raises CapabilityError pointing at
/// the toy backends.
class SdxlBackendStub : public DiffusionBackendInterface {
public:
    BackendInfo info() const override { return {256, 0, false, "sdxl-stub"}; }
    Tensor add_noise(const Tensor&, int, int, std::uint64_t) const override;
    Tensor denoise_from(const Tensor&, int, int, const Tensor&, std::uint64_t) const override;
};

std::shared_ptr<DiffusionBackendInterface> make_backend(const std::string& name,
                                                        std::int64_t image_size,
                                                        std::int64_t token_width,
                                                        std::uint64_t seed);

}  // namespace brainit::gen
