#include "brainit/backend.hpp"

#include <cmath>

#include "brainit/rng.hpp"

namespace brainit::gen {

namespace {

void check_image(const Tensor& img, std::int64_t size, const char* who) {
    if (img.rank() != 3 || img.dim(0) != size || img.dim(1) != size || img.dim(2) != 3)
        throw ArgumentError(std::string(who) + ": expected [" + std::to_string(size) + "," +
                            std::to_string(size) + ",3] image");
}

Real sigma_at(Real sigma_max, int step, int total) {
    if (total < 1 || step < 0 || step >= total) throw ArgumentError("backend: step out of range");
    if (total == 1) return 0.0;
    return sigma_max * static_cast<Real>(step) / static_cast<Real>(total - 1);
}

Tensor noised(const Tensor& image, Real sigma, std::uint64_t seed) {
    if (sigma == 0.0) return image;
    Tensor out = image;
    Rng rng(seed);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += sigma * rng.normal();
    return out;
}

}  // namespace

nn::Var DiffusionBackendInterface::denoise_training_loss(const nn::Var&, const Tensor&,
                                                         std::uint64_t) {
    throw CapabilityError("backend '" + info().name +
                          "' has no trainable denoiser; use the 'toy-linear' backend");
}

IdentityToyBackend::IdentityToyBackend(std::int64_t image_size, std::int64_t token_width,
                                       Real sigma_max)
    : image_size_(image_size), token_width_(token_width), sigma_max_(sigma_max) {}

BackendInfo IdentityToyBackend::info() const {
    return {image_size_, token_width_, false, "toy-identity"};
}

Tensor IdentityToyBackend::add_noise(const Tensor& image, int step, int total,
                                     std::uint64_t seed) const {
    check_image(image, image_size_, "toy-identity");
    return noised(image, sigma_at(sigma_max_, step, total), seed);
}

Tensor IdentityToyBackend::denoise_from(const Tensor& latent, int start_step, int total,
                                        const Tensor& cond_tokens, std::uint64_t) const {
    check_image(latent, image_size_, "toy-identity");
    if (start_step < 0 || start_step >= total) throw ArgumentError("toy-identity: bad start step");
    if (cond_tokens.rank() != 2 || cond_tokens.dim(1) != token_width_)
        throw ArgumentError("toy-identity: conditioning width mismatch");
    return latent;
}

LinearToyBackend::LinearToyBackend(std::int64_t image_size, std::int64_t token_width, Real gamma,
                                   Real sigma_max, std::uint64_t seed)
    : image_size_(image_size), token_width_(token_width), gamma_(gamma), sigma_max_(sigma_max) {
    if (gamma_ <= 0 || gamma_ > 1) throw ArgumentError("toy-linear: gamma must be in (0, 1]");
    const std::int64_t p = image_size_ * image_size_ * 3;
    Rng rng(Rng::with_stream(seed, 0xBACD));
    Tensor w({token_width_, p});
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(token_width_));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = scale * rng.normal();
    decode_w_ = nn::parameter(w);
    decode_b_ = nn::parameter(Tensor::full({p}, 0.5));
}

BackendInfo LinearToyBackend::info() const {
    return {image_size_, token_width_, true, "toy-linear"};
}

Tensor LinearToyBackend::add_noise(const Tensor& image, int step, int total,
                                   std::uint64_t seed) const {
    check_image(image, image_size_, "toy-linear");
    return noised(image, sigma_at(sigma_max_, step, total), seed);
}

nn::Var LinearToyBackend::decode_cond(const nn::Var& cond_tokens) const {
    const Tensor& c = cond_tokens.value();
    if (c.rank() != 2 || c.dim(1) != token_width_)
        throw ArgumentError("toy-linear: conditioning width mismatch");
    nn::Var mean_tok = nn::mul_scalar(
        nn::matmul(nn::constant(Tensor::full({1, c.dim(0)}, 1.0)), cond_tokens),
        1.0 / static_cast<Real>(c.dim(0)));                        // [1, d]
    nn::Var flat = nn::add_rowvec(nn::matmul(mean_tok, decode_w_), decode_b_);  // [1, P]
    return nn::reshape(flat, {image_size_, image_size_, 3});
}

Tensor LinearToyBackend::decode_cond(const Tensor& cond_tokens) const {
    return decode_cond(nn::constant(cond_tokens)).value();
}

Tensor LinearToyBackend::denoise_from(const Tensor& latent, int start_step, int total,
                                      const Tensor& cond_tokens, std::uint64_t) const {
    check_image(latent, image_size_, "toy-linear");
    if (start_step < 0 || start_step >= total) throw ArgumentError("toy-linear: bad start step");
    Tensor c = decode_cond(cond_tokens);
    Tensor x = latent;
    for (int s = start_step; s < total; ++s)
        for (std::int64_t i = 0; i < x.numel(); ++i)
            x[i] = (1.0 - gamma_) * x[i] + gamma_ * c[i];
    return x;
}

nn::Var LinearToyBackend::denoise_training_loss(const nn::Var& cond_tokens, const Tensor& image,
                                                std::uint64_t seed) {
    check_image(image, image_size_, "toy-linear");
    // The toy denoiser maps any noised input straight to decode(cond), so
    // predicting the injected noise back is equivalent to reconstructing
    // the clean image from the conditioning. With train noise 0 this is a
    // pure reconstruction objective (0 for a perfect predictor).
    (void)seed;
    nn::Var residual = nn::sub(decode_cond(cond_tokens), nn::constant(image));
    return nn::mean(nn::mul(residual, residual));
}

std::map<std::string, nn::Var> LinearToyBackend::trainable_params() {
    return {{"backend/decode_w", decode_w_}, {"backend/decode_b", decode_b_}};
}

Tensor SdxlBackendStub::add_noise(const Tensor&, int, int, std::uint64_t) const {
    throw CapabilityError("sdxl backend: pretrained weights are not bundled; use --toy backends");
}

Tensor SdxlBackendStub::denoise_from(const Tensor&, int, int, const Tensor&,
                                     std::uint64_t) const {
    throw CapabilityError("sdxl backend: pretrained weights are not bundled; use --toy backends");
}

std::shared_ptr<DiffusionBackendInterface> make_backend(const std::string& name,
                                                        std::int64_t image_size,
                                                        std::int64_t token_width,
                                                        std::uint64_t seed) {
    if (name == "toy-identity")
        return std::make_shared<IdentityToyBackend>(image_size, token_width);
    if (name == "toy-linear")
        return std::make_shared<LinearToyBackend>(image_size, token_width, 0.25, 0.0, seed);
    if (name == "sdxl") return std::make_shared<SdxlBackendStub>();
    throw ConfigError("unknown diffusion backend: " + name);
}

}  // namespace brainit::gen
