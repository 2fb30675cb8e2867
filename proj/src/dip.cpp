#include "brainit/dip.hpp"

#include <cmath>

#include "brainit/image.hpp"
#include "brainit/optim.hpp"
#include "brainit/rng.hpp"

namespace brainit::dip {

namespace {

/// Encoder-decoder generator with skip connections: one stride-1 stem,
/// stride-2 convs down to `scales` levels, bilinear upsampling back with
/// the encoder map of each level concatenated, sigmoid RGB head.
struct Generator {
    std::vector<nn::Var> enc_w, enc_b;  // scales convs (first stride 1)
    std::vector<nn::Var> dec_w, dec_b;  // scales-1 convs after upsample+skip
    nn::Var head_w, head_b;
    std::int64_t size;
    int scales;

    static Generator init(std::int64_t size, const DipConfig& cfg, Rng& rng) {
        Generator g;
        g.size = size;
        g.scales = cfg.scales;
        auto conv_param = [&](std::int64_t co, std::int64_t ci) {
            Tensor w({co, ci, 3, 3});
            const Real s = 1.0 / std::sqrt(static_cast<Real>(ci * 9));
            for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = s * rng.normal();
            return nn::parameter(w);
        };
        std::int64_t in_c = cfg.input_channels;
        for (int l = 0; l < cfg.scales; ++l) {
            g.enc_w.push_back(conv_param(cfg.width, in_c));
            g.enc_b.push_back(nn::parameter(Tensor::zeros({cfg.width})));
            in_c = cfg.width;
        }
        for (int l = 0; l < cfg.scales - 1; ++l) {
            g.dec_w.push_back(conv_param(cfg.width, 2 * cfg.width));
            g.dec_b.push_back(nn::parameter(Tensor::zeros({cfg.width})));
        }
        g.head_w = conv_param(3, cfg.width);
        g.head_b = nn::parameter(Tensor::zeros({3}));
        return g;
    }

    nn::Var forward(const nn::Var& z) const {
        std::vector<nn::Var> skips;
        nn::Var x = z;
        std::int64_t res = size;
        for (int l = 0; l < scales; ++l) {
            const int stride = (l == 0) ? 1 : 2;
            if (stride == 2) res /= 2;
            x = nn::leaky_relu(nn::conv2d(x, enc_w[static_cast<std::size_t>(l)],
                                          enc_b[static_cast<std::size_t>(l)], stride, 1),
                               0.1);
            skips.push_back(x);
        }
        for (int l = scales - 2; l >= 0; --l) {
            res *= 2;
            x = nn::upsample_bilinear(x, res, res);
            x = nn::concat_channels(x, skips[static_cast<std::size_t>(l)]);
            x = nn::leaky_relu(nn::conv2d(x, dec_w[static_cast<std::size_t>(scales - 2 - l)],
                                          dec_b[static_cast<std::size_t>(scales - 2 - l)], 1, 1),
                               0.1);
        }
        return nn::sigmoid(nn::conv2d(x, head_w, head_b, 1, 1));
    }

    std::map<std::string, nn::Var> params() const {
        std::map<std::string, nn::Var> m;
        for (std::size_t l = 0; l < enc_w.size(); ++l) {
            m["enc_w" + std::to_string(l)] = enc_w[l];
            m["enc_b" + std::to_string(l)] = enc_b[l];
        }
        for (std::size_t l = 0; l < dec_w.size(); ++l) {
            m["dec_w" + std::to_string(l)] = dec_w[l];
            m["dec_b" + std::to_string(l)] = dec_b[l];
        }
        m["head_w"] = head_w;
        m["head_b"] = head_b;
        return m;
    }
};

std::vector<Real> resolve_weights(const DipConfig& cfg, std::size_t layers) {
    if (cfg.layer_weights.empty()) return std::vector<Real>(layers, 1.0);
    if (cfg.layer_weights.size() != layers)
        throw ConfigError("dip: layer weight count does not match the layout");
    return cfg.layer_weights;
}

}  // namespace

nn::Var feature_match_loss(const std::vector<nn::Var>& maps, const std::vector<Tensor>& targets,
                           const std::vector<Real>& weights) {
    if (maps.size() != targets.size() || maps.size() != weights.size())
        throw ArgumentError("feature_match_loss: layer count mismatch");
    nn::Var total;
    for (std::size_t l = 0; l < maps.size(); ++l) {
        if (weights[l] == 0.0) continue;
        nn::Var diff = nn::sub(maps[l], nn::constant(targets[l]));
        nn::Var term = nn::mul_scalar(nn::mean(nn::mul(diff, diff)), weights[l]);
        total = total.defined() ? nn::add(total, term) : term;
    }
    if (!total.defined()) throw ArgumentError("feature_match_loss: all weights are zero");
    return total;
}

Real relative_feature_l2(const std::vector<Tensor>& maps, const std::vector<Tensor>& targets,
                         const std::vector<Real>& weights) {
    Real num = 0, den = 0;
    for (std::size_t l = 0; l < maps.size(); ++l) {
        for (std::int64_t i = 0; i < maps[l].numel(); ++i) {
            const Real d = maps[l][i] - targets[l][i];
            num += weights[l] * d * d;
            den += weights[l] * targets[l][i] * targets[l][i];
        }
    }
    return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

DipResult dip_invert(const feat::FeatureTokenSet& target,
                     const feat::FeatureExtractorInterface& extractor,
                     const feat::ConvTokenLayout& layout, const DipConfig& config) {
    layout.validate();
    extractor.check_layout(layout);
    if (config.iterations < 1 || config.ema <= 0 || config.ema >= 1 || config.scales < 1)
        throw ArgumentError("dip: bad config");
    const std::int64_t s = layout.input_size;
    if (s % (1 << (config.scales - 1)) != 0)
        throw ConfigError("dip: image size not divisible by the scale pyramid");

    std::vector<Tensor> targets = feat::untokenize(target, layout);
    std::vector<Real> weights = resolve_weights(config, targets.size());

    Rng rng(config.seed);
    Generator gen = Generator::init(s, config, rng);

    Tensor z0({config.input_channels, s, s});
    for (std::int64_t i = 0; i < z0.numel(); ++i) z0[i] = config.input_noise_sigma * rng.normal();

    optim::AdamWConfig oc;
    oc.lr = config.lr;
    optim::AdamW opt(gen.params(), oc);

    DipResult result;
    Tensor ema_img;
    for (int it = 0; it < config.iterations; ++it) {
        Tensor z = z0;
        if (config.reg_noise_sigma > 0)
            for (std::int64_t i = 0; i < z.numel(); ++i)
                z[i] += config.reg_noise_sigma * rng.normal();

        nn::Var out = gen.forward(nn::constant(z));
        auto maps = extractor.forward(out);
        nn::Var loss = feature_match_loss(maps, targets, weights);
        const Real lv = loss.value()[0];
        if (!std::isfinite(lv)) throw ConfigError("dip: non-finite loss at iteration " + std::to_string(it));
        result.loss_trace.push_back(lv);

        if (ema_img.numel() == 0) {
            ema_img = out.value();
        } else {
            for (std::int64_t i = 0; i < ema_img.numel(); ++i)
                ema_img[i] = config.ema * ema_img[i] + (1.0 - config.ema) * out.value()[i];
        }

        loss.backward();
        opt.step();
        opt.zero_grad();
        result.iterations_run = it + 1;

        if (config.stop_at_relative_l2 > 0) {
            std::vector<Tensor> vals;
            for (const auto& m : maps) vals.push_back(m.value());
            if (relative_feature_l2(vals, targets, weights) < config.stop_at_relative_l2) break;
        }
    }

    result.image.image_id = "dip";
    result.image.pixels = img::clip01(img::chw_to_hwc(ema_img));
    auto final_maps = extractor.extract(img::hwc_to_chw(result.image.pixels));
    result.final_relative_l2 = relative_feature_l2(final_maps, targets, weights);
    return result;
}

Tensor upsample_for_diffusion(const Tensor& image, std::int64_t out_size) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ArgumentError("upsample_for_diffusion: image must be [H,W,3]");
    return img::resize(image, out_size, out_size);
}

}  // namespace brainit::dip
