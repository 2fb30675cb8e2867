#include "brainit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>

#include "brainit/extractor.hpp"
#include "brainit/image.hpp"
#include "brainit/rng.hpp"

namespace brainit::metrics {

namespace {

void check_image(const data::ImageRecord& im, const char* who) {
    if (im.pixels.rank() != 3 || im.pixels.dim(2) != 3)
        throw ArgumentError(std::string(who) + ": expected an [H,W,3] image");
}

Real pearson(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw ArgumentError("correlation: length mismatch");
    const std::int64_t n = a.numel();
    if (n < 2) throw ArgumentError("correlation: need at least 2 values");
    Real ma = 0, mb = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<Real>(n);
    mb /= static_cast<Real>(n);
    Real saa = 0, sbb = 0, sab = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const Real da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa == 0.0 || sbb == 0.0) {
        std::cerr << "warning: zero-variance input in correlation, reporting 0\n";
        return 0.0;
    }
    return sab / std::sqrt(saa * sbb);
}

Tensor align(const data::ImageRecord& recon, const data::ImageRecord& gt) {
    if (recon.pixels.dim(0) == gt.pixels.dim(0) && recon.pixels.dim(1) == gt.pixels.dim(1))
        return recon.pixels;
    return img::resize(recon.pixels, gt.pixels.dim(0), gt.pixels.dim(1));
}

Tensor luminance(const Tensor& hwc) {
    Tensor out({hwc.dim(0), hwc.dim(1)});
    for (std::int64_t y = 0; y < hwc.dim(0); ++y)
        for (std::int64_t x = 0; x < hwc.dim(1); ++x)
            out.at2(y, x) =
                0.299 * hwc.at3(y, x, 0) + 0.587 * hwc.at3(y, x, 1) + 0.114 * hwc.at3(y, x, 2);
    return out;
}

Tensor channel(const Tensor& hwc, std::int64_t c) {
    Tensor out({hwc.dim(0), hwc.dim(1)});
    for (std::int64_t y = 0; y < hwc.dim(0); ++y)
        for (std::int64_t x = 0; x < hwc.dim(1); ++x) out.at2(y, x) = hwc.at3(y, x, c);
    return out;
}

/// SSIM over valid 11x11 Gaussian windows on one single-channel map.
Real ssim_map(const Tensor& x, const Tensor& y) {
    const int W = 11;
    const Real sigma = 1.5;
    const Real c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // unit dynamic range
    const std::int64_t h = x.dim(0), w = x.dim(1);
    if (h < W || w < W) throw ArgumentError("ssim: image smaller than the 11x11 window");

    Real g[W][W];
    Real gsum = 0;
    for (int i = 0; i < W; ++i)
        for (int j = 0; j < W; ++j) {
            const Real dy = i - (W - 1) / 2.0, dx = j - (W - 1) / 2.0;
            g[i][j] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            gsum += g[i][j];
        }
    for (int i = 0; i < W; ++i)
        for (int j = 0; j < W; ++j) g[i][j] /= gsum;

    Real total = 0;
    std::int64_t count = 0;
    for (std::int64_t y0 = 0; y0 + W <= h; ++y0)
        for (std::int64_t x0 = 0; x0 + W <= w; ++x0) {
            Real mx = 0, my = 0;
            for (int i = 0; i < W; ++i)
                for (int j = 0; j < W; ++j) {
                    mx += g[i][j] * x.at2(y0 + i, x0 + j);
                    my += g[i][j] * y.at2(y0 + i, x0 + j);
                }
            Real vx = 0, vy = 0, vxy = 0;
            for (int i = 0; i < W; ++i)
                for (int j = 0; j < W; ++j) {
                    const Real dx_ = x.at2(y0 + i, x0 + j) - mx;
                    const Real dy_ = y.at2(y0 + i, x0 + j) - my;
                    vx += g[i][j] * dx_ * dx_;
                    vy += g[i][j] * dy_ * dy_;
                    vxy += g[i][j] * dx_ * dy_;
                }
            const Real num = (2 * mx * my + c1) * (2 * vxy + c2);
            const Real den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            ++count;
        }
    return total / static_cast<Real>(count);
}

std::vector<Tensor> feature_table(const std::vector<data::ImageRecord>& images,
                                  const ExtractorSpec& extractor) {
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (const auto& im : images) out.push_back(extractor.features(im));
    return out;
}

void check_aligned(const std::vector<data::ImageRecord>& recons,
                   const std::vector<data::ImageRecord>& gts, std::size_t min_n,
                   const char* who) {
    if (recons.size() != gts.size())
        throw ArgumentError(std::string(who) + ": recon/gt list length mismatch");
    if (recons.size() < min_n)
        throw ArgumentError(std::string(who) + ": need at least " + std::to_string(min_n) +
                            " pairs");
}

}  // namespace

Real pixcorr(const data::ImageRecord& recon, const data::ImageRecord& gt) {
    check_image(recon, "pixcorr");
    check_image(gt, "pixcorr");
    return pearson(align(recon, gt), gt.pixels);
}

Real ssim_gray(const data::ImageRecord& recon, const data::ImageRecord& gt) {
    check_image(recon, "ssim");
    check_image(gt, "ssim");
    return ssim_map(luminance(align(recon, gt)), luminance(gt.pixels));
}

Real ssim_color(const data::ImageRecord& recon, const data::ImageRecord& gt) {
    check_image(recon, "ssim");
    check_image(gt, "ssim");
    Tensor r = align(recon, gt);
    Real total = 0;
    for (std::int64_t c = 0; c < 3; ++c) total += ssim_map(channel(r, c), channel(gt.pixels, c));
    return total / 3.0;
}

Real two_way_identification(const std::vector<data::ImageRecord>& recons,
                            const std::vector<data::ImageRecord>& gts,
                            const ExtractorSpec& extractor) {
    check_aligned(recons, gts, 2, "two_way_identification");
    const std::size_t n = recons.size();
    auto fr = feature_table(recons, extractor);
    auto fg = feature_table(gts, extractor);

    // correlation of every recon against every candidate ground truth
    std::vector<std::vector<Real>> corr(n, std::vector<Real>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) corr[i][j] = pearson(fr[i], fg[j]);

    Real credit = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (corr[i][i] > corr[i][j])
                credit += 1.0;
            else if (corr[i][i] == corr[i][j])
                credit += 0.5;
        }
    return credit / static_cast<Real>(n * (n - 1));
}

Real kway_retrieval(const std::vector<data::ImageRecord>& recons,
                    const std::vector<data::ImageRecord>& gts, const ExtractorSpec& extractor,
                    std::int64_t k, std::uint64_t seed) {
    check_aligned(recons, gts, 2, "kway_retrieval");
    const std::int64_t n = static_cast<std::int64_t>(recons.size());
    if (k < 2 || k > n) throw ArgumentError("kway_retrieval: need 2 <= k <= n");
    auto fr = feature_table(recons, extractor);
    auto fg = feature_table(gts, extractor);

    Rng rng = Rng::with_stream(seed, 0x4A11);
    Real hits = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const Real own = pearson(fr[i], fg[i]);
        // k-1 distractors without replacement (everyone else when k == n)
        std::vector<std::int64_t> pool;
        for (std::int64_t j = 0; j < n; ++j)
            if (j != i) pool.push_back(j);
        if (k < n)
            for (std::size_t s = pool.size(); s > 1; --s)
                std::swap(pool[s - 1],
                          pool[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(s)))]);
        bool first = true;
        for (std::int64_t d = 0; d < k - 1; ++d)
            if (pearson(fr[i], fg[pool[static_cast<std::size_t>(d)]]) >= own) {
                first = false;
                break;
            }
        if (first) hits += 1.0;
    }
    return hits / static_cast<Real>(n);
}

Real correlation_distance(const std::vector<data::ImageRecord>& recons,
                          const std::vector<data::ImageRecord>& gts,
                          const ExtractorSpec& extractor) {
    check_aligned(recons, gts, 1, "correlation_distance");
    Real total = 0;
    for (std::size_t i = 0; i < recons.size(); ++i)
        total += 1.0 - pearson(extractor.features(recons[i]), extractor.features(gts[i]));
    return total / static_cast<Real>(recons.size());
}

Real perceptual_distance(const std::vector<data::ImageRecord>& recons,
                         const std::vector<data::ImageRecord>& gts,
                         const LayeredExtractorSpec& extractor) {
    check_aligned(recons, gts, 1, "perceptual_distance");
    Real total = 0;
    for (std::size_t i = 0; i < recons.size(); ++i) {
        auto lr = extractor.layers(recons[i]);
        auto lg = extractor.layers(gts[i]);
        if (lr.size() != extractor.weights.size())
            throw ConfigError("perceptual_distance: layer/weight count mismatch");
        Real d = 0;
        for (std::size_t l = 0; l < lr.size(); ++l) {
            const Tensor& a = lr[l];
            const Tensor& b = lg[l];
            const std::int64_t c = a.dim(0), g = a.dim(1);
            Real layer = 0;
            for (std::int64_t y = 0; y < g; ++y)
                for (std::int64_t x = 0; x < g; ++x) {
                    // unit-normalize the channel column at this position
                    Real na = 0, nb = 0;
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        na += a.at3(ch, y, x) * a.at3(ch, y, x);
                        nb += b.at3(ch, y, x) * b.at3(ch, y, x);
                    }
                    na = std::sqrt(na) + 1e-10;
                    nb = std::sqrt(nb) + 1e-10;
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const Real diff = a.at3(ch, y, x) / na - b.at3(ch, y, x) / nb;
                        layer += diff * diff;
                    }
                }
            d += extractor.weights[l] * layer / static_cast<Real>(g * g);
        }
        total += d;
    }
    return total / static_cast<Real>(recons.size());
}

std::vector<ExtractorSpec> toy_extractor_registry(std::uint64_t seed) {
    // (column name, extractor level, seed stream): distinct random conv
    // stacks standing in for the pretrained backbones
    struct Entry {
        const char* name;
        std::size_t level;
        std::uint64_t stream;
    };
    const Entry entries[] = {
        {"toy:Alex(2)", 1, 0xA1}, {"toy:Alex(5)", 2, 0xA2}, {"toy:Incep", 3, 0xA3},
        {"toy:CLIP", 4, 0xA4},    {"toy:Eff", 3, 0xA5},     {"toy:SwAV", 4, 0xA6},
    };
    std::vector<ExtractorSpec> out;
    for (const auto& e : entries) {
        auto ex = std::make_shared<feat::ToyConvExtractor>(
            32, std::vector<std::int64_t>{4, 8, 8, 8, 8}, Rng::with_stream(seed, e.stream).next_u64());
        const std::size_t level = e.level;
        out.push_back({e.name, [ex, level](const data::ImageRecord& im) {
                           data::ImageRecord r{im.image_id, img::resize(im.pixels, 32, 32)};
                           Tensor map = ex->extract(img::hwc_to_chw(r.pixels))[level];
                           Tensor flat({map.numel()});
                           for (std::int64_t i = 0; i < map.numel(); ++i) flat[i] = map[i];
                           return flat;
                       }});
    }
    return out;
}

LayeredExtractorSpec toy_perceptual_extractor(std::uint64_t seed) {
    auto ex = std::make_shared<feat::ToyConvExtractor>(
        32, std::vector<std::int64_t>{4, 8, 8, 8, 8}, Rng::with_stream(seed, 0xA7).next_u64());
    LayeredExtractorSpec spec;
    spec.name = "toy:LPIPS";
    spec.weights = {1.0, 1.0, 1.0, 1.0, 1.0};
    spec.layers = [ex](const data::ImageRecord& im) {
        return ex->extract(img::hwc_to_chw(img::resize(im.pixels, 32, 32)));
    };
    return spec;
}

MetricReport evaluate_all(const std::vector<data::ImageRecord>& recons,
                          const std::vector<data::ImageRecord>& gts, std::uint64_t seed) {
    check_aligned(recons, gts, 2, "evaluate_all");
    MetricReport report;
    report.n = static_cast<int>(recons.size());
    report.seed = seed;

    Real pc = 0, sg = 0, sc = 0;
    for (std::size_t i = 0; i < recons.size(); ++i) {
        pc += pixcorr(recons[i], gts[i]);
        sg += ssim_gray(recons[i], gts[i]);
        sc += ssim_color(recons[i], gts[i]);
    }
    report.values["PixCorr"] = pc / static_cast<Real>(recons.size());
    report.values["SSIM"] = sg / static_cast<Real>(recons.size());
    report.values["SSIM-color"] = sc / static_cast<Real>(recons.size());

    for (const auto& spec : toy_extractor_registry(seed)) {
        report.extractors.push_back(spec.name);
        if (spec.name == "toy:Eff" || spec.name == "toy:SwAV")
            report.values[spec.name] = correlation_distance(recons, gts, spec);
        else
            report.values[spec.name] = two_way_identification(recons, gts, spec);
        if (spec.name == "toy:CLIP")
            report.values["kway-CLIP"] = kway_retrieval(
                recons, gts, spec, static_cast<std::int64_t>(recons.size()), seed);
    }
    auto lpips = toy_perceptual_extractor(seed);
    report.extractors.push_back(lpips.name);
    report.values["LPIPS"] = perceptual_distance(recons, gts, lpips);
    return report;
}

}  // namespace brainit::metrics
