#include "brainit/extractor.hpp"

#include <cmath>

#include "brainit/image.hpp"
#include "brainit/rng.hpp"

namespace brainit::feat {

std::vector<Tensor> FeatureExtractorInterface::extract(const Tensor& image_chw) const {
    auto vars = forward(nn::constant(image_chw));
    std::vector<Tensor> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(v.value());
    return out;
}

void FeatureExtractorInterface::check_layout(const ConvTokenLayout& layout) const {
    const auto g = grids();
    const auto c = channels();
    if (g.size() != layout.layers.size())
        throw ConfigError("extractor: level count differs from layout");
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] != layout.layers[i].grid)
            throw ConfigError("extractor: grid mismatch at level " + std::to_string(i));
        if (c[i] != layout.layers[i].channels)
            throw ConfigError("extractor: channel mismatch at level " + std::to_string(i));
    }
}

ToyConvExtractor::ToyConvExtractor(std::int64_t input_size, std::vector<std::int64_t> chans,
                                   std::uint64_t seed)
    : input_size_(input_size), chans_(std::move(chans)) {
    if (input_size_ < 16 || chans_.empty()) throw ArgumentError("toy extractor: bad shape");
    Rng rng(seed);
    std::int64_t g = input_size_;
    std::int64_t in_c = 3;
    for (std::size_t i = 0; i < chans_.size(); ++i) {
        grids_.push_back(g);
        const std::int64_t out_c = chans_[i];
        Tensor w({out_c, in_c, 3, 3});
        const Real scale = 1.0 / std::sqrt(static_cast<Real>(in_c * 9));
        for (std::int64_t j = 0; j < w.numel(); ++j) w[j] = scale * rng.normal();
        weights_.push_back(nn::constant(w));
        biases_.push_back(nn::constant(Tensor::zeros({out_c})));
        in_c = out_c;
        g /= 2;
    }
}

std::vector<nn::Var> ToyConvExtractor::forward(const nn::Var& image) const {
    const Tensor& v = image.value();
    if (v.rank() != 3 || v.dim(0) != 3 || v.dim(1) != input_size_ || v.dim(2) != input_size_)
        throw ArgumentError("toy extractor: expected [3," + std::to_string(input_size_) + "," +
                            std::to_string(input_size_) + "] input");
    std::vector<nn::Var> maps;
    nn::Var x = image;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        const int stride = (i == 0) ? 1 : 2;
        x = nn::leaky_relu(nn::conv2d(x, weights_[i], biases_[i], stride, 1), 0.1);
        maps.push_back(x);
    }
    return maps;
}

namespace {

// window positions of token (ti, tj): row-major 2x2 for merged layers
void window_origin(const LayerSpec& l, std::int64_t ti, std::int64_t tj, std::int64_t& oi,
                   std::int64_t& oj, std::int64_t& win) {
    switch (l.merge) {
        case Merge::kNonOverlap2x2: oi = 2 * ti; oj = 2 * tj; win = 2; break;
        case Merge::kOverlap2x2: oi = ti; oj = tj; win = 2; break;
        default: oi = ti; oj = tj; win = 1; break;
    }
}

}  // namespace

FeatureTokenSet extract_conv_tokens(const data::ImageRecord& image,
                                    const FeatureExtractorInterface& extractor,
                                    const ConvTokenLayout& layout) {
    layout.validate();
    extractor.check_layout(layout);
    Tensor hwc = image.pixels;
    if (hwc.rank() != 3 || hwc.dim(2) != 3)
        throw ArgumentError("extract_conv_tokens: image must be [H,W,3]");
    if (hwc.dim(0) != layout.input_size || hwc.dim(1) != layout.input_size)
        hwc = img::resize(hwc, layout.input_size, layout.input_size);
    auto maps = extractor.extract(img::hwc_to_chw(hwc));

    FeatureTokenSet set;
    set.kind = "conv-layer";
    set.layer_offsets = layout.layer_offsets();
    set.tokens = Tensor({layout.total_tokens(), layout.token_dim()});
    std::int64_t row = 0;
    for (std::size_t li = 0; li < layout.layers.size(); ++li) {
        const LayerSpec& l = layout.layers[li];
        const Tensor& map = maps[li];
        const std::int64_t side = l.tokens_per_side();
        const std::int64_t raw = l.raw_dim();
        const std::int64_t rep = l.token_dim / raw;
        for (std::int64_t ti = 0; ti < side; ++ti)
            for (std::int64_t tj = 0; tj < side; ++tj, ++row) {
                std::int64_t oi, oj, win;
                window_origin(l, ti, tj, oi, oj, win);
                std::int64_t p = 0;
                std::vector<Real> rawv(static_cast<std::size_t>(raw));
                for (std::int64_t wi = 0; wi < win; ++wi)
                    for (std::int64_t wj = 0; wj < win; ++wj)
                        for (std::int64_t c = 0; c < l.channels; ++c, ++p)
                            rawv[static_cast<std::size_t>(p)] = map.at3(c, oi + wi, oj + wj);
                for (std::int64_t r = 0; r < rep; ++r)
                    for (std::int64_t j = 0; j < raw; ++j)
                        set.tokens.at2(row, r * raw + j) = rawv[static_cast<std::size_t>(j)];
            }
    }
    return set;
}

std::vector<Tensor> untokenize(const FeatureTokenSet& tokens, const ConvTokenLayout& layout) {
    layout.validate();
    if (tokens.kind != "conv-layer")
        throw ArgumentError("untokenize: token set is not conv-layer tokens");
    if (tokens.tokens.dim(0) != layout.total_tokens() ||
        tokens.tokens.dim(1) != layout.token_dim())
        throw ConfigError("untokenize: token matrix does not match layout");

    std::vector<Tensor> maps;
    std::int64_t row = 0;
    for (const LayerSpec& l : layout.layers) {
        Tensor sum({l.channels, l.grid, l.grid});
        Tensor count({l.grid, l.grid});
        const std::int64_t side = l.tokens_per_side();
        const std::int64_t raw = l.raw_dim();
        const std::int64_t rep = l.token_dim / raw;
        for (std::int64_t ti = 0; ti < side; ++ti)
            for (std::int64_t tj = 0; tj < side; ++tj, ++row) {
                // replication copies averaged back to the raw token
                std::vector<Real> rawv(static_cast<std::size_t>(raw), 0.0);
                for (std::int64_t r = 0; r < rep; ++r)
                    for (std::int64_t j = 0; j < raw; ++j)
                        rawv[static_cast<std::size_t>(j)] += tokens.tokens.at2(row, r * raw + j);
                for (auto& v : rawv) v /= static_cast<Real>(rep);

                std::int64_t oi, oj, win;
                window_origin(l, ti, tj, oi, oj, win);
                std::int64_t p = 0;
                for (std::int64_t wi = 0; wi < win; ++wi)
                    for (std::int64_t wj = 0; wj < win; ++wj) {
                        for (std::int64_t c = 0; c < l.channels; ++c, ++p)
                            sum.at3(c, oi + wi, oj + wj) += rawv[static_cast<std::size_t>(p)];
                        count.at2(oi + wi, oj + wj) += 1.0;
                    }
            }
        for (std::int64_t i = 0; i < l.grid; ++i)
            for (std::int64_t j = 0; j < l.grid; ++j) {
                const Real c = count.at2(i, j);
                if (c > 0)
                    for (std::int64_t ch = 0; ch < l.channels; ++ch) sum.at3(ch, i, j) /= c;
            }
        maps.push_back(std::move(sum));
    }
    return maps;
}

ToySemanticBackbone::ToySemanticBackbone(std::int64_t grid, std::int64_t d_out,
                                         std::int64_t feature_grid, std::uint64_t seed)
    : grid_(grid), d_out_(d_out), feature_grid_(feature_grid) {
    if (grid_ < 1 || d_out_ < 1 || feature_grid_ < 1)
        throw ArgumentError("toy semantic backbone: bad shape");
    const std::int64_t f = 3 * feature_grid_ * feature_grid_;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(f));
    for (std::int64_t p = 0; p < grid_ * grid_; ++p) {
        Rng rng = Rng::with_stream(seed, 0x5E3A + static_cast<std::uint64_t>(p));
        Tensor w({f, d_out_});
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = scale * rng.normal();
        proj_.push_back(std::move(w));
    }
}

Tensor ToySemanticBackbone::tokens(const data::ImageRecord& image) const {
    if (image.pixels.rank() != 3 || image.pixels.dim(2) != 3)
        throw ArgumentError("toy semantic backbone: image must be [H,W,3]");
    Tensor small = img::resize(image.pixels, feature_grid_, feature_grid_);
    const std::int64_t f = 3 * feature_grid_ * feature_grid_;
    Tensor out({grid_ * grid_, d_out_});
    for (std::int64_t p = 0; p < grid_ * grid_; ++p) {
        const Tensor& w = proj_[static_cast<std::size_t>(p)];
        for (std::int64_t j = 0; j < d_out_; ++j) {
            Real s = 0;
            for (std::int64_t i = 0; i < f; ++i) s += small[i] * w.at2(i, j);
            out.at2(p, j) = s;
        }
    }
    return out;
}

}  // namespace brainit::feat
