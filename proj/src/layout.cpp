#include "brainit/layout.hpp"

#include <string>

namespace brainit::feat {

std::int64_t ConvTokenLayout::total_tokens() const {
    std::int64_t n = 0;
    for (const auto& l : layers) n += l.token_count();
    return n;
}

std::int64_t ConvTokenLayout::token_dim() const {
    return layers.empty() ? 0 : layers.front().token_dim;
}

std::vector<std::int64_t> ConvTokenLayout::layer_offsets() const {
    std::vector<std::int64_t> off;
    std::int64_t acc = 0;
    for (const auto& l : layers) {
        off.push_back(acc);
        acc += l.token_count();
    }
    return off;
}

void ConvTokenLayout::validate() const {
    if (input_size < 1 || layers.empty()) throw ConfigError("conv layout: empty");
    for (const auto& l : layers) {
        if (l.grid < 1 || l.channels < 1 || l.token_dim < 1)
            throw ConfigError("conv layout: non-positive layer field");
        if (l.merge == Merge::kNonOverlap2x2 && l.grid % 2 != 0)
            throw ConfigError("conv layout: non-overlapping merge needs an even grid");
        if (l.token_dim % l.raw_dim() != 0)
            throw ConfigError("conv layout: token dim " + std::to_string(l.token_dim) +
                              " not a multiple of raw dim " + std::to_string(l.raw_dim()));
        if (l.token_dim != layers.front().token_dim)
            throw ConfigError("conv layout: mixed token dims");
        if (l.train_samples > l.token_count())
            throw ConfigError("conv layout: train sample count exceeds tokens");
    }
}

ConvTokenLayout make_conv_layout(std::int64_t input_size, std::vector<std::int64_t> channels,
                                 std::int64_t token_dim, std::vector<std::int64_t> train_samples) {
    if (channels.size() != 5 || train_samples.size() != 5)
        throw ConfigError("conv layout: expected 5 levels");
    if (input_size % 16 != 0) throw ConfigError("conv layout: input size must be divisible by 16");
    ConvTokenLayout layout;
    layout.input_size = input_size;
    const Merge merges[5] = {Merge::kNonOverlap2x2, Merge::kOverlap2x2, Merge::kNone, Merge::kNone,
                             Merge::kNone};
    std::int64_t g = input_size;
    for (int i = 0; i < 5; ++i) {
        LayerSpec l;
        l.grid = g;
        l.merge = merges[i];
        l.channels = channels[static_cast<std::size_t>(i)];
        l.token_dim = token_dim;
        l.train_samples = train_samples[static_cast<std::size_t>(i)];
        if (l.train_samples > l.token_count()) l.train_samples = l.token_count();
        layout.layers.push_back(l);
        g /= 2;
    }
    layout.validate();
    return layout;
}

ConvTokenLayout canonical_conv_layout() {
    return make_conv_layout(112, {64, 128, 256, 512, 512}, 512, {512, 512, 128, 64, 16});
}

ConvTokenLayout toy_conv_layout(std::int64_t input_size, std::int64_t token_dim) {
    return make_conv_layout(input_size, {4, 8, 8, 8, 8}, token_dim, {64, 64, 16, 8, 4});
}

}  // namespace brainit::feat
