#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainit/errors.hpp"
#include "brainit/tensor.hpp"

namespace brainit::feat {

enum class Merge { kNone, kNonOverlap2x2, kOverlap2x2 };

struct LayerSpec {
    std::int64_t grid = 0;      // spatial size of the source feature map
    Merge merge = Merge::kNone;
    std::int64_t channels = 0;  // raw channel count of the source map
    std::int64_t token_dim = 0; // after channel replication
    std::int64_t train_samples = 0;

    std::int64_t tokens_per_side() const {
        switch (merge) {
            case Merge::kNonOverlap2x2: return grid / 2;
            case Merge::kOverlap2x2: return grid - 1;
            default: return grid;
        }
    }
    std::int64_t token_count() const {
        const std::int64_t s = tokens_per_side();
        return s * s;
    }
    std::int64_t raw_dim() const { return channels * (merge == Merge::kNone ? 1 : 4); }
};

struct ConvTokenLayout {
    std::int64_t input_size = 0;
    std::vector<LayerSpec> layers;

    std::int64_t total_tokens() const;
    std::int64_t token_dim() const;  // common padded dim
    std::vector<std::int64_t> layer_offsets() const;
    void validate() const;
};

/// The five-level layout: grids [S, S/2, S/4, S/8, S/16], first level merged
/// with non-overlapping 2x2 windows, second with overlapping 2x2 windows,
/// the rest one token per position. Each raw token is replicated
/// channel-wise up to `token_dim`.
ConvTokenLayout make_conv_layout(std::int64_t input_size, std::vector<std::int64_t> channels,
                                 std::int64_t token_dim, std::vector<std::int64_t> train_samples);

/// 112x112, VGG-sized channels, 512-dim tokens.
ConvTokenLayout canonical_conv_layout();

/// Small frozen-CNN layout for tests and toy runs.
ConvTokenLayout toy_conv_layout(std::int64_t input_size = 32, std::int64_t token_dim = 64);

/// A set of predicted or extracted feature tokens plus its layout tag.
struct FeatureTokenSet {
    Tensor tokens;                            // [Q, dim]
    std::string kind;                         // "semantic-grid" | "conv-layer"
    std::vector<std::int64_t> layer_offsets;  // conv-layer kind: start row per layer
};

}  // namespace brainit::feat
