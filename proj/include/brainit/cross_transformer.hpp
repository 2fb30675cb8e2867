#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "brainit/autodiff.hpp"
#include "brainit/errors.hpp"
#include "brainit/tensor.hpp"

namespace brainit::xform {

struct CrossTransformerConfig {
    int blocks = 5;
    int heads = 8;
    std::int64_t d = 512;
    std::int64_t d_out = 512;
    std::int64_t ff_width = 0;  // 0 means 4*d

    std::int64_t ff() const { return ff_width > 0 ? ff_width : 4 * d; }
};

struct AttentionParams {
    nn::Var wq, wk, wv, wo;  // [d, d] each
};

/// One refinement block: self-attention plus feed-forward over the brain
/// tokens, then cross-attention plus feed-forward over the query states.
/// All residual, pre-norm.
struct BlockParams {
    AttentionParams self_attn;
    nn::Var ln1_g, ln1_b;
    nn::Var ff1_w, ff1_b, ff2_w, ff2_b;
    nn::Var ln2_g, ln2_b;
    AttentionParams cross_attn;
    nn::Var ln3_g, ln3_b;
    nn::Var ff3_w, ff3_b, ff4_w, ff4_b;
    nn::Var ln4_g, ln4_b;
};

struct CrossTransformerParams {
    nn::Var query_tokens;  // [Q, d]
    AttentionParams initial;  // first cross-attention; not residual, not normed
    std::vector<BlockParams> blocks;
    nn::Var out_w, out_b;  // [d, d_out], [d_out]
};

CrossTransformerParams init_cross_transformer(const CrossTransformerConfig& config,
                                              std::int64_t queries, std::uint64_t seed);

/// Multi-head scaled-dot-product attention, queries from `q_in`, keys and
/// values from `kv_in`. Exposed for the reference tests.
nn::Var attention(const nn::Var& q_in, const nn::Var& kv_in, const AttentionParams& p, int heads);

/// Brain tokens [K, d] -> feature tokens [Q, d_out].
nn::Var decode(const nn::Var& tokens, const CrossTransformerParams& params,
               const CrossTransformerConfig& config);

/// Trainable scalar count of the shared model (tokenizer attention and
/// cluster embeddings included, subject voxel embeddings excluded).
std::int64_t count_parameters(const CrossTransformerConfig& config, int clusters,
                              std::int64_t queries);

/// Flat name -> parameter map for optimizers and checkpoints.
std::map<std::string, nn::Var> named_params(const CrossTransformerParams& p,
                                            const std::string& prefix);

}  // namespace brainit::xform
