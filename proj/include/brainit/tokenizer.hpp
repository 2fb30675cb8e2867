#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "brainit/autodiff.hpp"
#include "brainit/errors.hpp"
#include "brainit/rng.hpp"
#include "brainit/tensor.hpp"

namespace brainit::tok {

/// Attention weights of the tokenizer. Queries come from cluster
/// embeddings; keys and values from modulated voxel embeddings. The
/// projections are shared across clusters and subjects.
struct TokenizerParams {
    nn::Var cluster_emb;  // [K, d], shared
    nn::Var wq, wk, wv;   // [d, d]
};

TokenizerParams init_tokenizer_params(int k, std::int64_t d, std::uint64_t seed);

/// Per-voxel modulation: row v = activations[v] * voxel_embeddings[v].
nn::Var modulate(const nn::Var& activations, const nn::Var& voxel_embeddings);

/// Brain tokens [K, d] for one sample. `voxel_indices` addresses rows of
/// `voxel_emb` (sampling with replacement; duplicates become independent
/// attention rows). `assignment` is the subject's full per-voxel cluster
/// vector. A cluster with no sampled voxels emits the query projection of
/// its cluster embedding.
nn::Var tokenize(const nn::Var& activations, const std::vector<std::int64_t>& voxel_indices,
                 const std::vector<int>& assignment, const nn::Var& voxel_emb,
                 const TokenizerParams& params);

/// Voxel embedding init: copy of an encoder-derived table.
Tensor init_voxel_embeddings(const Tensor& source);
/// Voxel embedding init: random normal with the given sigma.
Tensor init_voxel_embeddings(std::int64_t voxels, std::int64_t d, Real sigma, std::uint64_t seed);

}  // namespace brainit::tok
