#include "brainit/tokenizer.hpp"

#include <cmath>
#include <string>

namespace brainit::tok {

TokenizerParams init_tokenizer_params(int k, std::int64_t d, std::uint64_t seed) {
    if (k < 1 || d < 1) throw ArgumentError("tokenizer: k and d must be positive");
    Rng rng(seed);
    auto init = [&](std::vector<std::int64_t> shape, Real scale) {
        Tensor t(shape);
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
        return nn::parameter(t);
    };
    TokenizerParams p;
    const Real s = 1.0 / std::sqrt(static_cast<Real>(d));
    p.cluster_emb = init({k, d}, 1.0);
    p.wq = init({d, d}, s);
    p.wk = init({d, d}, s);
    p.wv = init({d, d}, s);
    return p;
}

nn::Var modulate(const nn::Var& activations, const nn::Var& voxel_embeddings) {
    if (activations.value().rank() != 1 || voxel_embeddings.value().rank() != 2 ||
        activations.value().dim(0) != voxel_embeddings.value().dim(0))
        throw ArgumentError("modulate: need activations [n] and embeddings [n,d]");
    return nn::rowwise_scale(voxel_embeddings, activations);
}

nn::Var tokenize(const nn::Var& activations, const std::vector<std::int64_t>& voxel_indices,
                 const std::vector<int>& assignment, const nn::Var& voxel_emb,
                 const TokenizerParams& params) {
    const std::int64_t n = activations.value().numel();
    if (static_cast<std::int64_t>(voxel_indices.size()) != n)
        throw ArgumentError("tokenize: activations and voxel_indices length mismatch");
    const std::int64_t v_total = voxel_emb.value().dim(0);
    if (static_cast<std::int64_t>(assignment.size()) != v_total)
        throw ArgumentError("tokenize: assignment length must equal the voxel table rows");
    const int k = static_cast<int>(params.cluster_emb.value().dim(0));
    const std::int64_t d = params.cluster_emb.value().dim(1);

    // voxels sampled per cluster, in sample order
    std::vector<std::vector<std::int64_t>> members(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t v = voxel_indices[static_cast<std::size_t>(i)];
        if (v < 0 || v >= v_total) throw ArgumentError("tokenize: voxel index out of range");
        const int c = assignment[static_cast<std::size_t>(v)];
        if (c < 0 || c >= k)
            throw ArgumentError("tokenize: cluster assignment out of range: " + std::to_string(c));
        members[static_cast<std::size_t>(c)].push_back(i);
    }

    nn::Var mod = modulate(activations, nn::gather_rows(voxel_emb, voxel_indices));
    nn::Var keys = nn::matmul(mod, params.wk);
    nn::Var values = nn::matmul(mod, params.wv);
    nn::Var queries = nn::matmul(params.cluster_emb, params.wq);  // [K, d]
    const Real inv_sqrt_d = 1.0 / std::sqrt(static_cast<Real>(d));

    std::vector<nn::Var> tokens;
    tokens.reserve(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        nn::Var q = nn::slice_rows(queries, c, 1);  // [1, d]
        const auto& rows = members[static_cast<std::size_t>(c)];
        if (rows.empty()) {
            tokens.push_back(q);
            continue;
        }
        nn::Var sub_k = nn::gather_rows(keys, rows);
        nn::Var sub_v = nn::gather_rows(values, rows);
        nn::Var logits = nn::mul_scalar(nn::matmul_nt(q, sub_k), inv_sqrt_d);  // [1, m]
        nn::Var attn = nn::softmax_rows(logits);
        tokens.push_back(nn::matmul(attn, sub_v));  // [1, d]
    }
    return nn::concat_rows(tokens);
}

Tensor init_voxel_embeddings(const Tensor& source) {
    if (source.rank() != 2) throw ArgumentError("init_voxel_embeddings: source must be [V, d]");
    if (!source.all_finite()) throw ArgumentError("init_voxel_embeddings: non-finite source");
    return source;
}

Tensor init_voxel_embeddings(std::int64_t voxels, std::int64_t d, Real sigma, std::uint64_t seed) {
    if (voxels < 1 || d < 1) throw ArgumentError("init_voxel_embeddings: bad shape");
    Tensor t({voxels, d});
    Rng rng(seed);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = sigma * rng.normal();
    return t;
}

}  // namespace brainit::tok
