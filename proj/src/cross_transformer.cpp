#include "brainit/cross_transformer.hpp"

#include <cmath>

#include "brainit/rng.hpp"

namespace brainit::xform {

namespace {

nn::Var rand_param(std::vector<std::int64_t> shape, Real scale, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return nn::parameter(t);
}

AttentionParams init_attention(std::int64_t d, Rng& rng) {
    const Real s = 1.0 / std::sqrt(static_cast<Real>(d));
    AttentionParams p;
    p.wq = rand_param({d, d}, s, rng);
    p.wk = rand_param({d, d}, s, rng);
    p.wv = rand_param({d, d}, s, rng);
    p.wo = rand_param({d, d}, s, rng);
    return p;
}

nn::Var ff(const nn::Var& x, const nn::Var& w1, const nn::Var& b1, const nn::Var& w2,
           const nn::Var& b2) {
    return nn::linear(nn::relu(nn::linear(x, w1, b1)), w2, b2);
}

void check_square(const nn::Var& w, std::int64_t d, const char* name) {
    if (w.value().rank() != 2 || w.value().dim(0) != d || w.value().dim(1) != d)
        throw ArgumentError(std::string("cross_transformer: ") + name + " must be [d, d]");
}

}  // namespace

CrossTransformerParams init_cross_transformer(const CrossTransformerConfig& config,
                                              std::int64_t queries, std::uint64_t seed) {
    if (config.d < 1 || config.d_out < 1 || queries < 1 || config.blocks < 0 || config.heads < 1)
        throw ArgumentError("cross_transformer: bad config");
    if (config.d % config.heads != 0)
        throw ArgumentError("cross_transformer: d must be divisible by heads");
    Rng rng(seed);
    const std::int64_t d = config.d, f = config.ff();
    const Real sd = 1.0 / std::sqrt(static_cast<Real>(d));
    const Real sf = 1.0 / std::sqrt(static_cast<Real>(f));

    CrossTransformerParams p;
    p.query_tokens = rand_param({queries, d}, 1.0, rng);
    p.initial = init_attention(d, rng);
    for (int b = 0; b < config.blocks; ++b) {
        BlockParams blk;
        blk.self_attn = init_attention(d, rng);
        blk.ln1_g = nn::parameter(Tensor::full({d}, 1.0));
        blk.ln1_b = nn::parameter(Tensor::zeros({d}));
        blk.ff1_w = rand_param({d, f}, sd, rng);
        blk.ff1_b = nn::parameter(Tensor::zeros({f}));
        blk.ff2_w = rand_param({f, d}, sf, rng);
        blk.ff2_b = nn::parameter(Tensor::zeros({d}));
        blk.ln2_g = nn::parameter(Tensor::full({d}, 1.0));
        blk.ln2_b = nn::parameter(Tensor::zeros({d}));
        blk.cross_attn = init_attention(d, rng);
        blk.ln3_g = nn::parameter(Tensor::full({d}, 1.0));
        blk.ln3_b = nn::parameter(Tensor::zeros({d}));
        blk.ff3_w = rand_param({d, f}, sd, rng);
        blk.ff3_b = nn::parameter(Tensor::zeros({f}));
        blk.ff4_w = rand_param({f, d}, sf, rng);
        blk.ff4_b = nn::parameter(Tensor::zeros({d}));
        blk.ln4_g = nn::parameter(Tensor::full({d}, 1.0));
        blk.ln4_b = nn::parameter(Tensor::zeros({d}));
        p.blocks.push_back(std::move(blk));
    }
    p.out_w = rand_param({d, config.d_out}, sd, rng);
    p.out_b = nn::parameter(Tensor::zeros({config.d_out}));
    return p;
}

nn::Var attention(const nn::Var& q_in, const nn::Var& kv_in, const AttentionParams& p, int heads) {
    const std::int64_t d = q_in.value().dim(1);
    if (kv_in.value().dim(1) != d) throw ArgumentError("attention: query/key width mismatch");
    if (d % heads != 0) throw ArgumentError("attention: d not divisible by heads");
    check_square(p.wq, d, "wq");
    check_square(p.wk, d, "wk");
    check_square(p.wv, d, "wv");
    check_square(p.wo, d, "wo");
    nn::Var q = nn::matmul(q_in, p.wq);
    nn::Var k = nn::matmul(kv_in, p.wk);
    nn::Var v = nn::matmul(kv_in, p.wv);
    const std::int64_t dh = d / heads;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
    std::vector<nn::Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        nn::Var qh = nn::slice_cols(q, h * dh, dh);
        nn::Var kh = nn::slice_cols(k, h * dh, dh);
        nn::Var vh = nn::slice_cols(v, h * dh, dh);
        nn::Var logits = nn::mul_scalar(nn::matmul_nt(qh, kh), scale);
        outs.push_back(nn::matmul(nn::softmax_rows(logits), vh));
    }
    return nn::matmul(heads == 1 ? outs[0] : nn::concat_cols(outs), p.wo);
}

nn::Var decode(const nn::Var& tokens, const CrossTransformerParams& params,
               const CrossTransformerConfig& config) {
    if (tokens.value().rank() != 2 || tokens.value().dim(1) != config.d)
        throw ArgumentError("decode: tokens must be [K, d] with d = " + std::to_string(config.d));
    if (static_cast<int>(params.blocks.size()) != config.blocks)
        throw ArgumentError("decode: params/config block count mismatch");
    if (params.out_w.value().dim(0) != config.d || params.out_w.value().dim(1) != config.d_out)
        throw ArgumentError("decode: output projection shape mismatch");

    nn::Var x = tokens;  // brain-token states
    nn::Var q = attention(params.query_tokens, x, params.initial, config.heads);
    for (const auto& blk : params.blocks) {
        nn::Var xn = nn::layer_norm(x, blk.ln1_g, blk.ln1_b);
        x = nn::add(x, attention(xn, xn, blk.self_attn, config.heads));
        x = nn::add(x, ff(nn::layer_norm(x, blk.ln2_g, blk.ln2_b), blk.ff1_w, blk.ff1_b, blk.ff2_w,
                          blk.ff2_b));
        nn::Var qn = nn::layer_norm(q, blk.ln3_g, blk.ln3_b);
        q = nn::add(q, attention(qn, x, blk.cross_attn, config.heads));
        q = nn::add(q, ff(nn::layer_norm(q, blk.ln4_g, blk.ln4_b), blk.ff3_w, blk.ff3_b, blk.ff4_w,
                          blk.ff4_b));
    }
    return nn::linear(q, params.out_w, params.out_b);
}

std::int64_t count_parameters(const CrossTransformerConfig& config, int clusters,
                              std::int64_t queries) {
    const std::int64_t d = config.d, f = config.ff();
    const std::int64_t attn = 4 * d * d;
    const std::int64_t ln = 2 * d;
    const std::int64_t ffp = d * f + f + f * d + d;
    std::int64_t n = 0;
    n += clusters * d + 3 * d * d;          // tokenizer: cluster embeddings + q/k/v projections
    n += queries * d;                       // query tokens
    n += attn;                              // initial cross-attention
    n += config.blocks * (2 * attn + 4 * ln + 2 * ffp);
    n += d * config.d_out + config.d_out;   // output head
    return n;
}

std::map<std::string, nn::Var> named_params(const CrossTransformerParams& p,
                                            const std::string& prefix) {
    std::map<std::string, nn::Var> m;
    auto put_attn = [&](const std::string& name, const AttentionParams& a) {
        m[name + "/wq"] = a.wq;
        m[name + "/wk"] = a.wk;
        m[name + "/wv"] = a.wv;
        m[name + "/wo"] = a.wo;
    };
    m[prefix + "/query_tokens"] = p.query_tokens;
    put_attn(prefix + "/initial", p.initial);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const auto& blk = p.blocks[b];
        const std::string base = prefix + "/block" + std::to_string(b);
        put_attn(base + "/self_attn", blk.self_attn);
        put_attn(base + "/cross_attn", blk.cross_attn);
        m[base + "/ln1_g"] = blk.ln1_g;
        m[base + "/ln1_b"] = blk.ln1_b;
        m[base + "/ff1_w"] = blk.ff1_w;
        m[base + "/ff1_b"] = blk.ff1_b;
        m[base + "/ff2_w"] = blk.ff2_w;
        m[base + "/ff2_b"] = blk.ff2_b;
        m[base + "/ln2_g"] = blk.ln2_g;
        m[base + "/ln2_b"] = blk.ln2_b;
        m[base + "/ln3_g"] = blk.ln3_g;
        m[base + "/ln3_b"] = blk.ln3_b;
        m[base + "/ff3_w"] = blk.ff3_w;
        m[base + "/ff3_b"] = blk.ff3_b;
        m[base + "/ff4_w"] = blk.ff4_w;
        m[base + "/ff4_b"] = blk.ff4_b;
        m[base + "/ln4_g"] = blk.ln4_g;
        m[base + "/ln4_b"] = blk.ln4_b;
    }
    m[prefix + "/out_w"] = p.out_w;
    m[prefix + "/out_b"] = p.out_b;
    return m;
}

}  // namespace brainit::xform
