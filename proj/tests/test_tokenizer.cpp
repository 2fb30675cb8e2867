#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "brainit/tokenizer.hpp"
#include "test_util.hpp"

using namespace brainit;
using namespace brainit::tok;
using testutil::random_tensor;

namespace {

struct Instance {
    Tensor acts;                          // [n]
    std::vector<std::int64_t> vidx;       // sampled voxel rows
    std::vector<int> assign;              // per voxel of the table
    Tensor vemb;                          // [V, d]
    TokenizerParams params;
};

Instance make_instance(std::int64_t v_total, std::int64_t n, int k, std::int64_t d,
                       std::uint64_t seed) {
    Rng rng(seed);
    Instance in;
    in.acts = random_tensor({n}, rng);
    in.vemb = random_tensor({v_total, d}, rng);
    in.assign.resize(static_cast<std::size_t>(v_total));
    for (auto& c : in.assign) c = static_cast<int>(rng.uniform_int(k));
    in.vidx.resize(static_cast<std::size_t>(n));
    for (auto& v : in.vidx) v = rng.uniform_int(v_total);
    in.params = init_tokenizer_params(k, d, seed + 1);
    return in;
}

/// Explicit per-cluster masked softmax attention; the reference the
/// vectorized path must match.
Tensor tokenize_loop(const Instance& in) {
    const int k = static_cast<int>(in.params.cluster_emb.value().dim(0));
    const std::int64_t d = in.params.cluster_emb.value().dim(1);
    const std::int64_t n = in.acts.numel();
    const Tensor& wq = in.params.wq.value();
    const Tensor& wk = in.params.wk.value();
    const Tensor& wv = in.params.wv.value();
    const Tensor& ce = in.params.cluster_emb.value();

    auto project = [&](const std::vector<Real>& x, const Tensor& w) {
        std::vector<Real> y(static_cast<std::size_t>(d), 0.0);
        for (std::int64_t j = 0; j < d; ++j)
            for (std::int64_t i = 0; i < d; ++i) y[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(i)] * w.at2(i, j);
        return y;
    };

    Tensor out({k, d});
    for (int c = 0; c < k; ++c) {
        std::vector<Real> ce_row(static_cast<std::size_t>(d));
        for (std::int64_t j = 0; j < d; ++j) ce_row[static_cast<std::size_t>(j)] = ce.at2(c, j);
        auto q = project(ce_row, wq);

        std::vector<std::vector<Real>> vals;
        std::vector<Real> logits;
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t v = in.vidx[static_cast<std::size_t>(i)];
            if (in.assign[static_cast<std::size_t>(v)] != c) continue;
            std::vector<Real> mod(static_cast<std::size_t>(d));
            for (std::int64_t j = 0; j < d; ++j) mod[static_cast<std::size_t>(j)] = in.acts[i] * in.vemb.at2(v, j);
            auto key = project(mod, wk);
            vals.push_back(project(mod, wv));
            Real dot = 0;
            for (std::int64_t j = 0; j < d; ++j) dot += q[static_cast<std::size_t>(j)] * key[static_cast<std::size_t>(j)];
            logits.push_back(dot / std::sqrt(static_cast<Real>(d)));
        }
        if (vals.empty()) {
            for (std::int64_t j = 0; j < d; ++j) out.at2(c, j) = q[static_cast<std::size_t>(j)];
            continue;
        }
        Real mx = logits[0];
        for (Real l : logits) mx = std::max(mx, l);
        Real z = 0;
        for (Real l : logits) z += std::exp(l - mx);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const Real w = std::exp(logits[i] - mx) / z;
            for (std::int64_t j = 0; j < d; ++j) out.at2(c, j) += w * vals[i][static_cast<std::size_t>(j)];
        }
    }
    return out;
}

}  // namespace

TEST_CASE("modulate: zero, identity, loop oracle, length mismatch") {
    Rng rng(1);
    Tensor emb = random_tensor({16, 8}, rng);
    Tensor acts = random_tensor({16}, rng);
    acts[0] = 0.0;
    acts[1] = 1.0;
    auto out = modulate(nn::constant(acts), nn::constant(emb));
    for (std::int64_t j = 0; j < 8; ++j) {
        CHECK(out.value().at2(0, j) == 0.0);
        CHECK(out.value().at2(1, j) == emb.at2(1, j));
    }
    for (std::int64_t v = 0; v < 16; ++v)
        for (std::int64_t j = 0; j < 8; ++j)
            CHECK(out.value().at2(v, j) == doctest::Approx(acts[v] * emb.at2(v, j)).epsilon(1e-12));

    CHECK_THROWS_AS(modulate(nn::constant(random_tensor({5}, rng)), nn::constant(emb)),
                    ArgumentError);
}

TEST_CASE("tokenize matches the masked-attention loop oracle") {
    auto in = make_instance(16, 16, 4, 8, 7);
    auto got = tokenize(nn::constant(in.acts), in.vidx, in.assign, nn::constant(in.vemb), in.params);
    Tensor want = tokenize_loop(in);
    REQUIRE(got.value().dim(0) == 4);
    REQUIRE(got.value().dim(1) == 8);
    Real worst = 0;
    for (std::int64_t i = 0; i < want.numel(); ++i)
        worst = std::max(worst, std::abs(got.value()[i] - want[i]));
    CHECK(worst < 1e-6);
}

TEST_CASE("singleton cluster: token equals the voxel's value projection") {
    auto in = make_instance(6, 3, 3, 4, 11);
    // cluster 0 gets exactly sample 0; everything else goes to cluster 1
    for (auto& c : in.assign) c = 1;
    in.assign[0] = 0;
    in.vidx = {0, 3, 4};
    auto got = tokenize(nn::constant(in.acts), in.vidx, in.assign, nn::constant(in.vemb), in.params);

    std::vector<Real> mod(4);
    for (std::int64_t j = 0; j < 4; ++j) mod[static_cast<std::size_t>(j)] = in.acts[0] * in.vemb.at2(0, j);
    for (std::int64_t j = 0; j < 4; ++j) {
        Real want = 0;
        for (std::int64_t i = 0; i < 4; ++i) want += mod[static_cast<std::size_t>(i)] * in.params.wv.value().at2(i, j);
        CHECK(got.value().at2(0, j) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("identical modulated rows: token is the shared value projection") {
    auto in = make_instance(4, 3, 2, 4, 13);
    for (auto& c : in.assign) c = 0;
    in.vidx = {2, 2, 2};  // same voxel three times
    in.acts = Tensor::full({3}, 1.7);
    auto got = tokenize(nn::constant(in.acts), in.vidx, in.assign, nn::constant(in.vemb), in.params);
    for (std::int64_t j = 0; j < 4; ++j) {
        Real want = 0;
        for (std::int64_t i = 0; i < 4; ++i)
            want += 1.7 * in.vemb.at2(2, i) * in.params.wv.value().at2(i, j);
        CHECK(got.value().at2(0, j) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("empty cluster falls back to the query projection; shape always K x d") {
    auto in = make_instance(8, 4, 5, 4, 17);
    for (auto& c : in.assign) c = 0;  // clusters 1..4 sample nothing
    auto got = tokenize(nn::constant(in.acts), in.vidx, in.assign, nn::constant(in.vemb), in.params);
    REQUIRE(got.value().dim(0) == 5);
    REQUIRE(got.value().dim(1) == 4);
    auto q = nn::matmul(in.params.cluster_emb, in.params.wq);
    for (int c = 1; c < 5; ++c)
        for (std::int64_t j = 0; j < 4; ++j)
            CHECK(got.value().at2(c, j) == doctest::Approx(q.value().at2(c, j)).epsilon(1e-12));

    // zero sampled voxels at all is fine too
    auto none = tokenize(nn::constant(Tensor({0})), {}, in.assign, nn::constant(in.vemb), in.params);
    CHECK(none.value().dim(0) == 5);
    for (std::int64_t i = 0; i < none.value().numel(); ++i)
        CHECK(none.value()[i] == doctest::Approx(q.value()[i]).epsilon(1e-12));
}

TEST_CASE("cross-cluster isolation: perturbing a voxel in cluster a leaves token b alone") {
    auto in = make_instance(10, 8, 3, 4, 19);
    auto base = tokenize(nn::constant(in.acts), in.vidx, in.assign, nn::constant(in.vemb), in.params)
                    .value();
    for (std::int64_t i = 0; i < in.acts.numel(); ++i) {
        const int a = in.assign[static_cast<std::size_t>(in.vidx[static_cast<std::size_t>(i)])];
        Tensor bumped = in.acts;
        bumped[i] += 0.37;
        auto out =
            tokenize(nn::constant(bumped), in.vidx, in.assign, nn::constant(in.vemb), in.params)
                .value();
        for (int c = 0; c < 3; ++c)
            for (std::int64_t j = 0; j < 4; ++j)
                if (c != a) CHECK(out.at2(c, j) == base.at2(c, j));
    }
}

TEST_CASE("tokenize gradients match finite differences") {
    auto in = make_instance(8, 6, 3, 4, 23);
    auto build = [&](const std::vector<nn::Var>& leaves) {
        TokenizerParams p;
        p.cluster_emb = leaves[2];
        p.wq = leaves[3];
        p.wk = leaves[4];
        p.wv = leaves[5];
        return nn::sum(nn::mul(tokenize(leaves[0], in.vidx, in.assign, leaves[1], p),
                               nn::constant(Tensor::full({3, 4}, 0.5))));
    };
    Real err = testutil::max_grad_rel_err(
        build, {in.acts, in.vemb, in.params.cluster_emb.value(), in.params.wq.value(),
                in.params.wk.value(), in.params.wv.value()});
    CHECK(err < 1e-3);
}

TEST_CASE("errors: bad indices, bad assignment, bad lengths") {
    auto in = make_instance(6, 3, 2, 4, 29);
    CHECK_THROWS_AS(
        tokenize(nn::constant(in.acts), {0, 1, 99}, in.assign, nn::constant(in.vemb), in.params),
        ArgumentError);
    auto bad_assign = in.assign;
    bad_assign[0] = 7;
    in.vidx = {0, 1, 2};
    CHECK_THROWS_AS(
        tokenize(nn::constant(in.acts), in.vidx, bad_assign, nn::constant(in.vemb), in.params),
        ArgumentError);
    CHECK_THROWS_AS(
        tokenize(nn::constant(in.acts), {0, 1}, in.assign, nn::constant(in.vemb), in.params),
        ArgumentError);
}

TEST_CASE("voxel embedding init: copy, determinism, sigma") {
    Rng rng(31);
    Tensor src = random_tensor({12, 6}, rng);
    Tensor copied = init_voxel_embeddings(src);
    CHECK(copied.vec() == src.vec());

    Tensor a = init_voxel_embeddings(100, 10, 0.02, 44);
    Tensor b = init_voxel_embeddings(100, 10, 0.02, 44);
    CHECK(a.vec() == b.vec());

    Tensor big = init_voxel_embeddings(10000, 10, 0.02, 45);
    Real mu = 0;
    for (std::int64_t i = 0; i < big.numel(); ++i) mu += big[i];
    mu /= static_cast<Real>(big.numel());
    Real var = 0;
    for (std::int64_t i = 0; i < big.numel(); ++i) var += (big[i] - mu) * (big[i] - mu);
    var /= static_cast<Real>(big.numel());
    CHECK(std::abs(var - 0.0004) / 0.0004 < 0.05);
}
