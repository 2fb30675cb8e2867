#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "brainit/autodiff.hpp"
#include "brainit/rng.hpp"
#include "test_util.hpp"

using namespace brainit;
using namespace brainit::nn;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

TEST_CASE("elementwise and reduction gradients") {
    Rng rng(7);
    auto a = random_tensor({4, 5}, rng);
    auto b = random_tensor({4, 5}, rng);

    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return mean(mul(add(v[0], v[1]), sub(v[0], v[1]))); },
              {a, b}) < 1e-6);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) {
                  return sum(mul(sigmoid(v[0]), leaky_relu(v[1], 0.1)));
              },
              {a, b}) < 1e-6);
    auto pos = random_tensor({3, 3}, rng);
    for (std::int64_t i = 0; i < pos.numel(); ++i) pos[i] = std::abs(pos[i]) + 0.5;
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return sum(nn::log(nn::exp(mul_scalar(v[0], 0.3)))); },
              {pos}) < 1e-6);
}

TEST_CASE("matmul variants match finite differences") {
    Rng rng(11);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 5}, rng);
    auto bt = random_tensor({5, 4}, rng);
    auto at = random_tensor({4, 3}, rng);

    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1]))); },
              {a, b}) < 1e-5);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return mean(matmul_nt(v[0], v[1])); }, {a, bt}) < 1e-6);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return mean(matmul_tn(v[0], v[1])); }, {at, b}) < 1e-6);
}

TEST_CASE("structured op gradients") {
    Rng rng(13);
    auto m = random_tensor({5, 4}, rng);
    auto s = random_tensor({5}, rng);
    auto bias = random_tensor({4}, rng);

    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return mean(mul(rowwise_scale(v[0], v[1]), v[0])); },
              {m, s}) < 1e-6);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return sum(mul(add_rowvec(v[0], v[1]), v[0])); },
              {m, bias}) < 1e-6);
    // duplicate indices must accumulate
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) {
                  Var g = gather_rows(v[0], {0, 2, 2, 4});
                  return sum(mul(g, g));
              },
              {m}) < 1e-6);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) {
                  Var sm = softmax_rows(v[0]);
                  return sum(mul(sm, v[0]));
              },
              {m}) < 1e-5);
    auto sq = random_tensor({4, 4}, rng);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return sum(nn::log(sigmoid(take_diag(v[0])))); },
              {sq}) < 1e-6);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return sum(mul(l2_normalize_rows(v[0]), v[0])); },
              {m}) < 1e-5);
}

TEST_CASE("slices and concats") {
    Rng rng(17);
    auto m = random_tensor({6, 8}, rng);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) {
                  Var top = slice_rows(v[0], 0, 3);
                  Var bottom = slice_rows(v[0], 3, 3);
                  Var joined = concat_rows({bottom, top});
                  Var left = slice_cols(joined, 0, 4);
                  Var right = slice_cols(joined, 4, 4);
                  return mean(mul(concat_cols({right, left}), joined));
              },
              {m}) < 1e-6);
}

TEST_CASE("layer_norm gradient") {
    Rng rng(19);
    auto x = random_tensor({4, 6}, rng);
    auto gamma = random_tensor({6}, rng, 0.5);
    for (std::int64_t i = 0; i < gamma.numel(); ++i) gamma[i] += 1.0;
    auto beta = random_tensor({6}, rng, 0.2);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) { return mean(mul(layer_norm(v[0], v[1], v[2]), v[0])); },
              {x, gamma, beta}) < 1e-5);
}

TEST_CASE("conv2d gradient") {
    Rng rng(23);
    auto x = random_tensor({2, 5, 5}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng, 0.4);
    auto b = random_tensor({3}, rng, 0.1);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) {
                  Var y = conv2d(v[0], v[1], v[2], 1, 1);
                  return mean(mul(y, y));
              },
              {x, w, b}) < 1e-5);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) {
                  Var y = conv2d(v[0], v[1], v[2], 2, 1);
                  return sum(sigmoid(y));
              },
              {x, w, b}) < 1e-5);
}

TEST_CASE("conv2d matches explicit loop") {
    Rng rng(29);
    auto x = random_tensor({2, 4, 4}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    Var y = conv2d(Var(x), Var(w), Var(b), 1, 1);
    for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < 4; ++oy)
            for (int ox = 0; ox < 4; ++ox) {
                double acc = b[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy - 1 + ky, ix = ox - 1 + kx;
                            if (iy >= 0 && iy < 4 && ix >= 0 && ix < 4)
                                acc += x.at3(ci, iy, ix) * w[((co * 2 + ci) * 3 + ky) * 3 + kx];
                        }
                CHECK(y.value().at3(co, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("bilinear upsample: constant preserved, gradient correct") {
    Tensor c = Tensor::full({1, 3, 3}, 0.7);
    Tensor up = upsample_bilinear_value(c, 7, 7);
    for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(0.7));

    Rng rng(31);
    auto x = random_tensor({2, 3, 4}, rng);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) {
                  Var y = upsample_bilinear(v[0], 6, 8);
                  return mean(mul(y, y));
              },
              {x}) < 1e-6);
}

TEST_CASE("reshape and concat_channels gradients") {
    Rng rng(37);
    auto x = random_tensor({2, 3, 4}, rng);
    auto y = random_tensor({1, 3, 4}, rng);
    CHECK(max_grad_rel_err(
              [](const std::vector<Var>& v) {
                  Var cc = concat_channels(v[0], v[1]);
                  Var flat = reshape(cc, {3, 12});
                  return mean(mul(flat, flat));
              },
              {x, y}) < 1e-6);
}

TEST_CASE("gradient accumulates across shared subexpressions") {
    Tensor x = Tensor::scalar(2.0);
    Var v(x, true);
    Var y = add(mul(v, v), v);  // x^2 + x, dy/dx = 2x + 1 = 5
    y.backward();
    CHECK(v.grad()[0] == doctest::Approx(5.0));
}
