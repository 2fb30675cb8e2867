#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "brainit/autodiff.hpp"
#include "brainit/rng.hpp"

namespace testutil {

using brainit::Real;
using brainit::Rng;
using brainit::Tensor;
using brainit::nn::Var;

inline Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, Real scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

/// Builds the graph from trainable leaves, backprops, and compares each leaf
/// gradient entry against a central finite difference. Returns the worst
/// relative error over all entries.
inline Real max_grad_rel_err(
    const std::function<Var(const std::vector<Var>&)>& build,
    std::vector<Tensor> leaves, Real eps = 1e-5) {
    std::vector<Var> vars;
    vars.reserve(leaves.size());
    for (auto& t : leaves) vars.emplace_back(t, true);
    Var out = build(vars);
    out.backward();

    auto eval = [&](const std::vector<Tensor>& ts) {
        std::vector<Var> vs;
        vs.reserve(ts.size());
        for (const auto& t : ts) vs.emplace_back(t, false);
        return build(vs).value()[0];
    };

    Real worst = 0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Tensor& grad = vars[li].has_grad() ? vars[li].grad() : Tensor::zeros(leaves[li].shape());
        for (std::int64_t i = 0; i < leaves[li].numel(); ++i) {
            std::vector<Tensor> plus = leaves, minus = leaves;
            plus[li][i] += eps;
            minus[li][i] -= eps;
            const Real fd = (eval(plus) - eval(minus)) / (2 * eps);
            const Real ad = grad[i];
            const Real denom = std::max(Real(1e-6), std::max(std::abs(fd), std::abs(ad)));
            worst = std::max(worst, std::abs(fd - ad) / denom);
        }
    }
    return worst;
}

}  // namespace testutil
