#include "brainit/losses.hpp"

namespace brainit::loss {

nn::Var infonce_loss(const nn::Var& predicted, const nn::Var& target,
                     const InfoNCEConfig& config) {
    if (config.tau <= 0) throw ArgumentError("infonce: tau must be positive");
    const Tensor& p = predicted.value();
    const Tensor& t = target.value();
    if (p.rank() != 2 || t.rank() != 2 || p.dim(0) != t.dim(0) || p.dim(1) != t.dim(1))
        throw ArgumentError("infonce: predicted/target must be equal-shape [N, d]");
    if (!p.all_finite() || !t.all_finite()) throw ArgumentError("infonce: non-finite input");

    nn::Var np = nn::l2_normalize_rows(predicted);
    nn::Var nt = nn::l2_normalize_rows(target);
    nn::Var logits = nn::mul_scalar(nn::matmul_nt(np, nt), 1.0 / config.tau);  // [N, N]
    nn::Var probs = nn::softmax_rows(logits);
    return nn::neg(nn::mean(nn::log(nn::take_diag(probs))));
}

}  // namespace brainit::loss
