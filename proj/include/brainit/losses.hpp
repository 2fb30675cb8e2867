#pragma once

#include "brainit/autodiff.hpp"
#include "brainit/errors.hpp"

namespace brainit::loss {

struct InfoNCEConfig {
    Real tau = 0.07;
};

/// Contrastive loss over aligned rows: row i of `predicted` is positive for
/// row i of `target`; every other target row in the pool is a negative.
/// Similarity is cosine. A single-row pool gives exactly 0.
nn::Var infonce_loss(const nn::Var& predicted, const nn::Var& target, const InfoNCEConfig& config);

}  // namespace brainit::loss
