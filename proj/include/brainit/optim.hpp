#pragma once

#include <map>
#include <string>
#include <vector>

#include "brainit/autodiff.hpp"
#include "brainit/errors.hpp"

namespace brainit::optim {

struct AdamWConfig {
    Real lr = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
    Real weight_decay = 0.0;
};

/// Adam with decoupled weight decay. Walks parameters in name order so
/// updates are deterministic. lr = 0 is the exact identity.
class AdamW {
public:
    AdamW(std::map<std::string, nn::Var> params, AdamWConfig config);

    void step(Real lr_scale = 1.0);
    void zero_grad();
    const std::map<std::string, nn::Var>& params() const { return params_; }
    AdamWConfig& config() { return config_; }

private:
    std::map<std::string, nn::Var> params_;
    std::map<std::string, Tensor> m_, v_;
    AdamWConfig config_;
    std::int64_t t_ = 0;
};

/// Linear warmup: base * min(1, (epoch+1)/warmup). Epoch 0 of a 15-epoch
/// warmup runs at base/15; full rate from epoch warmup-1 on.
Real warmup_lr(Real base, int epoch, int warmup_epochs);

/// Multiplies the rate by `factor` whenever the monitored value fails to
/// improve for `patience` consecutive observations.
class PlateauScheduler {
public:
    PlateauScheduler(Real factor = 0.1, int patience = 3) : factor_(factor), patience_(patience) {}
    void observe(Real monitored);
    Real scale() const { return scale_; }

private:
    Real factor_;
    int patience_;
    Real best_ = 0;
    bool seen_ = false;
    int bad_ = 0;
    Real scale_ = 1.0;
};

}  // namespace brainit::optim
