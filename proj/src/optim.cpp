#include "brainit/optim.hpp"

#include <cmath>

namespace brainit::optim {

AdamW::AdamW(std::map<std::string, nn::Var> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
    if (config_.lr < 0 || config_.beta1 < 0 || config_.beta1 >= 1 || config_.beta2 < 0 ||
        config_.beta2 >= 1 || config_.eps <= 0)
        throw ArgumentError("adamw: bad config");
    for (const auto& [name, p] : params_) {
        m_[name] = Tensor::zeros(p.value().shape());
        v_[name] = Tensor::zeros(p.value().shape());
    }
}

void AdamW::step(Real lr_scale) {
    ++t_;
    const Real lr = config_.lr * lr_scale;
    const Real bc1 = 1.0 - std::pow(config_.beta1, static_cast<Real>(t_));
    const Real bc2 = 1.0 - std::pow(config_.beta2, static_cast<Real>(t_));
    for (auto& [name, p] : params_) {
        if (!p.has_grad()) continue;
        const Tensor& g = p.grad();
        Tensor& m = m_[name];
        Tensor& v = v_[name];
        Tensor& x = p.value();
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const Real mh = m[i] / bc1;
            const Real vh = v[i] / bc2;
            x[i] -= lr * (mh / (std::sqrt(vh) + config_.eps) + config_.weight_decay * x[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

Real warmup_lr(Real base, int epoch, int warmup_epochs) {
    if (warmup_epochs <= 0) return base;
    const Real f = static_cast<Real>(epoch + 1) / static_cast<Real>(warmup_epochs);
    return base * (f < 1.0 ? f : 1.0);
}

void PlateauScheduler::observe(Real monitored) {
    if (!seen_ || monitored < best_) {
        best_ = monitored;
        seen_ = true;
        bad_ = 0;
        return;
    }
    if (++bad_ > patience_) {
        scale_ *= factor_;
        bad_ = 0;
    }
}

}  // namespace brainit::optim
