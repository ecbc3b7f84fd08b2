#pragma once

#include <algorithm>

#include "metor/nn.hpp"

namespace metor {

// Learning-rate multiplier: the initial rate times factor^(milestones passed),
// where a milestone epoch m takes effect from epoch m+1 onward.
template <typename T>
class MilestoneSchedule {
public:
    MilestoneSchedule() = default;
    MilestoneSchedule(T base_lr, std::vector<long> milestones, T factor)
        : base_lr_(base_lr), milestones_(std::move(milestones)), factor_(factor) {
        std::sort(milestones_.begin(), milestones_.end());
    }

    T lr_at_epoch(long epoch) const {
        T lr = base_lr_;
        for (long m : milestones_)
            if (m < epoch) lr *= factor_;
        return lr;
    }

    T base_lr() const { return base_lr_; }

private:
    T base_lr_ = T(1e-4);
    std::vector<long> milestones_;
    T factor_ = T(0.1);
};

// Decoupled-weight-decay Adam with bias correction.
template <typename T>
class AdamW {
public:
    struct Options {
        T lr = T(1e-4);
        T beta1 = T(0.9);
        T beta2 = T(0.999);
        T eps = T(1e-8);
        T weight_decay = T(0.01);
    };

    AdamW() = default;
    AdamW(nn::ParamRegistry<T>& registry, Options opts) : reg_(&registry), opts_(opts) {
        m_.resize(registry.all().size());
        v_.resize(registry.all().size());
        for (size_t i = 0; i < registry.all().size(); ++i) {
            const long n = registry.all()[i]->value.numel();
            m_[i].assign(static_cast<size_t>(n), T(0));
            v_[i].assign(static_cast<size_t>(n), T(0));
        }
    }

    void set_lr(T lr) { opts_.lr = lr; }
    T lr() const { return opts_.lr; }
    long step_count() const { return step_; }
    const Options& options() const { return opts_; }

    // grads aligned with the registry's registration order. The whole step
    // aborts before touching any parameter if a gradient is non-finite.
    void step(const std::vector<std::vector<T>>& grads) {
        const auto& params = reg_->all();
        if (grads.size() != params.size())
            throw std::invalid_argument("adamw: gradient count does not match parameter count");
        for (size_t i = 0; i < params.size(); ++i) {
            if (static_cast<long>(grads[i].size()) != params[i]->value.numel())
                throw std::invalid_argument("adamw: gradient shape mismatch for " +
                                            params[i]->name);
            for (const T& g : grads[i])
                if (!std::isfinite(static_cast<double>(g)))
                    throw NumericError("adamw: non-finite gradient for " + params[i]->name);
        }
        ++step_;
        const T bc1 = T(1) - std::pow(opts_.beta1, static_cast<T>(step_));
        const T bc2 = T(1) - std::pow(opts_.beta2, static_cast<T>(step_));
        for (size_t i = 0; i < params.size(); ++i) {
            if (!params[i]->trainable) continue;
            auto& p = params[i]->value.mutable_data();
            auto& m = m_[i];
            auto& v = v_[i];
            const auto& g = grads[i];
            for (size_t j = 0; j < p.size(); ++j) {
                m[j] = opts_.beta1 * m[j] + (T(1) - opts_.beta1) * g[j];
                v[j] = opts_.beta2 * v[j] + (T(1) - opts_.beta2) * g[j] * g[j];
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                p[j] -= opts_.lr * (mhat / (std::sqrt(vhat) + opts_.eps) +
                                    opts_.weight_decay * p[j]);
            }
        }
    }

private:
    nn::ParamRegistry<T>* reg_ = nullptr;
    Options opts_;
    std::vector<std::vector<T>> m_, v_;
    long step_ = 0;
};

}  // namespace metor
