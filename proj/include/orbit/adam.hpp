#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "orbit/autodiff.hpp"
#include "orbit/jsonio.hpp"
#include "orbit/tensor.hpp"

namespace orbit {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;

    void validate() const {
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw ConfigError("adam: betas must be in [0,1)");
        if (epsilon <= 0) throw ConfigError("adam: epsilon must be > 0");
        if (weight_decay < 0) throw ConfigError("adam: weight_decay must be >= 0");
    }
};

// Adam with bias correction and decoupled weight decay. Moment state is
// keyed by parameter name and created lazily, so parameters that join the
// trainable set later (an unfrozen encoder) start from fresh moments.
template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    struct ParamRef {
        std::string name;
        Var<T> var;
    };

    void step(const std::vector<ParamRef>& params, double lr) {
        for (const ParamRef& p : params) {
            if (!p.var->requires_grad || p.var->grad.numel() == 0) continue;
            Slot& slot = state_[p.name];
            if (slot.m.numel() != p.var->value.numel()) {
                slot.m = Tensor<T>(p.var->value.shape());
                slot.v = Tensor<T>(p.var->value.shape());
                slot.t = 0;
            }
            ++slot.t;
            const T b1 = static_cast<T>(cfg_.beta1);
            const T b2 = static_cast<T>(cfg_.beta2);
            const T correction1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, slot.t));
            const T correction2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, slot.t));
            const T eps = static_cast<T>(cfg_.epsilon);
            const T rate = static_cast<T>(lr);
            const T decay = static_cast<T>(cfg_.weight_decay);
            Tensor<T>& value = p.var->value;
            Tensor<T>& grad = p.var->grad;
            for (std::int64_t i = 0; i < value.numel(); ++i) {
                const T g = grad[i];
                slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g * g;
                const T mhat = slot.m[i] / correction1;
                const T vhat = slot.v[i] / correction2;
                value[i] -= rate * (mhat / (std::sqrt(vhat) + eps) + decay * value[i]);
            }
        }
    }

private:
    struct Slot {
        Tensor<T> m, v;
        std::int64_t t = 0;
    };

    AdamConfig cfg_;
    std::map<std::string, Slot> state_;
};

inline Json adam_to_json(const AdamConfig& c) {
    return Json{{"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}, {"weight_decay", c.weight_decay}};
}

inline AdamConfig adam_from_json(const Json& j) {
    AdamConfig c;
    check_keys(j, {"beta1", "beta2", "epsilon", "weight_decay"}, "adam");
    c.beta1 = get_or<double>(j, "beta1", c.beta1);
    c.beta2 = get_or<double>(j, "beta2", c.beta2);
    c.epsilon = get_or<double>(j, "epsilon", c.epsilon);
    c.weight_decay = get_or<double>(j, "weight_decay", c.weight_decay);
    c.validate();
    return c;
}

}  // namespace orbit
