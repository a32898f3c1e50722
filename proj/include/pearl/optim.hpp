#pragma once

#include <set>
#include <string>

#include "pearl/net.hpp"

namespace pearl {

struct OptimConfig {
    std::string kind = "sgd";  // sgd is the only kind; field kept for config echo
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int decay_every = 0;        // steps between learning-rate drops; 0 = none
    double decay_factor = 0.5;
};

// SGD with momentum and step decay. Arrays under a frozen section are never
// touched, whatever their gradients say.
class SgdOptimizer {
public:
    SgdOptimizer(const OptimConfig& config, const ParameterStore& params,
                 std::set<std::string> frozen_sections = {});

    // grads hold accumulated sums; scale (e.g. 1/batch) is applied here.
    void step(ParameterStore& params, const ParameterStore& grads, double grad_scale = 1.0);

    double current_learning_rate() const;
    int64_t steps_taken() const { return steps_; }

private:
    bool is_frozen(const std::string& name) const;

    OptimConfig config_;
    ParameterStore velocity_;
    std::set<std::string> frozen_sections_;
    int64_t steps_ = 0;
};

}  // namespace pearl
