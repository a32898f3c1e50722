#include "pearl/optim.hpp"

#include <cmath>

namespace pearl {

SgdOptimizer::SgdOptimizer(const OptimConfig& config, const ParameterStore& params,
                           std::set<std::string> frozen_sections)
    : config_(config), velocity_(params.zeros_like()),
      frozen_sections_(std::move(frozen_sections)) {}

bool SgdOptimizer::is_frozen(const std::string& name) const {
    for (const auto& sec : frozen_sections_)
        if (name.rfind(sec + ".", 0) == 0) return true;
    return false;
}

double SgdOptimizer::current_learning_rate() const {
    double lr = config_.learning_rate;
    if (config_.decay_every > 0) {
        int64_t drops = steps_ / config_.decay_every;
        lr *= std::pow(config_.decay_factor, double(drops));
    }
    return lr;
}

void SgdOptimizer::step(ParameterStore& params, const ParameterStore& grads, double grad_scale) {
    double lr = current_learning_rate();
    for (auto& [name, p] : params.arrays) {
        if (is_frozen(name)) continue;
        const Tensor& g = grads.at(name);
        Tensor& v = velocity_.at(name);
        for (size_t i = 0; i < p.size(); ++i) {
            double gi = g[i] * grad_scale + config_.weight_decay * p[i];
            v[i] = config_.momentum * v[i] + gi;
            p[i] -= lr * v[i];
        }
    }
    ++steps_;
}

}  // namespace pearl
