#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pearl/net.hpp"
#include "pearl/rng.hpp"

namespace pearl::testing {

// Central finite difference on a scalar function of one coordinate.
inline double central_diff(const std::function<double()>& f, double* coord, double h = 1e-6) {
    double orig = *coord;
    *coord = orig + h;
    double fp = f();
    *coord = orig - h;
    double fm = f();
    *coord = orig;
    return (fp - fm) / (2.0 * h);
}

struct GradCheckResult {
    int checked = 0;
    int failed = 0;
    double worst_rel = 0.0;
    std::string worst_name;
};

// Compares analytic parameter gradients against central differences on
// `coords` random coordinates. loss() must re-evaluate from params.
inline GradCheckResult check_param_gradients(ParameterStore& params,
                                             const ParameterStore& analytic,
                                             const std::function<double()>& loss, Rng& rng,
                                             int coords = 20, double rel_tol = 1e-4,
                                             double h = 1e-6) {
    std::vector<std::pair<std::string, size_t>> flat;
    for (const auto& [name, t] : params.arrays)
        for (size_t i = 0; i < t.size(); ++i) flat.emplace_back(name, i);

    GradCheckResult res;
    for (int k = 0; k < coords; ++k) {
        auto [name, idx] = flat[size_t(rng.uniform_int(0, int64_t(flat.size()) - 1))];
        double* coord = &params.at(name)[idx];
        double fd = central_diff(loss, coord, h);
        double an = analytic.at(name)[idx];
        double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        double rel = std::abs(fd - an) / denom;
        ++res.checked;
        if (rel > res.worst_rel) {
            res.worst_rel = rel;
            res.worst_name = name + "[" + std::to_string(idx) + "]";
        }
        if (rel > rel_tol) ++res.failed;
    }
    return res;
}

}  // namespace pearl::testing
