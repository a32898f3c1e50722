#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pearl/image.hpp"
#include "pearl/tensor.hpp"

namespace pearl {

// Probability clamp applied before every logarithm.
constexpr double kProbEps = 1e-7;

inline double clamp_prob(double p) {
    return p < kProbEps ? kProbEps : (p > 1.0 - kProbEps ? 1.0 - kProbEps : p);
}

struct LossValue {
    double value = 0.0;
    std::map<std::string, double> components;
    bool all_excluded = false;  // mining/ignore removed every pixel
};

enum class RecNorm { Rms, L2, Mse };
RecNorm rec_norm_from_string(const std::string& s);

struct LossConfig {
    double lambda_adv = 0.2;
    double lambda_ip = 0.3;
    std::optional<double> mining_tau;  // hard-example mining threshold
    RecNorm rec_norm = RecNorm::Rms;
    std::vector<double> class_weights;  // empty = all ones
};

// l_D = -log(1 - D(fake)) - log(D(real)), batch-averaged, natural log.
LossValue discriminator_loss(const std::vector<double>& d_fake, const std::vector<double>& d_real,
                             std::vector<double>* grad_fake = nullptr,
                             std::vector<double>* grad_real = nullptr);

// l_adv = -log(D(fake)), batch-averaged.
LossValue adversarial_loss(const std::vector<double>& d_fake,
                           std::vector<double>* grad_fake = nullptr);

// Norm of the prediction error; per-element RMS by default so the scale is
// resolution-independent, with the literal L2 and MSE forms selectable.
LossValue reconstruction_loss(const Tensor& pred, const Tensor& target, RecNorm norm = RecNorm::Rms,
                              Tensor* grad_pred = nullptr);

// l_G = l_rec + lambda_adv * l_adv, components recorded.
LossValue generator_loss(const LossValue& rec, const LossValue& adv, double lambda_adv);

// Class-weighted per-pixel cross entropy on log-probabilities, averaged over
// contributing pixels. Ignore pixels are excluded; with mining enabled,
// pixels already predicted confidently (true-class prob >= tau) are excluded
// before weighting.
LossValue weighted_ce_loss(const Tensor& logprobs, const LabelMap& label,
                           const std::vector<double>& weights,
                           std::optional<double> mining_tau = std::nullopt,
                           Tensor* grad_logprobs = nullptr);

// Joint objective: weighted_ce(pp) + lambda_ip * weighted_ce(fused), mining
// applied only to the branch it is configured for.
LossValue pspnet_loss(const Tensor& pp_logprobs, const Tensor& fused_logprobs,
                      const LabelMap& label, const std::vector<double>& weights, double lambda_ip,
                      std::optional<double> mining_tau_pp = std::nullopt,
                      std::optional<double> mining_tau_ip = std::nullopt,
                      Tensor* grad_pp = nullptr, Tensor* grad_fused = nullptr);

}  // namespace pearl
