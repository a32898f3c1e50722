#include "pearl/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace pearl {

RecNorm rec_norm_from_string(const std::string& s) {
    if (s == "rms") return RecNorm::Rms;
    if (s == "l2") return RecNorm::L2;
    if (s == "mse") return RecNorm::Mse;
    throw std::invalid_argument("unknown rec_norm: " + s);
}

LossValue discriminator_loss(const std::vector<double>& d_fake, const std::vector<double>& d_real,
                             std::vector<double>* grad_fake, std::vector<double>* grad_real) {
    if (d_fake.empty() || d_fake.size() != d_real.size())
        throw std::invalid_argument("discriminator_loss: batch size mismatch");
    size_t n = d_fake.size();
    if (grad_fake) grad_fake->assign(n, 0.0);
    if (grad_real) grad_real->assign(n, 0.0);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double f = clamp_prob(d_fake[i]);
        double r = clamp_prob(d_real[i]);
        sum += -std::log(1.0 - f) - std::log(r);
        // Clamped points sit on a flat of the loss.
        if (grad_fake && d_fake[i] > kProbEps && d_fake[i] < 1.0 - kProbEps)
            (*grad_fake)[i] = 1.0 / ((1.0 - f) * double(n));
        if (grad_real && d_real[i] > kProbEps && d_real[i] < 1.0 - kProbEps)
            (*grad_real)[i] = -1.0 / (r * double(n));
    }
    LossValue v;
    v.value = sum / double(n);
    return v;
}

LossValue adversarial_loss(const std::vector<double>& d_fake, std::vector<double>* grad_fake) {
    if (d_fake.empty()) throw std::invalid_argument("adversarial_loss: empty batch");
    size_t n = d_fake.size();
    if (grad_fake) grad_fake->assign(n, 0.0);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double f = clamp_prob(d_fake[i]);
        sum += -std::log(f);
        if (grad_fake && d_fake[i] > kProbEps && d_fake[i] < 1.0 - kProbEps)
            (*grad_fake)[i] = -1.0 / (f * double(n));
    }
    LossValue v;
    v.value = sum / double(n);
    return v;
}

LossValue reconstruction_loss(const Tensor& pred, const Tensor& target, RecNorm norm,
                              Tensor* grad_pred) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("reconstruction_loss: shape mismatch");
    size_t n = pred.size();
    double ss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double d = pred[i] - target[i];
        ss += d * d;
    }
    LossValue v;
    if (grad_pred) *grad_pred = Tensor(pred.shape(), 0.0);
    switch (norm) {
        case RecNorm::Rms: {
            v.value = std::sqrt(ss / double(n));
            if (grad_pred && v.value > 1e-12)
                for (size_t i = 0; i < n; ++i)
                    (*grad_pred)[i] = (pred[i] - target[i]) / (double(n) * v.value);
            break;
        }
        case RecNorm::L2: {
            v.value = std::sqrt(ss);
            if (grad_pred && v.value > 1e-12)
                for (size_t i = 0; i < n; ++i) (*grad_pred)[i] = (pred[i] - target[i]) / v.value;
            break;
        }
        case RecNorm::Mse: {
            v.value = ss / double(n);
            if (grad_pred)
                for (size_t i = 0; i < n; ++i)
                    (*grad_pred)[i] = 2.0 * (pred[i] - target[i]) / double(n);
            break;
        }
    }
    return v;
}

LossValue generator_loss(const LossValue& rec, const LossValue& adv, double lambda_adv) {
    if (lambda_adv < 0.0) throw std::invalid_argument("generator_loss: lambda_adv < 0");
    LossValue v;
    v.components["rec"] = rec.value;
    v.components["adv"] = adv.value;
    v.value = rec.value + lambda_adv * adv.value;
    return v;
}

LossValue weighted_ce_loss(const Tensor& logprobs, const LabelMap& label,
                           const std::vector<double>& weights, std::optional<double> mining_tau,
                           Tensor* grad_logprobs) {
    if (logprobs.rank() != 3)
        throw std::invalid_argument("weighted_ce_loss: logprobs must be (C,H,W)");
    int C = logprobs.dim(0), H = logprobs.dim(1), W = logprobs.dim(2);
    if (H != label.height || W != label.width || C != label.num_classes)
        throw std::invalid_argument("weighted_ce_loss: logprobs/label shape mismatch");
    if (!weights.empty() && int(weights.size()) != C)
        throw std::invalid_argument("weighted_ce_loss: bad weight vector size");
    if (mining_tau && (*mining_tau <= 0.0 || *mining_tau > 1.0))
        throw std::invalid_argument("weighted_ce_loss: mining tau outside (0,1]");

    int hw = H * W;
    // Normalization precondition: logsumexp over C must be ~0 per pixel.
    for (int p = 0; p < hw; ++p) {
        double m = -1e300;
        for (int c = 0; c < C; ++c) m = std::max(m, logprobs[size_t(c) * hw + p]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(logprobs[size_t(c) * hw + p] - m);
        if (std::abs(m + std::log(sum)) > 1e-5)
            throw std::invalid_argument("weighted_ce_loss: logprobs are not normalized");
    }

    // Mask first (ignore + mining), weight after.
    std::vector<int> contributing;
    contributing.reserve(size_t(hw));
    for (int p = 0; p < hw; ++p) {
        int32_t y = label.labels[size_t(p)];
        if (y == label.ignore_index) continue;
        if (y < 0 || y >= C)
            throw std::invalid_argument("weighted_ce_loss: label out of range");
        if (mining_tau) {
            double true_prob = std::exp(logprobs[size_t(y) * hw + p]);
            if (true_prob >= *mining_tau) continue;  // already confidently right
        }
        contributing.push_back(p);
    }

    LossValue v;
    if (grad_logprobs) *grad_logprobs = Tensor(logprobs.shape(), 0.0);
    if (contributing.empty()) {
        v.all_excluded = true;
        return v;
    }
    double inv_m = 1.0 / double(contributing.size());
    double sum = 0.0;
    for (int p : contributing) {
        int32_t y = label.labels[size_t(p)];
        double w = weights.empty() ? 1.0 : weights[size_t(y)];
        sum -= w * logprobs[size_t(y) * hw + p];
        if (grad_logprobs) (*grad_logprobs)[size_t(y) * hw + p] = -w * inv_m;
    }
    v.value = sum * inv_m;
    return v;
}

LossValue pspnet_loss(const Tensor& pp_logprobs, const Tensor& fused_logprobs,
                      const LabelMap& label, const std::vector<double>& weights, double lambda_ip,
                      std::optional<double> mining_tau_pp, std::optional<double> mining_tau_ip,
                      Tensor* grad_pp, Tensor* grad_fused) {
    if (lambda_ip < 0.0) throw std::invalid_argument("pspnet_loss: lambda_ip < 0");
    LossValue pp = weighted_ce_loss(pp_logprobs, label, weights, mining_tau_pp, grad_pp);
    LossValue ip = weighted_ce_loss(fused_logprobs, label, weights, mining_tau_ip, grad_fused);
    if (grad_fused)
        for (auto& g : grad_fused->vec()) g *= lambda_ip;
    LossValue v;
    v.components["pp"] = pp.value;
    v.components["ip"] = ip.value;
    v.value = pp.value + lambda_ip * ip.value;
    v.all_excluded = pp.all_excluded && ip.all_excluded;
    return v;
}

}  // namespace pearl
