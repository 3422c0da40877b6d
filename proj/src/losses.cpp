#include "augda/losses.hpp"

#include <algorithm>
#include <cmath>

namespace augda {

void LossWeights::validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("LossWeights: alpha and beta must be >= 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("LossWeights: epsilon must be > 0");
}

DomainTarget DomainTarget::of(int domain, int n_domains) {
    if (n_domains < 1 || domain < 0 || domain >= n_domains)
        throw std::invalid_argument("DomainTarget: domain index out of range");
    DomainTarget t;
    t.one_hot.assign(static_cast<std::size_t>(n_domains), 0.0);
    t.one_hot[static_cast<std::size_t>(domain)] = 1.0;
    return t;
}

int DomainTarget::index() const {
    int idx = -1, ones = 0;
    for (std::size_t i = 0; i < one_hot.size(); ++i) {
        if (one_hot[i] == 1.0) {
            idx = static_cast<int>(i);
            ++ones;
        } else if (one_hot[i] != 0.0) {
            throw std::invalid_argument("DomainTarget: entries must be 0 or 1");
        }
    }
    if (ones != 1) throw std::invalid_argument("DomainTarget: exactly one entry must be 1");
    return idx;
}

namespace {

struct DiceTerms {
    double inter = 0.0;
    double sum = 0.0;
};

DiceTerms dice_terms(const double* p, const double* t, std::size_t n) {
    DiceTerms d;
    for (std::size_t i = 0; i < n; ++i) {
        d.inter += p[i] * t[i];
        d.sum += p[i] + t[i];
    }
    return d;
}

double dice_value(const DiceTerms& d, double eps) { return 1.0 - (2.0 * d.inter + eps) / (d.sum + eps); }

void check_eps(double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("soft_dice_loss: epsilon must be > 0");
}

}  // namespace

double soft_dice_loss(const ProbMask& pred, const ProbMask& target, double eps) {
    check_eps(eps);
    if (!pred.probs().same_shape(target.probs())) throw std::invalid_argument("soft_dice_loss: shape mismatch");
    return dice_value(dice_terms(pred.probs().vec().data(), target.probs().vec().data(), pred.probs().size()), eps);
}

double soft_dice_loss(const ProbMask& pred, const BinMask& target, double eps) {
    return soft_dice_loss(pred, target.as_prob(), eps);
}

double soft_dice_loss(const nn::Tensor& pred, const nn::Tensor& target, double eps, nn::Tensor* grad_pred,
                      nn::Tensor* grad_target) {
    check_eps(eps);
    if (!pred.same_shape(target)) throw std::invalid_argument("soft_dice_loss: shape mismatch");
    if (pred.n() == 0) throw std::invalid_argument("soft_dice_loss: empty batch");
    const std::size_t per = pred.sample_size();
    const double inv_n = 1.0 / pred.n();
    if (grad_pred) *grad_pred = nn::Tensor(pred.shape());
    if (grad_target) *grad_target = nn::Tensor(pred.shape());
    double total = 0.0;
    for (int n = 0; n < pred.n(); ++n) {
        const double* p = pred.sample(n);
        const double* t = target.sample(n);
        const auto d = dice_terms(p, t, per);
        total += dice_value(d, eps);
        const double den = d.sum + eps;
        const double num = 2.0 * d.inter + eps;
        const double k = inv_n / (den * den);
        if (grad_pred) {
            double* g = grad_pred->sample(n);
            for (std::size_t i = 0; i < per; ++i) g[i] = -(2.0 * t[i] * den - num) * k;
        }
        if (grad_target) {
            double* g = grad_target->sample(n);
            for (std::size_t i = 0; i < per; ++i) g[i] = -(2.0 * p[i] * den - num) * k;
        }
    }
    return total * inv_n;
}

double consistency_loss(const ProbMask& pred_orig_aligned, const ProbMask& pred_aug, double eps) {
    return soft_dice_loss(pred_orig_aligned, pred_aug, eps);
}

double consistency_loss(const nn::Tensor& pred_orig_aligned, const nn::Tensor& pred_aug, double eps,
                        nn::Tensor* grad_orig, nn::Tensor* grad_aug) {
    return soft_dice_loss(pred_orig_aligned, pred_aug, eps, grad_orig, grad_aug);
}

namespace {

// Cross entropy of one row plus its softmax.
double ce_row(const double* z, int n, int label, double* softmax_out) {
    const double m = *std::max_element(z, z + n);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(z[i] - m);
    const double lse = m + std::log(s);
    if (softmax_out)
        for (int i = 0; i < n; ++i) softmax_out[i] = std::exp(z[i] - lse);
    return lse - z[label];
}

}  // namespace

double adversarial_loss(std::span<const double> logits, const DomainTarget& target) {
    if (logits.size() != target.one_hot.size())
        throw std::invalid_argument("adversarial_loss: logits length does not match number of domains");
    return ce_row(logits.data(), static_cast<int>(logits.size()), target.index(), nullptr);
}

double adversarial_loss(const nn::Tensor& logits, std::span<const int> domains, nn::Tensor* grad) {
    const int N = logits.n(), K = static_cast<int>(logits.sample_size());
    if (static_cast<int>(domains.size()) != N) throw std::invalid_argument("adversarial_loss: label count mismatch");
    if (N == 0) throw std::invalid_argument("adversarial_loss: empty batch");
    if (grad) *grad = nn::Tensor(logits.shape());
    std::vector<double> sm(static_cast<std::size_t>(K));
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const int y = domains[static_cast<std::size_t>(n)];
        if (y < 0 || y >= K) throw std::invalid_argument("adversarial_loss: domain label out of range");
        total += ce_row(logits.sample(n), K, y, sm.data());
        if (grad) {
            double* g = grad->sample(n);
            for (int k = 0; k < K; ++k) g[k] = (sm[static_cast<std::size_t>(k)] - (k == y ? 1.0 : 0.0)) / N;
        }
    }
    return total / N;
}

double total_loss(double sup, double cons, double adv, const LossWeights& w) {
    if (!std::isfinite(sup) || !std::isfinite(cons) || !std::isfinite(adv))
        throw std::invalid_argument("total_loss: non-finite component");
    return sup + w.alpha * cons - w.beta * adv;
}

double domain_accuracy(const nn::Tensor& logits, std::span<const int> domains) {
    const int N = logits.n(), K = static_cast<int>(logits.sample_size());
    if (N == 0) return 0.0;
    int correct = 0;
    for (int n = 0; n < N; ++n) {
        const double* z = logits.sample(n);
        const int arg = static_cast<int>(std::max_element(z, z + K) - z);
        correct += arg == domains[static_cast<std::size_t>(n)] ? 1 : 0;
    }
    return static_cast<double>(correct) / N;
}

}  // namespace augda
