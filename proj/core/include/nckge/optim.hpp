#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nckge/rng.hpp"
#include "nckge/tensor.hpp"

namespace nckge {

/// eta_min + (eta_max - eta_min) * (1 + cos(pi t / t_max)) / 2
inline double cosine_lr(int64_t t, int64_t t_max, double eta_max, double eta_min) {
    if (t_max <= 0) return eta_max;
    if (t < 0 || t > t_max)
        throw std::invalid_argument("cosine_lr: step " + std::to_string(t) + " outside [0," +
                                    std::to_string(t_max) + "]");
    const double pi = 3.14159265358979323846;
    return eta_min + 0.5 * (eta_max - eta_min) *
                         (1.0 + std::cos(pi * static_cast<double>(t) / static_cast<double>(t_max)));
}

/// AdamW with decoupled weight decay:
/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
template <class S>
class AdamW {
public:
    AdamW(std::vector<Tensor<S>> params, double weight_decay = 1e-2, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8, bool checked = false)
        : params_(std::move(params)),
          wd_(weight_decay),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps),
          checked_(checked) {
        for (const auto& p : params_) {
            m_.emplace_back(static_cast<size_t>(p.numel()), S(0));
            v_.emplace_back(static_cast<size_t>(p.numel()), S(0));
        }
    }

    void step(double lr) {
        ++t_;
        const S b1 = S(beta1_), b2 = S(beta2_);
        const S bc1 = S(1) - static_cast<S>(std::pow(beta1_, static_cast<double>(t_)));
        const S bc2 = S(1) - static_cast<S>(std::pow(beta2_, static_cast<double>(t_)));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<S>& p = params_[i];
            if (!p.has_grad()) continue;
            const S* g = p.grad();
            S* theta = p.data();
            S* m = m_[i].data();
            S* v = v_[i].data();
            const int64_t n = p.numel();
            if (checked_)
                for (int64_t j = 0; j < n; ++j)
                    if (!std::isfinite(g[j]))
                        throw NumericError("adamw_step: non-finite gradient in parameter " +
                                           std::to_string(i));
            for (int64_t j = 0; j < n; ++j) {
                m[j] = b1 * m[j] + (S(1) - b1) * g[j];
                v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
                const S mhat = m[j] / bc1;
                const S vhat = v[j] / bc2;
                theta[j] -= S(lr) * (mhat / (std::sqrt(vhat) + S(eps_)) + S(wd_) * theta[j]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.drop_grad();
    }

    int64_t steps() const { return t_; }
    void set_steps(int64_t t) { t_ = t; }
    const std::vector<Tensor<S>>& params() const { return params_; }
    std::vector<std::vector<S>>& moments_m() { return m_; }
    std::vector<std::vector<S>>& moments_v() { return v_; }

private:
    std::vector<Tensor<S>> params_;
    std::vector<std::vector<S>> m_, v_;
    double wd_, beta1_, beta2_, eps_;
    bool checked_;
    int64_t t_ = 0;
};

/// Simulated-annealing temperature controller driven by validation MRR.
/// A stall of `patience` evaluations triggers a proposal; the previous
/// proposal is first settled (kept if it improved the best MRR since its
/// adoption, otherwise reverted with probability 1 - exp(dMRR / T_a)).
class TauAnnealer {
public:
    static constexpr double kTauMin = 0.1;
    static constexpr double kTauMax = 1.5;

    TauAnnealer(double tau0, int patience, Rng rng)
        : tau_(tau0), prev_tau_(tau0), patience_(patience), rng_(std::move(rng)) {
        if (tau0 < kTauMin || tau0 > kTauMax)
            throw std::invalid_argument("tau must start inside [0.1,1.5]");
    }

    void update(double mrr) {
        if (mrr < 0.0 || mrr > 1.0) throw std::invalid_argument("anneal: MRR outside [0,1]");
        if (mrr > best_mrr_) {
            best_mrr_ = mrr;
            stalled_ = 0;
            return;
        }
        if (++stalled_ < patience_) return;
        if (pending_ && best_mrr_ <= mrr_at_adoption_) {
            const double delta = mrr - best_mrr_;
            if (rng_.uniform01() < 1.0 - std::exp(delta / t_a_)) tau_ = prev_tau_;
        }
        prev_tau_ = tau_;
        tau_ = std::clamp(tau_ + rng_.uniform(-0.15, 0.15), kTauMin, kTauMax);
        mrr_at_adoption_ = best_mrr_;
        pending_ = true;
        t_a_ *= 0.95;
        stalled_ = 0;
    }

    double tau() const { return tau_; }
    double best_mrr() const { return best_mrr_; }
    int stalled() const { return stalled_; }
    double annealing_temperature() const { return t_a_; }

    struct Snapshot {
        double tau, prev_tau, best_mrr, mrr_at_adoption, t_a;
        int64_t stalled, pending;
        std::array<uint64_t, 4> rng_state;
    };
    Snapshot snapshot() const {
        return {tau_, prev_tau_, best_mrr_, mrr_at_adoption_, t_a_, stalled_, pending_ ? 1 : 0,
                rng_.state()};
    }
    void restore(const Snapshot& s) {
        tau_ = s.tau;
        prev_tau_ = s.prev_tau;
        best_mrr_ = s.best_mrr;
        mrr_at_adoption_ = s.mrr_at_adoption;
        t_a_ = s.t_a;
        stalled_ = static_cast<int>(s.stalled);
        pending_ = s.pending != 0;
        rng_.set_state(s.rng_state);
    }

private:
    double tau_;
    double prev_tau_;
    double best_mrr_ = -1.0;
    double mrr_at_adoption_ = -1.0;
    double t_a_ = 1.0;
    int stalled_ = 0;
    int patience_;
    bool pending_ = false;
    Rng rng_;
};

}  // namespace nckge
