#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "t2lm/errors.hpp"
#include "t2lm/tensor.hpp"

namespace t2lm {

// Decoupled weight decay Adam. Step order follows parameter registration
// order, which is fixed by the owning model, so updates are deterministic.
template <class Real>
class AdamW {
  public:
    struct Options {
        Real lr = Real(1e-3);
        Real beta1 = Real(0.9);
        Real beta2 = Real(0.999);
        Real eps = Real(1e-8);
        Real weight_decay = Real(1e-4);
    };

    AdamW(std::vector<ad::TensorPtr<Real>> params, Options opt)
        : params_(std::move(params)), opt_(opt) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->numel(), Real(0));
            v_[i].assign(params_[i]->numel(), Real(0));
        }
    }

    void set_lr(Real lr) { opt_.lr = lr; }
    Real lr() const { return opt_.lr; }

    void zero_grad() { ad::zero_grads(params_); }

    void step() {
        ++t_;
        const Real bc1 = Real(1) - std::pow(opt_.beta1, Real(t_));
        const Real bc2 = Real(1) - std::pow(opt_.beta2, Real(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            if (!p.requires_grad) throw ValueError("AdamW: parameter without grad buffer");
            for (std::size_t j = 0; j < p.data.size(); ++j) {
                const Real g = p.grad[j];
                m_[i][j] = opt_.beta1 * m_[i][j] + (Real(1) - opt_.beta1) * g;
                v_[i][j] = opt_.beta2 * v_[i][j] + (Real(1) - opt_.beta2) * g * g;
                const Real mhat = m_[i][j] / bc1;
                const Real vhat = v_[i][j] / bc2;
                p.data[j] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) +
                                        opt_.weight_decay * p.data[j]);
            }
        }
    }

  private:
    std::vector<ad::TensorPtr<Real>> params_;
    Options opt_;
    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
    std::int64_t t_ = 0;
};

// StepLR: lr = base * gamma^floor(epoch / step_size).
struct StepLr {
    double base;
    int step_size;
    double gamma;

    double at(int epoch) const {
        if (step_size <= 0) return base;
        return base * std::pow(gamma, static_cast<double>(epoch / step_size));
    }
};

}  // namespace t2lm
