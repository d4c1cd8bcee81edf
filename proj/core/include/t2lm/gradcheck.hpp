#pragma once

// Central finite-difference gradient checker. Meant to run on double
// instantiations of the ops; the difference quotient is computed from fresh
// forward passes and never touches the reverse-mode path it is checking.

#include <cmath>
#include <functional>
#include <vector>

#include "t2lm/errors.hpp"
#include "t2lm/tensor.hpp"

namespace t2lm::ad {

// f maps a leaf tensor to a scalar. Returns the worst relative error between
// the AD gradient and the central difference, with denominator
// max(|g_ad|, |g_fd|, 1e-8).
template <class Real>
double grad_check(const std::function<TensorPtr<Real>(const TensorPtr<Real>&)>& f,
                  const TensorPtr<Real>& x, Real h) {
    auto leaf = make_tensor<Real>(x->shape, x->data, true);
    auto y = f(leaf);
    if (y->numel() != 1) throw ShapeError("grad_check: f must return a scalar");
    if (!std::isfinite(static_cast<double>(y->data[0])))
        throw ValueError("grad_check: non-finite function value");
    backward(y);
    const std::vector<Real> g_ad = leaf->grad;

    double worst = 0.0;
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        auto xp = make_tensor<Real>(x->shape, x->data, false);
        auto xm = make_tensor<Real>(x->shape, x->data, false);
        xp->data[i] += h;
        xm->data[i] -= h;
        const double fp = static_cast<double>(f(xp)->data[0]);
        const double fm = static_cast<double>(f(xm)->data[0]);
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw ValueError("grad_check: non-finite function value");
        const double fd = (fp - fm) / (2.0 * static_cast<double>(h));
        const double ad = static_cast<double>(g_ad[i]);
        const double denom = std::max({std::abs(ad), std::abs(fd), 1e-8});
        worst = std::max(worst, std::abs(ad - fd) / denom);
    }
    return worst;
}

}  // namespace t2lm::ad
