#pragma once

// Dense-tensor numerical core with reverse-mode automatic differentiation.
//
// Tensors are immutable once created except for gradient accumulation during
// backward(). Ops record a backward closure on the output node; backward()
// replays the reachable subgraph in reverse topological order using per-node
// scratch adjoints and then adds the adjoints into the persistent grad
// buffers, so running backward twice from the same scalar doubles every grad.
//
// Compute is templated on the scalar type: models run in float, gradient
// checks instantiate double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "t2lm/errors.hpp"
#include "t2lm/rng.hpp"

namespace t2lm::ad {

template <class Real>
struct Tensor;

template <class Real>
using TensorPtr = std::shared_ptr<Tensor<Real>>;

template <class Real>
struct Tensor : std::enable_shared_from_this<Tensor<Real>> {
    std::vector<int> shape;
    std::vector<Real> data;
    bool requires_grad = false;
    std::vector<Real> grad;  // persistent, sized iff requires_grad

    // Graph linkage. backprop reads this->adj and accumulates into the
    // parents' adj buffers. Leaves have no parents and no backprop.
    std::vector<TensorPtr<Real>> parents;
    std::function<void(Tensor<Real>&)> backprop;
    std::vector<Real> adj;  // scratch, live only inside backward()

    Tensor(std::vector<int> s, std::vector<Real> d, bool req)
        : shape(std::move(s)), data(std::move(d)), requires_grad(req) {
        std::size_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw ShapeError("tensor extents must be positive");
            n *= static_cast<std::size_t>(e);
        }
        if (n != data.size()) throw ShapeError("tensor data does not match shape");
        if (requires_grad) grad.assign(data.size(), Real(0));
    }

    std::size_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    Real& at(int i) { return data[static_cast<std::size_t>(i)]; }
    Real& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
    const Real& at(int i, int j) const {
        return data[static_cast<std::size_t>(i) * shape[1] + j];
    }

    void zero_grad() {
        if (requires_grad) std::fill(grad.begin(), grad.end(), Real(0));
    }
};

template <class Real>
TensorPtr<Real> make_tensor(std::vector<int> shape, std::vector<Real> data,
                            bool requires_grad = false) {
    return std::make_shared<Tensor<Real>>(std::move(shape), std::move(data),
                                          requires_grad);
}

template <class Real>
TensorPtr<Real> zeros(std::vector<int> shape, bool requires_grad = false) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e > 0 ? e : 0);
    return make_tensor<Real>(std::move(shape), std::vector<Real>(n, Real(0)),
                             requires_grad);
}

template <class Real>
TensorPtr<Real> full(std::vector<int> shape, Real value, bool requires_grad = false) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e > 0 ? e : 0);
    return make_tensor<Real>(std::move(shape), std::vector<Real>(n, value),
                             requires_grad);
}

template <class Real>
TensorPtr<Real> randn(std::vector<int> shape, Real stddev, Rng& rng,
                      bool requires_grad = true) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e > 0 ? e : 0);
    std::vector<Real> d(n);
    for (auto& v : d) v = static_cast<Real>(rng.normal(0.0, static_cast<double>(stddev)));
    return make_tensor<Real>(std::move(shape), std::move(d), requires_grad);
}

// ---------------------------------------------------------------------------
// op plumbing

namespace detail {

template <class Real>
void check_finite(const Tensor<Real>& t, const char* op) {
    for (Real v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw ValueError(std::string(op) + ": non-finite value in result");
        }
    }
}

template <class Real>
bool any_grad(std::initializer_list<const TensorPtr<Real>*> xs) {
    for (auto* x : xs) {
        if (*x && (*x)->requires_grad) return true;
    }
    return false;
}

// Finalizes an op output: finiteness guard plus graph linkage when any input
// participates in differentiation.
template <class Real, class Fn>
TensorPtr<Real> attach(TensorPtr<Real> out, const char* op,
                       std::vector<TensorPtr<Real>> parents, Fn&& fn) {
    check_finite(*out, op);
    bool need = false;
    for (const auto& p : parents) need = need || p->requires_grad;
    if (need) {
        out->requires_grad = true;
        out->grad.assign(out->data.size(), Real(0));
        out->parents = std::move(parents);
        out->backprop = std::forward<Fn>(fn);
    }
    return out;
}

template <class Real>
std::vector<Real>& adj_of(const TensorPtr<Real>& t) {
    if (t->adj.size() != t->data.size()) t->adj.assign(t->data.size(), Real(0));
    return t->adj;
}

inline void require(bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg);
}

// Reduction kernel for the backward hot paths. The pragma lets the compiler
// vectorize with a fixed lane order, so results stay run-to-run identical.
template <class Real>
inline Real dot(const Real* a, const Real* b, int n) {
    Real s = 0;
#pragma omp simd reduction(+ : s)
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class Real>
inline Real strided_dot(const Real* a, const Real* b, int stride_b, int n) {
    Real s = 0;
#pragma omp simd reduction(+ : s)
    for (int i = 0; i < n; ++i) s += a[i] * b[static_cast<std::ptrdiff_t>(i) * stride_b];
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <class Real>
TensorPtr<Real> add(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    detail::require(a->shape == b->shape, "add: shape mismatch");
    auto out = make_tensor<Real>(a->shape, a->data);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] += b->data[i];
    return detail::attach<Real>(out, "add", {a, b}, [a, b](Tensor<Real>& o) {
        if (a->requires_grad) {
            auto& ga = detail::adj_of(a);
            for (std::size_t i = 0; i < o.adj.size(); ++i) ga[i] += o.adj[i];
        }
        if (b->requires_grad) {
            auto& gb = detail::adj_of(b);
            for (std::size_t i = 0; i < o.adj.size(); ++i) gb[i] += o.adj[i];
        }
    });
}

template <class Real>
TensorPtr<Real> sub(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    detail::require(a->shape == b->shape, "sub: shape mismatch");
    auto out = make_tensor<Real>(a->shape, a->data);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] -= b->data[i];
    return detail::attach<Real>(out, "sub", {a, b}, [a, b](Tensor<Real>& o) {
        if (a->requires_grad) {
            auto& ga = detail::adj_of(a);
            for (std::size_t i = 0; i < o.adj.size(); ++i) ga[i] += o.adj[i];
        }
        if (b->requires_grad) {
            auto& gb = detail::adj_of(b);
            for (std::size_t i = 0; i < o.adj.size(); ++i) gb[i] -= o.adj[i];
        }
    });
}

template <class Real>
TensorPtr<Real> mul(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    detail::require(a->shape == b->shape, "mul: shape mismatch");
    auto out = make_tensor<Real>(a->shape, a->data);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] *= b->data[i];
    return detail::attach<Real>(out, "mul", {a, b}, [a, b](Tensor<Real>& o) {
        if (a->requires_grad) {
            auto& ga = detail::adj_of(a);
            for (std::size_t i = 0; i < o.adj.size(); ++i) ga[i] += o.adj[i] * b->data[i];
        }
        if (b->requires_grad) {
            auto& gb = detail::adj_of(b);
            for (std::size_t i = 0; i < o.adj.size(); ++i) gb[i] += o.adj[i] * a->data[i];
        }
    });
}

template <class Real>
TensorPtr<Real> scale(const TensorPtr<Real>& a, Real c) {
    auto out = make_tensor<Real>(a->shape, a->data);
    for (auto& v : out->data) v *= c;
    return detail::attach<Real>(out, "scale", {a}, [a, c](Tensor<Real>& o) {
        auto& ga = detail::adj_of(a);
        for (std::size_t i = 0; i < o.adj.size(); ++i) ga[i] += c * o.adj[i];
    });
}

template <class Real>
TensorPtr<Real> relu(const TensorPtr<Real>& a) {
    auto out = make_tensor<Real>(a->shape, a->data);
    for (auto& v : out->data) v = v > Real(0) ? v : Real(0);
    return detail::attach<Real>(out, "relu", {a}, [a](Tensor<Real>& o) {
        auto& ga = detail::adj_of(a);
        for (std::size_t i = 0; i < o.adj.size(); ++i) {
            if (a->data[i] > Real(0)) ga[i] += o.adj[i];
        }
    });
}

template <class Real>
TensorPtr<Real> abs_val(const TensorPtr<Real>& a) {
    auto out = make_tensor<Real>(a->shape, a->data);
    for (auto& v : out->data) v = std::abs(v);
    return detail::attach<Real>(out, "abs", {a}, [a](Tensor<Real>& o) {
        auto& ga = detail::adj_of(a);
        for (std::size_t i = 0; i < o.adj.size(); ++i) {
            const Real x = a->data[i];
            if (x > Real(0)) ga[i] += o.adj[i];
            else if (x < Real(0)) ga[i] -= o.adj[i];
        }
    });
}

// Detached copy: same values, no gradient path.
template <class Real>
TensorPtr<Real> detach(const TensorPtr<Real>& a) {
    return make_tensor<Real>(a->shape, a->data, false);
}

// ---------------------------------------------------------------------------
// broadcasts

// x: [n x d], v: [d]; adds v to every row.
template <class Real>
TensorPtr<Real> add_rowvec(const TensorPtr<Real>& x, const TensorPtr<Real>& v) {
    detail::require(x->ndim() == 2 && v->ndim() == 1 && x->shape[1] == v->shape[0],
                    "add_rowvec: shape mismatch");
    const int n = x->shape[0], d = x->shape[1];
    auto out = make_tensor<Real>(x->shape, x->data);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out->at(i, j) += v->data[j];
    return detail::attach<Real>(out, "add_rowvec", {x, v}, [x, v, n, d](Tensor<Real>& o) {
        if (x->requires_grad) {
            auto& gx = detail::adj_of(x);
            for (std::size_t i = 0; i < o.adj.size(); ++i) gx[i] += o.adj[i];
        }
        if (v->requires_grad) {
            auto& gv = detail::adj_of(v);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) gv[j] += o.adj[static_cast<std::size_t>(i) * d + j];
        }
    });
}

// x: [c x t], v: [c]; adds v[i] to every element of row i (per-channel bias).
template <class Real>
TensorPtr<Real> add_colvec(const TensorPtr<Real>& x, const TensorPtr<Real>& v) {
    detail::require(x->ndim() == 2 && v->ndim() == 1 && x->shape[0] == v->shape[0],
                    "add_colvec: shape mismatch");
    const int c = x->shape[0], t = x->shape[1];
    auto out = make_tensor<Real>(x->shape, x->data);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < t; ++j) out->at(i, j) += v->data[i];
    return detail::attach<Real>(out, "add_colvec", {x, v}, [x, v, c, t](Tensor<Real>& o) {
        if (x->requires_grad) {
            auto& gx = detail::adj_of(x);
            for (std::size_t i = 0; i < o.adj.size(); ++i) gx[i] += o.adj[i];
        }
        if (v->requires_grad) {
            auto& gv = detail::adj_of(v);
            for (int i = 0; i < c; ++i) {
                Real s = 0;
                for (int j = 0; j < t; ++j) s += o.adj[static_cast<std::size_t>(i) * t + j];
                gv[i] += s;
            }
        }
    });
}

// x: [c x t], v: [c]; scales every element of row i by v[i].
template <class Real>
TensorPtr<Real> mul_colvec(const TensorPtr<Real>& x, const TensorPtr<Real>& v) {
    detail::require(x->ndim() == 2 && v->ndim() == 1 && x->shape[0] == v->shape[0],
                    "mul_colvec: shape mismatch");
    const int c = x->shape[0], t = x->shape[1];
    auto out = make_tensor<Real>(x->shape, x->data);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < t; ++j) out->at(i, j) *= v->data[i];
    return detail::attach<Real>(out, "mul_colvec", {x, v}, [x, v, c, t](Tensor<Real>& o) {
        if (x->requires_grad) {
            auto& gx = detail::adj_of(x);
            for (int i = 0; i < c; ++i)
                for (int j = 0; j < t; ++j)
                    gx[static_cast<std::size_t>(i) * t + j] +=
                        o.adj[static_cast<std::size_t>(i) * t + j] * v->data[i];
        }
        if (v->requires_grad) {
            auto& gv = detail::adj_of(v);
            for (int i = 0; i < c; ++i) {
                Real s = 0;
                for (int j = 0; j < t; ++j)
                    s += o.adj[static_cast<std::size_t>(i) * t + j] *
                         x->data[static_cast<std::size_t>(i) * t + j];
                gv[i] += s;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra

template <class Real>
TensorPtr<Real> matmul(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    detail::require(a->ndim() == 2 && b->ndim() == 2, "matmul: expects 2-d tensors");
    if (a->shape[1] != b->shape[0]) throw ShapeError("matmul: inner dimensions disagree");
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = zeros<Real>({m, n});
    for (int i = 0; i < m; ++i) {
        Real* __restrict__ orow = &out->data[static_cast<std::size_t>(i) * n];
        for (int kk = 0; kk < k; ++kk) {
            const Real av = a->data[static_cast<std::size_t>(i) * k + kk];
            const Real* __restrict__ brow = &b->data[static_cast<std::size_t>(kk) * n];
#pragma omp simd
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return detail::attach<Real>(out, "matmul", {a, b}, [a, b, m, k, n](Tensor<Real>& o) {
        if (a->requires_grad) {
            auto& ga = detail::adj_of(a);
            // dA = dC * B^T
            for (int i = 0; i < m; ++i) {
                const Real* grow = &o.adj[static_cast<std::size_t>(i) * n];
                for (int kk = 0; kk < k; ++kk) {
                    const Real* brow = &b->data[static_cast<std::size_t>(kk) * n];
                    ga[static_cast<std::size_t>(i) * k + kk] += detail::dot(grow, brow, n);
                }
            }
        }
        if (b->requires_grad) {
            auto& gb = detail::adj_of(b);
            // dB = A^T * dC
            for (int i = 0; i < m; ++i) {
                const Real* __restrict__ grow = &o.adj[static_cast<std::size_t>(i) * n];
                for (int kk = 0; kk < k; ++kk) {
                    const Real av = a->data[static_cast<std::size_t>(i) * k + kk];
                    Real* __restrict__ gbrow = &gb[static_cast<std::size_t>(kk) * n];
#pragma omp simd
                    for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
}

template <class Real>
TensorPtr<Real> transpose(const TensorPtr<Real>& a) {
    detail::require(a->ndim() == 2, "transpose: expects 2-d tensor");
    const int m = a->shape[0], n = a->shape[1];
    auto out = zeros<Real>({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->at(j, i) = a->at(i, j);
    return detail::attach<Real>(out, "transpose", {a}, [a, m, n](Tensor<Real>& o) {
        auto& ga = detail::adj_of(a);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                ga[static_cast<std::size_t>(i) * n + j] += o.adj[static_cast<std::size_t>(j) * m + i];
    });
}

// ---------------------------------------------------------------------------
// temporal ops (rows = channels, cols = time)

// x: [c_in x T], w: [c_out x c_in x k]. Zero padding, stride 1 or 2.
template <class Real>
TensorPtr<Real> conv1d(const TensorPtr<Real>& x, const TensorPtr<Real>& w,
                       int stride, int pad) {
    detail::require(x->ndim() == 2 && w->ndim() == 3, "conv1d: bad ranks");
    const int c_in = x->shape[0], T = x->shape[1];
    const int c_out = w->shape[0], k = w->shape[2];
    if (w->shape[1] != c_in) throw ShapeError("conv1d: channel mismatch");
    if (k < 1) throw ValueError("conv1d: kernel must be >= 1");
    if (stride != 1 && stride != 2) throw ValueError("conv1d: stride must be 1 or 2");
    if (pad < 0) throw ValueError("conv1d: negative padding");
    const int t_out = (T + 2 * pad - k) / stride + 1;
    if (T + 2 * pad < k || t_out < 1) throw ValueError("conv1d: input too short");

    auto out = zeros<Real>({c_out, t_out});
    for (int co = 0; co < c_out; ++co) {
        Real* __restrict__ orow = &out->data[static_cast<std::size_t>(co) * t_out];
        for (int ci = 0; ci < c_in; ++ci) {
            const Real* __restrict__ xrow = &x->data[static_cast<std::size_t>(ci) * T];
            for (int kk = 0; kk < k; ++kk) {
                const Real wv = w->data[(static_cast<std::size_t>(co) * c_in + ci) * k + kk];
                // valid t range: 0 <= stride*t + kk - pad < T
                const int off = kk - pad;
                int t0 = 0, t1 = t_out;
                if (off < 0) t0 = (-off + stride - 1) / stride;
                if (off + stride * (t_out - 1) >= T) t1 = (T - off + stride - 1) / stride;
                if (t1 > t_out) t1 = t_out;
#pragma omp simd
                for (int t = t0; t < t1; ++t) orow[t] += wv * xrow[stride * t + off];
            }
        }
    }
    return detail::attach<Real>(
        out, "conv1d", {x, w},
        [x, w, stride, pad, c_in, T, c_out, k, t_out](Tensor<Real>& o) {
            if (x->requires_grad) {
                auto& gx = detail::adj_of(x);
                for (int co = 0; co < c_out; ++co) {
                    const Real* __restrict__ grow = &o.adj[static_cast<std::size_t>(co) * t_out];
                    for (int ci = 0; ci < c_in; ++ci) {
                        Real* __restrict__ gxrow = &gx[static_cast<std::size_t>(ci) * T];
                        for (int kk = 0; kk < k; ++kk) {
                            const Real wv =
                                w->data[(static_cast<std::size_t>(co) * c_in + ci) * k + kk];
                            const int off = kk - pad;
                            int t0 = 0, t1 = t_out;
                            if (off < 0) t0 = (-off + stride - 1) / stride;
                            if (off + stride * (t_out - 1) >= T)
                                t1 = (T - off + stride - 1) / stride;
                            if (t1 > t_out) t1 = t_out;
                            Real* __restrict__ dst = gxrow + off;
                            if (stride == 1) {
#pragma omp simd
                                for (int t = t0; t < t1; ++t) dst[t] += wv * grow[t];
                            } else {
                                for (int t = t0; t < t1; ++t) gxrow[stride * t + off] += wv * grow[t];
                            }
                        }
                    }
                }
            }
            if (w->requires_grad) {
                auto& gw = detail::adj_of(w);
                for (int co = 0; co < c_out; ++co) {
                    const Real* grow = &o.adj[static_cast<std::size_t>(co) * t_out];
                    for (int ci = 0; ci < c_in; ++ci) {
                        const Real* xrow = &x->data[static_cast<std::size_t>(ci) * T];
                        for (int kk = 0; kk < k; ++kk) {
                            const int off = kk - pad;
                            int t0 = 0, t1 = t_out;
                            if (off < 0) t0 = (-off + stride - 1) / stride;
                            if (off + stride * (t_out - 1) >= T)
                                t1 = (T - off + stride - 1) / stride;
                            if (t1 > t_out) t1 = t_out;
                            gw[(static_cast<std::size_t>(co) * c_in + ci) * k + kk] +=
                                stride == 1
                                    ? detail::dot(grow + t0, xrow + t0 + off, t1 - t0)
                                    : detail::strided_dot(grow + t0, xrow + stride * t0 + off,
                                                          stride, t1 - t0);
                        }
                    }
                }
            }
        });
}

// x: [c x T] -> [c x 2T], each time step duplicated.
template <class Real>
TensorPtr<Real> upsample_nearest2(const TensorPtr<Real>& x) {
    detail::require(x->ndim() == 2, "upsample_nearest2: expects 2-d tensor");
    const int c = x->shape[0], T = x->shape[1];
    auto out = zeros<Real>({c, 2 * T});
    for (int i = 0; i < c; ++i)
        for (int t = 0; t < T; ++t) {
            const Real v = x->at(i, t);
            out->at(i, 2 * t) = v;
            out->at(i, 2 * t + 1) = v;
        }
    return detail::attach<Real>(out, "upsample_nearest2", {x}, [x, c, T](Tensor<Real>& o) {
        auto& gx = detail::adj_of(x);
        for (int i = 0; i < c; ++i)
            for (int t = 0; t < T; ++t)
                gx[static_cast<std::size_t>(i) * T + t] +=
                    o.adj[static_cast<std::size_t>(i) * 2 * T + 2 * t] +
                    o.adj[static_cast<std::size_t>(i) * 2 * T + 2 * t + 1];
    });
}

// ---------------------------------------------------------------------------
// normalization and softmax

template <class Real>
TensorPtr<Real> layer_norm(const TensorPtr<Real>& x, const TensorPtr<Real>& gain,
                           const TensorPtr<Real>& bias, Real eps) {
    detail::require(x->ndim() == 2 && gain->ndim() == 1 && bias->ndim() == 1,
                    "layer_norm: bad ranks");
    const int n = x->shape[0], d = x->shape[1];
    if (gain->shape[0] != d || bias->shape[0] != d)
        throw ShapeError("layer_norm: gain/bias dimension mismatch");
    if (eps <= Real(0)) throw ValueError("layer_norm: eps must be positive");

    auto out = zeros<Real>({n, d});
    std::vector<Real> inv_std(static_cast<std::size_t>(n));
    std::vector<Real> xhat(x->data.size());
    for (int i = 0; i < n; ++i) {
        const Real* row = &x->data[static_cast<std::size_t>(i) * d];
        Real mean = 0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= Real(d);
        Real var = 0;
        for (int j = 0; j < d; ++j) {
            const Real c = row[j] - mean;
            var += c * c;
        }
        var /= Real(d);
        const Real is = Real(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < d; ++j) {
            const Real h = (row[j] - mean) * is;
            xhat[static_cast<std::size_t>(i) * d + j] = h;
            out->at(i, j) = gain->data[j] * h + bias->data[j];
        }
    }
    return detail::attach<Real>(
        out, "layer_norm", {x, gain, bias},
        [x, gain, bias, n, d, inv_std = std::move(inv_std),
         xhat = std::move(xhat)](Tensor<Real>& o) {
            for (int i = 0; i < n; ++i) {
                const Real* g = &o.adj[static_cast<std::size_t>(i) * d];
                const Real* xh = &xhat[static_cast<std::size_t>(i) * d];
                if (gain->requires_grad) {
                    auto& gg = detail::adj_of(gain);
                    for (int j = 0; j < d; ++j) gg[j] += g[j] * xh[j];
                }
                if (bias->requires_grad) {
                    auto& gb = detail::adj_of(bias);
                    for (int j = 0; j < d; ++j) gb[j] += g[j];
                }
                if (x->requires_grad) {
                    auto& gx = detail::adj_of(x);
                    Real sum_dh = 0, sum_dh_h = 0;
                    for (int j = 0; j < d; ++j) {
                        const Real dh = g[j] * gain->data[j];
                        sum_dh += dh;
                        sum_dh_h += dh * xh[j];
                    }
                    const Real is = inv_std[static_cast<std::size_t>(i)];
                    for (int j = 0; j < d; ++j) {
                        const Real dh = g[j] * gain->data[j];
                        gx[static_cast<std::size_t>(i) * d + j] +=
                            is * (dh - sum_dh / Real(d) - xh[j] * sum_dh_h / Real(d));
                    }
                }
            }
        });
}

namespace detail {

template <class Real>
void softmax_row(const Real* in, Real* out, int lo, int hi, int width) {
    Real m = in[lo];
    for (int j = lo; j < hi; ++j) m = std::max(m, in[j]);
    Real denom = 0;
    for (int j = lo; j < hi; ++j) {
        out[j] = std::exp(in[j] - m);
        denom += out[j];
    }
    for (int j = lo; j < hi; ++j) out[j] /= denom;
    for (int j = 0; j < lo; ++j) out[j] = Real(0);
    for (int j = hi; j < width; ++j) out[j] = Real(0);
}

template <class Real>
void softmax_row_backward(const Real* y, const Real* g, Real* gx, int lo, int hi) {
    Real dot = 0;
    for (int j = lo; j < hi; ++j) dot += g[j] * y[j];
    for (int j = lo; j < hi; ++j) gx[j] += y[j] * (g[j] - dot);
}

}  // namespace detail

template <class Real>
TensorPtr<Real> softmax_rows(const TensorPtr<Real>& x) {
    detail::require(x->ndim() == 2, "softmax_rows: expects 2-d tensor");
    const int n = x->shape[0], d = x->shape[1];
    auto out = zeros<Real>({n, d});
    for (int i = 0; i < n; ++i)
        detail::softmax_row(&x->data[static_cast<std::size_t>(i) * d],
                            &out->data[static_cast<std::size_t>(i) * d], 0, d, d);
    return detail::attach<Real>(out, "softmax_rows", {x}, [x, n, d](Tensor<Real>& o) {
        auto& gx = detail::adj_of(x);
        for (int i = 0; i < n; ++i)
            detail::softmax_row_backward(&o.data[static_cast<std::size_t>(i) * d],
                                         &o.adj[static_cast<std::size_t>(i) * d],
                                         &gx[static_cast<std::size_t>(i) * d], 0, d);
    });
}

// Square attention-score matrix; row i is a softmax over columns 0..i and
// exactly zero beyond, so future positions cannot influence the output at
// all (the causality contract is bitwise, not approximate).
template <class Real>
TensorPtr<Real> causal_softmax_rows(const TensorPtr<Real>& x) {
    detail::require(x->ndim() == 2 && x->shape[0] == x->shape[1],
                    "causal_softmax_rows: expects square tensor");
    const int n = x->shape[0];
    auto out = zeros<Real>({n, n});
    for (int i = 0; i < n; ++i)
        detail::softmax_row(&x->data[static_cast<std::size_t>(i) * n],
                            &out->data[static_cast<std::size_t>(i) * n], 0, i + 1, n);
    return detail::attach<Real>(out, "causal_softmax_rows", {x}, [x, n](Tensor<Real>& o) {
        auto& gx = detail::adj_of(x);
        for (int i = 0; i < n; ++i)
            detail::softmax_row_backward(&o.data[static_cast<std::size_t>(i) * n],
                                         &o.adj[static_cast<std::size_t>(i) * n],
                                         &gx[static_cast<std::size_t>(i) * n], 0, i + 1);
    });
}

// Row-wise x / sqrt(|x|^2 + eps).
template <class Real>
TensorPtr<Real> l2_normalize_rows(const TensorPtr<Real>& x, Real eps) {
    detail::require(x->ndim() == 2, "l2_normalize_rows: expects 2-d tensor");
    const int n = x->shape[0], d = x->shape[1];
    auto out = zeros<Real>({n, d});
    std::vector<Real> inv_norm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Real* row = &x->data[static_cast<std::size_t>(i) * d];
        Real s = 0;
        for (int j = 0; j < d; ++j) s += row[j] * row[j];
        const Real r = Real(1) / std::sqrt(s + eps);
        inv_norm[static_cast<std::size_t>(i)] = r;
        for (int j = 0; j < d; ++j) out->at(i, j) = row[j] * r;
    }
    return detail::attach<Real>(
        out, "l2_normalize_rows", {x},
        [x, n, d, inv_norm = std::move(inv_norm)](Tensor<Real>& o) {
            auto& gx = detail::adj_of(x);
            for (int i = 0; i < n; ++i) {
                const Real* row = &x->data[static_cast<std::size_t>(i) * d];
                const Real* g = &o.adj[static_cast<std::size_t>(i) * d];
                const Real r = inv_norm[static_cast<std::size_t>(i)];
                Real dot = 0;
                for (int j = 0; j < d; ++j) dot += g[j] * row[j];
                for (int j = 0; j < d; ++j)
                    gx[static_cast<std::size_t>(i) * d + j] +=
                        g[j] * r - row[j] * dot * r * r * r;
            }
        });
}

// Mean over rows of -log softmax(logits)[target].
template <class Real>
TensorPtr<Real> softmax_cross_entropy(const TensorPtr<Real>& logits,
                                      const std::vector<int>& targets) {
    detail::require(logits->ndim() == 2, "softmax_cross_entropy: expects 2-d logits");
    const int n = logits->shape[0], C = logits->shape[1];
    if (static_cast<int>(targets.size()) != n)
        throw ShapeError("softmax_cross_entropy: one target per row required");
    for (int t : targets) {
        if (t < 0 || t >= C) throw ValueError("softmax_cross_entropy: target index out of range");
    }
    Real loss = 0;
    std::vector<Real> probs(logits->data.size());
    for (int i = 0; i < n; ++i) {
        const Real* row = &logits->data[static_cast<std::size_t>(i) * C];
        Real m = row[0];
        for (int j = 0; j < C; ++j) m = std::max(m, row[j]);
        Real denom = 0;
        for (int j = 0; j < C; ++j) denom += std::exp(row[j] - m);
        const Real lse = m + std::log(denom);
        for (int j = 0; j < C; ++j)
            probs[static_cast<std::size_t>(i) * C + j] = std::exp(row[j] - lse);
        loss += lse - row[targets[static_cast<std::size_t>(i)]];
    }
    loss /= Real(n);
    auto out = make_tensor<Real>({1}, {loss});
    return detail::attach<Real>(
        out, "softmax_cross_entropy", {logits},
        [logits, targets, n, C, probs = std::move(probs)](Tensor<Real>& o) {
            auto& gx = detail::adj_of(logits);
            const Real g = o.adj[0] / Real(n);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < C; ++j)
                    gx[static_cast<std::size_t>(i) * C + j] +=
                        g * probs[static_cast<std::size_t>(i) * C + j];
                gx[static_cast<std::size_t>(i) * C + targets[static_cast<std::size_t>(i)]] -= g;
            }
        });
}

// ---------------------------------------------------------------------------
// reductions

template <class Real>
TensorPtr<Real> sum(const TensorPtr<Real>& a) {
    Real s = 0;
    for (Real v : a->data) s += v;
    auto out = make_tensor<Real>({1}, {s});
    return detail::attach<Real>(out, "sum", {a}, [a](Tensor<Real>& o) {
        auto& ga = detail::adj_of(a);
        for (auto& v : ga) v += o.adj[0];
    });
}

template <class Real>
TensorPtr<Real> mean(const TensorPtr<Real>& a) {
    Real s = 0;
    for (Real v : a->data) s += v;
    const Real inv = Real(1) / Real(a->numel());
    auto out = make_tensor<Real>({1}, {s * inv});
    return detail::attach<Real>(out, "mean", {a}, [a, inv](Tensor<Real>& o) {
        auto& ga = detail::adj_of(a);
        for (auto& v : ga) v += o.adj[0] * inv;
    });
}

// x: [n x d] -> [1 x d] column means.
template <class Real>
TensorPtr<Real> mean_rows(const TensorPtr<Real>& x) {
    detail::require(x->ndim() == 2, "mean_rows: expects 2-d tensor");
    const int n = x->shape[0], d = x->shape[1];
    auto out = zeros<Real>({1, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out->data[static_cast<std::size_t>(j)] += x->at(i, j);
    const Real inv = Real(1) / Real(n);
    for (auto& v : out->data) v *= inv;
    return detail::attach<Real>(out, "mean_rows", {x}, [x, n, d, inv](Tensor<Real>& o) {
        auto& gx = detail::adj_of(x);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                gx[static_cast<std::size_t>(i) * d + j] += o.adj[static_cast<std::size_t>(j)] * inv;
    });
}

// ---------------------------------------------------------------------------
// structural ops

template <class Real>
TensorPtr<Real> slice_rows(const TensorPtr<Real>& x, int r0, int r1) {
    detail::require(x->ndim() == 2, "slice_rows: expects 2-d tensor");
    const int n = x->shape[0], d = x->shape[1];
    if (r0 < 0 || r1 > n || r0 >= r1) throw ShapeError("slice_rows: bad range");
    auto out = zeros<Real>({r1 - r0, d});
    std::copy(x->data.begin() + static_cast<std::size_t>(r0) * d,
              x->data.begin() + static_cast<std::size_t>(r1) * d, out->data.begin());
    return detail::attach<Real>(out, "slice_rows", {x}, [x, r0, d](Tensor<Real>& o) {
        auto& gx = detail::adj_of(x);
        for (std::size_t i = 0; i < o.adj.size(); ++i)
            gx[static_cast<std::size_t>(r0) * d + i] += o.adj[i];
    });
}

template <class Real>
TensorPtr<Real> slice_cols(const TensorPtr<Real>& x, int c0, int c1) {
    detail::require(x->ndim() == 2, "slice_cols: expects 2-d tensor");
    const int n = x->shape[0], d = x->shape[1];
    if (c0 < 0 || c1 > d || c0 >= c1) throw ShapeError("slice_cols: bad range");
    const int w = c1 - c0;
    auto out = zeros<Real>({n, w});
    for (int i = 0; i < n; ++i)
        std::copy(&x->data[static_cast<std::size_t>(i) * d + c0],
                  &x->data[static_cast<std::size_t>(i) * d + c1],
                  &out->data[static_cast<std::size_t>(i) * w]);
    return detail::attach<Real>(out, "slice_cols", {x}, [x, c0, n, d, w](Tensor<Real>& o) {
        auto& gx = detail::adj_of(x);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                gx[static_cast<std::size_t>(i) * d + c0 + j] +=
                    o.adj[static_cast<std::size_t>(i) * w + j];
    });
}

template <class Real>
TensorPtr<Real> concat_rows(const std::vector<TensorPtr<Real>>& xs) {
    detail::require(!xs.empty(), "concat_rows: nothing to concatenate");
    const int d = xs[0]->shape.at(1);
    int n = 0;
    for (const auto& x : xs) {
        detail::require(x->ndim() == 2 && x->shape[1] == d, "concat_rows: width mismatch");
        n += x->shape[0];
    }
    auto out = zeros<Real>({n, d});
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->data.begin(), x->data.end(), out->data.begin() + off);
        off += x->data.size();
    }
    return detail::attach<Real>(out, "concat_rows", xs, [xs](Tensor<Real>& o) {
        std::size_t off = 0;
        for (const auto& x : xs) {
            if (x->requires_grad) {
                auto& gx = detail::adj_of(x);
                for (std::size_t i = 0; i < x->data.size(); ++i) gx[i] += o.adj[off + i];
            }
            off += x->data.size();
        }
    });
}

template <class Real>
TensorPtr<Real> concat_cols(const std::vector<TensorPtr<Real>>& xs) {
    detail::require(!xs.empty(), "concat_cols: nothing to concatenate");
    const int n = xs[0]->shape.at(0);
    int d = 0;
    for (const auto& x : xs) {
        detail::require(x->ndim() == 2 && x->shape[0] == n, "concat_cols: height mismatch");
        d += x->shape[1];
    }
    auto out = zeros<Real>({n, d});
    int c0 = 0;
    for (const auto& x : xs) {
        const int w = x->shape[1];
        for (int i = 0; i < n; ++i)
            std::copy(&x->data[static_cast<std::size_t>(i) * w],
                      &x->data[static_cast<std::size_t>(i) * w + w],
                      &out->data[static_cast<std::size_t>(i) * d + c0]);
        c0 += w;
    }
    return detail::attach<Real>(out, "concat_cols", xs, [xs, n, d](Tensor<Real>& o) {
        int c0 = 0;
        for (const auto& x : xs) {
            const int w = x->shape[1];
            if (x->requires_grad) {
                auto& gx = detail::adj_of(x);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j)
                        gx[static_cast<std::size_t>(i) * w + j] +=
                            o.adj[static_cast<std::size_t>(i) * d + c0 + j];
            }
            c0 += w;
        }
    });
}

// Embedding-style row gather; backward scatter-adds into the table.
template <class Real>
TensorPtr<Real> take_rows(const TensorPtr<Real>& table, const std::vector<int>& idx) {
    detail::require(table->ndim() == 2, "take_rows: expects 2-d table");
    const int rows = table->shape[0], d = table->shape[1];
    for (int i : idx) {
        if (i < 0 || i >= rows) throw ValueError("take_rows: index out of range");
    }
    auto out = zeros<Real>({static_cast<int>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(&table->data[static_cast<std::size_t>(idx[i]) * d],
                  &table->data[static_cast<std::size_t>(idx[i]) * d + d],
                  &out->data[i * d]);
    return detail::attach<Real>(out, "take_rows", {table}, [table, idx, d](Tensor<Real>& o) {
        auto& gt = detail::adj_of(table);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < d; ++j)
                gt[static_cast<std::size_t>(idx[i]) * d + j] += o.adj[i * d + j];
    });
}

// ---------------------------------------------------------------------------
// backward

// Reverse-mode replay from a scalar root. Adjoints live in scratch buffers
// for the duration of the call and are folded into .grad at the end, so
// repeated calls accumulate (twice from the same root doubles every grad).
template <class Real>
void backward(const TensorPtr<Real>& root) {
    if (root->numel() != 1) throw ShapeError("backward: root must be a scalar");
    if (!root->requires_grad) return;

    std::vector<Tensor<Real>*> order;
    std::unordered_set<Tensor<Real>*> seen;
    std::vector<std::pair<Tensor<Real>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor<Real>* p = node->parents[next].get();
            ++next;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* t : order) t->adj.assign(t->data.size(), Real(0));
    root->adj[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
    for (auto* t : order) {
        for (std::size_t i = 0; i < t->grad.size(); ++i) t->grad[i] += t->adj[i];
        t->adj.clear();
        t->adj.shrink_to_fit();
    }
}

template <class Real>
void zero_grads(const std::vector<TensorPtr<Real>>& params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace t2lm::ad
