#pragma once

// Small parameterized layers composed from the autodiff primitives. Attention
// and residual blocks live here rather than as fused kernels so every piece
// stays reachable by the finite-difference checker.

#include <cmath>
#include <string>
#include <vector>

#include "t2lm/rng.hpp"
#include "t2lm/tensor.hpp"

namespace t2lm::nn {

using ad::TensorPtr;

template <class Real>
struct Linear {
    TensorPtr<Real> w;  // [in x out]
    TensorPtr<Real> b;  // [out]

    static Linear init(int in, int out, Real stddev, Rng& rng) {
        Linear l;
        l.w = ad::randn<Real>({in, out}, stddev, rng);
        l.b = ad::zeros<Real>({out}, true);
        return l;
    }

    TensorPtr<Real> forward(const TensorPtr<Real>& x) const {
        return ad::add_rowvec(ad::matmul(x, w), b);
    }

    void collect(std::vector<TensorPtr<Real>>& out) const {
        out.push_back(w);
        out.push_back(b);
    }
};

template <class Real>
struct Conv1dLayer {
    TensorPtr<Real> w;  // [c_out x c_in x k]
    TensorPtr<Real> b;  // [c_out]
    int stride = 1;
    int pad = 1;

    static Conv1dLayer init(int c_in, int c_out, int k, int stride, int pad, Rng& rng) {
        Conv1dLayer l;
        const Real stddev = static_cast<Real>(std::sqrt(2.0 / (c_in * k)));
        l.w = ad::randn<Real>({c_out, c_in, k}, stddev, rng);
        l.b = ad::zeros<Real>({c_out}, true);
        l.stride = stride;
        l.pad = pad;
        return l;
    }

    TensorPtr<Real> forward(const TensorPtr<Real>& x) const {
        return ad::add_colvec(ad::conv1d(x, w, stride, pad), b);
    }

    void collect(std::vector<TensorPtr<Real>>& out) const {
        out.push_back(w);
        out.push_back(b);
    }
};

// Two k=3 s=1 p=1 convs with a skip connection, ReLU in between.
template <class Real>
struct ResBlock1d {
    Conv1dLayer<Real> c1, c2;

    static ResBlock1d init(int width, Rng& rng) {
        ResBlock1d b;
        b.c1 = Conv1dLayer<Real>::init(width, width, 3, 1, 1, rng);
        b.c2 = Conv1dLayer<Real>::init(width, width, 3, 1, 1, rng);
        return b;
    }

    TensorPtr<Real> forward(const TensorPtr<Real>& x) const {
        return ad::add(x, c2.forward(ad::relu(c1.forward(x))));
    }

    void collect(std::vector<TensorPtr<Real>>& out) const {
        c1.collect(out);
        c2.collect(out);
    }
};

template <class Real>
struct LayerNorm {
    TensorPtr<Real> gain;
    TensorPtr<Real> bias;
    Real eps = Real(1e-5);

    static LayerNorm init(int d) {
        LayerNorm n;
        n.gain = ad::full<Real>({d}, Real(1), true);
        n.bias = ad::zeros<Real>({d}, true);
        return n;
    }

    TensorPtr<Real> forward(const TensorPtr<Real>& x) const {
        return ad::layer_norm(x, gain, bias, eps);
    }

    void collect(std::vector<TensorPtr<Real>>& out) const {
        out.push_back(gain);
        out.push_back(bias);
    }
};

template <class Real>
struct MultiHeadAttention {
    Linear<Real> wq, wk, wv, wo;
    int heads = 1;

    static MultiHeadAttention init(int d_model, int heads, Rng& rng) {
        MultiHeadAttention a;
        const Real s = Real(0.02);
        a.wq = Linear<Real>::init(d_model, d_model, s, rng);
        a.wk = Linear<Real>::init(d_model, d_model, s, rng);
        a.wv = Linear<Real>::init(d_model, d_model, s, rng);
        a.wo = Linear<Real>::init(d_model, d_model, s, rng);
        a.heads = heads;
        return a;
    }

    // x: [T x d_model]
    TensorPtr<Real> forward(const TensorPtr<Real>& x, bool causal) const {
        const int d_model = x->shape[1];
        const int hd = d_model / heads;
        auto q = wq.forward(x);
        auto k = wk.forward(x);
        auto v = wv.forward(x);
        const Real inv_sqrt = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(hd)));
        std::vector<TensorPtr<Real>> outs;
        outs.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            auto qh = ad::slice_cols(q, h * hd, (h + 1) * hd);
            auto kh = ad::slice_cols(k, h * hd, (h + 1) * hd);
            auto vh = ad::slice_cols(v, h * hd, (h + 1) * hd);
            auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
            auto att = causal ? ad::causal_softmax_rows(scores) : ad::softmax_rows(scores);
            outs.push_back(ad::matmul(att, vh));
        }
        return wo.forward(ad::concat_cols(outs));
    }

    void collect(std::vector<TensorPtr<Real>>& out) const {
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
    }
};

// Pre-norm transformer layer with a ReLU MLP.
template <class Real>
struct TransformerLayer {
    LayerNorm<Real> ln1, ln2;
    MultiHeadAttention<Real> attn;
    Linear<Real> fc1, fc2;

    static TransformerLayer init(int d_model, int heads, int inner, Rng& rng) {
        TransformerLayer l;
        l.ln1 = LayerNorm<Real>::init(d_model);
        l.ln2 = LayerNorm<Real>::init(d_model);
        l.attn = MultiHeadAttention<Real>::init(d_model, heads, rng);
        l.fc1 = Linear<Real>::init(d_model, inner, Real(0.02), rng);
        l.fc2 = Linear<Real>::init(inner, d_model, Real(0.02), rng);
        return l;
    }

    TensorPtr<Real> forward(const TensorPtr<Real>& x, bool causal) const {
        auto h = ad::add(x, attn.forward(ln1.forward(x), causal));
        return ad::add(h, fc2.forward(ad::relu(fc1.forward(ln2.forward(h)))));
    }

    void collect(std::vector<TensorPtr<Real>>& out) const {
        ln1.collect(out);
        ln2.collect(out);
        attn.collect(out);
        fc1.collect(out);
        fc2.collect(out);
    }
};

}  // namespace t2lm::nn
