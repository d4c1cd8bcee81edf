#pragma once

// Evaluation suite: a locally trained contrastive motion-text feature
// extractor, Gaussian-Frechet FID, R-precision, MM-Dist, Diversity and the
// sliding-scope / transition-scope windowed variants.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "t2lm/config.hpp"
#include "t2lm/data.hpp"
#include "t2lm/motion.hpp"
#include "t2lm/nn.hpp"
#include "t2lm/rng.hpp"
#include "t2lm/tensor.hpp"
#include "t2lm/textenc.hpp"

namespace t2lm::eval {

using ad::TensorPtr;

template <class Real>
struct ExtractorParams {
    nn::Conv1dLayer<Real> conv_in;   // d -> w, stride 1
    nn::Conv1dLayer<Real> conv_d1;   // w -> w, stride 2
    nn::Conv1dLayer<Real> conv_d2;   // w -> w, stride 2
    nn::Linear<Real> motion_out;     // w -> d_f
    TensorPtr<Real> tok_emb;         // [vocab+1 x w]
    nn::Linear<Real> text_out;       // w -> d_f
    TensorPtr<Real> norm_mean;       // [d], not trained
    TensorPtr<Real> norm_std;        // [d], not trained

    std::vector<TensorPtr<Real>> parameters() const {
        std::vector<TensorPtr<Real>> out;
        conv_in.collect(out);
        conv_d1.collect(out);
        conv_d2.collect(out);
        motion_out.collect(out);
        out.push_back(tok_emb);
        text_out.collect(out);
        return out;
    }
};

template <class Real>
ExtractorParams<Real> init_extractor_params(const ExtractorConfig& cfg, int input_dim,
                                            int vocab_size, Rng& rng) {
    ExtractorParams<Real> p;
    const int w = cfg.width;
    p.conv_in = nn::Conv1dLayer<Real>::init(input_dim, w, 3, 1, 1, rng);
    p.conv_d1 = nn::Conv1dLayer<Real>::init(w, w, 3, 2, 1, rng);
    p.conv_d2 = nn::Conv1dLayer<Real>::init(w, w, 3, 2, 1, rng);
    p.motion_out = nn::Linear<Real>::init(w, cfg.feature_dim, Real(0.05), rng);
    p.tok_emb = ad::randn<Real>({vocab_size + 1, w}, Real(0.05), rng);
    p.text_out = nn::Linear<Real>::init(w, cfg.feature_dim, Real(0.05), rng);
    p.norm_mean = ad::zeros<Real>({input_dim});
    p.norm_std = ad::full<Real>({input_dim}, Real(1));
    return p;
}

// x: standardized motion [d x T]; returns a unit-norm [1 x d_f] feature row.
template <class Real>
TensorPtr<Real> motion_branch(const ExtractorParams<Real>& p, const TensorPtr<Real>& x) {
    auto h = ad::relu(p.conv_in.forward(x));
    h = ad::relu(p.conv_d1.forward(h));
    h = ad::relu(p.conv_d2.forward(h));
    auto pooled = ad::mean_rows(ad::transpose(h));
    return ad::l2_normalize_rows(p.motion_out.forward(pooled), Real(1e-8));
}

template <class Real>
TensorPtr<Real> text_branch(const ExtractorParams<Real>& p, const std::vector<int>& token_ids) {
    std::vector<int> ids = token_ids.empty() ? std::vector<int>{0} : token_ids;
    auto pooled = ad::mean_rows(ad::take_rows(p.tok_emb, ids));
    return ad::l2_normalize_rows(p.text_out.forward(pooled), Real(1e-8));
}

// In-batch symmetric InfoNCE at temperature tau over unit-norm features.
template <class Real>
TensorPtr<Real> contrastive_loss(const TensorPtr<Real>& motion_feats,
                                 const TensorPtr<Real>& text_feats, Real tau) {
    const int n = motion_feats->shape.at(0);
    auto logits = ad::scale(ad::matmul(motion_feats, ad::transpose(text_feats)), Real(1) / tau);
    std::vector<int> diag(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
    auto a = ad::softmax_cross_entropy(logits, diag);
    auto b = ad::softmax_cross_entropy(ad::transpose(logits), diag);
    return ad::scale(ad::add(a, b), Real(0.5));
}

// ---------------------------------------------------------------------------
// trained extractor (float)

struct FeatureExtractor {
    ExtractorConfig config;
    int input_dim = 0;
    text::Vocab vocab;
    ExtractorParams<float> params;
};

FeatureExtractor make_extractor(const ExtractorConfig& cfg, int input_dim,
                                const text::Vocab& vocab, Rng& rng);

std::vector<float> motion_features(const FeatureExtractor& ex, const Motion& m);
std::vector<float> text_features(const FeatureExtractor& ex, const std::string& text);

struct TrainOptions {
    int steps = 500;
    int batch = 32;
    double lr = 1e-3;
    int log_every = 0;
};

struct TrainStepRecord {
    int step = 0;
    float loss = 0;
};

FeatureExtractor train_extractor(const ExtractorConfig& cfg,
                                 const std::vector<data::LabeledSample>& corpus,
                                 const TrainOptions& opt, Rng rng,
                                 std::vector<TrainStepRecord>* history = nullptr);

void save_extractor(const std::string& path, const FeatureExtractor& ex);
FeatureExtractor load_extractor(const std::string& path);

// ---------------------------------------------------------------------------
// metric kernels

struct GaussianStats {
    int dim = 0;
    std::vector<double> mean;  // [dim]
    std::vector<double> cov;   // [dim x dim], unbiased estimator
};

GaussianStats fit_gaussian(const std::vector<std::vector<float>>& features);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), square roots by
// symmetric eigendecomposition with eigenvalues clamped at zero.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

using MotionTextPair = std::pair<Motion, std::string>;

struct RPrecision {
    double top1 = 0, top2 = 0, top3 = 0;
    int pool = 0;
    int evaluated = 0;
};

// Per motion: rank the Euclidean distance of the positive text among
// (pool - 1) sampled distinct negatives.
RPrecision r_precision(const FeatureExtractor& ex, const std::vector<MotionTextPair>& pairs,
                       int pool, Rng rng);

double mm_dist(const FeatureExtractor& ex, const std::vector<MotionTextPair>& pairs);

double diversity(const FeatureExtractor& ex, const std::vector<Motion>& motions,
                 int n_pairs, Rng rng);

constexpr int kWindowFrames = 80;
constexpr int kWindowStride = 40;

enum class WindowMode { sliding, transition };

// 80-frame windows: sliding starts every 40 frames; transition windows are
// centered on each interior boundary and clamped into range. Motions shorter
// than one window are skipped with a warning on stderr.
std::vector<Motion> windowed_sets(const std::vector<Motion>& motions, WindowMode mode,
                                  const std::vector<std::vector<int>>& boundaries = {});

// ---------------------------------------------------------------------------
// reports

struct EvalInputs {
    // single mode uses motions+texts; longterm mode uses motions+boundaries.
    std::vector<Motion> motions;
    std::vector<std::string> texts;
    std::vector<std::vector<int>> boundaries;
};

struct EvalOptions {
    std::string mode = "single";  // single | longterm
    int r_pool = 32;
    int diversity_pairs = 300;
};

struct EvalReport {
    std::string mode;
    std::optional<double> fid;
    std::optional<double> r_precision_top1, r_precision_top2, r_precision_top3;
    std::optional<double> mm_dist;
    std::optional<double> diversity;
    std::optional<double> ss_fid, ss_div, ts_fid, ts_div;
    std::map<std::string, std::string> reasons;  // why a metric is null
    std::map<std::string, long> counts;
};

EvalReport evaluate(const FeatureExtractor& ex, const EvalInputs& generated,
                    const EvalInputs& references, const EvalOptions& opt, Rng rng);

std::string report_to_json(const EvalReport& report);
void write_report(const std::string& path, const EvalReport& report);

}  // namespace t2lm::eval
