#include "t2lm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <json.hpp>

#include "t2lm/checkpoint.hpp"
#include "t2lm/errors.hpp"
#include "t2lm/optim.hpp"

namespace t2lm::eval {

using ad::make_tensor;
using nlohmann::json;

namespace {

ad::TensorPtr<float> motion_to_ct_norm(const FeatureExtractor& ex, const Motion& m) {
    if (m.dim != ex.input_dim) throw ShapeError("extractor: motion dimension mismatch");
    std::vector<float> data(static_cast<std::size_t>(m.dim) * m.frames);
    for (int c = 0; c < m.dim; ++c) {
        const float mu = ex.params.norm_mean->data[c];
        const float inv = 1.0f / ex.params.norm_std->data[c];
        for (int t = 0; t < m.frames; ++t)
            data[static_cast<std::size_t>(c) * m.frames + t] = (m.at(t, c) - mu) * inv;
    }
    return make_tensor<float>({m.dim, m.frames}, std::move(data));
}

std::vector<int> token_ids(const text::Vocab& vocab, const std::string& s) {
    std::vector<int> ids;
    for (const auto& tok : text::tokenize(s)) ids.push_back(vocab.id_of(tok));
    return ids;
}

double euclid(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

FeatureExtractor make_extractor(const ExtractorConfig& cfg, int input_dim,
                                const text::Vocab& vocab, Rng& rng) {
    FeatureExtractor ex;
    ex.config = cfg;
    ex.input_dim = input_dim;
    ex.vocab = vocab;
    ex.params = init_extractor_params<float>(cfg, input_dim,
                                             static_cast<int>(vocab.tokens.size()), rng);
    return ex;
}

std::vector<float> motion_features(const FeatureExtractor& ex, const Motion& m) {
    return motion_branch(ex.params, motion_to_ct_norm(ex, m))->data;
}

std::vector<float> text_features(const FeatureExtractor& ex, const std::string& text) {
    return text_branch(ex.params, token_ids(ex.vocab, text))->data;
}

FeatureExtractor train_extractor(const ExtractorConfig& cfg,
                                 const std::vector<data::LabeledSample>& corpus,
                                 const TrainOptions& opt, Rng rng,
                                 std::vector<TrainStepRecord>* history) {
    if (corpus.empty()) throw ValueError("train_extractor: empty corpus");
    {
        std::set<std::string> distinct;
        for (const auto& s : corpus)
            distinct.insert(s.template_name.empty() ? s.text : s.template_name);
        if (distinct.size() < 2)
            throw ValueError("train_extractor: need at least two distinct templates");
    }
    std::vector<std::string> texts;
    for (const auto& s : corpus) texts.push_back(s.text);
    const text::Vocab vocab = text::Vocab::build(texts);

    const int d = corpus[0].motion.dim;
    Rng init_rng = rng.child(1);
    FeatureExtractor ex = make_extractor(cfg, d, vocab, init_rng);

    {
        std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
        std::vector<double> sq(static_cast<std::size_t>(d), 0.0);
        long total = 0;
        for (const auto& s : corpus) {
            for (int t = 0; t < s.motion.frames; ++t)
                for (int c = 0; c < d; ++c) {
                    mean[static_cast<std::size_t>(c)] += s.motion.at(t, c);
                    sq[static_cast<std::size_t>(c)] +=
                        static_cast<double>(s.motion.at(t, c)) * s.motion.at(t, c);
                }
            total += s.motion.frames;
        }
        for (int c = 0; c < d; ++c) {
            const double mu = mean[static_cast<std::size_t>(c)] / total;
            const double var = sq[static_cast<std::size_t>(c)] / total - mu * mu;
            ex.params.norm_mean->data[c] = static_cast<float>(mu);
            ex.params.norm_std->data[c] =
                static_cast<float>(std::sqrt(std::max(var, 1e-8)) + 1e-4);
        }
    }

    auto params = ex.params.parameters();
    AdamW<float>::Options aopt;
    aopt.lr = static_cast<float>(opt.lr);
    AdamW<float> optim(params, aopt);

    std::vector<std::vector<int>> ids;
    ids.reserve(corpus.size());
    for (const auto& s : corpus) ids.push_back(token_ids(vocab, s.text));

    Rng order_rng = rng.child(2);
    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const float tau = static_cast<float>(cfg.temperature);

    for (int step = 1; step <= opt.steps; ++step) {
        optim.zero_grad();
        const int batch = static_cast<int>(std::min<std::size_t>(opt.batch, corpus.size()));
        std::vector<ad::TensorPtr<float>> mrows, trows;
        for (int b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                Rng shuffle_rng = order_rng.child(static_cast<std::uint64_t>(step));
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1],
                              order[static_cast<std::size_t>(shuffle_rng.uniform_int(
                                  static_cast<std::int64_t>(i)))]);
                cursor = 0;
            }
            const int si = order[cursor++];
            const auto& sample = corpus[static_cast<std::size_t>(si)];
            mrows.push_back(motion_branch(ex.params, motion_to_ct_norm(ex, sample.motion)));
            trows.push_back(text_branch(ex.params, ids[static_cast<std::size_t>(si)]));
        }
        auto mfeat = mrows.size() == 1 ? mrows[0] : ad::concat_rows(mrows);
        auto tfeat = trows.size() == 1 ? trows[0] : ad::concat_rows(trows);
        auto loss = contrastive_loss(mfeat, tfeat, tau);
        if (!std::isfinite(loss->data[0]))
            throw ValueError("train_extractor: loss diverged at step " + std::to_string(step));
        ad::backward(loss);
        optim.step();
        if (history) history->push_back({step, loss->data[0]});
        if (opt.log_every > 0 && step % opt.log_every == 0)
            std::fprintf(stderr, "[train-extractor] step %d/%d loss %.5f\n", step, opt.steps,
                         loss->data[0]);
    }
    return ex;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

template <class Fn>
void walk_extractor(ExtractorParams<float>& p, Fn&& fn) {
    fn("norm.mean", p.norm_mean);
    fn("norm.std", p.norm_std);
    fn("conv_in.w", p.conv_in.w);
    fn("conv_in.b", p.conv_in.b);
    fn("conv_d1.w", p.conv_d1.w);
    fn("conv_d1.b", p.conv_d1.b);
    fn("conv_d2.w", p.conv_d2.w);
    fn("conv_d2.b", p.conv_d2.b);
    fn("motion_out.w", p.motion_out.w);
    fn("motion_out.b", p.motion_out.b);
    fn("tok_emb", p.tok_emb);
    fn("text_out.w", p.text_out.w);
    fn("text_out.b", p.text_out.b);
}

}  // namespace

void save_extractor(const std::string& path, const FeatureExtractor& ex) {
    std::vector<NamedTensor> tensors;
    auto& p = const_cast<ExtractorParams<float>&>(ex.params);
    walk_extractor(p, [&](const std::string& name, ad::TensorPtr<float>& t) {
        tensors.push_back({name, t->shape, t->data});
    });
    write_checkpoint(path, tensors);
    json side;
    side["kind"] = "extractor";
    side["input_dim"] = ex.input_dim;
    side["config"] = {{"feature_dim", ex.config.feature_dim},
                      {"width", ex.config.width},
                      {"temperature", ex.config.temperature}};
    side["vocab"] = ex.vocab.tokens;
    write_sidecar(path, side.dump(2));
}

FeatureExtractor load_extractor(const std::string& path) {
    json side;
    try {
        side = json::parse(read_sidecar(path));
    } catch (const json::exception& e) {
        throw IoError("extractor sidecar is not valid JSON: " + std::string(e.what()));
    }
    if (side.value("kind", "") != "extractor") throw ConfigError("checkpoint is not an extractor");
    ExtractorConfig cfg;
    cfg.feature_dim = side.at("config").at("feature_dim").get<int>();
    cfg.width = side.at("config").at("width").get<int>();
    cfg.temperature = side.at("config").at("temperature").get<double>();
    text::Vocab vocab;
    vocab.tokens = side.at("vocab").get<std::vector<std::string>>();
    Rng dummy(0);
    FeatureExtractor ex = make_extractor(cfg, side.at("input_dim").get<int>(), vocab, dummy);
    const auto tensors = read_checkpoint(path);
    std::size_t pos = 0;
    walk_extractor(ex.params, [&](const std::string& name, ad::TensorPtr<float>& t) {
        if (pos >= tensors.size()) throw IoError("checkpoint: missing tensor " + name);
        const auto& nt = tensors[pos++];
        if (nt.name != name) throw IoError("checkpoint: expected " + name + ", found " + nt.name);
        if (nt.shape != t->shape) throw IoError("checkpoint: shape mismatch for " + name);
        t->data = nt.data;
    });
    if (pos != tensors.size()) throw IoError("extractor checkpoint has trailing tensors");
    return ex;
}

// ---------------------------------------------------------------------------
// metric kernels

GaussianStats fit_gaussian(const std::vector<std::vector<float>>& features) {
    if (features.empty()) throw ValueError("fit_gaussian: no samples");
    const int d = static_cast<int>(features[0].size());
    const int n = static_cast<int>(features.size());
    GaussianStats g;
    g.dim = d;
    g.mean.assign(static_cast<std::size_t>(d), 0.0);
    g.cov.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (const auto& f : features) {
        if (static_cast<int>(f.size()) != d) throw ShapeError("fit_gaussian: ragged features");
        for (int i = 0; i < d; ++i) g.mean[static_cast<std::size_t>(i)] += f[static_cast<std::size_t>(i)];
    }
    for (auto& v : g.mean) v /= n;
    if (n > 1) {
        for (const auto& f : features) {
            for (int i = 0; i < d; ++i) {
                const double di = f[static_cast<std::size_t>(i)] - g.mean[static_cast<std::size_t>(i)];
                for (int j = 0; j < d; ++j) {
                    const double dj = f[static_cast<std::size_t>(j)] - g.mean[static_cast<std::size_t>(j)];
                    g.cov[static_cast<std::size_t>(i) * d + j] += di * dj;
                }
            }
        }
        for (auto& v : g.cov) v /= (n - 1);
    }
    return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.dim != b.dim) throw ShapeError("frechet_distance: dimension mismatch");
    const int d = a.dim;
    for (double v : a.mean)
        if (!std::isfinite(v)) throw ValueError("frechet_distance: non-finite stats");
    for (double v : b.mean)
        if (!std::isfinite(v)) throw ValueError("frechet_distance: non-finite stats");
    for (double v : a.cov)
        if (!std::isfinite(v)) throw ValueError("frechet_distance: non-finite stats");
    for (double v : b.cov)
        if (!std::isfinite(v)) throw ValueError("frechet_distance: non-finite stats");

    using Mat = Eigen::MatrixXd;
    Mat sa = Eigen::Map<const Mat>(a.cov.data(), d, d);
    Mat sb = Eigen::Map<const Mat>(b.cov.data(), d, d);
    sa = 0.5 * (sa + sa.transpose().eval());
    sb = 0.5 * (sb + sb.transpose().eval());

    // Ill-conditioned inputs get the same ridge on both sides so identical
    // stats still give exactly zero.
    {
        Eigen::SelfAdjointEigenSolver<Mat> ea(sa, Eigen::EigenvaluesOnly);
        Eigen::SelfAdjointEigenSolver<Mat> eb(sb, Eigen::EigenvaluesOnly);
        const double min_eig = std::min(ea.eigenvalues().minCoeff(), eb.eigenvalues().minCoeff());
        if (min_eig < 1e-6) {
            sa.diagonal().array() += 1e-6;
            sb.diagonal().array() += 1e-6;
        }
    }

    Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
    Mat da = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Mat sqrt_a = ea.eigenvectors() * da * ea.eigenvectors().transpose();

    Mat inner = sqrt_a * sb * sqrt_a;
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Mat> ei(inner, Eigen::EigenvaluesOnly);
    const double tr_sqrt = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double mean_sq = 0;
    for (int i = 0; i < d; ++i) {
        const double diff = a.mean[static_cast<std::size_t>(i)] - b.mean[static_cast<std::size_t>(i)];
        mean_sq += diff * diff;
    }
    const double fid = mean_sq + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    return std::max(fid, 0.0);
}

RPrecision r_precision(const FeatureExtractor& ex, const std::vector<MotionTextPair>& pairs,
                       int pool, Rng rng) {
    if (pool < 2) throw ValueError("r_precision: pool must be >= 2");
    if (pairs.empty()) throw ValueError("r_precision: no pairs");
    std::set<std::string> distinct;
    for (const auto& [m, t] : pairs) distinct.insert(t);
    if (static_cast<int>(distinct.size()) < pool)
        throw ValueError("r_precision: fewer distinct texts (" +
                         std::to_string(distinct.size()) + ") than the pool size");
    const std::vector<std::string> all_texts(distinct.begin(), distinct.end());

    std::map<std::string, std::vector<float>> text_cache;
    for (const auto& t : all_texts) text_cache[t] = text_features(ex, t);

    RPrecision r;
    r.pool = pool;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Rng prng = rng.child(i);
        const auto& [motion, pos_text] = pairs[i];
        const auto mf = motion_features(ex, motion);
        const double pos_dist = euclid(mf, text_cache.at(pos_text));
        // Draw pool-1 distinct negative texts different from the positive.
        std::vector<int> candidates;
        for (std::size_t j = 0; j < all_texts.size(); ++j)
            if (all_texts[j] != pos_text) candidates.push_back(static_cast<int>(j));
        for (std::size_t j = candidates.size(); j > 1; --j)
            std::swap(candidates[j - 1],
                      candidates[static_cast<std::size_t>(prng.uniform_int(
                          static_cast<std::int64_t>(j)))]);
        int rank = 0;  // negatives strictly closer than the positive
        for (int j = 0; j < pool - 1; ++j) {
            const auto& neg = all_texts[static_cast<std::size_t>(candidates[static_cast<std::size_t>(j)])];
            if (euclid(mf, text_cache.at(neg)) < pos_dist) ++rank;
        }
        if (rank < 1) r.top1 += 1;
        if (rank < 2) r.top2 += 1;
        if (rank < 3) r.top3 += 1;
        ++r.evaluated;
    }
    r.top1 /= r.evaluated;
    r.top2 /= r.evaluated;
    r.top3 /= r.evaluated;
    return r;
}

double mm_dist(const FeatureExtractor& ex, const std::vector<MotionTextPair>& pairs) {
    if (pairs.empty()) throw ValueError("mm_dist: no pairs");
    double s = 0;
    for (const auto& [m, t] : pairs) s += euclid(motion_features(ex, m), text_features(ex, t));
    return s / static_cast<double>(pairs.size());
}

double diversity(const FeatureExtractor& ex, const std::vector<Motion>& motions,
                 int n_pairs, Rng rng) {
    const auto n = static_cast<std::int64_t>(motions.size());
    if (n < 2) throw ValueError("diversity: need at least two motions");
    std::vector<std::vector<float>> feats;
    feats.reserve(motions.size());
    for (const auto& m : motions) feats.push_back(motion_features(ex, m));
    const long all_pairs = static_cast<long>(n) * (n - 1) / 2;
    const long take = std::min<long>(n_pairs, all_pairs);
    double s = 0;
    long got = 0;
    if (take == all_pairs) {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = i + 1; j < n; ++j) {
                s += euclid(feats[static_cast<std::size_t>(i)], feats[static_cast<std::size_t>(j)]);
                ++got;
            }
    } else {
        std::set<std::pair<std::int64_t, std::int64_t>> seen;
        while (got < take) {
            const auto i = rng.uniform_int(n);
            const auto j = rng.uniform_int(n);
            if (i == j) continue;
            const auto key = std::minmax(i, j);
            if (!seen.insert({key.first, key.second}).second) continue;
            s += euclid(feats[static_cast<std::size_t>(i)], feats[static_cast<std::size_t>(j)]);
            ++got;
        }
    }
    return s / static_cast<double>(got);
}

std::vector<Motion> windowed_sets(const std::vector<Motion>& motions, WindowMode mode,
                                  const std::vector<std::vector<int>>& boundaries) {
    if (mode == WindowMode::transition && boundaries.size() != motions.size())
        throw ValueError("windowed_sets: transition mode needs boundaries per motion");
    std::vector<Motion> out;
    for (std::size_t i = 0; i < motions.size(); ++i) {
        const auto& m = motions[i];
        if (m.frames < kWindowFrames) {
            std::fprintf(stderr,
                         "[windowed_sets] skipping motion with %d frames (< %d-frame window)\n",
                         m.frames, kWindowFrames);
            continue;
        }
        const auto cut = [&](int start) {
            Motion w = Motion::empty(kWindowFrames, m.dim, m.fps);
            std::copy(m.values.begin() + static_cast<std::size_t>(start) * m.dim,
                      m.values.begin() + static_cast<std::size_t>(start + kWindowFrames) * m.dim,
                      w.values.begin());
            out.push_back(std::move(w));
        };
        if (mode == WindowMode::sliding) {
            for (int start = 0; start + kWindowFrames <= m.frames; start += kWindowStride)
                cut(start);
        } else {
            for (int b : boundaries[i]) {
                if (b <= 0) continue;  // the first action start is not a transition
                int start = b - kWindowFrames / 2;
                start = std::max(0, std::min(start, m.frames - kWindowFrames));
                cut(start);
            }
        }
    }
    return out;
}

namespace {

std::vector<std::vector<float>> features_of(const FeatureExtractor& ex,
                                            const std::vector<Motion>& motions) {
    std::vector<std::vector<float>> out;
    out.reserve(motions.size());
    for (const auto& m : motions) out.push_back(motion_features(ex, m));
    return out;
}

}  // namespace

EvalReport evaluate(const FeatureExtractor& ex, const EvalInputs& generated,
                    const EvalInputs& references, const EvalOptions& opt, Rng rng) {
    if (generated.motions.empty() || references.motions.empty())
        throw ValueError("evaluate: empty motion sets");
    if (opt.mode != "single" && opt.mode != "longterm")
        throw ConfigError("evaluate: mode must be single or longterm");
    EvalReport rep;
    rep.mode = opt.mode;
    rep.counts["generated"] = static_cast<long>(generated.motions.size());
    rep.counts["references"] = static_cast<long>(references.motions.size());

    if (opt.mode == "single") {
        rep.fid = frechet_distance(fit_gaussian(features_of(ex, generated.motions)),
                                   fit_gaussian(features_of(ex, references.motions)));
        if (generated.texts.size() == generated.motions.size()) {
            std::vector<MotionTextPair> pairs;
            for (std::size_t i = 0; i < generated.motions.size(); ++i)
                pairs.emplace_back(generated.motions[i], generated.texts[i]);
            try {
                const auto rp = r_precision(ex, pairs, opt.r_pool, rng.child(1));
                rep.r_precision_top1 = rp.top1;
                rep.r_precision_top2 = rp.top2;
                rep.r_precision_top3 = rp.top3;
            } catch (const ValueError& e) {
                rep.reasons["r_precision"] = e.what();
            }
            rep.mm_dist = mm_dist(ex, pairs);
        } else {
            rep.reasons["r_precision"] = "generated set carries no texts";
            rep.reasons["mm_dist"] = "generated set carries no texts";
        }
        if (generated.motions.size() >= 2)
            rep.diversity = diversity(ex, generated.motions, opt.diversity_pairs, rng.child(2));
        else
            rep.reasons["diversity"] = "fewer than two generated motions";
        rep.reasons["ss_fid"] = rep.reasons["ss_div"] = rep.reasons["ts_fid"] =
            rep.reasons["ts_div"] = "longterm mode only";
        return rep;
    }

    // longterm
    const auto gen_sliding = windowed_sets(generated.motions, WindowMode::sliding);
    const auto ref_sliding = windowed_sets(references.motions, WindowMode::sliding);
    rep.counts["gen_sliding_windows"] = static_cast<long>(gen_sliding.size());
    rep.counts["ref_sliding_windows"] = static_cast<long>(ref_sliding.size());
    if (!gen_sliding.empty() && !ref_sliding.empty()) {
        rep.ss_fid = frechet_distance(fit_gaussian(features_of(ex, gen_sliding)),
                                      fit_gaussian(features_of(ex, ref_sliding)));
        if (gen_sliding.size() >= 2)
            rep.ss_div = diversity(ex, gen_sliding, opt.diversity_pairs, rng.child(3));
        else
            rep.reasons["ss_div"] = "fewer than two sliding windows";
    } else {
        rep.reasons["ss_fid"] = rep.reasons["ss_div"] = "no 80-frame sliding windows";
    }

    const bool gen_has_bounds = generated.boundaries.size() == generated.motions.size();
    const bool ref_has_bounds = references.boundaries.size() == references.motions.size();
    if (gen_has_bounds && ref_has_bounds) {
        const auto gen_trans =
            windowed_sets(generated.motions, WindowMode::transition, generated.boundaries);
        const auto ref_trans =
            windowed_sets(references.motions, WindowMode::transition, references.boundaries);
        rep.counts["gen_transition_windows"] = static_cast<long>(gen_trans.size());
        rep.counts["ref_transition_windows"] = static_cast<long>(ref_trans.size());
        if (!gen_trans.empty() && !ref_trans.empty()) {
            rep.ts_fid = frechet_distance(fit_gaussian(features_of(ex, gen_trans)),
                                          fit_gaussian(features_of(ex, ref_trans)));
            if (gen_trans.size() >= 2)
                rep.ts_div = diversity(ex, gen_trans, opt.diversity_pairs, rng.child(4));
            else
                rep.reasons["ts_div"] = "fewer than two transition windows";
        } else {
            rep.reasons["ts_fid"] = rep.reasons["ts_div"] = "no usable transition windows";
        }
    } else {
        rep.reasons["ts_fid"] = rep.reasons["ts_div"] = "boundaries not provided";
    }
    rep.reasons["fid"] = rep.reasons["r_precision"] = rep.reasons["mm_dist"] =
        rep.reasons["diversity"] = "single mode only";
    return rep;
}

std::string report_to_json(const EvalReport& report) {
    json j;
    j["mode"] = report.mode;
    const auto put = [&](const char* key, const std::optional<double>& v) {
        if (v)
            j[key] = *v;
        else
            j[key] = nullptr;
    };
    put("fid", report.fid);
    put("r_precision_top1", report.r_precision_top1);
    put("r_precision_top2", report.r_precision_top2);
    put("r_precision_top3", report.r_precision_top3);
    put("mm_dist", report.mm_dist);
    put("diversity", report.diversity);
    put("ss_fid", report.ss_fid);
    put("ss_div", report.ss_div);
    put("ts_fid", report.ts_fid);
    put("ts_div", report.ts_div);
    j["reasons"] = report.reasons;
    j["counts"] = report.counts;
    return j.dump(2);
}

void write_report(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << report_to_json(report) << "\n";
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace t2lm::eval
