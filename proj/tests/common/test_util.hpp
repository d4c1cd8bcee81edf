#pragma once

// Shared fixtures and independent oracles for the test suites. Oracles here
// must stay decoupled from the implementation paths they check.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "t2lm/data.hpp"
#include "t2lm/motion.hpp"
#include "t2lm/rng.hpp"
#include "t2lm/vqvae.hpp"

namespace test_util {

// Unique scratch directory under the system temp root, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path() / ("t2lm_" + tag + "_" +
                                                              std::to_string(counter()++));
        std::filesystem::create_directories(base);
        path_ = base.string();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const {
        return (std::filesystem::path(path_) / name).string();
    }

  private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string path_;
};

inline std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Brute-force product-quantization oracle: exhaustive scan over all C
// candidates per book in double precision, ties to the lowest index.
inline t2lm::vq::IndexSequence brute_force_quantize(
    const std::vector<std::vector<float>>& books, int codebook_size, int code_dim,
    const t2lm::vq::LatentSequence& z) {
    const int K = static_cast<int>(books.size());
    t2lm::vq::IndexSequence out;
    out.steps = z.steps;
    out.books = K;
    out.indices.assign(static_cast<std::size_t>(z.steps) * K, 0);
    for (int t = 0; t < z.steps; ++t) {
        for (int k = 0; k < K; ++k) {
            double best = 0;
            int best_i = -1;
            for (int c = 0; c < codebook_size; ++c) {
                double dist = 0;
                for (int j = 0; j < code_dim; ++j) {
                    const double diff =
                        static_cast<double>(z.at(t, k * code_dim + j)) -
                        books[static_cast<std::size_t>(k)][static_cast<std::size_t>(c) * code_dim + j];
                    dist += diff * diff;
                }
                if (best_i < 0 || dist < best) {
                    best = dist;
                    best_i = c;
                }
            }
            out.at(t, k) = best_i;
        }
    }
    return out;
}

// Scalar Frechet oracle for d_f = 1: (mu_a-mu_b)^2 + (sigma_a-sigma_b)^2.
inline double scalar_frechet(double mu_a, double var_a, double mu_b, double var_b) {
    const double dm = mu_a - mu_b;
    const double ds = std::sqrt(var_a) - std::sqrt(var_b);
    return dm * dm + ds * ds;
}

// Small in-memory corpus drawn from the built-in templates.
inline std::vector<t2lm::data::LabeledSample> tiny_corpus(int n, std::uint64_t seed,
                                                          int joints = 5) {
    const auto templates = t2lm::data::builtin_templates();
    return t2lm::data::generate_corpus(templates, n, t2lm::Rng(seed), joints);
}

// One sample per template with a fixed modest length; for overfit runs.
inline std::vector<t2lm::data::LabeledSample> one_per_template_corpus(int length,
                                                                      std::uint64_t seed) {
    const auto templates = t2lm::data::builtin_templates();
    std::vector<t2lm::data::LabeledSample> out;
    t2lm::Rng rng(seed);
    for (std::size_t i = 0; i < templates.size(); ++i) {
        t2lm::Rng r = rng.child(i);
        auto params = templates[i].draw_params(r);
        t2lm::data::LabeledSample s;
        s.id = "t" + std::to_string(i);
        s.text = templates[i].phrasings[0];
        s.length = length;
        s.template_index = static_cast<int>(i);
        s.template_name = templates[i].name;
        s.split = "train";
        s.motion = t2lm::data::rollout(templates[i], params, length, 5, 20);
        out.push_back(std::move(s));
    }
    return out;
}

// Max per-joint displacement between consecutive frames.
inline double max_frame_jump(const t2lm::Motion& m, int t0, int t1) {
    const int joints = m.dim / 3;
    double worst = 0;
    for (int t = t0 + 1; t < t1; ++t) {
        for (int j = 0; j < joints; ++j) {
            double s = 0;
            for (int c = 0; c < 3; ++c) {
                const double d = static_cast<double>(m.at(t, 3 * j + c)) - m.at(t - 1, 3 * j + c);
                s += d * d;
            }
            worst = std::max(worst, std::sqrt(s));
        }
    }
    return worst;
}

inline double max_frame_jump(const t2lm::Motion& m) { return max_frame_jump(m, 0, m.frames); }

// Displacement across one seam (frame b-1 -> b).
inline double seam_jump(const t2lm::Motion& m, int b) {
    return max_frame_jump(m, b - 1, b + 1);
}

// Per-channel std averaged over channels, the denominator of the overfit
// reconstruction criterion.
inline double mean_channel_std(const std::vector<t2lm::data::LabeledSample>& corpus) {
    const int d = corpus.at(0).motion.dim;
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0), sq(static_cast<std::size_t>(d), 0.0);
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
    double acc = 0;
    for (int c = 0; c < d; ++c) {
        const double mu = mean[static_cast<std::size_t>(c)] / total;
        acc += std::sqrt(std::max(sq[static_cast<std::size_t>(c)] / total - mu * mu, 0.0));
    }
    return acc / d;
}

// Mean absolute reconstruction error of a model over a corpus (raw space,
// cropped ground truth).
inline double corpus_recon_l1(const t2lm::vq::Vqvae& model,
                              const std::vector<t2lm::data::LabeledSample>& corpus) {
    double acc = 0;
    long count = 0;
    for (const auto& s : corpus) {
        auto z = t2lm::vq::encode(model, s.motion);
        auto [idx, zq] = t2lm::vq::quantize(model, z);
        auto xhat = t2lm::vq::decode(model, zq);
        for (int t = 0; t < xhat.frames; ++t)
            for (int c = 0; c < xhat.dim; ++c) {
                acc += std::abs(static_cast<double>(xhat.at(t, c)) - s.motion.at(t, c));
                ++count;
            }
    }
    return acc / count;
}

}  // namespace test_util
