#include "t2lm/generator.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "t2lm/checkpoint.hpp"
#include "t2lm/errors.hpp"

namespace t2lm::gen {

using nlohmann::json;

void check_compatible(const vq::Vqvae& vqvae, const text::TextEncoder& textenc) {
    const auto hash = config_hash(codebook_signature(vqvae.config));
    if (!textenc.codebook_hash.empty() && textenc.codebook_hash != hash)
        throw ConfigError("text encoder was trained against a different codebook layout");
    if (textenc.codebooks != vqvae.config.codebooks ||
        textenc.codebook_size != vqvae.config.codebook_size ||
        textenc.downscale != vqvae.config.downscale)
        throw ConfigError("vqvae / text encoder codebook configuration mismatch");
}

namespace {

void check_script(const Script& script) {
    if (script.empty()) throw ValueError("script must contain at least one entry");
    for (const auto& e : script) {
        if (e.text.empty()) throw ValueError("script entry with empty text");
        if (e.length < 1) throw ValueError("script entry with non-positive length");
    }
}

std::vector<vq::IndexSequence> sample_script(const vq::Vqvae& vqvae,
                                             const text::TextEncoder& textenc,
                                             const Script& script,
                                             const text::SamplingStrategy& strategy,
                                             Rng& rng) {
    check_compatible(vqvae, textenc);
    check_script(script);
    std::vector<vq::IndexSequence> out;
    out.reserve(script.size());
    for (std::size_t i = 0; i < script.size(); ++i) {
        Rng child = rng.child(i);
        out.push_back(text::sample_indices(textenc, script[i].text, script[i].length,
                                           strategy, child));
    }
    return out;
}

vq::LatentSequence concat_latents(const std::vector<vq::LatentSequence>& parts) {
    vq::LatentSequence out;
    out.dim = parts.at(0).dim;
    for (const auto& p : parts) {
        if (p.dim != out.dim) throw ShapeError("latent streams disagree on channel dim");
        out.steps += p.steps;
        out.values.insert(out.values.end(), p.values.begin(), p.values.end());
    }
    return out;
}

}  // namespace

GenerationResult generate_long(const vq::Vqvae& vqvae, const text::TextEncoder& textenc,
                               const Script& script, const text::SamplingStrategy& strategy,
                               Rng rng) {
    GenerationResult r;
    r.per_action_indices = sample_script(vqvae, textenc, script, strategy, rng);

    std::vector<vq::LatentSequence> parts;
    parts.reserve(script.size());
    for (const auto& idx : r.per_action_indices) parts.push_back(dereference(vqvae, idx));
    r.latents = concat_latents(parts);

    const Motion decoded = decode(vqvae, r.latents);
    const int l = vqvae.config.downscale;
    int total = 0;
    for (const auto& e : script) total += e.length;
    r.motion = Motion::empty(total, decoded.dim, decoded.fps);

    // Each entry's ceil-rounded latents decode to >= T_i frames; drop each
    // action's trailing overshoot so the reported boundaries are exact.
    int src_step = 0;
    int dst = 0;
    for (std::size_t i = 0; i < script.size(); ++i) {
        r.boundaries.push_back(dst);
        const int span = r.per_action_indices[i].steps;
        const int src0 = l * src_step;
        for (int t = 0; t < script[i].length; ++t)
            for (int c = 0; c < decoded.dim; ++c)
                r.motion.at(dst + t, c) = decoded.at(src0 + t, c);
        dst += script[i].length;
        src_step += span;
    }
    return r;
}

GenerationResult generate_chunked_baseline(const vq::Vqvae& vqvae,
                                           const text::TextEncoder& textenc,
                                           const Script& script,
                                           const text::SamplingStrategy& strategy, Rng rng) {
    GenerationResult r;
    r.per_action_indices = sample_script(vqvae, textenc, script, strategy, rng);

    std::vector<vq::LatentSequence> parts;
    parts.reserve(script.size());
    for (const auto& idx : r.per_action_indices) parts.push_back(dereference(vqvae, idx));
    r.latents = concat_latents(parts);

    int total = 0;
    for (const auto& e : script) total += e.length;
    int dst = 0;
    for (std::size_t i = 0; i < script.size(); ++i) {
        const Motion decoded = decode(vqvae, parts[i]);
        if (i == 0) r.motion = Motion::empty(total, decoded.dim, decoded.fps);
        r.boundaries.push_back(dst);
        for (int t = 0; t < script[i].length; ++t)
            for (int c = 0; c < decoded.dim; ++c) r.motion.at(dst + t, c) = decoded.at(t, c);
        dst += script[i].length;
    }
    return r;
}

GenerationResult generate_with_transition_tokens(const vq::Vqvae& vqvae,
                                                 const text::TextEncoder& textenc,
                                                 const Script& script, int n_trans,
                                                 const text::SamplingStrategy& strategy,
                                                 Rng rng) {
    if (n_trans < 1) throw ValueError("generate_with_transition_tokens: n_trans must be >= 1");
    if (vqvae.config.n_trans < n_trans)
        throw ConfigError("vqvae model lacks the requested transition vectors");

    GenerationResult r;
    r.per_action_indices = sample_script(vqvae, textenc, script, strategy, rng);

    const vq::LatentSequence trans_all = transition_latents(vqvae);
    vq::LatentSequence trans;
    trans.steps = n_trans;
    trans.dim = trans_all.dim;
    trans.values.assign(trans_all.values.begin(),
                        trans_all.values.begin() +
                            static_cast<std::size_t>(n_trans) * trans_all.dim);

    std::vector<vq::LatentSequence> parts;
    for (std::size_t i = 0; i < r.per_action_indices.size(); ++i) {
        parts.push_back(dereference(vqvae, r.per_action_indices[i]));
        if (i + 1 < r.per_action_indices.size()) parts.push_back(trans);
    }
    r.latents = concat_latents(parts);

    const Motion decoded = decode(vqvae, r.latents);
    const int l = vqvae.config.downscale;
    const int L = static_cast<int>(script.size());
    int total = 0;
    for (const auto& e : script) total += e.length;
    total += (L - 1) * n_trans * l;
    r.motion = Motion::empty(total, decoded.dim, decoded.fps);

    int src_step = 0;
    int dst = 0;
    for (int i = 0; i < L; ++i) {
        r.boundaries.push_back(dst);
        const int span = r.per_action_indices[static_cast<std::size_t>(i)].steps;
        const int src0 = l * src_step;
        for (int t = 0; t < script[static_cast<std::size_t>(i)].length; ++t)
            for (int c = 0; c < decoded.dim; ++c)
                r.motion.at(dst + t, c) = decoded.at(src0 + t, c);
        dst += script[static_cast<std::size_t>(i)].length;
        src_step += span;
        if (i + 1 < L) {
            // Transition frames are kept whole.
            const int t0 = l * src_step;
            for (int t = 0; t < n_trans * l; ++t)
                for (int c = 0; c < decoded.dim; ++c)
                    r.motion.at(dst + t, c) = decoded.at(t0 + t, c);
            dst += n_trans * l;
            src_step += n_trans;
        }
    }
    return r;
}

Script parse_script(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw IoError(std::string("script is not valid JSON: ") + e.what());
    }
    if (!j.is_array()) throw IoError("script must be a JSON array");
    Script s;
    for (const auto& e : j) {
        if (!e.is_object() || !e.contains("text") || !e.contains("length"))
            throw IoError("script entries need \"text\" and \"length\"");
        s.push_back({e.at("text").get<std::string>(), e.at("length").get<int>()});
    }
    check_script(s);
    return s;
}

Script read_script(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open script: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_script(ss.str());
}

void write_generation(const std::string& path, const GenerationResult& result) {
    write_mot(path, result.motion);
    json side;
    side["boundaries"] = result.boundaries;
    side["frames"] = result.motion.frames;
    side["dim"] = result.motion.dim;
    side["latent_steps"] = result.latents.steps;
    json actions = json::array();
    for (const auto& idx : result.per_action_indices) {
        json rows = json::array();
        for (int t = 0; t < idx.steps; ++t) {
            json row = json::array();
            for (int k = 0; k < idx.books; ++k) row.push_back(idx.at(t, k));
            rows.push_back(row);
        }
        actions.push_back(rows);
    }
    side["indices"] = actions;
    std::ofstream os(path + ".json", std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path + ".json");
    os << side.dump(2) << "\n";
    if (!os) throw IoError("write failed: " + path + ".json");
}

}  // namespace t2lm::gen
