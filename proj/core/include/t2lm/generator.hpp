#pragma once

// Script-to-motion inference: per-sentence index sampling, codebook
// dereferencing, latent concatenation and a single decoder pass, plus the
// chunked baseline (independent decodes, hard concatenation) and the
// transition-latent-vector ablation mode.

#include <string>
#include <vector>

#include "t2lm/motion.hpp"
#include "t2lm/rng.hpp"
#include "t2lm/textenc.hpp"
#include "t2lm/vqvae.hpp"

namespace t2lm::gen {

struct ScriptEntry {
    std::string text;
    int length = 0;
};
using Script = std::vector<ScriptEntry>;

struct GenerationResult {
    Motion motion;
    std::vector<int> boundaries;  // frame offset of each action start; [0] == 0
    vq::LatentSequence latents;   // the concatenated stream fed to the decoder
    std::vector<vq::IndexSequence> per_action_indices;
};

// Both models must have been trained against the same codebook layout.
void check_compatible(const vq::Vqvae& vqvae, const text::TextEncoder& textenc);

GenerationResult generate_long(const vq::Vqvae& vqvae, const text::TextEncoder& textenc,
                               const Script& script, const text::SamplingStrategy& strategy,
                               Rng rng);

// Decodes every entry independently and hard-concatenates the motions; the
// discontinuous baseline the continuous decode is measured against.
GenerationResult generate_chunked_baseline(const vq::Vqvae& vqvae,
                                           const text::TextEncoder& textenc,
                                           const Script& script,
                                           const text::SamplingStrategy& strategy, Rng rng);

// Inserts n_trans learned transition latents between consecutive entries.
// Total frames = sum(T_i) + (L-1) * n_trans * l.
GenerationResult generate_with_transition_tokens(const vq::Vqvae& vqvae,
                                                 const text::TextEncoder& textenc,
                                                 const Script& script, int n_trans,
                                                 const text::SamplingStrategy& strategy,
                                                 Rng rng);

// Script file: JSON array of {"text": string, "length": int}.
Script read_script(const std::string& path);
Script parse_script(const std::string& json_text);

// Writes <path> as MOT1 plus "<path>.json" with boundaries and indices.
void write_generation(const std::string& path, const GenerationResult& result);

}  // namespace t2lm::gen
