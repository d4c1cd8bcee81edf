#pragma once

#include <string>
#include <utility>
#include <vector>

#include "t2lm/motion.hpp"
#include "t2lm/rng.hpp"

namespace t2lm::data {

// Sampled trajectory knobs; every template interprets the same three.
struct TrajectoryParams {
    double phase = 0.0;
    double amplitude = 1.0;
    double speed = 1.0;
};

struct ActionTemplate {
    std::string name;
    std::vector<std::string> phrasings;
    int kind = 0;  // dispatch index into the trajectory family
    double amp_lo = 0.0, amp_hi = 1.0;
    double speed_lo = 0.0, speed_hi = 1.0;
    // Declared max per-joint displacement between consecutive frames at 20fps.
    double velocity_bound = 1.0;

    TrajectoryParams draw_params(Rng& rng) const;
};

// The built-in template set. Empty name list selects all eight.
std::vector<ActionTemplate> builtin_templates(const std::vector<std::string>& names = {});

// Renders `frames` frames of a template rollout starting at frame_offset.
Motion rollout(const ActionTemplate& tpl, const TrajectoryParams& params, int frames,
               int joints, int fps, int frame_offset = 0);

struct LabeledSample {
    std::string id;
    std::string text;
    int length = 0;
    Motion motion;
    int template_index = 0;
    std::string template_name;
    std::string split;  // "train" or "eval", assigned separately
};

constexpr int kMinSampleFrames = 40;
constexpr int kMaxSampleFrames = 196;

// n labeled samples; template, phrasing, length in [40,196] and trajectory
// parameters all drawn from per-sample children of rng, so the corpus is a
// pure function of (templates, n, seed).
std::vector<LabeledSample> generate_corpus(const std::vector<ActionTemplate>& templates,
                                           int n, Rng rng, int joints = 5, int fps = 20);

void assign_holdout(std::vector<LabeledSample>& samples, double fraction, Rng rng);

struct ScriptAction {
    int template_index = 0;
    int length = 0;
};

// Per-action rollouts joined with a linear cross-fade over `blend` frames;
// the result has exactly the scripted total length.
Motion render_long_ground_truth(const std::vector<ActionTemplate>& templates,
                                const std::vector<ScriptAction>& script, int blend,
                                Rng rng, int joints = 5, int fps = 20);

// Per-channel linear interpolation onto new_length uniform time points.
Motion interp_resample(const Motion& m, int new_length);

// ---------------------------------------------------------------------------
// corpus persistence: manifest.jsonl + one .mot file per sample

struct ManifestEntry {
    std::string id;
    std::string text;
    int length = 0;
    std::string motion_file;  // relative to the manifest directory
    std::string template_name;
    std::string split;
    std::vector<int> boundaries;                       // long sequences only
    std::vector<std::pair<std::string, int>> script;   // long sequences only
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Writes samples as dir/motions/<id>.mot plus dir/manifest.jsonl.
void write_corpus(const std::string& dir, const std::vector<LabeledSample>& samples);

// Loads every entry (or only the given split) back into memory.
std::vector<LabeledSample> read_corpus(const std::string& manifest_path,
                                       const std::string& split = "");

}  // namespace t2lm::data
