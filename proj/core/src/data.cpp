#include "t2lm/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "t2lm/errors.hpp"

namespace t2lm::data {

using nlohmann::json;

namespace {

constexpr double kTau = 6.283185307179586;

enum Kind {
    kWalkForward = 0,
    kWalkBackward,
    kRunForward,
    kTurnCircle,
    kWaveHand,
    kSquat,
    kJump,
    kStandStill,
};

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

// Joint order: root, left hand, right hand, left foot, right foot. Extra
// joints (joints > 5) are placed along the root-to-limb segments so larger
// skeletons stay smooth and deterministic.
void base_pose(Vec3* p) {
    p[0] = {0.0, 0.9, 0.0};
    p[1] = {-0.35, 1.25, 0.0};
    p[2] = {0.35, 1.25, 0.0};
    p[3] = {-0.15, 0.1, 0.0};
    p[4] = {0.15, 0.1, 0.0};
}

// All templates keep the root inside a bounded neighborhood of the origin so
// a pose never encodes absolute travel; locomotion styles are expressed
// through lean, limb swing and frequency instead.
void pose_at(int kind, const TrajectoryParams& prm, double t, Vec3* p) {
    base_pose(p);
    const double a = prm.amplitude;
    const double v = prm.speed;
    const double ph = prm.phase;
    switch (kind) {
        case kWalkForward: {
            const double f = 1.2 + 0.5 * v;
            const double w = kTau * f;
            const double s = std::sin(w * t + ph);
            p[0].z += 0.20;
            p[0].y += 0.04 * std::sin(2.0 * w * t + 2.0 * ph);
            p[0].x += 0.03 * std::sin(w * t + ph);
            p[3].z += 0.20 + a * s;
            p[4].z += 0.20 - a * s;
            p[3].y += 0.08 * std::max(0.0, s);
            p[4].y += 0.08 * std::max(0.0, -s);
            p[1].z += 0.20 - 0.5 * a * s;
            p[2].z += 0.20 + 0.5 * a * s;
            break;
        }
        case kWalkBackward: {
            const double f = 1.0 + 0.4 * v;
            const double w = kTau * f;
            const double s = std::sin(w * t + ph);
            p[0].z -= 0.20;
            p[0].y += 0.03 * std::sin(2.0 * w * t + 2.0 * ph);
            p[3].z += -0.20 - 0.8 * a * s;
            p[4].z += -0.20 + 0.8 * a * s;
            p[3].y += 0.06 * std::max(0.0, -s);
            p[4].y += 0.06 * std::max(0.0, s);
            p[1].z += -0.20 + 0.4 * a * s;
            p[2].z += -0.20 - 0.4 * a * s;
            break;
        }
        case kRunForward: {
            const double f = 2.2 + 0.6 * v;
            const double w = kTau * f;
            const double s = std::sin(w * t + ph);
            p[0].z += 0.32;
            p[0].y += 0.07 * std::sin(2.0 * w * t + 2.0 * ph);
            p[3].z += 0.32 + a * s;
            p[4].z += 0.32 - a * s;
            p[3].y += 0.16 * std::max(0.0, s);
            p[4].y += 0.16 * std::max(0.0, -s);
            p[1].z += 0.32 - 0.7 * a * s;
            p[2].z += 0.32 + 0.7 * a * s;
            p[1].y += 0.10;
            p[2].y += 0.10;
            break;
        }
        case kTurnCircle: {
            const double wangle = v;  // rad/s around a circle of radius a
            const double ang = wangle * t + ph;
            const double cx = a * (std::sin(ang) - std::sin(ph));
            const double cz = a * (std::cos(ang) - std::cos(ph));
            const double f = 1.4 + 0.4 * v;
            const double w = kTau * f;
            const double s = std::sin(w * t + ph);
            for (int j = 0; j < 5; ++j) {
                p[j].x += cx;
                p[j].z += cz;
            }
            p[3].z += 0.25 * s;
            p[4].z -= 0.25 * s;
            p[3].y += 0.06 * std::max(0.0, s);
            p[4].y += 0.06 * std::max(0.0, -s);
            p[0].y += 0.03 * std::sin(2.0 * w * t);
            break;
        }
        case kWaveHand: {
            const double w = kTau * v;  // wave frequency
            p[2].y = 1.55 + 0.12 * std::sin(w * t + ph);
            p[2].x = 0.40 + a * std::sin(0.5 * w * t + ph);
            p[0].x += 0.02 * std::sin(0.25 * w * t);
            p[1].y += 0.02 * std::sin(0.25 * w * t + ph);
            break;
        }
        case kSquat: {
            const double w = kTau * v;
            const double dip = a * (0.5 - 0.5 * std::cos(w * t + ph));
            p[0].y -= dip;
            p[1].y -= dip;
            p[2].y -= dip;
            p[1].z += 0.35 * dip;
            p[2].z += 0.35 * dip;
            break;
        }
        case kJump: {
            const double w = kTau * v;
            const double s = std::sin(w * t + ph);
            const double lift = a * (s > 0.0 ? s * s : 0.0);
            const double crouch = 0.25 * a * (s < 0.0 ? s * s : 0.0);
            p[0].y += lift - crouch;
            p[1].y += lift - crouch;
            p[2].y += lift - crouch;
            p[3].y += lift + 0.10 * lift;
            p[4].y += lift + 0.10 * lift;
            break;
        }
        case kStandStill: {
            const double w = kTau * 0.3 * v;
            const double sway = 0.02 * a;
            p[0].x += sway * std::sin(w * t + ph);
            p[1].x += sway * std::sin(w * t + ph);
            p[2].x += sway * std::sin(w * t + ph + 0.5);
            break;
        }
        default:
            throw ValueError("unknown template kind");
    }
}

void fill_frame(int kind, const TrajectoryParams& prm, double t, int joints, float* row) {
    Vec3 p[5];
    pose_at(kind, prm, t, p);
    const int core = std::min(joints, 5);
    for (int j = 0; j < core; ++j) {
        row[3 * j + 0] = static_cast<float>(p[j].x);
        row[3 * j + 1] = static_cast<float>(p[j].y);
        row[3 * j + 2] = static_cast<float>(p[j].z);
    }
    for (int j = 5; j < joints; ++j) {
        const int limb = 1 + (j - 5) % 4;
        const double frac = 0.25 + 0.5 * (((j - 5) / 4) % 3) / 3.0;
        row[3 * j + 0] = static_cast<float>(p[0].x + frac * (p[limb].x - p[0].x));
        row[3 * j + 1] = static_cast<float>(p[0].y + frac * (p[limb].y - p[0].y));
        row[3 * j + 2] = static_cast<float>(p[0].z + frac * (p[limb].z - p[0].z));
    }
}

ActionTemplate make_template(std::string name, std::vector<std::string> phrasings, int kind,
                             double amp_lo, double amp_hi, double speed_lo, double speed_hi,
                             double velocity_bound) {
    ActionTemplate t;
    t.name = std::move(name);
    t.phrasings = std::move(phrasings);
    t.kind = kind;
    t.amp_lo = amp_lo;
    t.amp_hi = amp_hi;
    t.speed_lo = speed_lo;
    t.speed_hi = speed_hi;
    t.velocity_bound = velocity_bound;
    return t;
}

std::vector<ActionTemplate> all_templates() {
    std::vector<ActionTemplate> out;
    out.push_back(make_template(
        "walk-forward",
        {"a person walks forward", "someone walks straight ahead",
         "walking forward at a steady pace", "the person strolls forward"},
        kWalkForward, 0.20, 0.35, 0.8, 1.4, 0.50));
    out.push_back(make_template(
        "walk-backward",
        {"a person walks backward", "someone walks back",
         "walking backwards slowly", "the person steps backward"},
        kWalkBackward, 0.18, 0.30, 0.6, 1.2, 0.45));
    out.push_back(make_template(
        "run-forward",
        {"a person runs forward", "someone runs straight ahead",
         "running forward quickly", "the person sprints forward"},
        kRunForward, 0.30, 0.45, 1.6, 2.6, 0.95));
    out.push_back(make_template(
        "turn-in-circle",
        {"a person walks in a circle", "someone turns in a circle",
         "walking around in circles", "the person circles around"},
        kTurnCircle, 0.40, 0.80, 0.5, 1.0, 0.50));
    out.push_back(make_template(
        "wave-hand",
        {"a person waves their hand", "someone waves hello",
         "waving one hand in the air", "the person raises a hand and waves"},
        kWaveHand, 0.15, 0.30, 1.4, 2.4, 0.40));
    out.push_back(make_template(
        "squat",
        {"a person squats down", "someone does squats", "squatting up and down",
         "the person crouches repeatedly"},
        kSquat, 0.30, 0.45, 0.4, 0.8, 0.30));
    out.push_back(make_template(
        "jump",
        {"a person jumps up and down", "someone jumps repeatedly", "jumping in place",
         "the person hops up and down"},
        kJump, 0.35, 0.55, 0.7, 1.1, 0.55));
    out.push_back(make_template(
        "stand-still",
        {"a person stands still", "someone stands in place", "standing still quietly",
         "the person stays motionless"},
        kStandStill, 0.5, 1.0, 0.5, 1.0, 0.05));
    return out;
}

}  // namespace

TrajectoryParams ActionTemplate::draw_params(Rng& rng) const {
    TrajectoryParams p;
    p.phase = rng.uniform(0.0, kTau);
    p.amplitude = rng.uniform(amp_lo, amp_hi);
    p.speed = rng.uniform(speed_lo, speed_hi);
    return p;
}

std::vector<ActionTemplate> builtin_templates(const std::vector<std::string>& names) {
    auto all = all_templates();
    if (names.empty()) return all;
    std::vector<ActionTemplate> out;
    for (const auto& n : names) {
        auto it = std::find_if(all.begin(), all.end(),
                               [&](const ActionTemplate& t) { return t.name == n; });
        if (it == all.end()) throw ConfigError("unknown action template: " + n);
        out.push_back(*it);
    }
    return out;
}

Motion rollout(const ActionTemplate& tpl, const TrajectoryParams& params, int frames,
               int joints, int fps, int frame_offset) {
    if (frames < 1) throw ValueError("rollout: frames must be >= 1");
    if (joints < 5) throw ValueError("rollout: at least 5 joints required");
    Motion m = Motion::empty(frames, 3 * joints, fps);
    for (int t = 0; t < frames; ++t) {
        const double sec = static_cast<double>(t + frame_offset) / fps;
        fill_frame(tpl.kind, params, sec, joints, &m.values[static_cast<std::size_t>(t) * m.dim]);
    }
    return m;
}

std::vector<LabeledSample> generate_corpus(const std::vector<ActionTemplate>& templates,
                                           int n, Rng rng, int joints, int fps) {
    if (n < 1) throw ValueError("generate_corpus: n must be >= 1");
    if (templates.empty()) throw ValueError("generate_corpus: no templates");
    std::vector<LabeledSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng r = rng.child(static_cast<std::uint64_t>(i));
        const auto ti = static_cast<int>(r.uniform_int(static_cast<std::int64_t>(templates.size())));
        const auto& tpl = templates[static_cast<std::size_t>(ti)];
        const auto pi = static_cast<std::size_t>(
            r.uniform_int(static_cast<std::int64_t>(tpl.phrasings.size())));
        const int length = kMinSampleFrames +
                           static_cast<int>(r.uniform_int(kMaxSampleFrames - kMinSampleFrames + 1));
        const auto params = tpl.draw_params(r);
        LabeledSample s;
        s.id = "m" + std::to_string(i);
        s.text = tpl.phrasings[pi];
        s.length = length;
        s.template_index = ti;
        s.template_name = tpl.name;
        s.split = "train";
        s.motion = rollout(tpl, params, length, joints, fps);
        out.push_back(std::move(s));
    }
    return out;
}

void assign_holdout(std::vector<LabeledSample>& samples, double fraction, Rng rng) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Rng r = rng.child(i);
        samples[i].split = r.uniform() < fraction ? "eval" : "train";
    }
}

Motion render_long_ground_truth(const std::vector<ActionTemplate>& templates,
                                const std::vector<ScriptAction>& script, int blend,
                                Rng rng, int joints, int fps) {
    if (script.empty()) throw ValueError("render_long_ground_truth: empty script");
    int min_len = script[0].length;
    int total = 0;
    for (const auto& a : script) {
        if (a.length < 1) throw ValueError("render_long_ground_truth: bad action length");
        if (a.template_index < 0 ||
            a.template_index >= static_cast<int>(templates.size()))
            throw ValueError("render_long_ground_truth: template index out of range");
        min_len = std::min(min_len, a.length);
        total += a.length;
    }
    if (blend < 0) throw ValueError("render_long_ground_truth: negative blend");
    if (blend > 0 && blend >= min_len)
        throw ValueError("render_long_ground_truth: blend must be shorter than every action");

    const int d = 3 * joints;
    Motion out = Motion::empty(total, d, fps);
    // Each action is rendered with `blend` extra tail frames; the tail is
    // cross-faded with the head of the next action.
    std::vector<Motion> parts;
    parts.reserve(script.size());
    for (std::size_t i = 0; i < script.size(); ++i) {
        Rng r = rng.child(i);
        const auto& tpl = templates[static_cast<std::size_t>(script[i].template_index)];
        const auto params = tpl.draw_params(r);
        const bool has_next = i + 1 < script.size();
        parts.push_back(rollout(tpl, params, script[i].length + (has_next ? blend : 0),
                                joints, fps));
    }
    int off = 0;
    for (std::size_t i = 0; i < script.size(); ++i) {
        const int len = script[i].length;
        for (int t = 0; t < len; ++t)
            for (int c = 0; c < d; ++c) out.at(off + t, c) = parts[i].at(t, c);
        off += len;
        if (i + 1 < script.size() && blend > 0) {
            // Fade parts[i] frames [len, len+blend) into parts[i+1] frames [0, blend).
            for (int b = 0; b < blend; ++b) {
                const float w = static_cast<float>(b + 1) / static_cast<float>(blend + 1);
                for (int c = 0; c < d; ++c) {
                    const float tail = parts[i].at(len + b, c);
                    const float head = parts[i + 1].at(b, c);
                    out.at(off + b, c) = (1.0f - w) * tail + w * head;
                }
            }
            // The faded frames replace the head of the next action in-place.
            for (int b = 0; b < blend; ++b)
                for (int c = 0; c < d; ++c) parts[i + 1].at(b, c) = out.at(off + b, c);
        }
    }
    return out;
}

Motion interp_resample(const Motion& m, int new_length) {
    if (new_length < 2) throw ValueError("interp_resample: new_length must be >= 2");
    if (m.frames < 2) throw ValueError("interp_resample: motion needs >= 2 frames");
    Motion out = Motion::empty(new_length, m.dim, m.fps);
    const double scale = static_cast<double>(m.frames - 1) / (new_length - 1);
    for (int i = 0; i < new_length; ++i) {
        const double pos = i * scale;
        int lo = static_cast<int>(pos);
        if (lo >= m.frames - 1) lo = m.frames - 2;
        const double w = pos - lo;
        for (int c = 0; c < m.dim; ++c)
            out.at(i, c) = static_cast<float>((1.0 - w) * m.at(lo, c) + w * m.at(lo + 1, c));
    }
    return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    for (const auto& e : entries) {
        json j;
        j["id"] = e.id;
        j["text"] = e.text;
        j["length"] = e.length;
        j["motion_file"] = e.motion_file;
        if (!e.template_name.empty()) j["template"] = e.template_name;
        if (!e.split.empty()) j["split"] = e.split;
        if (!e.boundaries.empty()) j["boundaries"] = e.boundaries;
        if (!e.script.empty()) {
            json s = json::array();
            for (const auto& [text, len] : e.script) s.push_back({{"text", text}, {"length", len}});
            j["script"] = s;
        }
        os << j.dump() << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": bad manifest line: " + e.what());
        }
        ManifestEntry e;
        e.id = j.value("id", "");
        e.text = j.value("text", "");
        e.length = j.value("length", 0);
        e.motion_file = j.value("motion_file", "");
        e.template_name = j.value("template", "");
        e.split = j.value("split", "");
        if (j.contains("boundaries")) e.boundaries = j["boundaries"].get<std::vector<int>>();
        if (j.contains("script")) {
            for (const auto& s : j["script"])
                e.script.emplace_back(s.at("text").get<std::string>(), s.at("length").get<int>());
        }
        if (e.id.empty() || e.motion_file.empty())
            throw IoError(path + ":" + std::to_string(lineno) + ": manifest line missing id/motion_file");
        out.push_back(std::move(e));
    }
    return out;
}

void write_corpus(const std::string& dir, const std::vector<LabeledSample>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "motions");
    std::vector<ManifestEntry> entries;
    entries.reserve(samples.size());
    for (const auto& s : samples) {
        ManifestEntry e;
        e.id = s.id;
        e.text = s.text;
        e.length = s.length;
        e.motion_file = "motions/" + s.id + ".mot";
        e.template_name = s.template_name;
        e.split = s.split;
        write_mot((fs::path(dir) / e.motion_file).string(), s.motion);
        entries.push_back(std::move(e));
    }
    write_manifest((fs::path(dir) / "manifest.jsonl").string(), entries);
}

std::vector<LabeledSample> read_corpus(const std::string& manifest_path,
                                       const std::string& split) {
    namespace fs = std::filesystem;
    const auto dir = fs::path(manifest_path).parent_path();
    std::vector<LabeledSample> out;
    for (const auto& e : read_manifest(manifest_path)) {
        if (!split.empty() && e.split != split) continue;
        LabeledSample s;
        s.id = e.id;
        s.text = e.text;
        s.length = e.length;
        s.template_name = e.template_name;
        s.split = e.split;
        s.motion = read_mot((dir / e.motion_file).string());
        if (s.motion.frames != e.length)
            throw IoError("manifest length disagrees with motion file for id " + e.id);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace t2lm::data
