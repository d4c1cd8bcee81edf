// t2lm command line: data generation, the three training loops, script
// generation, reconstruction debugging and evaluation. Logs go to stderr,
// results to files; exit 0 on success, 1 on user error, 2 on internal error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "t2lm/config.hpp"
#include "t2lm/data.hpp"
#include "t2lm/errors.hpp"
#include "t2lm/generator.hpp"
#include "t2lm/metrics.hpp"
#include "t2lm/motion.hpp"
#include "t2lm/textenc.hpp"
#include "t2lm/vqvae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace t2lm;

namespace {

void log_line(const std::string& msg) { std::fprintf(stderr, "[t2lm] %s\n", msg.c_str()); }

std::uint64_t resolve_seed(std::uint64_t config_seed) {
    const char* env = std::getenv("T2LM_SEED");
    if (!env || !*env) return config_seed;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError("T2LM_SEED is not an integer");
    return static_cast<std::uint64_t>(v);
}

int steps_per_epoch(std::size_t n, int batch) {
    return static_cast<int>((n + static_cast<std::size_t>(batch) - 1) / batch);
}

std::vector<data::LabeledSample> load_train_split(const std::string& data_dir) {
    const auto manifest = (fs::path(data_dir) / "manifest.jsonl").string();
    auto corpus = data::read_corpus(manifest, "train");
    if (corpus.empty()) corpus = data::read_corpus(manifest);
    if (corpus.empty()) throw IoError("no training samples in " + manifest);
    return corpus;
}

void write_history_json(const std::string& path, const json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    RunConfig cfg = load_config(config_path);
    cfg.seed = resolve_seed(cfg.seed);
    Rng rng(cfg.seed);

    const auto templates = data::builtin_templates(cfg.data.templates);
    log_line("generating " + std::to_string(cfg.data.n) + " samples from " +
             std::to_string(templates.size()) + " templates");
    auto samples = data::generate_corpus(templates, cfg.data.n, rng.child(1),
                                         cfg.data.joints, cfg.data.fps);
    data::assign_holdout(samples, cfg.data.holdout_fraction, rng.child(2));
    data::write_corpus(out_dir, samples);

    if (cfg.data.n_long > 0) {
        const auto long_dir = fs::path(out_dir) / "long";
        fs::create_directories(long_dir / "motions");
        std::vector<data::ManifestEntry> entries;
        Rng lrng = rng.child(3);
        for (int i = 0; i < cfg.data.n_long; ++i) {
            Rng r = lrng.child(static_cast<std::uint64_t>(i));
            std::vector<data::ScriptAction> script;
            data::ManifestEntry e;
            int off = 0;
            for (int a = 0; a < cfg.data.long_actions; ++a) {
                data::ScriptAction act;
                act.template_index =
                    static_cast<int>(r.uniform_int(static_cast<std::int64_t>(templates.size())));
                act.length = data::kMinSampleFrames +
                             static_cast<int>(r.uniform_int(
                                 data::kMaxSampleFrames - data::kMinSampleFrames + 1));
                const auto& tpl = templates[static_cast<std::size_t>(act.template_index)];
                const auto pi = static_cast<std::size_t>(
                    r.uniform_int(static_cast<std::int64_t>(tpl.phrasings.size())));
                e.script.emplace_back(tpl.phrasings[pi], act.length);
                e.boundaries.push_back(off);
                off += act.length;
                script.push_back(act);
            }
            Motion m = data::render_long_ground_truth(templates, script, cfg.data.blend,
                                                      r.child(9000), cfg.data.joints,
                                                      cfg.data.fps);
            e.id = "long" + std::to_string(i);
            e.text = e.script.front().first;
            e.length = m.frames;
            e.motion_file = "motions/" + e.id + ".mot";
            write_mot((long_dir / e.motion_file).string(), m);
            entries.push_back(std::move(e));
        }
        data::write_manifest((long_dir / "manifest.jsonl").string(), entries);
        // Scripts alone, convenient input for `generate --script`.
        json scripts = json::array();
        for (const auto& e : entries) {
            json s = json::array();
            for (const auto& [text, len] : e.script) s.push_back({{"text", text}, {"length", len}});
            scripts.push_back(s);
        }
        std::ofstream os(long_dir / "scripts.json", std::ios::binary);
        os << scripts.dump(2) << "\n";
    }
    log_line("corpus written to " + out_dir);
    return 0;
}

int cmd_train_vqvae(const std::string& config_path, const std::string& data_dir,
                    const std::string& out_path, int steps_override) {
    RunConfig cfg = load_config(config_path);
    cfg.seed = resolve_seed(cfg.seed);
    auto corpus = load_train_split(data_dir);

    const int spe = steps_per_epoch(corpus.size(), cfg.training.batch);
    vq::TrainOptions opt;
    opt.steps = steps_override > 0 ? steps_override : cfg.training.vqvae_epochs * spe;
    opt.batch = cfg.training.batch;
    opt.lr = cfg.training.vqvae_lr;
    opt.scheduler_step = cfg.training.scheduler_step * spe;
    opt.scheduler_decay = cfg.training.scheduler_decay;
    opt.p_aug = cfg.training.p_aug;
    opt.log_every = std::max(1, opt.steps / 20);

    log_line("training vqvae for " + std::to_string(opt.steps) + " steps on " +
             std::to_string(corpus.size()) + " samples");
    std::vector<vq::TrainStepRecord> history;
    Rng rng(cfg.seed);
    auto model = vq::train_vqvae(cfg.vqvae, corpus, opt, rng.child(10), &history);
    vq::save_vqvae(out_path, model);

    json h = json::array();
    for (const auto& r : history)
        h.push_back({{"step", r.step}, {"total", r.total}, {"recon", r.recon},
                     {"codebook", r.codebook}, {"commit", r.commit}});
    write_history_json(out_path + ".history.json", h);
    log_line("checkpoint written to " + out_path);
    return 0;
}

int cmd_train_textenc(const std::string& config_path, const std::string& data_dir,
                      const std::string& vqvae_path, const std::string& out_path,
                      int steps_override) {
    RunConfig cfg = load_config(config_path);
    cfg.seed = resolve_seed(cfg.seed);
    auto corpus = load_train_split(data_dir);
    const auto vqvae = vq::load_vqvae(vqvae_path);

    const int spe = steps_per_epoch(corpus.size(), cfg.training.batch);
    text::TrainOptions opt;
    opt.steps = steps_override > 0 ? steps_override : cfg.training.textenc_epochs * spe;
    opt.batch = cfg.training.batch;
    opt.lr = cfg.training.textenc_lr;
    opt.scheduler_step = cfg.training.scheduler_step * spe;
    opt.scheduler_decay = cfg.training.scheduler_decay;
    opt.p_corrupt = cfg.textenc.p_corrupt;
    opt.log_every = std::max(1, opt.steps / 20);

    log_line("training text encoder for " + std::to_string(opt.steps) + " steps");
    std::vector<text::TrainStepRecord> history;
    Rng rng(cfg.seed);
    auto model = text::train_text_encoder(cfg.textenc, vqvae, corpus, opt, rng.child(20),
                                          &history);
    text::save_text_encoder(out_path, model);

    json h = json::array();
    for (const auto& r : history) h.push_back({{"step", r.step}, {"nll", r.nll}});
    write_history_json(out_path + ".history.json", h);
    log_line("checkpoint written to " + out_path);
    return 0;
}

int cmd_train_extractor(const std::string& config_path, const std::string& data_dir,
                        const std::string& out_path, int steps_override) {
    RunConfig cfg = load_config(config_path);
    cfg.seed = resolve_seed(cfg.seed);
    auto corpus = load_train_split(data_dir);

    const int spe = steps_per_epoch(corpus.size(), cfg.training.batch);
    eval::TrainOptions opt;
    opt.steps = steps_override > 0 ? steps_override : cfg.training.extractor_epochs * spe;
    opt.batch = std::max(cfg.training.batch, 16);
    opt.lr = cfg.training.extractor_lr;
    opt.log_every = std::max(1, opt.steps / 10);

    log_line("training feature extractor for " + std::to_string(opt.steps) + " steps");
    std::vector<eval::TrainStepRecord> history;
    Rng rng(cfg.seed);
    auto model = eval::train_extractor(cfg.extractor, corpus, opt, rng.child(30), &history);
    eval::save_extractor(out_path, model);

    json h = json::array();
    for (const auto& r : history) h.push_back({{"step", r.step}, {"loss", r.loss}});
    write_history_json(out_path + ".history.json", h);
    log_line("checkpoint written to " + out_path);
    return 0;
}

text::SamplingStrategy make_strategy(const std::string& name, int topk, double temp) {
    if (name == "greedy") return text::SamplingStrategy::greedy();
    if (name == "topk") return text::SamplingStrategy::topk(topk, temp);
    throw ConfigError("unknown sampling strategy: " + name);
}

int cmd_generate(const std::string& vqvae_path, const std::string& textenc_path,
                 const std::string& script_path, const std::string& prompts_path,
                 const std::string& strategy_name, int topk, double temp,
                 const std::string& out_path, const std::string& out_dir,
                 std::uint64_t seed, int trans_override) {
    const auto vqvae = vq::load_vqvae(vqvae_path);
    const auto textenc = text::load_text_encoder(textenc_path);
    const auto strategy = make_strategy(strategy_name, topk, temp);
    const std::uint64_t s = resolve_seed(seed);

    if (!script_path.empty()) {
        if (out_path.empty()) throw ConfigError("--script needs --out");
        const auto script = gen::read_script(script_path);
        const int n_trans = trans_override >= 0 ? trans_override : vqvae.config.n_trans;
        gen::GenerationResult result;
        if (n_trans > 0 && script.size() > 1) {
            result = gen::generate_with_transition_tokens(vqvae, textenc, script, n_trans,
                                                          strategy, Rng(s));
            log_line("inserted " + std::to_string(n_trans) + " transition latents per seam");
        } else {
            result = gen::generate_long(vqvae, textenc, script, strategy, Rng(s));
        }
        gen::write_generation(out_path, result);
        log_line("wrote " + std::to_string(result.motion.frames) + " frames to " + out_path);
        return 0;
    }
    if (!prompts_path.empty()) {
        if (out_dir.empty()) throw ConfigError("--prompts needs --out-dir");
        std::ifstream is(prompts_path);
        if (!is) throw IoError("cannot open prompts: " + prompts_path);
        fs::create_directories(fs::path(out_dir) / "motions");
        std::vector<data::ManifestEntry> entries;
        Rng rng(s);
        std::string line;
        int i = 0, lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw IoError(prompts_path + ":" + std::to_string(lineno) + ": " + e.what());
            }
            gen::Script one{{j.at("text").get<std::string>(), j.at("length").get<int>()}};
            Rng child = rng.child(static_cast<std::uint64_t>(i));
            auto result = gen::generate_long(vqvae, textenc, one, strategy, child);
            data::ManifestEntry e;
            e.id = "gen" + std::to_string(i);
            e.text = one[0].text;
            e.length = result.motion.frames;
            e.motion_file = "motions/" + e.id + ".mot";
            write_mot((fs::path(out_dir) / e.motion_file).string(), result.motion);
            entries.push_back(std::move(e));
            ++i;
        }
        if (entries.empty()) throw IoError("prompts file is empty: " + prompts_path);
        data::write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), entries);
        log_line("generated " + std::to_string(entries.size()) + " motions into " + out_dir);
        return 0;
    }
    throw ConfigError("generate needs --script or --prompts");
}

int cmd_reconstruct(const std::string& vqvae_path, const std::string& input_path,
                    const std::string& out_path, const std::string& report_path) {
    const auto vqvae = vq::load_vqvae(vqvae_path);
    const Motion x = read_mot(input_path, vqvae.fps);
    auto z = vq::encode(vqvae, x);
    auto [idx, zq] = vq::quantize(vqvae, z);
    const Motion xhat = vq::decode(vqvae, zq);
    write_mot(out_path, xhat);

    // Per-frame mean absolute error over the cropped ground truth.
    std::vector<double> per_frame(static_cast<std::size_t>(xhat.frames), 0.0);
    double total = 0;
    for (int t = 0; t < xhat.frames; ++t) {
        double s = 0;
        for (int c = 0; c < xhat.dim; ++c) s += std::abs(static_cast<double>(xhat.at(t, c)) - x.at(t, c));
        per_frame[static_cast<std::size_t>(t)] = s / xhat.dim;
        total += per_frame[static_cast<std::size_t>(t)];
    }
    const double mean_l1 = total / xhat.frames;
    double data_std = 0;
    for (int c = 0; c < x.dim; ++c) {
        double m = 0, sq = 0;
        for (int t = 0; t < x.frames; ++t) m += x.at(t, c);
        m /= x.frames;
        for (int t = 0; t < x.frames; ++t) {
            const double dc = x.at(t, c) - m;
            sq += dc * dc;
        }
        data_std += std::sqrt(sq / x.frames);
    }
    data_std /= x.dim;
    log_line("recon mean L1 " + std::to_string(mean_l1) + " (per-channel data std " +
             std::to_string(data_std) + ")");

    if (!report_path.empty()) {
        json j;
        j["input_frames"] = x.frames;
        j["output_frames"] = xhat.frames;
        j["mean_l1"] = mean_l1;
        j["data_std"] = data_std;
        j["per_frame_l1"] = per_frame;
        std::ofstream os(report_path, std::ios::binary);
        if (!os) throw IoError("cannot open for write: " + report_path);
        os << j.dump(2) << "\n";
    }
    return 0;
}

eval::EvalInputs inputs_from_manifest(const std::string& manifest_path,
                                      const std::string& split) {
    const auto dir = fs::path(manifest_path).parent_path();
    eval::EvalInputs in;
    bool all_bounds = true;
    for (const auto& e : data::read_manifest(manifest_path)) {
        if (!split.empty() && !e.split.empty() && e.split != split) continue;
        in.motions.push_back(read_mot((dir / e.motion_file).string()));
        in.texts.push_back(e.text);
        if (e.boundaries.empty())
            all_bounds = false;
        else
            in.boundaries.push_back(e.boundaries);
    }
    if (!all_bounds) in.boundaries.clear();
    return in;
}

int cmd_evaluate(const std::string& config_path, const std::string& extractor_path,
                 const std::string& generated_path, const std::string& references_path,
                 const std::string& mode, const std::string& ref_split,
                 const std::string& out_path) {
    RunConfig cfg = load_config(config_path);
    cfg.seed = resolve_seed(cfg.seed);
    const auto extractor = eval::load_extractor(extractor_path);
    auto generated = inputs_from_manifest(generated_path, "");
    auto references = inputs_from_manifest(references_path, ref_split);
    if (generated.motions.empty()) throw IoError("no generated motions in " + generated_path);
    if (references.motions.empty()) throw IoError("no reference motions in " + references_path);

    eval::EvalOptions opt;
    opt.mode = mode;
    auto report = eval::evaluate(extractor, generated, references, opt, Rng(cfg.seed));
    eval::write_report(out_path, report);
    log_line("report written to " + out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"T2LM: long-term motion from text via discrete latent streams"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, out_dir, vqvae_path, textenc_path;
    std::string extractor_path, script_path, prompts_path, input_path, report_path;
    std::string generated_path, references_path, ref_split;
    std::string strategy = "greedy", mode = "single";
    int steps_override = 0, topk = 10, trans_override = -1;
    double temp = 1.0;
    std::uint64_t seed = 0;

    auto* gen_data = app.add_subcommand("gen-data", "generate the synthetic corpus");
    gen_data->add_option("--config", config_path, "run config (JSON)")->required();
    gen_data->add_option("--out", out_dir, "output directory")->required();

    auto* train_vq = app.add_subcommand("train-vqvae", "train the motion VQ-VAE");
    train_vq->add_option("--config", config_path)->required();
    train_vq->add_option("--data", data_dir, "corpus directory")->required();
    train_vq->add_option("--out", out_path, "checkpoint path")->required();
    train_vq->add_option("--steps", steps_override, "override step count");

    auto* train_te = app.add_subcommand("train-textenc", "train the text encoder");
    train_te->add_option("--config", config_path)->required();
    train_te->add_option("--data", data_dir)->required();
    train_te->add_option("--vqvae", vqvae_path)->required();
    train_te->add_option("--out", out_path)->required();
    train_te->add_option("--steps", steps_override);

    auto* train_ex = app.add_subcommand("train-extractor", "train the evaluation extractor");
    train_ex->add_option("--config", config_path)->required();
    train_ex->add_option("--data", data_dir)->required();
    train_ex->add_option("--out", out_path)->required();
    train_ex->add_option("--steps", steps_override);

    auto* generate = app.add_subcommand("generate", "generate motion from a script");
    generate->add_option("--vqvae", vqvae_path)->required();
    generate->add_option("--textenc", textenc_path)->required();
    generate->add_option("--script", script_path, "JSON script for one long motion");
    generate->add_option("--prompts", prompts_path, "JSONL prompts for batch generation");
    generate->add_option("--strategy", strategy, "greedy|topk");
    generate->add_option("--topk", topk);
    generate->add_option("--temp", temp);
    generate->add_option("--out", out_path, "output .mot (script mode)");
    generate->add_option("--out-dir", out_dir, "output directory (prompts mode)");
    generate->add_option("--seed", seed);
    generate->add_option("--trans", trans_override,
                         "transition latents per seam (default: model setting)");

    auto* reconstruct = app.add_subcommand("reconstruct", "round-trip a motion through the VQ-VAE");
    reconstruct->add_option("--vqvae", vqvae_path)->required();
    reconstruct->add_option("--input", input_path)->required();
    reconstruct->add_option("--out", out_path)->required();
    reconstruct->add_option("--report", report_path, "JSON stats path");

    auto* evaluate = app.add_subcommand("evaluate", "compute metric report");
    evaluate->add_option("--config", config_path)->required();
    evaluate->add_option("--extractor", extractor_path)->required();
    evaluate->add_option("--generated", generated_path)->required();
    evaluate->add_option("--references", references_path)->required();
    evaluate->add_option("--mode", mode, "single|longterm");
    evaluate->add_option("--ref-split", ref_split, "filter references by split");
    evaluate->add_option("--out", out_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            app.exit(e);
            return 0;
        }
        std::fprintf(stderr, "%s\n", e.what());
        std::fprintf(stderr, "%s", app.help().c_str());
        return 1;
    }

    try {
        if (gen_data->parsed()) return cmd_gen_data(config_path, out_dir);
        if (train_vq->parsed()) return cmd_train_vqvae(config_path, data_dir, out_path, steps_override);
        if (train_te->parsed())
            return cmd_train_textenc(config_path, data_dir, vqvae_path, out_path, steps_override);
        if (train_ex->parsed()) return cmd_train_extractor(config_path, data_dir, out_path, steps_override);
        if (generate->parsed())
            return cmd_generate(vqvae_path, textenc_path, script_path, prompts_path, strategy,
                                topk, temp, out_path, out_dir, seed, trans_override);
        if (reconstruct->parsed())
            return cmd_reconstruct(vqvae_path, input_path, out_path, report_path);
        if (evaluate->parsed())
            return cmd_evaluate(config_path, extractor_path, generated_path, references_path,
                                mode, ref_split, out_path);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
    return 2;
}
