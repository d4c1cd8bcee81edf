#include "t2lm/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "t2lm/errors.hpp"

namespace t2lm {

using nlohmann::json;

namespace {

template <class T>
void read_into(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

json section(const json& j, const char* key) {
    if (!j.contains(key)) return json::object();
    if (!j.at(key).is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
    return j.at(key);
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");

    RunConfig cfg;
    if (!j.contains("seed")) throw ConfigError("config requires an explicit seed");
    read_into(j, "seed", cfg.seed);

    const json d = section(j, "data");
    read_into(d, "templates", cfg.data.templates);
    read_into(d, "n", cfg.data.n);
    read_into(d, "joints", cfg.data.joints);
    read_into(d, "fps", cfg.data.fps);
    read_into(d, "holdout_fraction", cfg.data.holdout_fraction);
    read_into(d, "n_long", cfg.data.n_long);
    read_into(d, "long_actions", cfg.data.long_actions);
    read_into(d, "blend", cfg.data.blend);

    const json v = section(j, "vqvae");
    read_into(v, "codebooks", cfg.vqvae.codebooks);
    read_into(v, "codebook_size", cfg.vqvae.codebook_size);
    read_into(v, "code_dim", cfg.vqvae.code_dim);
    read_into(v, "width", cfg.vqvae.width);
    read_into(v, "beta", cfg.vqvae.beta);
    read_into(v, "downscale", cfg.vqvae.downscale);
    read_into(v, "res_blocks", cfg.vqvae.res_blocks);
    read_into(v, "n_trans", cfg.vqvae.n_trans);

    const json t = section(j, "textenc");
    read_into(t, "layers", cfg.textenc.layers);
    read_into(t, "d_model", cfg.textenc.d_model);
    read_into(t, "heads", cfg.textenc.heads);
    read_into(t, "inner", cfg.textenc.inner);
    read_into(t, "t_max", cfg.textenc.t_max);
    read_into(t, "p_corrupt", cfg.textenc.p_corrupt);

    const json e = section(j, "extractor");
    read_into(e, "feature_dim", cfg.extractor.feature_dim);
    read_into(e, "width", cfg.extractor.width);
    read_into(e, "temperature", cfg.extractor.temperature);

    const json tr = section(j, "training");
    read_into(tr, "vqvae_lr", cfg.training.vqvae_lr);
    read_into(tr, "textenc_lr", cfg.training.textenc_lr);
    read_into(tr, "extractor_lr", cfg.training.extractor_lr);
    read_into(tr, "scheduler_step", cfg.training.scheduler_step);
    read_into(tr, "scheduler_decay", cfg.training.scheduler_decay);
    read_into(tr, "batch", cfg.training.batch);
    read_into(tr, "vqvae_epochs", cfg.training.vqvae_epochs);
    read_into(tr, "textenc_epochs", cfg.training.textenc_epochs);
    read_into(tr, "extractor_epochs", cfg.training.extractor_epochs);
    read_into(tr, "p_aug", cfg.training.p_aug);

    validate(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

void validate(const RunConfig& cfg) {
    const auto& v = cfg.vqvae;
    if (v.downscale != 4)
        throw ConfigError("vqvae.downscale is fixed at 4 (two stride-2 stages)");
    if (v.codebooks < 1 || v.codebook_size < 2 || v.code_dim < 1 || v.width < 1 ||
        v.res_blocks < 0 || v.n_trans < 0)
        throw ConfigError("vqvae: non-positive structural parameter");
    if (v.beta < 0) throw ConfigError("vqvae.beta must be >= 0");
    const auto& t = cfg.textenc;
    if (t.layers < 1 || t.d_model < 1 || t.heads < 1 || t.inner < 1 || t.t_max < 1)
        throw ConfigError("textenc: non-positive structural parameter");
    if (t.d_model % t.heads != 0)
        throw ConfigError("textenc.d_model must be divisible by heads");
    if ((2 * t.d_model) % t.heads != 0)
        throw ConfigError("textenc: 2*d_model must be divisible by heads");
    if (t.p_corrupt < 0 || t.p_corrupt > 1) throw ConfigError("textenc.p_corrupt out of [0,1]");
    const auto& tr = cfg.training;
    if (tr.vqvae_lr <= 0 || tr.textenc_lr <= 0 || tr.extractor_lr <= 0)
        throw ConfigError("training: learning rates must be positive");
    if (tr.batch < 1) throw ConfigError("training.batch must be >= 1");
    if (tr.p_aug < 0 || tr.p_aug > 1) throw ConfigError("training.p_aug out of [0,1]");
    if (cfg.data.n < 1) throw ConfigError("data.n must be >= 1");
    if (cfg.data.joints < 1) throw ConfigError("data.joints must be >= 1");
    if (cfg.data.fps < 1) throw ConfigError("data.fps must be >= 1");
    if (cfg.data.holdout_fraction < 0 || cfg.data.holdout_fraction >= 1)
        throw ConfigError("data.holdout_fraction out of [0,1)");
    if (cfg.data.blend < 0) throw ConfigError("data.blend must be >= 0");
    if (cfg.extractor.feature_dim < 1 || cfg.extractor.width < 1)
        throw ConfigError("extractor: non-positive structural parameter");
    if (cfg.extractor.temperature <= 0) throw ConfigError("extractor.temperature must be > 0");
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["data"] = {{"templates", cfg.data.templates},
                 {"n", cfg.data.n},
                 {"joints", cfg.data.joints},
                 {"fps", cfg.data.fps},
                 {"holdout_fraction", cfg.data.holdout_fraction},
                 {"n_long", cfg.data.n_long},
                 {"long_actions", cfg.data.long_actions},
                 {"blend", cfg.data.blend}};
    j["vqvae"] = {{"codebooks", cfg.vqvae.codebooks},
                  {"codebook_size", cfg.vqvae.codebook_size},
                  {"code_dim", cfg.vqvae.code_dim},
                  {"width", cfg.vqvae.width},
                  {"beta", cfg.vqvae.beta},
                  {"downscale", cfg.vqvae.downscale},
                  {"res_blocks", cfg.vqvae.res_blocks},
                  {"n_trans", cfg.vqvae.n_trans}};
    j["textenc"] = {{"layers", cfg.textenc.layers},
                    {"d_model", cfg.textenc.d_model},
                    {"heads", cfg.textenc.heads},
                    {"inner", cfg.textenc.inner},
                    {"t_max", cfg.textenc.t_max},
                    {"p_corrupt", cfg.textenc.p_corrupt}};
    j["extractor"] = {{"feature_dim", cfg.extractor.feature_dim},
                      {"width", cfg.extractor.width},
                      {"temperature", cfg.extractor.temperature}};
    j["training"] = {{"vqvae_lr", cfg.training.vqvae_lr},
                     {"textenc_lr", cfg.training.textenc_lr},
                     {"extractor_lr", cfg.training.extractor_lr},
                     {"scheduler_step", cfg.training.scheduler_step},
                     {"scheduler_decay", cfg.training.scheduler_decay},
                     {"batch", cfg.training.batch},
                     {"vqvae_epochs", cfg.training.vqvae_epochs},
                     {"textenc_epochs", cfg.training.textenc_epochs},
                     {"extractor_epochs", cfg.training.extractor_epochs},
                     {"p_aug", cfg.training.p_aug}};
    return j.dump(2);
}

std::string codebook_signature(const VqvaeConfig& cfg) {
    std::ostringstream ss;
    ss << "K=" << cfg.codebooks << ";C=" << cfg.codebook_size << ";d=" << cfg.code_dim;
    return ss.str();
}

}  // namespace t2lm
