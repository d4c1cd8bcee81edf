#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace t2lm {

struct DataConfig {
    std::vector<std::string> templates;  // empty = all built-ins
    int n = 2000;
    int joints = 5;
    int fps = 20;
    double holdout_fraction = 0.1;
    int n_long = 64;         // long-term ground-truth sequences to render
    int long_actions = 2;    // actions per long sequence
    int blend = 8;           // cross-fade frames for long ground truth
};

struct VqvaeConfig {
    int codebooks = 2;       // K
    int codebook_size = 64;  // C
    int code_dim = 32;       // d_code; latent channels d_V = K * code_dim
    int width = 32;          // conv channel width w
    double beta = 0.25;      // commitment weight
    int downscale = 4;       // l; fixed at 4 in v1
    int res_blocks = 2;      // residual blocks per stage
    int n_trans = 0;         // learned transition latent vectors (0 = off)

    int latent_dim() const { return codebooks * code_dim; }
};

struct TextencConfig {
    int layers = 2;
    int d_model = 64;  // d_H
    int heads = 4;
    int inner = 256;
    int t_max = 256;
    double p_corrupt = 0.5;
};

struct ExtractorConfig {
    int feature_dim = 64;  // d_f
    int width = 32;
    double temperature = 0.07;  // contrastive tau
};

struct TrainingConfig {
    double vqvae_lr = 2e-4;
    double textenc_lr = 3e-4;
    double extractor_lr = 1e-3;
    int scheduler_step = 350;   // epochs between lr halvings
    double scheduler_decay = 0.5;
    int batch = 128;
    int vqvae_epochs = 1000;
    int textenc_epochs = 700;
    int extractor_epochs = 60;
    double p_aug = 0.5;  // linear-interpolation augmentation probability
};

struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    VqvaeConfig vqvae;
    TextencConfig textenc;
    ExtractorConfig extractor;
    TrainingConfig training;
};

// Parses and validates a JSON run config. The T2LM_SEED environment variable,
// when set, overrides the file's seed; callers pass the env value through.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text);
std::string config_to_json(const RunConfig& cfg);

void validate(const RunConfig& cfg);

// Canonical string of the codebook layout two checkpoints must agree on.
std::string codebook_signature(const VqvaeConfig& cfg);

}  // namespace t2lm
