#pragma once

#include <string>
#include <vector>

namespace t2lm {

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

// Container: magic "T2LM", u32 version=1, u32 tensor count, then per tensor
// {u16 name length, name, u8 ndim, u32 dims..., little-endian f32 row-major}.
// A JSON sidecar (written separately by the owning model) records the config.
void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::string& path);

// Sidecar convention: "<ckpt path>.json".
std::string sidecar_path(const std::string& ckpt_path);
void write_sidecar(const std::string& ckpt_path, const std::string& json_text);
std::string read_sidecar(const std::string& ckpt_path);

// FNV-1a over a canonical config string; used to pair checkpoints that must
// share a codebook layout.
std::string config_hash(const std::string& canonical);

}  // namespace t2lm
