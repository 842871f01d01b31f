#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latref/degrade/degrade.hpp"

namespace latref {

struct VqConfig {
    int image_size = 64;
    int f = 4;  // spatial compression factor, one of {2,4,8,16,32}
    int d = 3;
    int codebook_size = 512;
    int base_width = 32;
    std::vector<int> channel_mult = {1, 2};
    float lr = 2e-3f;
    int steps = 800;
    int batch = 8;
    float w_rec = 1.0f;
    float w_perc = 0.1f;
    float w_adv = 0.05f;
    float w_codebook = 1.0f;
    float w_commit = 1.0f;
    int disc_start = 1 << 30;  // adversarial term off until this step
    bool dead_code_reinit = false;
    int dead_code_patience = 200;

    int latent_size() const { return image_size / f; }
};

struct DiffusionConfig {
    float sigma_min = 0.01f;
    float sigma_max = 0.0f;  // 0 = auto: 3x empirical latent std
    float rho = 7.0f;
    int sampler_steps = 16;  // N
    int width = 32;
    int levels = 2;
    int emb_dim = 64;
    float lr = 2e-3f;
    int steps = 2000;
    int batch = 16;
    int variants_per_image = 4;  // degraded latents cached per clean image
};

struct IrnConfig {
    int width = 32;
    int blocks = 3;
    float alpha = 0.1f;  // L1 weight against the identity term
    float lr = 1e-3f;
    int steps = 600;
    int batch = 4;
};

struct EmbedderConfig {
    std::string name = "toy_conv";
    int dim = 32;
    float margin = 0.2f;
    float scale = 16.0f;
    float lr = 1e-3f;
    int steps = 600;
    int batch = 16;
};

struct MaskConfig {
    int width = 32;
    float w_feat = 1.0f;
    float w_id = 1.0f;
    float w_sparse = 0.05f;
    float lr = 2e-3f;
    int steps = 300;
    int batch = 4;
};

struct GuidanceConfig {
    float scale = 1.0f;  // gamma
    bool enabled = true;
    bool use_mask = true;
};

struct PipelineConfig {
    VqConfig vq;
    DiffusionConfig diffusion;
    IrnConfig irn;
    EmbedderConfig embedder;
    MaskConfig mask;
    GuidanceConfig guidance;
    degrade::DegradationRanges ranges;

    std::filesystem::path train_dir;
    std::filesystem::path eval_dir;
    std::filesystem::path out_dir = "runs/default";

    uint64_t seed_data = 1;
    uint64_t seed_init = 2;
    uint64_t seed_sampler = 3;

    void validate() const;
    /// Canonical serialization; its hash identifies the run configuration.
    std::string canonical_text() const;
    std::string hash() const;

    std::filesystem::path stage_path(const std::string& stage) const;
};

PipelineConfig parse_config_text(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace latref
