#pragma once

#include <map>
#include <optional>

#include "latref/config.hpp"
#include "latref/diffusion/train.hpp"
#include "latref/guidance/guidance.hpp"
#include "latref/metrics/metrics.hpp"
#include "latref/pipeline/corpus.hpp"
#include "latref/vq/train.hpp"

namespace latref::pipeline {

struct StageInfo {
    std::string file;
    std::string sha256;
    int steps = 0;
};

/// Everything needed to reproduce a run bit for bit on the same platform:
/// the resolved config text, the seeds inside it, and the stage hashes the
/// rerun must match.
struct RunManifest {
    std::string config_hash;
    std::string config_text;
    std::map<std::string, StageInfo> stages;
    std::string metrics_json;

    std::string to_json() const;
    static RunManifest from_json(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static RunManifest load(const std::filesystem::path& path);
};

/// Rebuilds the config recorded in a manifest, redirected to a new output
/// directory.
PipelineConfig config_from_manifest(const RunManifest& manifest,
                                    const std::filesystem::path& out_dir);

/// Aligned image/latent pools derived deterministically from the corpus:
/// `variants` degradations per image. Latents are filled when a VQ model is
/// supplied.
struct PairPools {
    Tensor clean_images;     // [M,3,H,W]
    Tensor degraded_images;  // [M,3,H,W], upsampled back to working res
    diffusion::LatentPairs latents;
    std::vector<int> source_index;  // corpus image per pool row
};

PairPools build_pair_pools(const Corpus& corpus, const degrade::DegradationRanges& ranges,
                           int variants, int resolution, uint64_t seed,
                           const vq::VqModel* vq_model);

/// Ordered training stages. "vq_f32" is the compression-ablation arm: the
/// same VQ recipe with f = 32 under a matched budget.
extern const std::vector<std::string> kStages;

/// Runs one training stage, writes its checkpoint atomically and updates
/// the run manifest. Missing prerequisites fail naming the required stage.
StageInfo run_stage(const PipelineConfig& cfg, const std::string& stage);

/// Frozen inference stack loaded from stage checkpoints.
struct Stack {
    vq::VqModel vq;
    diffusion::ScoreNetwork score;
    guidance::Irn irn;
    guidance::ConvEmbedder embedder;
    std::optional<guidance::MaskNet> mask;
    float sigma_max = 0.0f;
};

Stack load_stack(const PipelineConfig& cfg, bool need_mask);

struct RestoreOptions {
    float gamma = -1.0f;  // < 0: take the config value
    bool use_guidance = true;
    bool use_mask = true;
};

/// Full inference path: IRN estimate, encode, noise-anchored init, guided
/// reverse ODE, decode through quantization.
ImageTensor restore(const ImageTensor& x_d, const Stack& stack, const PipelineConfig& cfg,
                    const RestoreOptions& opts, uint64_t image_seed);

struct AblateRow {
    std::string arm;
    metrics::MetricReport report;
};

/// Comparative metrics across ablation arms on held-out pairs. Valid arm
/// names: vq_f4, vq_f32, unguided, guided, guided_masked.
std::vector<AblateRow> ablate(const PipelineConfig& cfg, const std::vector<std::string>& axes);

std::string ablate_to_json(const std::vector<AblateRow>& rows);

}  // namespace latref::pipeline
