#include "latref/pipeline/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace latref::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// RunManifest

std::string RunManifest::to_json() const {
    json j;
    j["config_hash"] = config_hash;
    j["config_text"] = config_text;
    j["stages"] = json::object();
    for (const auto& [name, info] : stages)
        j["stages"][name] = {{"file", info.file}, {"sha256", info.sha256},
                             {"steps", info.steps}};
    if (!metrics_json.empty()) j["metrics"] = json::parse(metrics_json);
    return j.dump(2);
}

RunManifest RunManifest::from_json(const std::string& text) {
    RunManifest m;
    json j = json::parse(text);
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config_text = j.at("config_text").get<std::string>();
    for (auto& [name, info] : j.at("stages").items())
        m.stages[name] = {info.at("file").get<std::string>(),
                          info.at("sha256").get<std::string>(), info.at("steps").get<int>()};
    if (j.contains("metrics")) m.metrics_json = j["metrics"].dump();
    return m;
}

void RunManifest::save(const fs::path& path) const {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw Error("io", "cannot create " + tmp.string());
        os << to_json() << "\n";
    }
    fs::rename(tmp, path);
}

RunManifest RunManifest::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("pipeline", "cannot open manifest " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

PipelineConfig config_from_manifest(const RunManifest& manifest, const fs::path& out_dir) {
    PipelineConfig cfg = parse_config_text(manifest.config_text);
    cfg.out_dir = out_dir;
    return cfg;
}

// ---------------------------------------------------------------------------
// Pools

PairPools build_pair_pools(const Corpus& corpus, const degrade::DegradationRanges& ranges,
                           int variants, int resolution, uint64_t seed,
                           const vq::VqModel* vq_model) {
    if (corpus.size() == 0) throw Error("pipeline", "empty corpus");
    if (variants < 1) throw Error("pipeline", "variants must be >= 1");
    const int M = corpus.size() * variants;
    PairPools pools;
    pools.clean_images = Tensor({M, 3, resolution, resolution});
    pools.degraded_images = Tensor({M, 3, resolution, resolution});
    pools.source_index.resize(static_cast<size_t>(M));
    const int64_t img_per = static_cast<int64_t>(3) * resolution * resolution;

    for (int i = 0; i < corpus.size(); ++i) {
        for (int v = 0; v < variants; ++v) {
            const int row = i * variants + v;
            degrade::Pair pair =
                degrade::make_pair(corpus.images[static_cast<size_t>(i)],
                                   mix_seed(seed, static_cast<uint64_t>(i),
                                            static_cast<uint64_t>(v)),
                                   ranges, resolution);
            std::copy_n(pair.clean.data(), img_per,
                        pools.clean_images.data() + static_cast<int64_t>(row) * img_per);
            std::copy_n(pair.degraded_upsampled.data(), img_per,
                        pools.degraded_images.data() + static_cast<int64_t>(row) * img_per);
            pools.source_index[static_cast<size_t>(row)] = i;
        }
    }

    if (vq_model) {
        const int d = vq_model->cfg.d, ls = vq_model->cfg.latent_size();
        pools.latents.z0 = Tensor({M, d, ls, ls});
        pools.latents.z_d = Tensor({M, d, ls, ls});
        const int64_t lat_per = static_cast<int64_t>(d) * ls * ls;
        for (int row = 0; row < M; ++row) {
            Tensor clean = unstack(pools.clean_images, row);
            Tensor degraded = unstack(pools.degraded_images, row);
            Tensor z0 = vq_model->encode(clean);
            Tensor zd = vq_model->encode(degraded);
            std::copy_n(z0.data(), lat_per,
                        pools.latents.z0.data() + static_cast<int64_t>(row) * lat_per);
            std::copy_n(zd.data(), lat_per,
                        pools.latents.z_d.data() + static_cast<int64_t>(row) * lat_per);
        }
    }
    return pools;
}

// ---------------------------------------------------------------------------
// Stages

const std::vector<std::string> kStages = {"vq", "vq_f32", "diffusion", "irn", "mask"};

namespace {

void require_stage(const PipelineConfig& cfg, const std::string& needed,
                   const std::string& forstage) {
    if (!fs::exists(cfg.stage_path(needed)))
        throw Error("pipeline", "stage '" + forstage + "' requires stage '" + needed +
                                    "' (checkpoint " + cfg.stage_path(needed).string() +
                                    " not found)");
}

Checkpoint load_stage_checkpoint(const PipelineConfig& cfg, const std::string& stage) {
    const fs::path path = cfg.stage_path(stage);
    if (!fs::exists(path))
        throw Error("pipeline",
                    "missing checkpoint for stage '" + stage + "': " + path.string());
    return Checkpoint::load(path);
}

void update_manifest(const PipelineConfig& cfg, const std::string& stage,
                     const StageInfo& info) {
    const fs::path path = cfg.out_dir / "manifest.json";
    RunManifest m;
    if (fs::exists(path)) {
        m = RunManifest::load(path);
        if (m.config_hash != cfg.hash())
            throw Error("pipeline", "output directory holds a run with a different config");
    } else {
        m.config_hash = cfg.hash();
        m.config_text = cfg.canonical_text();
    }
    m.stages[stage] = info;
    m.save(path);
}

StageInfo finish_stage(const PipelineConfig& cfg, const std::string& stage, Checkpoint& ck,
                       json manifest, int steps) {
    manifest["stage"] = stage;
    manifest["config_hash"] = cfg.hash();
    manifest["steps"] = steps;
    ck.set_manifest(manifest.dump(2));
    const fs::path path = cfg.stage_path(stage);
    ck.save(path);
    StageInfo info{path.filename().string(), sha256_file(path), steps};
    update_manifest(cfg, stage, info);
    return info;
}

StageInfo run_vq_stage(const PipelineConfig& cfg, const std::string& stage, const VqConfig& vq) {
    Corpus corpus = load_corpus(cfg.train_dir, vq.image_size);
    vq::VqTrainResult result = vq::train_vqvae(corpus, vq, cfg.seed_data);

    Checkpoint ck;
    result.model.save_into(ck);
    nn::ParamRefs disc_params;
    result.disc.collect(disc_params);
    vq::save_params(ck, "disc", disc_params);

    json manifest;
    manifest["codebook_usage"] = result.usage;
    manifest["dead_code_fraction"] = result.dead_code_fraction();
    manifest["f"] = vq.f;
    const auto& last = result.log.steps.back();
    manifest["final_loss"] = {{"reconstruction", last.reconstruction},
                              {"perceptual", last.perceptual},
                              {"codebook", last.codebook}};
    std::printf("[%s] %d steps, final rec L1 %.4f, dead codes %.1f%%\n", stage.c_str(),
                vq.steps, last.reconstruction, 100.0 * result.dead_code_fraction());
    return finish_stage(cfg, stage, ck, std::move(manifest), vq.steps);
}

}  // namespace

StageInfo run_stage(const PipelineConfig& cfg, const std::string& stage) {
    cfg.validate();
    if (stage == "vq") return run_vq_stage(cfg, stage, cfg.vq);

    if (stage == "vq_f32") {
        // compression-ablation arm: same recipe and budget, f = 32
        VqConfig vq = cfg.vq;
        vq.f = 32;
        vq.channel_mult = {1, 1, 2, 2, 4};
        return run_vq_stage(cfg, stage, vq);
    }

    if (stage == "diffusion") {
        require_stage(cfg, "vq", stage);
        vq::VqModel vqm = vq::VqModel::load_from(load_stage_checkpoint(cfg, "vq"), cfg.vq);
        Corpus corpus = load_corpus(cfg.train_dir, cfg.vq.image_size);
        PairPools pools = build_pair_pools(corpus, cfg.ranges, cfg.diffusion.variants_per_image,
                                           cfg.vq.image_size, mix_seed(cfg.seed_data, 0xD1F),
                                           &vqm);
        diffusion::DiffusionTrainResult result =
            train_diffusion(pools.latents, cfg.diffusion, cfg.seed_data);

        Checkpoint ck;
        result.net.save_into(ck);
        json manifest;
        manifest["sigma_data"] = result.sigma_data;
        manifest["sigma_max"] = result.sigma_max;
        manifest["final_loss"] = result.loss.back();
        std::printf("[diffusion] %d steps, sigma_data %.4f, sigma_max %.4f, final loss %.4f\n",
                    cfg.diffusion.steps, result.sigma_data, result.sigma_max,
                    result.loss.back());
        return finish_stage(cfg, stage, ck, std::move(manifest), cfg.diffusion.steps);
    }

    if (stage == "irn") {
        Corpus corpus = load_corpus(cfg.train_dir, cfg.vq.image_size);
        guidance::EmbedderTrainResult emb =
            guidance::train_embedder(corpus, cfg.embedder, cfg.vq.image_size, cfg.seed_data);

        PairPools pools = build_pair_pools(corpus, cfg.ranges, cfg.diffusion.variants_per_image,
                                           cfg.vq.image_size, mix_seed(cfg.seed_data, 0x1BB),
                                           nullptr);
        guidance::ImagePairs pairs{pools.degraded_images, pools.clean_images};
        guidance::IrnTrainResult result =
            guidance::train_irn(pairs, cfg.irn, emb.embedder, cfg.seed_data);

        Checkpoint ck;
        result.irn.save_into(ck);
        emb.embedder.save_into(ck);
        json manifest;
        manifest["embedder_train_accuracy"] = emb.final_train_accuracy;
        manifest["final_loss"] = result.loss.back();
        std::printf("[irn] %d steps, final loss %.4f (embedder train acc %.2f)\n",
                    cfg.irn.steps, result.loss.back(), emb.final_train_accuracy);
        return finish_stage(cfg, stage, ck, std::move(manifest), cfg.irn.steps);
    }

    if (stage == "mask") {
        require_stage(cfg, "vq", stage);
        require_stage(cfg, "diffusion", stage);
        require_stage(cfg, "irn", stage);
        Stack stack = load_stack(cfg, /*need_mask=*/false);

        Corpus corpus = load_corpus(cfg.train_dir, cfg.vq.image_size);
        PairPools pools = build_pair_pools(corpus, cfg.ranges, cfg.diffusion.variants_per_image,
                                           cfg.vq.image_size, mix_seed(cfg.seed_data, 0x3A5),
                                           &stack.vq);
        // frozen IRN estimates for every pool row
        Tensor irn_images(pools.degraded_images.shape());
        const int64_t img_per = irn_images.numel() / irn_images.dim(0);
        for (int row = 0; row < irn_images.dim(0); ++row) {
            Tensor out = guidance::irn_forward(unstack(pools.degraded_images, row), stack.irn);
            std::copy_n(out.data(), img_per,
                        irn_images.data() + static_cast<int64_t>(row) * img_per);
        }

        guidance::MaskTrainInputs inputs;
        inputs.latents = &pools.latents;
        inputs.clean_images = &pools.clean_images;
        inputs.irn_images = &irn_images;
        diffusion::SigmaSchedule sched = diffusion::sigma_schedule(cfg.diffusion, stack.sigma_max);
        guidance::MaskTrainResult result =
            guidance::mask_train(inputs, cfg.mask, cfg.guidance.scale, stack.vq, stack.score,
                                 stack.embedder, sched, cfg.seed_data);

        Checkpoint ck;
        result.net.save_into(ck);
        json manifest;
        manifest["final_loss"] = result.loss.back();
        manifest["final_mask_mean"] = result.final_mask_mean;
        std::printf("[mask] %d steps, final loss %.4f, mask mean %.3f\n", cfg.mask.steps,
                    result.loss.back(), result.final_mask_mean);
        return finish_stage(cfg, stage, ck, std::move(manifest), cfg.mask.steps);
    }

    throw Error("pipeline", "unknown stage '" + stage + "'");
}

// ---------------------------------------------------------------------------
// Inference

Stack load_stack(const PipelineConfig& cfg, bool need_mask) {
    Stack stack;
    stack.vq = vq::VqModel::load_from(load_stage_checkpoint(cfg, "vq"), cfg.vq);

    Checkpoint dck = load_stage_checkpoint(cfg, "diffusion");
    diffusion::ScoreNetConfig net_cfg;
    net_cfg.d = cfg.vq.d;
    net_cfg.width = cfg.diffusion.width;
    net_cfg.levels = cfg.diffusion.levels;
    net_cfg.emb_dim = cfg.diffusion.emb_dim;
    stack.score = diffusion::ScoreNetwork::load_from(dck, net_cfg);
    stack.sigma_max = json::parse(dck.manifest()).at("sigma_max").get<float>();

    Checkpoint ick = load_stage_checkpoint(cfg, "irn");
    stack.irn = guidance::Irn::load_from(ick, cfg.irn.width, cfg.irn.blocks);
    stack.embedder =
        guidance::ConvEmbedder::load_from(ick, cfg.vq.image_size, cfg.embedder.dim);

    if (need_mask)
        stack.mask = guidance::MaskNet::load_from(load_stage_checkpoint(cfg, "mask"), cfg.vq.d,
                                                  cfg.mask.width);
    return stack;
}

ImageTensor restore(const ImageTensor& x_d, const Stack& stack, const PipelineConfig& cfg,
                    const RestoreOptions& opts, uint64_t image_seed) {
    check_shape(x_d, {3, cfg.vq.image_size, cfg.vq.image_size}, "restore input");

    ImageTensor x_id = guidance::irn_forward(x_d, stack.irn);
    Tensor z_d = stack.vq.encode(x_d);
    diffusion::SigmaSchedule sched = diffusion::sigma_schedule(cfg.diffusion, stack.sigma_max);

    Rng rng(mix_seed(cfg.seed_sampler, 0x9A11, image_seed));
    Tensor z_init = guidance::init_latent(x_id, stack.vq, sched.start(), rng);

    const float gamma = opts.gamma >= 0.0f ? opts.gamma : cfg.guidance.scale;
    diffusion::GuidanceHook hook;  // empty = unguided
    Tensor target_emb;
    if (opts.use_guidance && cfg.guidance.enabled && gamma > 0.0f) {
        target_emb = stack.embedder.embed(x_id);
        const guidance::MaskNet* mask_net =
            (opts.use_mask && cfg.guidance.use_mask && stack.mask) ? &*stack.mask : nullptr;
        hook = guidance::make_identity_hook(stack.vq, stack.embedder, target_emb, z_d, mask_net,
                                            gamma);
    }
    Tensor z0 =
        diffusion::sample(z_init, sched, diffusion::conditional_score(stack.score, z_d), hook);
    return stack.vq.decode(z0);
}

}  // namespace latref::pipeline
