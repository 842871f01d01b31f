#include "fixture.hpp"

#include <doctest.h>

#include <chrono>
#include <cstdio>

#include "latref/pipeline/toy_faces.hpp"

namespace acceptance {

namespace fs = std::filesystem;

namespace {

// 64-image training corpus, 32 held-out pairs, 64x64 working resolution
const char* kAcceptanceConfig =
    "image.size = 64\n"
    "vq.f = 4\n"
    "vq.d = 3\n"
    "vq.codebook_size = 512\n"
    "vq.base_width = 24\n"
    "vq.channel_mult = 1,2\n"
    "vq.steps = 700\n"
    "vq.batch = 4\n"
    "vq.lr = 0.002\n"
    "vq.w_perc = 0.1\n"
    "vq.w_adv = 0.05\n"
    "vq.disc_start = 600\n"
    "diffusion.width = 32\n"
    "diffusion.levels = 2\n"
    "diffusion.emb_dim = 64\n"
    "diffusion.steps = 3000\n"
    "diffusion.batch = 16\n"
    "diffusion.lr = 0.002\n"
    "diffusion.sampler_steps = 16\n"
    "diffusion.variants_per_image = 4\n"
    "irn.width = 24\n"
    "irn.blocks = 3\n"
    "irn.steps = 500\n"
    "irn.batch = 4\n"
    "irn.lr = 0.001\n"
    "embedder.dim = 32\n"
    "embedder.steps = 700\n"
    "embedder.batch = 16\n"
    "mask.width = 32\n"
    "mask.steps = 250\n"
    "mask.batch = 4\n"
    "mask.w_sparse = 0.02\n"
    "guidance.scale = 30\n"
    "degrade.scale_hi = 4\n"
    "seed.data = 11\n"
    "seed.init = 12\n"
    "seed.sampler = 13\n";

constexpr int kIdentities = 16;
constexpr int kTrainVariants = 4;
constexpr int kEvalVariants = 2;

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void report_criterion(int id, const std::string& text, bool ok) {
    std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "FAIL", id, text.c_str());
    std::fflush(stdout);
    CHECK_MESSAGE(ok, "criterion ", id, ": ", text);
}

Fixture& Fixture::get() {
    static Fixture fixture = [] {
        Fixture f;
        f.ensure();
        return f;
    }();
    return fixture;
}

void Fixture::ensure() {
    work = fs::absolute("acceptance_work");
    cfg = parse_config_text(kAcceptanceConfig);
    cfg.train_dir = work / "train";
    cfg.eval_dir = work / "eval";
    cfg.out_dir = work / "run";

    pipeline::ToyFacesSpec spec;
    spec.identities = kIdentities;
    spec.variants = kTrainVariants;
    spec.size = cfg.vq.image_size;

    bool reuse = false;
    const fs::path manifest_path = cfg.out_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        try {
            pipeline::RunManifest m = pipeline::RunManifest::load(manifest_path);
            reuse = m.config_hash == cfg.hash();
            for (const auto& stage : pipeline::kStages)
                reuse = reuse && fs::exists(cfg.stage_path(stage)) &&
                        m.stages.count(stage) > 0;
        } catch (const Error&) {
            reuse = false;
        }
    }

    if (!reuse) {
        std::printf("== acceptance fixture: training toy pipeline into %s\n",
                    work.string().c_str());
        fs::remove_all(work);
        pipeline::write_toy_corpus(cfg.train_dir, spec);
        // held-out variants of the same identities
        char name[64];
        for (int id = 0; id < kIdentities; ++id)
            for (int v = 0; v < kEvalVariants; ++v) {
                std::snprintf(name, sizeof(name), "id%03d_var%02d.png", id, 100 + v);
                write_png(cfg.eval_dir / name,
                          pipeline::toy_face(spec, id, 100 + v));
            }
        for (const auto& stage : pipeline::kStages) {
            const auto t0 = std::chrono::steady_clock::now();
            pipeline::run_stage(cfg, stage);
            std::printf("== stage %-9s done in %.1fs\n", stage.c_str(), elapsed_s(t0));
            std::fflush(stdout);
        }
    } else {
        std::printf("== acceptance fixture: reusing trained pipeline in %s\n",
                    work.string().c_str());
    }

    stack = pipeline::load_stack(cfg, true);
    build_eval_pairs();
    compute_reports();
}

void Fixture::build_eval_pairs() {
    pipeline::Corpus eval = pipeline::load_corpus(cfg.eval_dir, cfg.vq.image_size);
    for (int i = 0; i < eval.size(); ++i) {
        degrade::Pair pair = degrade::make_pair(
            eval.images[static_cast<size_t>(i)],
            mix_seed(cfg.seed_data, 0xE7A1, static_cast<uint64_t>(i)), cfg.ranges,
            cfg.vq.image_size);
        degraded.push_back(pair.degraded_upsampled);
        clean.push_back(pair.clean);
        names.push_back(eval.names[static_cast<size_t>(i)]);
    }
}

void Fixture::compute_reports() {
    const auto landmarks = metrics::make_landmark_fn("quadrant_centroids");
    const auto t0 = std::chrono::steady_clock::now();

    baseline = metrics::evaluate_sets(degraded, clean, names, stack.embedder, landmarks);

    auto run_arm = [&](const pipeline::RestoreOptions& opts) {
        std::vector<ImageTensor> restored;
        for (size_t i = 0; i < degraded.size(); ++i)
            restored.push_back(pipeline::restore(degraded[i], stack, cfg, opts,
                                                 static_cast<uint64_t>(i)));
        return metrics::evaluate_sets(restored, clean, names, stack.embedder, landmarks);
    };

    pipeline::RestoreOptions opts_unguided;
    opts_unguided.use_guidance = false;
    unguided = run_arm(opts_unguided);

    pipeline::RestoreOptions opts_guided;
    opts_guided.use_mask = false;
    guided = run_arm(opts_guided);

    pipeline::RestoreOptions opts_masked;
    guided_masked = run_arm(opts_masked);

    std::printf("== arm metrics in %.1fs\n", elapsed_s(t0));
    std::printf("   %-14s feat %.4f  ids %.4f  psnr %.2f\n", "degraded-in",
                baseline.mean_feat_dist, baseline.mean_ids, baseline.mean_psnr);
    for (auto [label, rep] :
         {std::pair<const char*, const metrics::MetricReport*>{"unguided", &unguided},
          {"guided", &guided},
          {"guided+mask", &guided_masked}})
        std::printf("   %-14s feat %.4f  ids %.4f  psnr %.2f\n", label, rep->mean_feat_dist,
                    rep->mean_ids, rep->mean_psnr);
    std::fflush(stdout);
}

}  // namespace acceptance
