#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "latref/pipeline/pipeline.hpp"
#include "latref/pipeline/toy_faces.hpp"

namespace fs = std::filesystem;
using namespace latref;

namespace {

struct CommonOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int steps = 0;
    bool steps_set = false;
    float guidance_scale = -1.0f;
    bool no_mask = false;
    bool no_guidance = false;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_training_flags) {
    cmd->add_option("--config", opts.config_path, "pipeline config file")->required();
    cmd->add_option_function<uint64_t>(
        "--seed", [&opts](uint64_t v) { opts.seed = v; opts.seed_set = true; },
        "override the data/init/sampler seed base");
    if (with_training_flags)
        cmd->add_option_function<int>(
            "--steps", [&opts](int v) { opts.steps = v; opts.steps_set = true; },
            "override the stage's optimizer step count");
    cmd->add_option("--guidance-scale", opts.guidance_scale, "guidance strength gamma");
    cmd->add_flag("--no-mask", opts.no_mask, "disable the learned latent mask");
    cmd->add_flag("--no-guidance", opts.no_guidance, "disable identity guidance entirely");
    cmd->add_option("--out", opts.out_dir, "output directory override");
}

PipelineConfig resolve_config(const CommonOpts& opts, const std::string& stage_for_steps = "") {
    PipelineConfig cfg = load_config(opts.config_path);
    if (opts.seed_set) {
        cfg.seed_data = opts.seed;
        cfg.seed_init = mix_seed(opts.seed, 1);
        cfg.seed_sampler = mix_seed(opts.seed, 2);
    }
    if (opts.steps_set) {
        if (stage_for_steps == "vq" || stage_for_steps == "vq_f32") cfg.vq.steps = opts.steps;
        if (stage_for_steps == "diffusion") cfg.diffusion.steps = opts.steps;
        if (stage_for_steps == "irn") cfg.irn.steps = opts.steps;
        if (stage_for_steps == "mask") cfg.mask.steps = opts.steps;
    }
    if (opts.guidance_scale >= 0.0f) cfg.guidance.scale = opts.guidance_scale;
    if (opts.no_mask) cfg.guidance.use_mask = false;
    if (opts.no_guidance) cfg.guidance.enabled = false;
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    cfg.validate();
    return cfg;
}

int run_training_stage(const CommonOpts& opts, const std::string& stage) {
    PipelineConfig cfg = resolve_config(opts, stage);
    pipeline::StageInfo info = pipeline::run_stage(cfg, stage);
    std::printf("wrote %s (sha256 %.12s...)\n",
                (cfg.out_dir / info.file).string().c_str(), info.sha256.c_str());
    return 0;
}

void write_text(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("io", "cannot create " + path.string());
    os << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-refinement image restoration pipeline"};
    app.require_subcommand(1);

    CommonOpts train_vq_o, train_vq32_o, train_diff_o, train_irn_o, train_mask_o;
    CommonOpts restore_o, evaluate_o, ablate_o;

    auto* c_vq = app.add_subcommand("train-vqvae", "stage 1: train the VQ autoencoder");
    add_common(c_vq, train_vq_o, true);
    bool f32_arm = false;
    c_vq->add_flag("--f32-arm", f32_arm, "train the f=32 ablation arm instead");

    auto* c_diff = app.add_subcommand("train-diffusion", "stage 2: train the latent score model");
    add_common(c_diff, train_diff_o, true);

    auto* c_irn = app.add_subcommand("train-irn",
                                     "stage 3: train the identity embedder and recovery network");
    add_common(c_irn, train_irn_o, true);

    auto* c_mask = app.add_subcommand("train-mask", "stage 4: train the latent guidance mask");
    add_common(c_mask, train_mask_o, true);

    auto* c_restore = app.add_subcommand("restore", "restore degraded images");
    add_common(c_restore, restore_o, false);
    std::string restore_in, restore_out;
    c_restore->add_option("--in", restore_in, "input image or directory of PNGs")->required();
    c_restore->add_option("--restored-dir", restore_out,
                          "where restored PNGs go (defaults to <out>/restored)");

    auto* c_eval = app.add_subcommand("evaluate", "metric report for restored vs reference dirs");
    add_common(c_eval, evaluate_o, false);
    std::string eval_restored, eval_reference, eval_embedder = "toy_conv";
    std::string eval_landmarks = "quadrant_centroids";
    c_eval->add_option("--restored", eval_restored, "directory of restored PNGs")->required();
    c_eval->add_option("--reference", eval_reference, "directory of reference PNGs")->required();
    c_eval->add_option("--embedder", eval_embedder, "identity embedder plugin name");
    c_eval->add_option("--landmarks", eval_landmarks, "landmark plugin name");

    auto* c_degrade = app.add_subcommand("degrade", "synthesize degraded/clean pairs");
    std::string degrade_in, degrade_out, ranges_path;
    uint64_t degrade_seed = 1;
    c_degrade->add_option("--in", degrade_in, "input directory of PNGs")->required();
    c_degrade->add_option("--out", degrade_out, "output directory")->required();
    c_degrade->add_option("--seed", degrade_seed, "seed for parameter sampling");
    c_degrade->add_option("--ranges", ranges_path,
                          "config file supplying degrade.* ranges and image.size")
        ->required();

    auto* c_ablate = app.add_subcommand("ablate", "comparative metrics across ablation arms");
    add_common(c_ablate, ablate_o, false);
    std::vector<std::string> axes;
    c_ablate->add_option("--axes", axes,
                         "arms: vq_f4 vq_f32 unguided guided guided_masked")
        ->expected(-1);

    auto* c_corpus = app.add_subcommand("make-corpus", "generate the procedural toy corpus");
    std::string corpus_out;
    int corpus_ids = 16, corpus_vars = 5, corpus_size = 64;
    uint64_t corpus_seed = 7;
    c_corpus->add_option("--out", corpus_out, "corpus directory")->required();
    c_corpus->add_option("--identities", corpus_ids, "number of identities");
    c_corpus->add_option("--variants", corpus_vars, "images per identity");
    c_corpus->add_option("--size", corpus_size, "image side length");
    c_corpus->add_option("--seed", corpus_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_vq->parsed()) return run_training_stage(train_vq_o, f32_arm ? "vq_f32" : "vq");
        if (c_diff->parsed()) return run_training_stage(train_diff_o, "diffusion");
        if (c_irn->parsed()) return run_training_stage(train_irn_o, "irn");
        if (c_mask->parsed()) return run_training_stage(train_mask_o, "mask");

        if (c_restore->parsed()) {
            PipelineConfig cfg = resolve_config(restore_o);
            pipeline::Stack stack =
                pipeline::load_stack(cfg, cfg.guidance.enabled && cfg.guidance.use_mask);
            std::vector<fs::path> inputs;
            if (fs::is_directory(restore_in))
                inputs = list_pngs(restore_in);
            else
                inputs.push_back(restore_in);
            const fs::path out_dir =
                restore_out.empty() ? cfg.out_dir / "restored" : fs::path(restore_out);
            pipeline::RestoreOptions opts;
            opts.gamma = cfg.guidance.scale;
            opts.use_guidance = cfg.guidance.enabled;
            opts.use_mask = cfg.guidance.use_mask;
            for (size_t i = 0; i < inputs.size(); ++i) {
                ImageTensor x_d = fit_to_resolution(read_png(inputs[i]), cfg.vq.image_size);
                ImageTensor out = pipeline::restore(x_d, stack, cfg, opts,
                                                    static_cast<uint64_t>(i));
                write_png(out_dir / inputs[i].filename(), out);
            }
            std::printf("restored %zu image(s) into %s\n", inputs.size(),
                        out_dir.string().c_str());
            return 0;
        }

        if (c_eval->parsed()) {
            PipelineConfig cfg = resolve_config(evaluate_o);
            const Checkpoint* trained_ptr = nullptr;
            Checkpoint trained;
            if (eval_embedder == "toy_conv") {
                trained = Checkpoint::load(cfg.stage_path("irn"));
                trained_ptr = &trained;
            }
            auto embedder = guidance::make_embedder(eval_embedder, cfg.embedder,
                                                    cfg.vq.image_size, trained_ptr);
            auto restored_paths = list_pngs(eval_restored);
            std::vector<ImageTensor> restored, reference;
            std::vector<std::string> names;
            for (const auto& p : restored_paths) {
                const fs::path ref = fs::path(eval_reference) / p.filename();
                if (!fs::exists(ref))
                    throw Error("metrics", "no reference image for " + p.filename().string());
                restored.push_back(fit_to_resolution(read_png(p), cfg.vq.image_size));
                reference.push_back(fit_to_resolution(read_png(ref), cfg.vq.image_size));
                names.push_back(p.stem().string());
            }
            metrics::MetricReport report = metrics::evaluate_sets(
                restored, reference, names, *embedder,
                metrics::make_landmark_fn(eval_landmarks));
            const fs::path out_dir =
                evaluate_o.out_dir.empty() ? cfg.out_dir : fs::path(evaluate_o.out_dir);
            write_text(out_dir / "metrics.json", report.to_json());
            write_text(out_dir / "metrics.csv", report.to_csv());
            std::printf("%s\n", report.to_json().c_str());
            return 0;
        }

        if (c_degrade->parsed()) {
            PipelineConfig ranges_cfg = load_config(ranges_path);
            const auto paths = list_pngs(degrade_in);
            if (paths.empty()) throw Error("degrade", "no PNGs under " + degrade_in);
            nlohmann::json manifest = nlohmann::json::array();
            for (size_t i = 0; i < paths.size(); ++i) {
                ImageTensor img = read_png(paths[i]);
                const uint64_t seed = mix_seed(degrade_seed, i);
                degrade::Pair pair = degrade::make_pair(img, seed, ranges_cfg.ranges,
                                                        ranges_cfg.vq.image_size);
                const std::string stem = paths[i].stem().string();
                write_png(fs::path(degrade_out) / (stem + "_clean.png"), pair.clean);
                write_png(fs::path(degrade_out) / (stem + "_degraded.png"),
                          pair.degraded_upsampled);
                manifest.push_back({{"name", stem},
                                    {"seed", seed},
                                    {"sigma", pair.params.sigma},
                                    {"scale", pair.params.scale},
                                    {"quality", pair.params.quality},
                                    {"kernel_side", pair.params.kernel.dim(0)}});
            }
            write_text(fs::path(degrade_out) / "degradation_manifest.json", manifest.dump(2));
            std::printf("degraded %zu image(s) into %s\n", paths.size(), degrade_out.c_str());
            return 0;
        }

        if (c_ablate->parsed()) {
            PipelineConfig cfg = resolve_config(ablate_o);
            auto rows = pipeline::ablate(cfg, axes);
            const std::string js = pipeline::ablate_to_json(rows);
            write_text(cfg.out_dir / "ablation.json", js);
            for (const auto& row : rows)
                std::printf("%-14s psnr %6.2f  ssim %.4f  feat %.4f  ids %.4f  lmd %.3f\n",
                            row.arm.c_str(), row.report.mean_psnr, row.report.mean_ssim,
                            row.report.mean_feat_dist, row.report.mean_ids,
                            row.report.mean_lmd);
            return 0;
        }

        if (c_corpus->parsed()) {
            pipeline::ToyFacesSpec spec;
            spec.identities = corpus_ids;
            spec.variants = corpus_vars;
            spec.size = corpus_size;
            spec.seed = corpus_seed;
            pipeline::write_toy_corpus(corpus_out, spec);
            std::printf("wrote %d images into %s\n", spec.identities * spec.variants,
                        corpus_out.c_str());
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
