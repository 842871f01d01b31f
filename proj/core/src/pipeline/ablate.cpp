#include <json.hpp>

#include "latref/pipeline/pipeline.hpp"

namespace latref::pipeline {

namespace {

metrics::MetricReport reconstruction_report(const PipelineConfig& cfg, const VqConfig& vq_cfg,
                                            const std::string& stage,
                                            const guidance::IdentityEmbedder& embedder) {
    Checkpoint ck = Checkpoint::load(cfg.stage_path(stage));
    vq::VqModel model = vq::VqModel::load_from(ck, vq_cfg);
    Corpus corpus = load_corpus(cfg.eval_dir, vq_cfg.image_size);
    std::vector<ImageTensor> rec, ref;
    for (const auto& img : corpus.images) {
        rec.push_back(model.decode(model.encode(img)));
        ref.push_back(img);
    }
    return metrics::evaluate_sets(rec, ref, corpus.names, embedder,
                                  metrics::make_landmark_fn("quadrant_centroids"));
}

}  // namespace

std::vector<AblateRow> ablate(const PipelineConfig& cfg, const std::vector<std::string>& axes) {
    if (axes.empty()) throw Error("pipeline", "ablate needs at least one axis");
    for (const auto& a : axes) {
        const bool known = a == "vq_f4" || a == "vq_f32" || a == "unguided" || a == "guided" ||
                           a == "guided_masked";
        if (!known) throw Error("pipeline", "unknown ablation arm '" + a + "'");
    }

    const bool needs_stack =
        std::any_of(axes.begin(), axes.end(), [](const std::string& a) { return a != "vq_f32"; });
    const bool needs_mask = std::count(axes.begin(), axes.end(), "guided_masked") > 0;
    std::optional<Stack> stack;
    if (needs_stack || needs_mask) stack = load_stack(cfg, needs_mask);

    // held-out degraded pairs, one variant per eval image
    Corpus eval = load_corpus(cfg.eval_dir, cfg.vq.image_size);
    std::vector<ImageTensor> degraded, clean;
    for (int i = 0; i < eval.size(); ++i) {
        degrade::Pair pair = degrade::make_pair(
            eval.images[static_cast<size_t>(i)],
            mix_seed(cfg.seed_data, 0xE7A1, static_cast<uint64_t>(i)), cfg.ranges,
            cfg.vq.image_size);
        degraded.push_back(pair.degraded_upsampled);
        clean.push_back(pair.clean);
    }
    const auto landmarks = metrics::make_landmark_fn("quadrant_centroids");

    auto restored_report = [&](const RestoreOptions& opts) {
        std::vector<ImageTensor> restored;
        for (size_t i = 0; i < degraded.size(); ++i)
            restored.push_back(
                restore(degraded[i], *stack, cfg, opts, static_cast<uint64_t>(i)));
        return metrics::evaluate_sets(restored, clean, eval.names, stack->embedder, landmarks);
    };

    std::vector<AblateRow> rows;
    for (const auto& arm : axes) {
        if (arm == "vq_f4") {
            rows.push_back({arm, reconstruction_report(cfg, cfg.vq, "vq", stack->embedder)});
        } else if (arm == "vq_f32") {
            VqConfig vq32 = cfg.vq;
            vq32.f = 32;
            vq32.channel_mult = {1, 1, 2, 2, 4};
            const Stack* emb_source = stack ? &*stack : nullptr;
            if (!emb_source) {
                stack = load_stack(cfg, false);
                emb_source = &*stack;
            }
            rows.push_back({arm, reconstruction_report(cfg, vq32, "vq_f32",
                                                       emb_source->embedder)});
        } else if (arm == "unguided") {
            RestoreOptions opts;
            opts.use_guidance = false;
            rows.push_back({arm, restored_report(opts)});
        } else if (arm == "guided") {
            RestoreOptions opts;
            opts.use_mask = false;
            rows.push_back({arm, restored_report(opts)});
        } else {  // guided_masked
            RestoreOptions opts;
            rows.push_back({arm, restored_report(opts)});
        }
    }
    return rows;
}

std::string ablate_to_json(const std::vector<AblateRow>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json r = nlohmann::json::parse(row.report.to_json());
        r["arm"] = row.arm;
        j.push_back(std::move(r));
    }
    return j.dump(2);
}

}  // namespace latref::pipeline
