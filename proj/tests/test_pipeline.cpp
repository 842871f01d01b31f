#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "latref/pipeline/pipeline.hpp"
#include "latref/pipeline/toy_faces.hpp"

using namespace latref;
using namespace latref::pipeline;
namespace fs = std::filesystem;

namespace {

// micro pipeline: just enough steps to exercise the wiring
const char* kMicroConfig =
    "image.size = 32\n"
    "vq.f = 4\n"
    "vq.d = 3\n"
    "vq.codebook_size = 64\n"
    "vq.base_width = 16\n"
    "vq.channel_mult = 1,2\n"
    "vq.steps = 60\n"
    "vq.batch = 4\n"
    "diffusion.width = 16\n"
    "diffusion.levels = 2\n"
    "diffusion.emb_dim = 32\n"
    "diffusion.steps = 80\n"
    "diffusion.batch = 8\n"
    "diffusion.sampler_steps = 6\n"
    "diffusion.variants_per_image = 2\n"
    "irn.width = 16\n"
    "irn.blocks = 2\n"
    "irn.steps = 40\n"
    "irn.batch = 4\n"
    "embedder.dim = 16\n"
    "embedder.steps = 80\n"
    "embedder.batch = 8\n"
    "mask.width = 16\n"
    "mask.steps = 10\n"
    "mask.batch = 2\n"
    "degrade.scale_hi = 2\n";

struct MicroEnv {
    fs::path root;
    PipelineConfig cfg;

    MicroEnv() {
        root = fs::temp_directory_path() / "latref_micro_pipeline";
        fs::remove_all(root);
        ToyFacesSpec spec;
        spec.identities = 6;
        spec.variants = 2;
        spec.size = 32;
        write_toy_corpus(root / "train", spec);
        ToyFacesSpec eval_spec = spec;
        eval_spec.variants = 1;
        eval_spec.seed = 8;  // unseen variants of the same identities
        write_toy_corpus(root / "eval", eval_spec);

        cfg = parse_config_text(kMicroConfig);
        cfg.train_dir = root / "train";
        cfg.eval_dir = root / "eval";
        cfg.out_dir = root / "run";
    }
};

MicroEnv& env() {
    static MicroEnv e;
    return e;
}

}  // namespace

TEST_CASE("stage prerequisites are enforced in order") {
    auto& e = env();
    CHECK_THROWS_WITH_AS(run_stage(e.cfg, "diffusion"), doctest::Contains("requires stage 'vq'"),
                         Error);
    CHECK_THROWS_WITH_AS(run_stage(e.cfg, "mask"), doctest::Contains("requires stage"), Error);
    CHECK_THROWS_AS(run_stage(e.cfg, "bogus"), Error);
}

TEST_CASE("four-stage micro pipeline trains, restores deterministically") {
    auto& e = env();
    StageInfo vq_info = run_stage(e.cfg, "vq");
    CHECK(fs::exists(e.cfg.stage_path("vq")));
    run_stage(e.cfg, "diffusion");
    run_stage(e.cfg, "irn");
    run_stage(e.cfg, "mask");

    RunManifest manifest = RunManifest::load(e.cfg.out_dir / "manifest.json");
    CHECK(manifest.stages.size() == 4);
    CHECK(manifest.stages.at("vq").sha256 == vq_info.sha256);
    CHECK(manifest.config_hash == e.cfg.hash());

    Stack stack = load_stack(e.cfg, true);
    Corpus eval = load_corpus(e.cfg.eval_dir, 32);
    degrade::Pair pair = degrade::make_pair(eval.images[0], 5, e.cfg.ranges, 32);

    RestoreOptions opts;
    ImageTensor a = restore(pair.degraded_upsampled, stack, e.cfg, opts, 0);
    ImageTensor b = restore(pair.degraded_upsampled, stack, e.cfg, opts, 0);
    CHECK(bit_equal(a, b));
    CHECK(a.shape() == std::vector<int>{3, 32, 32});

    // different image seed, different draw
    ImageTensor c = restore(pair.degraded_upsampled, stack, e.cfg, opts, 1);
    CHECK(!bit_equal(a, c));

    // gamma = 0 equals guidance disabled, bit for bit
    RestoreOptions zero;
    zero.gamma = 0.0f;
    RestoreOptions off;
    off.use_guidance = false;
    CHECK(bit_equal(restore(pair.degraded_upsampled, stack, e.cfg, zero, 0),
                    restore(pair.degraded_upsampled, stack, e.cfg, off, 0)));
}

TEST_CASE("rerunning a stage from the manifest config reproduces its hash") {
    auto& e = env();
    REQUIRE(fs::exists(e.cfg.out_dir / "manifest.json"));
    RunManifest manifest = RunManifest::load(e.cfg.out_dir / "manifest.json");

    PipelineConfig replay = config_from_manifest(manifest, e.root / "replay");
    StageInfo again = run_stage(replay, "vq");
    CHECK(again.sha256 == manifest.stages.at("vq").sha256);
}

TEST_CASE("ablate emits one row per arm and rejects bad input") {
    auto& e = env();
    CHECK_THROWS_AS(ablate(e.cfg, {}), Error);
    CHECK_THROWS_AS(ablate(e.cfg, {"nonsense"}), Error);

    auto rows = ablate(e.cfg, {"unguided", "guided", "guided_masked"});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].arm == "unguided");
    CHECK(rows[1].report.records.size() == 6);
    CHECK(!ablate_to_json(rows).empty());

    // vq_f32 arm needs its checkpoint first
    CHECK_THROWS_WITH_AS(ablate(e.cfg, {"vq_f32"}), doctest::Contains("vq_f32"), Error);
}

TEST_CASE("mixing configs in one output directory is rejected") {
    auto& e = env();
    PipelineConfig other = e.cfg;
    other.guidance.scale = e.cfg.guidance.scale + 1.0f;
    CHECK_THROWS_WITH_AS(run_stage(other, "vq"), doctest::Contains("different config"), Error);
}

TEST_CASE("condition latents reach training untouched") {
    auto& e = env();
    Checkpoint ck = Checkpoint::load(e.cfg.stage_path("vq"));
    vq::VqModel model = vq::VqModel::load_from(ck, e.cfg.vq);
    Corpus corpus = load_corpus(e.cfg.train_dir, 32);
    PairPools pools = build_pair_pools(corpus, e.cfg.ranges, 2, 32,
                                       mix_seed(e.cfg.seed_data, 0xD1F), &model);

    // the z_d pool rows are exactly the encoder outputs of the degraded pool
    for (int row = 0; row < 3; ++row) {
        Tensor z = model.encode(unstack(pools.degraded_images, row));
        CHECK(bit_equal(z, unstack(pools.latents.z_d, row)));
    }

    // and the dsm batch passes them through bit-identically
    Rng rng(5);
    diffusion::DsmBatch batch =
        diffusion::make_dsm_batch(pools.latents.z0, pools.latents.z_d, 0.05f, 1.0f, rng);
    CHECK(bit_equal(batch.z_d, pools.latents.z_d));
}
