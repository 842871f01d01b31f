#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "latref/checkpoint.hpp"
#include "latref/config.hpp"
#include "test_util.hpp"

using namespace latref;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "latref_test_ck";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("config parses values and rejects unknown keys") {
    PipelineConfig cfg = parse_config_text(
        "image.size = 64\n"
        "vq.f = 8            # comment\n"
        "vq.channel_mult = 1,2,2\n"
        "guidance.scale = 2.5\n"
        "guidance.use_mask = false\n"
        "seed.data = 99\n");
    CHECK(cfg.vq.f == 8);
    CHECK(cfg.vq.channel_mult == std::vector<int>{1, 2, 2});
    CHECK(cfg.guidance.scale == doctest::Approx(2.5));
    CHECK(cfg.guidance.use_mask == false);
    CHECK(cfg.seed_data == 99);

    CHECK_THROWS_WITH_AS(parse_config_text("vq.fff = 1\n"),
                         doctest::Contains("unknown key"), Error);
    CHECK_THROWS_AS(parse_config_text("vq.f\n"), Error);
    CHECK_THROWS_AS(parse_config_text("vq.f = abc\n"), Error);
}

TEST_CASE("config validation rejects inconsistent geometry") {
    CHECK_THROWS_AS(parse_config_text("vq.f = 3\n"), Error);
    CHECK_THROWS_AS(parse_config_text("image.size = 48\nvq.f = 32\n"), Error);
    CHECK_THROWS_AS(parse_config_text("diffusion.sigma_min = 0\n"), Error);
    CHECK_THROWS_AS(parse_config_text("guidance.scale = -1\n"), Error);
    CHECK_THROWS_AS(parse_config_text("degrade.quality_lo = 0\n"), Error);
}

TEST_CASE("canonical text round-trips to the same hash") {
    PipelineConfig cfg = parse_config_text("vq.f = 8\nguidance.scale = 1.25\nseed.data = 7\n");
    PipelineConfig round = parse_config_text(cfg.canonical_text());
    CHECK(cfg.hash() == round.hash());

    PipelineConfig other = parse_config_text("vq.f = 4\n");
    CHECK(cfg.hash() != other.hash());
}

TEST_CASE("checkpoint: round-trip is bit exact, manifest preserved") {
    Checkpoint ck;
    Tensor a = testutil::random_tensor({3, 5, 7}, 17);
    Tensor b = testutil::random_tensor({11}, 19);
    ck.put("alpha", a);
    ck.put("beta", b);
    ck.set_manifest("{\"stage\":\"test\"}");

    const fs::path path = temp_dir() / "round.ckpt";
    ck.save(path);
    Checkpoint back = Checkpoint::load(path);
    CHECK(bit_equal(back.get("alpha"), a));
    CHECK(bit_equal(back.get("beta"), b));
    CHECK(back.manifest() == "{\"stage\":\"test\"}");
    CHECK(back.weights_hash() == ck.weights_hash());
    CHECK_THROWS_AS(back.get("gamma"), Error);

    // no temp file left behind by the atomic write
    CHECK(!fs::exists(path.string() + ".tmp"));
}

TEST_CASE("checkpoint load rejects truncated and foreign files") {
    const fs::path dir = temp_dir();
    Checkpoint ck;
    ck.put("w", testutil::random_tensor({64}, 23));
    const fs::path path = dir / "trunc.ckpt";
    ck.save(path);

    // cut the file in half: must throw, never half-load
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const fs::path cut = dir / "cut.ckpt";
    std::ofstream out(cut, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(Checkpoint::load(cut), Error);

    const fs::path garbage = dir / "garbage.ckpt";
    std::ofstream g(garbage, std::ios::trunc);
    g << "not a checkpoint";
    g.close();
    CHECK_THROWS_AS(Checkpoint::load(garbage), Error);
}

TEST_CASE("weights hash tracks any array change") {
    Checkpoint ck;
    ck.put("w", testutil::random_tensor({16}, 29));
    const std::string before = ck.weights_hash();
    Tensor t = ck.get("w");
    t[3] += 1e-3f;
    ck.put("w", t);
    CHECK(ck.weights_hash() != before);
}

TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string("")) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
