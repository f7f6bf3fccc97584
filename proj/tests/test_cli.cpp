#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sigmae/analysis.hpp"
#include "sigmae/model.hpp"
#include "sigmae/raster.hpp"
#include "sigmae/spectral.hpp"
#include "sigmae/synthetic.hpp"
#include "test_util.hpp"

using namespace sigmae;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path out_file = scratch / "stdout.txt";
    const fs::path err_file = scratch / "stderr.txt";
    const std::string cmd = std::string(SIGMAE_CLI_PATH) + " " + args + " > " +
                            out_file.string() + " 2> " + err_file.string();
    const int raw = std::system(cmd.c_str());
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    CliResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

// 16x16 scenes keep CLI-level training fast
const char* kTinyConfig = R"({
  "seed": 7,
  "model": {"embed_dim": 8, "encoder_depth": 1, "decoder_dim": 8, "decoder_depth": 1,
            "heads": 2, "mlp_ratio": 2, "patch_side": 4, "channels": 10, "image_side": 16},
  "train": {"total_epochs": 2, "warmup_epochs": 1, "batch_size": 4, "mask_ratio": 0.75}
})";

const char* kTinyScene = R"({"side": 16, "seed": 7})";

} // namespace

TEST_CASE("gen-data writes corpora and fails loudly on bad specs") {
    const auto dir = testutil::temp_dir("cli_gen");

    SECTION("a single scene") {
        const auto r = run_cli("gen-data --n 1 --out " + (dir / "one").string(), dir);
        REQUIRE(r.exit_code == 0);
        const Corpus c = load_corpus((dir / "one").string());
        REQUIRE(c.images.size() == 1);
    }
    SECTION("invalid spec file exits nonzero with a parse message") {
        write_text(dir / "bad.json", "{ nope");
        const auto r = run_cli("gen-data --spec " + (dir / "bad.json").string() + " --n 1 --out " +
                                   (dir / "x").string(),
                               dir);
        REQUIRE(r.exit_code == 2);
        REQUIRE(r.err.find("JSON") != std::string::npos);
    }
    SECTION("manifest lists every file") {
        const auto r = run_cli("gen-data --n 4 --out " + (dir / "four").string(), dir);
        REQUIRE(r.exit_code == 0);
        nlohmann::json manifest;
        std::ifstream((dir / "four" / "manifest.json")) >> manifest;
        REQUIRE(manifest["files"].size() == 4);
    }
}

TEST_CASE("indices subcommand matches the library bitwise") {
    const auto dir = testutil::temp_dir("cli_idx");
    SceneSpec spec;
    spec.side = 16;
    const Raster img = generate_scene(spec, 3);
    save_raster(img, (dir / "scene.msr").string());

    const auto r = run_cli("indices --in " + (dir / "scene.msr").string() + " --out " +
                               (dir / "idx.msr").string(),
                           dir);
    REQUIRE(r.exit_code == 0);

    const Raster out = load_raster((dir / "idx.msr").string());
    REQUIRE(out.channels == 3);
    REQUIRE(out.bands[0].name == "NDVI");
    REQUIRE(out.bands[1].name == "NDWI");
    REQUIRE(out.bands[2].name == "NDBI");

    const auto kt = compute_knowledge_tensor(img, default_index_kinds(), BandMap{});
    const Raster expect = knowledge_to_raster(kt, default_index_kinds(), 10.0);
    REQUIRE(out.data == expect.data);

    SECTION("constant raster gives three constant planes") {
        Raster flat = img;
        for (std::size_t c = 0; c < flat.channels; ++c)
            for (std::size_t i = 0; i < flat.pixel_count(); ++i)
                flat.data[c * flat.pixel_count() + i] = 0.25f;
        save_raster(flat, (dir / "flat.msr").string());
        REQUIRE(run_cli("indices --in " + (dir / "flat.msr").string() + " --out " +
                            (dir / "flat_idx.msr").string(),
                        dir)
                    .exit_code == 0);
        const Raster fo = load_raster((dir / "flat_idx.msr").string());
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 1; i < fo.pixel_count(); ++i)
                REQUIRE(fo.data[c * fo.pixel_count() + i] == fo.data[c * fo.pixel_count()]);
    }
}

TEST_CASE("mask-plan emits deterministic JSON") {
    const auto dir = testutil::temp_dir("cli_plan");
    SceneSpec spec; // 64x64 -> L = 64 at P = 8
    save_raster(generate_scene(spec, 0), (dir / "scene.msr").string());
    const std::string base = "mask-plan --in " + (dir / "scene.msr").string() +
                             " --epoch 10 --epochs 50 --ratio 0.75 --seed 9";

    const auto r1 = run_cli(base + " --out " + (dir / "a.json").string(), dir);
    REQUIRE(r1.exit_code == 0);
    nlohmann::json plan;
    std::ifstream((dir / "a.json")) >> plan;
    REQUIRE(plan["masked"].size() == 48);
    REQUIRE(plan["num_patches"] == 64);

    const auto r2 = run_cli(base + " --out " + (dir / "b.json").string(), dir);
    REQUIRE(r2.exit_code == 0);
    REQUIRE(file_bytes(dir / "a.json") == file_bytes(dir / "b.json"));

    const auto r3 = run_cli("mask-plan --in " + (dir / "scene.msr").string() +
                                " --epoch 50 --epochs 50 --ratio 0.75 --out " +
                                (dir / "c.json").string(),
                            dir);
    REQUIRE(r3.exit_code == 0);
    nlohmann::json end_plan;
    std::ifstream((dir / "c.json")) >> end_plan;
    REQUIRE(end_plan["gamma"] == 1.0);
}

TEST_CASE("pretrain subcommand trains, logs and checkpoints") {
    const auto dir = testutil::temp_dir("cli_pretrain");
    write_text(dir / "config.json", kTinyConfig);
    write_text(dir / "scene.json", kTinyScene);
    REQUIRE(run_cli("gen-data --spec " + (dir / "scene.json").string() + " --n 8 --out " +
                        (dir / "data").string(),
                    dir)
                .exit_code == 0);

    const std::string common = "--config " + (dir / "config.json").string() + " pretrain";
    const std::string data = " --data " + (dir / "data").string();

    SECTION("csv has one row per epoch") {
        const auto r = run_cli(common + data + " --out " + (dir / "run").string(), dir);
        REQUIRE(r.exit_code == 0);
        std::ifstream csv(dir / "run" / "train_log.csv");
        std::string line;
        std::getline(csv, line);
        std::size_t rows = 0;
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        REQUIRE(rows == 2);
        REQUIRE(fs::exists(dir / "run" / "final.ckpt"));
    }

    SECTION("strategies share the init and diverge afterwards") {
        REQUIRE(run_cli(common + data + " --strategy ssdtm --out " + (dir / "s").string(), dir)
                    .exit_code == 0);
        REQUIRE(run_cli(common + data + " --strategy random --out " + (dir / "r").string(), dir)
                    .exit_code == 0);
        REQUIRE(checkpoint_hash((dir / "s" / "init.ckpt").string()) ==
                checkpoint_hash((dir / "r" / "init.ckpt").string()));
        REQUIRE(file_bytes(dir / "s" / "train_log.csv") !=
                file_bytes(dir / "r" / "train_log.csv"));
    }

    SECTION("missing dataset fails before any compute") {
        const auto r = run_cli(common + " --data " + (dir / "nowhere").string() + " --out " +
                                   (dir / "no").string(),
                               dir);
        REQUIRE(r.exit_code == 3);
        REQUIRE_FALSE(fs::exists(dir / "no" / "train_log.csv"));
    }
}

TEST_CASE("reconstruct round trip on an untrained checkpoint") {
    const auto dir = testutil::temp_dir("cli_recon");
    write_text(dir / "config.json", kTinyConfig);
    write_text(dir / "scene.json", kTinyScene);
    REQUIRE(run_cli("gen-data --spec " + (dir / "scene.json").string() + " --n 4 --out " +
                        (dir / "data").string(),
                    dir)
                .exit_code == 0);
    REQUIRE(run_cli("--config " + (dir / "config.json").string() + " pretrain --data " +
                        (dir / "data").string() + " --out " + (dir / "run").string(),
                    dir)
                .exit_code == 0);

    const auto r = run_cli("reconstruct --checkpoint " + (dir / "run" / "init.ckpt").string() +
                               " --in " + (dir / "data" / "0000.msr").string() +
                               " --epoch 1 --out " + (dir / "recon").string(),
                           dir);
    REQUIRE(r.exit_code == 0);

    const Raster original = load_raster((dir / "recon" / "original.msr").string());
    const Raster reconstructed = load_raster((dir / "recon" / "reconstructed.msr").string());
    const Raster masked = load_raster((dir / "recon" / "masked.msr").string());
    for (float v : reconstructed.data) REQUIRE(std::isfinite(v));

    // printed loss agrees with an independent recomputation from the files
    nlohmann::json plan_json;
    std::ifstream((dir / "recon" / "plan.json")) >> plan_json;
    const MaskPlan plan = mask_plan_from_json(plan_json);
    Reconstruction rec;
    rec.image_hat = reconstructed;
    const double recomputed = reconstruction_loss(original, rec, plan);
    const double printed = std::stod(r.out.substr(r.out.find("loss") + 4));
    REQUIRE(printed == Catch::Approx(recomputed).margin(1e-6));

    // sentinel count in the masked export
    std::size_t sentinels = 0;
    for (float v : masked.data) sentinels += v == 2.0f ? 1 : 0;
    REQUIRE(sentinels == plan.num_masked() * 16 * masked.channels);
}

TEST_CASE("analyze modes write their reports") {
    const auto dir = testutil::temp_dir("cli_analyze");
    write_text(dir / "config.json", kTinyConfig);
    write_text(dir / "scene.json", kTinyScene);
    REQUIRE(run_cli("gen-data --spec " + (dir / "scene.json").string() + " --n 6 --out " +
                        (dir / "data").string(),
                    dir)
                .exit_code == 0);
    const std::string common =
        "--config " + (dir / "config.json").string() + " analyze --corpus " +
        (dir / "data").string();

    SECTION("ssm") {
        REQUIRE(run_cli(common + " --mode ssm --out " + (dir / "ssm").string(), dir).exit_code ==
                0);
        nlohmann::json rep;
        std::ifstream((dir / "ssm" / "ssm_report.json")) >> rep;
        REQUIRE(rep["ssm"]["count"] == 6 * 16);
    }
    SECTION("curriculum") {
        REQUIRE(run_cli(common + " --mode curriculum --draws 60 --out " + (dir / "cur").string(),
                        dir)
                    .exit_code == 0);
        std::ifstream csv(dir / "cur" / "curriculum.csv");
        std::string line;
        std::getline(csv, line);
        std::size_t rows = 0;
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        REQUIRE(rows == 10);
    }
    SECTION("sweep over the quoted ratios") {
        REQUIRE(run_cli(common + " --mode sweep --ratios 0.5 0.75 0.9 --out " +
                            (dir / "sweep").string(),
                        dir)
                    .exit_code == 0);
        nlohmann::json rep;
        std::ifstream((dir / "sweep" / "report.json")) >> rep;
        REQUIRE(rep["sweep"].size() == 3);
    }
    SECTION("unknown mode is a config error") {
        REQUIRE(run_cli(common + " --mode bogus --out " + (dir / "x").string(), dir).exit_code ==
                2);
    }
}

TEST_CASE("config files reject unknown keys") {
    const auto dir = testutil::temp_dir("cli_config");
    write_text(dir / "bad.json", R"({"seed": 1, "modle": {}})");
    const auto r = run_cli("--config " + (dir / "bad.json").string() + " gen-data --n 1 --out " +
                               (dir / "x").string(),
                           dir);
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("modle") != std::string::npos);
}
