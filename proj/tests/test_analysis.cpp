#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "sigmae/analysis.hpp"
#include "sigmae/synthetic.hpp"
#include "test_util.hpp"

using namespace sigmae;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.encoder_depth = 1;
    cfg.decoder_dim = 8;
    cfg.decoder_depth = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.patch_side = 4;
    cfg.channels = 10;
    cfg.image_side = 16;
    return cfg;
}

TrainConfig small_train(int epochs) {
    TrainConfig cfg;
    cfg.total_epochs = epochs;
    cfg.warmup_epochs = epochs > 1 ? 1 : 0;
    cfg.batch_size = 4;
    cfg.seed = 11;
    return cfg;
}

std::vector<Raster> small_corpus(std::size_t n, std::size_t side = 16) {
    SceneSpec spec;
    spec.side = side;
    std::vector<Raster> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(spec, i));
    return out;
}

} // namespace

TEST_CASE("rank and moment helpers") {
    REQUIRE(average_ranks({10.0, 20.0, 20.0, 30.0}) ==
            std::vector<double>{1.0, 2.5, 2.5, 4.0});
    REQUIRE(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == -1.0);
    REQUIRE(spearman({1, 2, 3, 4}, {1, 2, 3, 4}) == 1.0);
    REQUIRE(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == Catch::Approx(0.8).margin(1e-12));

    REQUIRE(skewness({1.0, 2.0, 3.0}) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(skewness({1.0, 1.0, 1.0, 10.0}) > 0.0);
    REQUIRE(skewness({5.0, 5.0, 5.0, 5.0}) == 0.0);

    const Histogram h = histogram({0.0, 0.5, 1.0, 1.0}, 4);
    REQUIRE(h.total() == 4);
    REQUIRE(h.counts == std::vector<std::size_t>{1, 0, 1, 2});
}

TEST_CASE("distribution report basics") {
    SECTION("degenerate sample occupies a single bin with zero skewness") {
        const auto rep = make_distribution(std::vector<double>(32, 1.5), 10);
        std::size_t occupied = 0;
        for (auto c : rep.hist.counts) occupied += c > 0 ? 1 : 0;
        REQUIRE(occupied == 1);
        REQUIRE(rep.skewness == 0.0);
        REQUIRE(rep.stddev == 0.0);
        REQUIRE(rep.count == 32);
    }
    SECTION("counts always sum to the sample size") {
        Rng rng(3);
        std::vector<double> v(257);
        for (auto& x : v) x = rng.next_unit();
        REQUIRE(make_distribution(v, 100).hist.total() == v.size());
    }
}

TEST_CASE("ssm pooling over a corpus") {
    SECTION("uniform corpus degenerates to one bin") {
        SceneSpec spec;
        spec.side = 16;
        spec.min_regions = spec.max_regions = 0;
        spec.background.jitter_std = 0.0;
        std::vector<Raster> corpus = {generate_scene(spec, 0)};
        const auto rep = ssm_distribution(corpus, BandMap{}, 4, 1e-8, 20);
        std::size_t occupied = 0;
        for (auto c : rep.ssm.hist.counts) occupied += c > 0 ? 1 : 0;
        REQUIRE(occupied == 1);
        REQUIRE(rep.ssm.skewness == 0.0);
        REQUIRE(rep.patches_per_image == 16);
    }
    SECTION("mixed regions with zero jitter split into separated modes") {
        SceneSpec spec;
        spec.side = 16;
        spec.min_regions = spec.max_regions = 2;
        spec.background.jitter_std = 0.0;
        for (auto& c : spec.classes) c.jitter_std = 0.0;
        std::vector<Raster> corpus = {generate_scene(spec, 5)};
        const auto saliency = semantic_saliency(
            patch_stats(patchify_knowledge(
                compute_knowledge_tensor(corpus[0], default_index_kinds(), BandMap{}), 4)),
            1e-8);
        const std::set<double> distinct(saliency.q_raw.begin(), saliency.q_raw.end());
        REQUIRE(distinct.size() >= 2);
        // interior sigma-zero patches dwarf boundary patches
        const auto [lo, hi] = std::minmax_element(saliency.q_raw.begin(), saliency.q_raw.end());
        REQUIRE(*hi > 100.0 * std::max(*lo, 1e-12));
    }
    SECTION("report carries all three pooled panels") {
        const auto corpus = small_corpus(4);
        const auto rep = ssm_distribution(corpus, BandMap{}, 4, 1e-8);
        REQUIRE(rep.images == 4);
        REQUIRE(rep.index_values.count == 4u * 3u * 16u * 16u);
        REQUIRE(rep.semantic_richness.count == 4u * 16u * 16u);
        REQUIRE(rep.ssm.count == 4u * 16u);
        const auto j = ssm_report_to_json(rep);
        REQUIRE(j.contains("ssm"));
        REQUIRE(j.contains("index_values"));
        REQUIRE(j.contains("semantic_richness"));
    }
}

TEST_CASE("curriculum trace endpoints and monotone decay") {
    const auto corpus = small_corpus(4);
    const auto points =
        curriculum_trace(corpus, BandMap{}, 50, 0.75, 1e-8, 4, 23, 300);
    REQUIRE(points.size() == 10);

    for (std::size_t i = 0; i < points.size(); ++i) {
        INFO("gamma " << points[i].gamma);
        REQUIRE(points[i].draws == 300);
        if (i > 0) REQUIRE(points[i].mean_spearman <= points[i - 1].mean_spearman + 0.05);
    }
    // gamma 0.5: pure noise
    REQUIRE(std::abs(points[4].mean_spearman) < 0.1);
    // gamma 1: exact reversal regardless of noise
    REQUIRE(points[9].mean_spearman == -1.0);
    REQUIRE(points[9].std_spearman == 0.0);
    REQUIRE(points[9].top_decile_masked_fraction == 0.0);
    // early phase masks the salient patches
    REQUIRE(points[0].top_decile_masked_fraction > 0.9);
}

TEST_CASE("strategy comparison shares initialization") {
    const auto dir = testutil::temp_dir("compare");
    const auto corpus = small_corpus(4);

    SECTION("single strategy yields one full curve") {
        const auto report = compare_strategies(small_model(), small_train(3),
                                               {Strategy::random}, corpus, BandMap{});
        REQUIRE(report.runs.size() == 1);
        REQUIRE(report.runs[0].name == "random");
        REQUIRE(report.runs[0].log.epochs.size() == 3);
        REQUIRE(report.runs[0].final_loss == report.runs[0].log.epochs.back().mean_loss);
    }

    SECTION("two strategies, same seed, identical init checkpoints") {
        const auto report =
            compare_strategies(small_model(), small_train(2), {Strategy::ssdtm, Strategy::random},
                               corpus, BandMap{}, dir.string());
        REQUIRE(report.runs.size() == 2);
        REQUIRE(report.runs[0].log.init_hash == report.runs[1].log.init_hash);
        REQUIRE(checkpoint_hash((dir / "ssdtm" / "init.ckpt").string()) ==
                checkpoint_hash((dir / "random" / "init.ckpt").string()));
        for (const auto& run : report.runs)
            for (const auto& e : run.log.epochs) REQUIRE(std::isfinite(e.mean_loss));

        const auto j = comparison_to_json(report);
        REQUIRE(j["strategies"].size() == 2);
        write_comparison_csv(report, (dir / "report.csv").string());
        std::ifstream csv(dir / "report.csv");
        std::string line;
        std::getline(csv, line);
        REQUIRE(line == "strategy,epoch,loss,lr,gamma");
        std::size_t rows = 0;
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        REQUIRE(rows == 4); // 2 strategies x 2 epochs
    }
}

TEST_CASE("mask overlay exports") {
    const auto dir = testutil::temp_dir("overlay");
    const auto corpus = small_corpus(1);
    const auto pk = patchify_knowledge(
        compute_knowledge_tensor(corpus[0], default_index_kinds(), BandMap{}), 4);

    SECTION("empty mask: export equals the input") {
        MaskPlan plan;
        plan.patch_side = 4;
        plan.height = plan.width = 16;
        plan.num_patches = 16;
        plan.binary.assign(256, 0);
        mask_overlay_export(corpus[0], plan, (dir / "same.msr").string());
        REQUIRE(load_raster((dir / "same.msr").string()) == corpus[0]);
    }
    SECTION("full mask: all sentinel") {
        MaskPlan plan;
        plan.patch_side = 4;
        plan.height = plan.width = 16;
        plan.num_patches = 16;
        plan.binary.assign(256, 1);
        mask_overlay_export(corpus[0], plan, (dir / "full.msr").string(), 2.0);
        for (float v : load_raster((dir / "full.msr").string()).data) REQUIRE(v == 2.0f);
    }
    SECTION("checkerboard layout lands on the right pixels") {
        Raster img = testutil::random_raster(1, 4, 4, 5);
        MaskPlan plan;
        plan.patch_side = 2;
        plan.height = plan.width = 4;
        plan.num_patches = 4;
        plan.masked = {0, 3};
        plan.binary = binary_mask(plan.masked, 2, 4, 4);
        mask_overlay_export(img, plan, (dir / "checker.msr").string(), 2.0);
        const Raster out = load_raster((dir / "checker.msr").string());
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) {
                const bool masked = (y < 2 && x < 2) || (y >= 2 && x >= 2);
                if (masked)
                    REQUIRE(out.at(0, y, x) == 2.0f);
                else
                    REQUIRE(out.at(0, y, x) == img.at(0, y, x));
            }
    }
}

TEST_CASE("mask ratio sweep produces decodable triptychs") {
    const auto dir = testutil::temp_dir("sweep");
    const auto corpus = small_corpus(4);
    const auto points = mask_ratio_sweep(small_model(), small_train(2), {0.5, 0.75}, corpus,
                                         BandMap{}, dir.string());
    REQUIRE(points.size() == 2);
    REQUIRE(points[0].visible_tokens == 8);  // L = 16
    REQUIRE(points[1].visible_tokens == 4);
    for (const auto& pt : points) {
        REQUIRE(std::isfinite(pt.final_loss));
        REQUIRE(pt.exports.size() == 3);
        for (const auto& path : pt.exports) REQUIRE_NOTHROW(load_raster(path));
    }
    // sentinel count in the masked export: one sentinel per masked pixel per channel
    const Raster masked = load_raster((dir / "ratio_75" / "masked.msr").string());
    std::size_t sentinels = 0;
    for (float v : masked.data) sentinels += v == 2.0f ? 1 : 0;
    REQUIRE(sentinels == points[1].masked_tokens * 4 * 4 * masked.channels);
}
