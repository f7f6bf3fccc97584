// Command-line entry point for corpus generation, spectral indices,
// mask planning, pretraining, reconstruction and analysis.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sigmae/analysis.hpp"
#include "sigmae/errors.hpp"
#include "sigmae/model.hpp"
#include "sigmae/patchify.hpp"
#include "sigmae/raster.hpp"
#include "sigmae/spectral.hpp"
#include "sigmae/ssdtm.hpp"
#include "sigmae/synthetic.hpp"
#include "sigmae/trainer.hpp"

namespace {

using nlohmann::json;

struct CliConfig {
    std::uint64_t seed = 42;
    sigmae::ModelConfig model;
    sigmae::TrainConfig train;
    sigmae::SceneSpec scene;
    sigmae::BandMap bands;
};

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok)
            throw sigmae::config_error("unknown key '" + it.key() + "' in " + where);
    }
}

sigmae::BandMap band_map_from_json(const json& j) {
    reject_unknown(j, {"Red", "Green", "NIR", "SWIR1"}, "bands");
    sigmae::BandMap map;
    using sigmae::BandRole;
    if (j.contains("Red")) map.set(BandRole::Red, j["Red"].get<std::string>());
    if (j.contains("Green")) map.set(BandRole::Green, j["Green"].get<std::string>());
    if (j.contains("NIR")) map.set(BandRole::NIR, j["NIR"].get<std::string>());
    if (j.contains("SWIR1")) map.set(BandRole::SWIR1, j["SWIR1"].get<std::string>());
    return map;
}

sigmae::ModelConfig model_config_from_json(const json& j) {
    reject_unknown(j,
                   {"embed_dim", "encoder_depth", "decoder_dim", "decoder_depth", "heads",
                    "mlp_ratio", "patch_side", "channels", "image_side"},
                   "model");
    sigmae::ModelConfig m;
    if (j.contains("embed_dim")) m.embed_dim = j["embed_dim"].get<std::size_t>();
    if (j.contains("encoder_depth")) m.encoder_depth = j["encoder_depth"].get<std::size_t>();
    if (j.contains("decoder_dim")) m.decoder_dim = j["decoder_dim"].get<std::size_t>();
    if (j.contains("decoder_depth")) m.decoder_depth = j["decoder_depth"].get<std::size_t>();
    if (j.contains("heads")) m.heads = j["heads"].get<std::size_t>();
    if (j.contains("mlp_ratio")) m.mlp_ratio = j["mlp_ratio"].get<std::size_t>();
    if (j.contains("patch_side")) m.patch_side = j["patch_side"].get<std::size_t>();
    if (j.contains("channels")) m.channels = j["channels"].get<std::size_t>();
    if (j.contains("image_side")) m.image_side = j["image_side"].get<std::size_t>();
    return m;
}

sigmae::TrainConfig train_config_from_json(const json& j) {
    reject_unknown(j,
                   {"total_epochs", "base_lr", "weight_decay", "beta1", "beta2",
                    "warmup_epochs", "warmup_lr", "batch_size", "mask_ratio", "epsilon",
                    "strategy", "static_gamma", "grad_clip", "checkpoint_every", "dataset",
                    "out"},
                   "train");
    sigmae::TrainConfig t;
    if (j.contains("total_epochs")) t.total_epochs = j["total_epochs"].get<int>();
    if (j.contains("base_lr")) t.base_lr = j["base_lr"].get<double>();
    if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("beta1")) t.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) t.beta2 = j["beta2"].get<double>();
    if (j.contains("warmup_epochs")) t.warmup_epochs = j["warmup_epochs"].get<int>();
    if (j.contains("warmup_lr")) t.warmup_lr = j["warmup_lr"].get<double>();
    if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("mask_ratio")) t.mask_ratio = j["mask_ratio"].get<double>();
    if (j.contains("epsilon")) t.epsilon = j["epsilon"].get<double>();
    if (j.contains("strategy")) t.strategy = sigmae::parse_strategy(j["strategy"].get<std::string>());
    if (j.contains("static_gamma")) t.static_gamma = j["static_gamma"].get<double>();
    if (j.contains("grad_clip")) t.grad_clip = j["grad_clip"].get<double>();
    if (j.contains("checkpoint_every")) t.checkpoint_every = j["checkpoint_every"].get<int>();
    if (j.contains("dataset")) t.dataset_dir = j["dataset"].get<std::string>();
    if (j.contains("out")) t.out_dir = j["out"].get<std::string>();
    return t;
}

CliConfig load_cli_config(const std::string& path) {
    CliConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw sigmae::config_error("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw sigmae::config_error("config file " + path + " is not valid JSON: " + e.what());
    }
    reject_unknown(j, {"seed", "model", "train", "scene", "bands"}, "config");
    try {
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("model")) cfg.model = model_config_from_json(j["model"]);
        if (j.contains("train")) cfg.train = train_config_from_json(j["train"]);
        if (j.contains("scene")) cfg.scene = sigmae::scene_spec_from_json(j["scene"]);
        if (j.contains("bands")) cfg.bands = band_map_from_json(j["bands"]);
    } catch (const json::exception& e) {
        throw sigmae::config_error("config file " + path + ": " + e.what());
    }
    cfg.model.validate();
    cfg.train.seed = cfg.seed;
    cfg.train.validate();
    return cfg;
}

// The paper-table pretraining profile; network dims stay desk scale.
void apply_paper_profile(CliConfig& cfg) {
    cfg.train.total_epochs = 1000;
    cfg.train.base_lr = 1e-4;
    cfg.train.weight_decay = 0.05;
    cfg.train.beta1 = 0.9;
    cfg.train.beta2 = 0.95;
    cfg.train.warmup_epochs = 20;
    cfg.train.warmup_lr = 1e-6;
    cfg.train.batch_size = 900;
    cfg.model.image_side = 120;
    cfg.model.patch_side = 8;
    cfg.scene.side = 120;
}

sigmae::SceneSpec load_scene_spec(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw sigmae::config_error("cannot open scene spec " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw sigmae::config_error("scene spec " + path + " is not valid JSON: " + e.what());
    }
    return sigmae::scene_spec_from_json(j);
}

void write_json(const nlohmann::ordered_json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw sigmae::data_error("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out) throw sigmae::data_error("failed writing " + path);
}

int run_gen_data(const std::string& spec_path, std::size_t n, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
    sigmae::SceneSpec spec = load_scene_spec(spec_path);
    if (seed) spec.seed = *seed;
    sigmae::generate_corpus(spec, n, out_dir);
    std::printf("wrote %zu scenes to %s\n", n, out_dir.c_str());
    return 0;
}

int run_indices(const std::string& in_path, const std::string& out_path,
                const std::string& bands_path) {
    sigmae::BandMap map;
    if (!bands_path.empty()) {
        std::ifstream in(bands_path);
        if (!in) throw sigmae::config_error("cannot open band map " + bands_path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw sigmae::config_error("band map " + bands_path + " is not valid JSON: " +
                                       e.what());
        }
        map = band_map_from_json(j);
    }
    const sigmae::Raster raster = sigmae::load_raster(in_path);
    const auto kt = sigmae::compute_knowledge_tensor(raster, sigmae::default_index_kinds(), map);
    sigmae::save_raster(
        sigmae::knowledge_to_raster(kt, sigmae::default_index_kinds(),
                                    raster.bands.front().resolution_m),
        out_path);
    std::printf("wrote %zu-band index raster to %s\n", kt.num_indices, out_path.c_str());
    return 0;
}

int run_mask_plan(const std::string& in_path, int epoch, int total_epochs, double ratio,
                  std::uint64_t seed, std::size_t patch_side, double epsilon,
                  const std::string& out_path, const std::string& overlay_path,
                  const sigmae::BandMap& bands) {
    const sigmae::Raster raster = sigmae::load_raster(in_path);
    const auto pk = sigmae::patchify_knowledge(
        sigmae::compute_knowledge_tensor(raster, sigmae::default_index_kinds(), bands),
        patch_side);
    const auto plan = sigmae::plan_masking(pk, epoch, total_epochs, ratio, epsilon, seed, 0);
    write_json(sigmae::mask_plan_to_json(plan), out_path);
    if (!overlay_path.empty()) sigmae::mask_overlay_export(raster, plan, overlay_path);
    std::printf("masked %zu of %zu patches (gamma %.6g) -> %s\n", plan.num_masked(),
                plan.num_patches, plan.gamma, out_path.c_str());
    return 0;
}

int run_pretrain(CliConfig cfg, const std::string& strategy_flag, const std::string& data_flag,
                 const std::string& out_flag) {
    if (!strategy_flag.empty()) cfg.train.strategy = sigmae::parse_strategy(strategy_flag);
    if (!data_flag.empty()) cfg.train.dataset_dir = data_flag;
    if (!out_flag.empty()) cfg.train.out_dir = out_flag;
    if (cfg.train.dataset_dir.empty())
        throw sigmae::config_error("pretrain needs a dataset (config train.dataset or --data)");
    if (cfg.train.out_dir.empty())
        throw sigmae::config_error("pretrain needs an output directory (config train.out or --out)");
    cfg.train.validate();
    const sigmae::Corpus corpus = sigmae::load_corpus(cfg.train.dataset_dir);
    std::filesystem::create_directories(cfg.train.out_dir);
    auto result = sigmae::pretrain(cfg.model, cfg.train, corpus.images, cfg.bands);
    std::printf("pretrained %s for %d epochs: first %.6g final %.6g -> %s\n",
                sigmae::strategy_name(cfg.train.strategy), cfg.train.total_epochs,
                result.log.epochs.front().mean_loss, result.log.epochs.back().mean_loss,
                cfg.train.out_dir.c_str());
    return 0;
}

int run_reconstruct(const std::string& ckpt_path, const std::string& in_path, int epoch,
                    const std::string& out_dir, const sigmae::BandMap& bands,
                    std::optional<std::uint64_t> seed_flag) {
    const sigmae::Checkpoint ck = sigmae::load_checkpoint(ckpt_path);
    const sigmae::Raster image = sigmae::load_raster(in_path);
    const auto& cfg = ck.params.config;
    if (image.channels != cfg.channels || image.height != cfg.image_side ||
        image.width != cfg.image_side)
        throw sigmae::config_error(
            "input raster " + std::to_string(image.channels) + "x" +
            std::to_string(image.height) + "x" + std::to_string(image.width) +
            " does not match checkpoint model " + std::to_string(cfg.channels) + "x" +
            std::to_string(cfg.image_side) + "x" + std::to_string(cfg.image_side));

    const std::uint64_t seed = seed_flag ? *seed_flag : ck.meta.seed;
    const auto pk = sigmae::patchify_knowledge(
        sigmae::compute_knowledge_tensor(image, sigmae::default_index_kinds(), bands),
        cfg.patch_side);
    const auto plan = sigmae::plan_masking(pk, epoch, ck.meta.total_epochs, ck.meta.mask_ratio,
                                           ck.meta.epsilon, seed, 0);

    const auto seq = sigmae::patchify_image(image, cfg.patch_side);
    sigmae::ad::Tape tape;
    const auto leaves = sigmae::param_leaves(tape, ck.params, false);
    const auto fwd = sigmae::mae_forward(tape, leaves, ck.params, seq, plan);
    const auto recon = sigmae::decode_full(tape.val(fwd.h_e), plan, ck.params, image.bands);

    std::filesystem::create_directories(out_dir);
    sigmae::save_raster(image, out_dir + "/original.msr");
    sigmae::mask_overlay_export(image, plan, out_dir + "/masked.msr");
    sigmae::save_raster(recon.image_hat, out_dir + "/reconstructed.msr");
    write_json(sigmae::mask_plan_to_json(plan), out_dir + "/plan.json");
    std::printf("loss %.17g\n", tape.scalar_val(fwd.loss));
    return 0;
}

int run_analyze(const CliConfig& cfg, const std::string& corpus_dir, const std::string& mode,
                const std::string& out_dir, const std::vector<double>& ratios,
                std::size_t draws) {
    const sigmae::Corpus corpus = sigmae::load_corpus(corpus_dir);
    std::filesystem::create_directories(out_dir);
    if (mode == "ssm") {
        const auto rep = sigmae::ssm_distribution(corpus.images, cfg.bands,
                                                  cfg.model.patch_side, cfg.train.epsilon);
        write_json(sigmae::ssm_report_to_json(rep), out_dir + "/ssm_report.json");
        std::printf("ssm report: %zu patches, skewness %.4f -> %s/ssm_report.json\n",
                    rep.ssm.count, rep.ssm.skewness, out_dir.c_str());
        return 0;
    }
    if (mode == "curriculum") {
        std::vector<sigmae::Raster> sample(
            corpus.images.begin(),
            corpus.images.begin() + std::min<std::size_t>(corpus.images.size(), 8));
        const auto points = sigmae::curriculum_trace(
            sample, cfg.bands, cfg.train.total_epochs, cfg.train.mask_ratio, cfg.train.epsilon,
            cfg.model.patch_side, cfg.seed, draws);
        sigmae::write_curriculum_csv(points, out_dir + "/curriculum.csv");
        auto arr = nlohmann::ordered_json::array();
        for (const auto& p : points)
            arr.push_back({{"gamma", p.gamma},
                           {"epoch", p.epoch},
                           {"mean_spearman", p.mean_spearman},
                           {"std_spearman", p.std_spearman},
                           {"top_decile_masked_fraction", p.top_decile_masked_fraction},
                           {"draws", p.draws}});
        write_json(nlohmann::ordered_json{{"points", arr}}, out_dir + "/curriculum.json");
        std::printf("curriculum trace over %zu gamma points -> %s/curriculum.csv\n",
                    points.size(), out_dir.c_str());
        return 0;
    }
    if (mode == "compare") {
        const std::vector<sigmae::Strategy> strategies = {
            sigmae::Strategy::ssdtm, sigmae::Strategy::random,
            sigmae::Strategy::ssdtm_no_noise, sigmae::Strategy::ssdtm_static};
        const auto report = sigmae::compare_strategies(cfg.model, cfg.train, strategies,
                                                       corpus.images, cfg.bands, out_dir);
        write_json(sigmae::comparison_to_json(report), out_dir + "/report.json");
        sigmae::write_comparison_csv(report, out_dir + "/report.csv");
        std::printf("compared %zu strategies -> %s/report.json\n", report.runs.size(),
                    out_dir.c_str());
        return 0;
    }
    if (mode == "sweep") {
        sigmae::ComparisonReport report;
        report.sweep = sigmae::mask_ratio_sweep(cfg.model, cfg.train, ratios, corpus.images,
                                                cfg.bands, out_dir);
        write_json(sigmae::comparison_to_json(report), out_dir + "/report.json");
        std::printf("swept %zu mask ratios -> %s/report.json\n", report.sweep.size(),
                    out_dir.c_str());
        return 0;
    }
    throw sigmae::config_error("unknown analyze mode '" + mode +
                               "' (expected ssm, curriculum, compare or sweep)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral-index-guided dynamic token masking for masked-autoencoder "
                 "pretraining"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_flag;
    std::string profile = "desk";
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed_flag, "override the global seed");
    app.add_option("--profile", profile, "hyperparameter profile: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    std::string gen_spec, gen_out;
    std::size_t gen_n = 256;
    gen->add_option("--spec", gen_spec, "scene spec JSON (defaults apply when omitted)");
    gen->add_option("--n", gen_n, "number of scenes");
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* idx = app.add_subcommand("indices", "compute NDVI/NDWI/NDBI for one raster");
    std::string idx_in, idx_out, idx_bands;
    idx->add_option("--in", idx_in, "input raster (.msr)")->required();
    idx->add_option("--out", idx_out, "output raster (.msr)")->required();
    idx->add_option("--bands", idx_bands, "band map JSON (role -> band name)");

    auto* mp = app.add_subcommand("mask-plan", "emit one epoch's mask plan as JSON");
    std::string mp_in, mp_out, mp_overlay;
    int mp_epoch = 1, mp_epochs = 50;
    double mp_ratio = 0.75, mp_eps = 1e-8;
    std::size_t mp_patch = 8;
    mp->add_option("--in", mp_in, "input raster (.msr)")->required();
    mp->add_option("--epoch", mp_epoch, "epoch index (1-based)");
    mp->add_option("--epochs", mp_epochs, "total epochs E");
    mp->add_option("--ratio", mp_ratio, "mask ratio p_m");
    mp->add_option("--patch", mp_patch, "patch side P");
    mp->add_option("--epsilon", mp_eps, "SSM stabilizer");
    mp->add_option("--out", mp_out, "output plan JSON")->required();
    mp->add_option("--overlay", mp_overlay, "also write a sentinel overlay raster");

    auto* pt = app.add_subcommand("pretrain", "run the pretraining loop");
    std::string pt_strategy, pt_data, pt_out;
    pt->add_option("--strategy", pt_strategy,
                   "ssdtm, random, ssdtm_no_noise or ssdtm_static");
    pt->add_option("--data", pt_data, "corpus directory (overrides config)");
    pt->add_option("--out", pt_out, "output directory (overrides config)");

    auto* rc = app.add_subcommand("reconstruct", "reconstruct one raster from a checkpoint");
    std::string rc_ckpt, rc_in, rc_out;
    int rc_epoch = 1;
    rc->add_option("--checkpoint", rc_ckpt, "checkpoint payload path")->required();
    rc->add_option("--in", rc_in, "input raster (.msr)")->required();
    rc->add_option("--epoch", rc_epoch, "epoch whose mask plan to draw");
    rc->add_option("--out", rc_out, "output directory")->required();

    auto* an = app.add_subcommand("analyze", "distribution, curriculum, strategy and ratio studies");
    std::string an_corpus, an_mode, an_out;
    std::vector<double> an_ratios = {0.5, 0.75, 0.9};
    std::size_t an_draws = 1000;
    an->add_option("--corpus", an_corpus, "corpus directory")->required();
    an->add_option("--mode", an_mode, "ssm, curriculum, compare or sweep")->required();
    an->add_option("--out", an_out, "output directory")->required();
    an->add_option("--ratios", an_ratios, "mask ratios for sweep mode");
    an->add_option("--draws", an_draws, "Monte-Carlo draws for curriculum mode");

    // global flags (--config, --seed, --profile) may follow the subcommand
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        CliConfig cfg = load_cli_config(config_path);
        if (profile == "paper") apply_paper_profile(cfg);
        if (seed_flag) {
            cfg.seed = *seed_flag;
            cfg.train.seed = *seed_flag;
        }

        if (gen->parsed()) return run_gen_data(gen_spec, gen_n, gen_out, seed_flag);
        if (idx->parsed()) return run_indices(idx_in, idx_out, idx_bands);
        if (mp->parsed())
            return run_mask_plan(mp_in, mp_epoch, mp_epochs, mp_ratio,
                                 seed_flag ? *seed_flag : cfg.seed, mp_patch, mp_eps, mp_out,
                                 mp_overlay, cfg.bands);
        if (pt->parsed()) return run_pretrain(cfg, pt_strategy, pt_data, pt_out);
        if (rc->parsed())
            return run_reconstruct(rc_ckpt, rc_in, rc_epoch, rc_out, cfg.bands, seed_flag);
        if (an->parsed()) return run_analyze(cfg, an_corpus, an_mode, an_out, an_ratios, an_draws);
        return 2;
    } catch (const sigmae::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const sigmae::data_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const sigmae::error& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
}
