#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigmae/errors.hpp"
#include "sigmae/model.hpp"
#include "sigmae/patchify.hpp"
#include "sigmae/raster.hpp"
#include "sigmae/spectral.hpp"
#include "sigmae/ssdtm.hpp"
#include "sigmae/stats.hpp"
#include "sigmae/trainer.hpp"

namespace sigmae {

struct DistributionReport {
    Histogram hist;
    double mean = 0.0;
    double stddev = 0.0;
    double skewness = 0.0;
    std::size_t count = 0;

    /// Fraction of samples in the top decile of the value range
    /// [min + 0.9 (max - min), max]; small for long-tailed shapes.
    double top_decile_sample_share = 0.0;
};

inline DistributionReport make_distribution(const std::vector<double>& values,
                                            std::size_t bins = 100) {
    if (values.empty()) throw numeric_error("distribution of an empty sample");
    DistributionReport rep;
    rep.count = values.size();
    rep.hist = histogram(values, bins);
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    if (hi > lo) {
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size());
    }
    rep.mean = mean;
    rep.stddev = std::sqrt(var);
    rep.skewness = sigmae::skewness(values);

    if (hi > lo) {
        const double threshold = lo + 0.9 * (hi - lo);
        std::size_t above = 0;
        for (double v : values)
            if (v >= threshold) ++above;
        rep.top_decile_sample_share =
            static_cast<double>(above) / static_cast<double>(values.size());
    } else {
        rep.top_decile_sample_share = 1.0;
    }
    return rep;
}

inline nlohmann::ordered_json distribution_to_json(const DistributionReport& rep) {
    nlohmann::ordered_json j;
    j["count"] = rep.count;
    j["mean"] = rep.mean;
    j["stddev"] = rep.stddev;
    j["skewness"] = rep.skewness;
    j["top_decile_sample_share"] = rep.top_decile_sample_share;
    j["bin_edges"] = rep.hist.edges;
    j["bin_counts"] = rep.hist.counts;
    return j;
}

struct SsmReport {
    std::size_t images = 0;
    std::size_t patches_per_image = 0;
    DistributionReport index_values;      // raw psi values pooled
    DistributionReport semantic_richness; // per-pixel sum of |psi_k|
    DistributionReport ssm;               // pooled q_raw
};

/// Pool the saliency statistics of a corpus: the raw index distribution,
/// the per-pixel summed absolute index values, and the per-patch SSM.
inline SsmReport ssm_distribution(const std::vector<Raster>& corpus, const BandMap& bands,
                                  std::size_t patch_side, double epsilon,
                                  std::size_t bins = 100,
                                  const std::vector<IndexKind>& kinds = default_index_kinds()) {
    if (corpus.empty()) throw config_error("ssm_distribution: empty corpus");
    std::vector<double> pooled_psi;
    std::vector<double> richness;
    std::vector<double> pooled_q;
    for (const auto& img : corpus) {
        const KnowledgeTensor kt = compute_knowledge_tensor(img, kinds, bands);
        pooled_psi.insert(pooled_psi.end(), kt.psi.begin(), kt.psi.end());
        const std::size_t hw = kt.height * kt.width;
        for (std::size_t px = 0; px < hw; ++px) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kt.num_indices; ++k)
                acc += std::abs(kt.psi[k * hw + px]);
            richness.push_back(acc);
        }
        const auto saliency = semantic_saliency(patch_stats(patchify_knowledge(kt, patch_side)),
                                                epsilon);
        pooled_q.insert(pooled_q.end(), saliency.q_raw.begin(), saliency.q_raw.end());
    }
    SsmReport rep;
    rep.images = corpus.size();
    rep.patches_per_image = pooled_q.size() / corpus.size();
    rep.index_values = make_distribution(pooled_psi, bins);
    rep.semantic_richness = make_distribution(richness, bins);
    rep.ssm = make_distribution(pooled_q, bins);
    return rep;
}

inline nlohmann::ordered_json ssm_report_to_json(const SsmReport& rep) {
    nlohmann::ordered_json j;
    j["images"] = rep.images;
    j["patches_per_image"] = rep.patches_per_image;
    j["index_values"] = distribution_to_json(rep.index_values);
    j["semantic_richness"] = distribution_to_json(rep.semantic_richness);
    j["ssm"] = distribution_to_json(rep.ssm);
    return j;
}

struct CurriculumPoint {
    double gamma = 0.0; // e/E actually used
    int epoch = 0;
    double mean_spearman = 0.0;
    double std_spearman = 0.0;
    double top_decile_masked_fraction = 0.0;
    std::size_t draws = 0;
};

/// Monte-Carlo trace of the curriculum: for each gamma grid point, draw
/// many mask plans with live noise and record how strongly the dynamic
/// score still follows the saliency ranking.
inline std::vector<CurriculumPoint> curriculum_trace(
    const std::vector<Raster>& sample, const BandMap& bands, int total_epochs,
    double mask_ratio, double epsilon, std::size_t patch_side, std::uint64_t seed,
    std::size_t draws = 1000,
    std::vector<double> gamma_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0},
    const std::vector<IndexKind>& kinds = default_index_kinds()) {
    if (sample.empty()) throw config_error("curriculum_trace: empty sample");

    std::vector<PatchKnowledge> knowledge;
    knowledge.reserve(sample.size());
    for (const auto& img : sample)
        knowledge.push_back(
            patchify_knowledge(compute_knowledge_tensor(img, kinds, bands), patch_side));

    std::vector<CurriculumPoint> out;
    for (double g : gamma_grid) {
        const int epoch = std::clamp(
            static_cast<int>(std::lround(g * static_cast<double>(total_epochs))), 1,
            total_epochs);
        CurriculumPoint pt;
        pt.epoch = epoch;
        pt.gamma = schedule_gamma(epoch, total_epochs);
        pt.draws = draws;

        double sum = 0.0, sum_sq = 0.0, decile_sum = 0.0;
        for (std::size_t d = 0; d < draws; ++d) {
            const PatchKnowledge& pk = knowledge[d % knowledge.size()];
            const MaskPlan plan = plan_masking(pk, epoch, total_epochs, mask_ratio, epsilon,
                                               stream_key({seed, d}), d % knowledge.size());
            const double rho = spearman(plan.scores, plan.saliency.q_norm);
            sum += rho;
            sum_sq += rho * rho;

            const std::size_t top = std::max<std::size_t>(1, plan.num_patches / 10);
            std::vector<std::size_t> order(plan.num_patches);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return plan.saliency.q_norm[a] > plan.saliency.q_norm[b];
            });
            std::size_t hit = 0;
            for (std::size_t i = 0; i < top; ++i)
                if (std::binary_search(plan.masked.begin(), plan.masked.end(), order[i])) ++hit;
            decile_sum += static_cast<double>(hit) / static_cast<double>(top);
        }
        const double n = static_cast<double>(draws);
        pt.mean_spearman = sum / n;
        pt.std_spearman = std::sqrt(std::max(0.0, sum_sq / n - pt.mean_spearman * pt.mean_spearman));
        pt.top_decile_masked_fraction = decile_sum / n;
        out.push_back(pt);
    }
    return out;
}

inline void write_curriculum_csv(const std::vector<CurriculumPoint>& points,
                                 const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write curriculum trace " + path);
    out << "gamma,epoch,mean_spearman,std_spearman,top_decile_masked_fraction,draws\n";
    char line[256];
    for (const auto& p : points) {
        std::snprintf(line, sizeof line, "%.17g,%d,%.17g,%.17g,%.17g,%zu\n", p.gamma, p.epoch,
                      p.mean_spearman, p.std_spearman, p.top_decile_masked_fraction, p.draws);
        out << line;
    }
}

struct StrategyRun {
    std::string name;
    TrainLog log;
    double final_loss = 0.0;
};

struct SweepPoint {
    double ratio = 0.0;
    std::size_t visible_tokens = 0;
    std::size_t masked_tokens = 0;
    double final_loss = 0.0;
    std::vector<std::string> exports;
};

struct ComparisonReport {
    std::vector<StrategyRun> runs;
    std::vector<SweepPoint> sweep;
};

/// Train once per strategy with a shared seed and corpus, collating the
/// loss curves. Makes no claim about ordering. When out_dir is set, each
/// run writes init/final checkpoints and its train log under a
/// per-strategy subdirectory.
inline ComparisonReport compare_strategies(const ModelConfig& model_cfg,
                                           const TrainConfig& base,
                                           const std::vector<Strategy>& strategies,
                                           const std::vector<Raster>& corpus,
                                           const BandMap& bands,
                                           const std::string& out_dir = {}) {
    if (strategies.empty()) throw config_error("compare_strategies: no strategies");
    ComparisonReport report;
    for (Strategy s : strategies) {
        TrainConfig cfg = base;
        cfg.strategy = s;
        if (!out_dir.empty()) {
            cfg.out_dir = out_dir + "/" + strategy_name(s);
            std::filesystem::create_directories(cfg.out_dir);
        } else {
            cfg.out_dir.clear();
        }
        auto result = pretrain(model_cfg, cfg, corpus, bands);
        StrategyRun run;
        run.name = strategy_name(s);
        run.final_loss = result.log.epochs.back().mean_loss;
        run.log = std::move(result.log);
        report.runs.push_back(std::move(run));
    }
    return report;
}

/// Sentinel-filled copy of the raster over masked pixels, written in
/// raster format.
inline void mask_overlay_export(const Raster& raster, const MaskPlan& plan,
                                const std::string& path, double sentinel = 2.0) {
    if (plan.binary.size() != raster.pixel_count())
        throw config_error("mask plan does not match raster dimensions");
    Raster out = raster;
    const std::size_t hw = raster.pixel_count();
    for (std::size_t px = 0; px < hw; ++px) {
        if (!plan.binary[px]) continue;
        for (std::size_t c = 0; c < raster.channels; ++c)
            out.data[c * hw + px] = static_cast<float>(sentinel);
    }
    save_raster(out, path);
}

/// Train per masking ratio and export original / masked / reconstructed
/// triptychs for the first corpus image at the final-epoch plan.
inline std::vector<SweepPoint> mask_ratio_sweep(const ModelConfig& model_cfg,
                                                const TrainConfig& base,
                                                const std::vector<double>& ratios,
                                                const std::vector<Raster>& corpus,
                                                const BandMap& bands,
                                                const std::string& out_dir,
                                                double sentinel = 2.0) {
    if (ratios.empty()) throw config_error("mask_ratio_sweep: no ratios");
    std::vector<SweepPoint> points;
    for (double ratio : ratios) {
        TrainConfig cfg = base;
        cfg.mask_ratio = ratio;
        char sub[32];
        std::snprintf(sub, sizeof sub, "ratio_%02d", static_cast<int>(std::lround(ratio * 100)));
        const std::string run_dir = out_dir + "/" + sub;
        std::filesystem::create_directories(run_dir);
        cfg.out_dir = run_dir;
        auto result = pretrain(model_cfg, cfg, corpus, bands);

        SweepPoint pt;
        pt.ratio = ratio;
        pt.masked_tokens = masked_count(ratio, model_cfg.num_patches());
        pt.visible_tokens = model_cfg.num_patches() - pt.masked_tokens;
        pt.final_loss = result.log.epochs.back().mean_loss;

        const Raster& image = corpus.front();
        const PatchKnowledge pk = patchify_knowledge(
            compute_knowledge_tensor(image, default_index_kinds(), bands), model_cfg.patch_side);
        const MaskPlan plan =
            plan_for_strategy(cfg.strategy, pk, cfg.total_epochs, cfg.total_epochs, ratio,
                              cfg.epsilon, cfg.seed, 0, cfg.static_gamma);

        const PatchSequence seq = patchify_image(image, model_cfg.patch_side);
        ad::Tape tape;
        const auto leaves = param_leaves(tape, result.params, false);
        const auto fwd = mae_forward(tape, leaves, result.params, seq, plan);
        const auto h_e = tape.val(fwd.h_e);
        const Reconstruction recon = decode_full(h_e, plan, result.params, image.bands);

        const std::string orig = run_dir + "/original.msr";
        const std::string masked = run_dir + "/masked.msr";
        const std::string recon_path = run_dir + "/reconstructed.msr";
        save_raster(image, orig);
        mask_overlay_export(image, plan, masked, sentinel);
        save_raster(recon.image_hat, recon_path);
        pt.exports = {orig, masked, recon_path};
        points.push_back(std::move(pt));
    }
    return points;
}

inline nlohmann::ordered_json comparison_to_json(const ComparisonReport& report) {
    nlohmann::ordered_json j;
    auto runs = nlohmann::ordered_json::array();
    for (const auto& r : report.runs) {
        nlohmann::ordered_json run;
        run["strategy"] = r.name;
        run["seed"] = r.log.seed;
        run["init_checkpoint_hash"] = r.log.init_hash;
        run["final_loss"] = r.final_loss;
        auto epochs = nlohmann::ordered_json::array();
        for (const auto& e : r.log.epochs)
            epochs.push_back({{"epoch", e.epoch},
                              {"loss", e.mean_loss},
                              {"lr", e.lr},
                              {"gamma", e.gamma},
                              {"seconds", e.seconds}});
        run["epochs"] = epochs;
        runs.push_back(std::move(run));
    }
    j["strategies"] = runs;
    auto sweep = nlohmann::ordered_json::array();
    for (const auto& p : report.sweep)
        sweep.push_back({{"ratio", p.ratio},
                         {"visible_tokens", p.visible_tokens},
                         {"masked_tokens", p.masked_tokens},
                         {"final_loss", p.final_loss},
                         {"exports", p.exports}});
    j["sweep"] = sweep;
    return j;
}

/// CSV columns: strategy, epoch, loss, lr, gamma.
inline void write_comparison_csv(const ComparisonReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write comparison report " + path);
    out << "strategy,epoch,loss,lr,gamma\n";
    char line[256];
    for (const auto& r : report.runs)
        for (const auto& e : r.log.epochs) {
            std::snprintf(line, sizeof line, "%s,%d,%.17g,%.17g,%.17g\n", r.name.c_str(),
                          e.epoch, e.mean_loss, e.lr, e.gamma);
            out << line;
        }
}

} // namespace sigmae
