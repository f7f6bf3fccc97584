#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sigmae/errors.hpp"
#include "sigmae/model.hpp"
#include "sigmae/patchify.hpp"
#include "sigmae/rng.hpp"
#include "sigmae/spectral.hpp"
#include "sigmae/ssdtm.hpp"
#include "sigmae/stats.hpp"

namespace sigmae {

enum class Strategy { ssdtm, random, ssdtm_no_noise, ssdtm_static };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::ssdtm: return "ssdtm";
        case Strategy::random: return "random";
        case Strategy::ssdtm_no_noise: return "ssdtm_no_noise";
        case Strategy::ssdtm_static: return "ssdtm_static";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "ssdtm") return Strategy::ssdtm;
    if (s == "random") return Strategy::random;
    if (s == "ssdtm_no_noise") return Strategy::ssdtm_no_noise;
    if (s == "ssdtm_static") return Strategy::ssdtm_static;
    throw config_error("unknown strategy '" + s +
                       "' (expected ssdtm, random, ssdtm_no_noise or ssdtm_static)");
}

struct TrainConfig {
    int total_epochs = 50;       // E
    double base_lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    int warmup_epochs = 20;
    double warmup_lr = 1e-6;
    std::size_t batch_size = 16;
    double mask_ratio = 0.75;    // p_m
    double epsilon = 1e-8;       // SSM stabilizer
    std::uint64_t seed = 42;
    Strategy strategy = Strategy::ssdtm;
    double static_gamma = 0.25;  // fixed mixture for ssdtm_static
    double grad_clip = 0.0;      // 0 disables clipping
    int checkpoint_every = 0;    // epochs; 0 = final only
    std::string dataset_dir;
    std::string out_dir;         // empty = no checkpoints written

    void validate() const {
        if (total_epochs < 1) throw config_error("total_epochs must be >= 1");
        if (warmup_epochs < 0 || warmup_epochs >= total_epochs)
            throw config_error("warmup_epochs must lie in [0, total_epochs)");
        if (base_lr < 0.0) throw config_error("base_lr must be non-negative");
        if (warmup_lr < 0.0) throw config_error("warmup_lr must be non-negative");
        if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
            throw config_error("mask_ratio must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw config_error("epsilon must be positive");
        if (batch_size == 0) throw config_error("batch_size must be positive");
        if (!(static_gamma > 0.0 && static_gamma <= 1.0))
            throw config_error("static_gamma must lie in (0, 1]");
        if (grad_clip < 0.0) throw config_error("grad_clip must be non-negative");
    }
};

/// Learning rate at continuous schedule position t, measured in epochs
/// from 0 to total_epochs: a linear ramp from warmup_lr to base_lr over
/// the warmup epochs, then half-cosine decay from base_lr to 0.
inline double lr_at(double t, const TrainConfig& cfg) {
    const double e = static_cast<double>(cfg.total_epochs);
    const double warm = static_cast<double>(cfg.warmup_epochs);
    if (t < 0.0 || t > e)
        throw config_error("schedule position " + std::to_string(t) + " outside [0, " +
                           std::to_string(cfg.total_epochs) + "]");
    if (warm > 0.0 && t < warm)
        return cfg.warmup_lr + (cfg.base_lr - cfg.warmup_lr) * (t / warm);
    const double span = e - warm;
    const double progress = span > 0.0 ? (t - warm) / span : 1.0;
    return cfg.base_lr * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

struct OptimState {
    std::vector<std::vector<double>> m, v;
    std::int64_t step = 0; // completed optimizer steps

    static OptimState zeros_like(const ModelParams& p) {
        OptimState s;
        s.m.reserve(p.set.size());
        s.v.reserve(p.set.size());
        for (const auto& t : p.set.tensors) {
            s.m.emplace_back(t.count(), 0.0);
            s.v.emplace_back(t.count(), 0.0);
        }
        return s;
    }
};

inline constexpr double kAdamEps = 1e-8;

/// One AdamW update: decoupled weight decay (p <- p - lr*wd*p) followed
/// by the bias-corrected Adam step. Aborts on non-finite gradients,
/// naming the offending parameter.
inline void adamw_step(ModelParams& params, const std::vector<std::vector<double>>& grads,
                       OptimState& opt, double lr, double beta1, double beta2,
                       double weight_decay) {
    if (grads.size() != params.set.size())
        throw numeric_error("gradient count " + std::to_string(grads.size()) +
                            " does not match parameter count " +
                            std::to_string(params.set.size()));
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.set.size(); ++i) {
        auto& p = params.set[i].v;
        const auto& g = grads[i];
        if (g.size() != p.size())
            throw numeric_error("gradient size mismatch for parameter " + params.set[i].name);
        auto& m = opt.m[i];
        auto& v = opt.v[i];
        const double decay = 1.0 - lr * weight_decay;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (!std::isfinite(g[j]))
                throw numeric_error("non-finite gradient in parameter " + params.set[i].name +
                                    " at index " + std::to_string(j));
            p[j] *= decay;
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

/// Mask plan for one image under the configured masking strategy.
///   ssdtm          - the full dynamic score of the schedule
///   random         - scores are pure noise (standard random masking)
///   ssdtm_no_noise - nu pinned to 0
///   ssdtm_static   - gamma fixed at static_gamma, noise live
inline MaskPlan plan_for_strategy(Strategy strategy, const PatchKnowledge& a, int epoch,
                                  int total_epochs, double mask_ratio, double epsilon,
                                  std::uint64_t seed, std::uint64_t image_id,
                                  double static_gamma) {
    switch (strategy) {
        case Strategy::ssdtm:
            return plan_masking(a, epoch, total_epochs, mask_ratio, epsilon, seed, image_id);
        case Strategy::ssdtm_no_noise:
            return plan_masking(a, epoch, total_epochs, mask_ratio, epsilon, seed, image_id,
                                std::vector<double>(a.num_patches, 0.0));
        default: break;
    }
    MaskPlan plan;
    plan.epoch = epoch;
    plan.total_epochs = total_epochs;
    plan.mask_ratio = mask_ratio;
    plan.epsilon = epsilon;
    plan.rng_seed = seed;
    plan.image_id = image_id;
    plan.patch_side = a.patch_side;
    plan.height = a.height;
    plan.width = a.width;
    plan.num_patches = a.num_patches;
    plan.saliency = semantic_saliency(patch_stats(a), epsilon);
    plan.noise = uniform_vector(noise_key(seed, epoch, image_id), a.num_patches);
    if (strategy == Strategy::random) {
        plan.gamma = schedule_gamma(epoch, total_epochs);
        plan.scores = plan.noise;
    } else { // ssdtm_static
        plan.gamma = static_gamma;
        plan.scores = dynamic_scores(plan.saliency.q_norm, static_gamma, plan.noise);
    }
    plan.masked = select_masked(plan.scores, mask_ratio);
    plan.binary = binary_mask(plan.masked, a.patch_side, a.height, a.width);
    return plan;
}

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;     // at the first step of the epoch
    double gamma = 0.0;  // e/E
    double seconds = 0.0;
    std::size_t plans = 0;
};

struct TrainLog {
    std::string strategy;
    std::uint64_t seed = 0;
    std::string init_hash;
    std::vector<EpochRecord> epochs;

    /// Fingerprint of the deterministic columns (epoch, loss, lr, gamma).
    /// Wall time is inherently non-reproducible and excluded.
    std::uint64_t determinism_digest() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& r : epochs) {
            h = fnv1a64(&r.epoch, sizeof r.epoch, h);
            h = fnv1a64(&r.mean_loss, sizeof r.mean_loss, h);
            h = fnv1a64(&r.lr, sizeof r.lr, h);
            h = fnv1a64(&r.gamma, sizeof r.gamma, h);
        }
        return h;
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw data_error("cannot write train log " + path);
        out << "epoch,mean_loss,lr,gamma,seconds\n";
        char line[256];
        for (const auto& r : epochs) {
            std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.3f\n", r.epoch,
                          r.mean_loss, r.lr, r.gamma, r.seconds);
            out << line;
        }
        if (!out) throw data_error("failed writing train log " + path);
    }
};

/// Payload fingerprint of the current parameters, identical to
/// checkpoint_hash of a params-only checkpoint written at this state.
inline std::string params_payload_hash(const ModelParams& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : p.set.tensors)
        for (double x : t.v) {
            const float f = static_cast<float>(x);
            std::uint32_t w;
            std::memcpy(&w, &f, 4);
            w = detail::to_le32(w);
            h = fnv1a64(&w, 4, h);
        }
    return to_hex(h);
}

struct PretrainResult {
    ModelParams params;
    OptimState opt;
    TrainLog log;
};

/// Run the pretraining loop over an in-memory corpus: per epoch and
/// image, draw exactly one mask plan under the configured strategy,
/// encode the visible tokens, decode, take the masked loss and update
/// with AdamW on the cosine schedule. Deterministic in (config, corpus).
inline PretrainResult pretrain(const ModelConfig& model_cfg, const TrainConfig& cfg,
                               const std::vector<Raster>& images, const BandMap& bands,
                               const std::vector<IndexKind>& kinds = default_index_kinds()) {
    model_cfg.validate();
    cfg.validate();
    if (images.empty()) throw config_error("pretraining dataset is empty");

    // Patch sequences and knowledge embeddings are fixed across epochs.
    std::vector<PatchSequence> seqs;
    std::vector<PatchKnowledge> knowledge;
    seqs.reserve(images.size());
    knowledge.reserve(images.size());
    for (const auto& img : images) {
        if (img.channels != model_cfg.channels || img.height != model_cfg.image_side ||
            img.width != model_cfg.image_side)
            throw config_error("image " + std::to_string(seqs.size()) + " is " +
                               std::to_string(img.channels) + "x" + std::to_string(img.height) +
                               "x" + std::to_string(img.width) + ", model expects " +
                               std::to_string(model_cfg.channels) + "x" +
                               std::to_string(model_cfg.image_side) + "x" +
                               std::to_string(model_cfg.image_side));
        seqs.push_back(patchify_image(img, model_cfg.patch_side));
        knowledge.push_back(
            patchify_knowledge(compute_knowledge_tensor(img, kinds, bands), model_cfg.patch_side));
    }

    PretrainResult result;
    result.params = init_params(model_cfg, cfg.seed);
    result.opt = OptimState::zeros_like(result.params);
    result.log.strategy = strategy_name(cfg.strategy);
    result.log.seed = cfg.seed;
    result.log.init_hash = params_payload_hash(result.params);

    const auto save = [&](const std::string& name, int epochs_done, bool with_moments) {
        if (cfg.out_dir.empty()) return;
        CheckpointMeta meta;
        meta.epochs_done = epochs_done;
        meta.total_epochs = cfg.total_epochs;
        meta.step = result.opt.step;
        meta.seed = cfg.seed;
        meta.strategy = strategy_name(cfg.strategy);
        meta.mask_ratio = cfg.mask_ratio;
        meta.epsilon = cfg.epsilon;
        save_checkpoint(result.params, meta, cfg.out_dir + "/" + name,
                        with_moments ? &result.opt.m : nullptr,
                        with_moments ? &result.opt.v : nullptr);
    };
    // params only: its payload hash doubles as the init fingerprint
    save("init.ckpt", 0, false);

    const std::size_t n = images.size();
    const std::size_t num_batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t expected_visible =
        model_cfg.num_patches() - masked_count(cfg.mask_ratio, model_cfg.num_patches());

    for (int epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(stream_key({cfg.seed, 0x0dedu, static_cast<std::uint64_t>(epoch)}));
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = shuffle_rng.next_below(i);
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        double first_lr = 0.0;
        std::size_t plans_drawn = 0;

        for (std::size_t b = 0; b < num_batches; ++b) {
            const std::size_t begin = b * cfg.batch_size;
            const std::size_t end = std::min(begin + cfg.batch_size, n);
            const double t_pos = static_cast<double>(epoch - 1) +
                                 static_cast<double>(b) / static_cast<double>(num_batches);
            const double lr = lr_at(t_pos, cfg);
            if (b == 0) first_lr = lr;

            ad::Tape tape;
            const auto leaves = param_leaves(tape, result.params, true);
            ad::Tape::Id batch_loss = -1;
            for (std::size_t k = begin; k < end; ++k) {
                const std::size_t img = order[k];
                const MaskPlan plan = plan_for_strategy(
                    cfg.strategy, knowledge[img], epoch, cfg.total_epochs, cfg.mask_ratio,
                    cfg.epsilon, cfg.seed, static_cast<std::uint64_t>(img), cfg.static_gamma);
                ++plans_drawn;
                const auto fwd = mae_forward(tape, leaves, result.params, seqs[img], plan);
                if (tape.shape(fwd.h_e)[0] != expected_visible)
                    throw numeric_error("visible token count " +
                                        std::to_string(tape.shape(fwd.h_e)[0]) +
                                        " deviates from L - floor(p_m L) = " +
                                        std::to_string(expected_visible));
                const double image_loss = tape.scalar_val(fwd.loss);
                if (!std::isfinite(image_loss))
                    throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) +
                                        ", batch " + std::to_string(b) + ", image " +
                                        std::to_string(img) + ", seed " +
                                        std::to_string(cfg.seed));
                loss_sum += image_loss;
                batch_loss = k == begin ? fwd.loss : tape.add(batch_loss, fwd.loss);
            }
            batch_loss = tape.scale(batch_loss, 1.0 / static_cast<double>(end - begin));
            tape.backward(batch_loss);

            std::vector<std::vector<double>> grads;
            grads.reserve(leaves.size());
            for (auto id : leaves) grads.push_back(tape.grad(id));

            if (cfg.grad_clip > 0.0) {
                double norm_sq = 0.0;
                for (const auto& g : grads)
                    for (double x : g) norm_sq += x * x;
                const double norm = std::sqrt(norm_sq);
                if (norm > cfg.grad_clip) {
                    const double s = cfg.grad_clip / norm;
                    for (auto& g : grads)
                        for (double& x : g) x *= s;
                }
            }
            adamw_step(result.params, grads, result.opt, lr, cfg.beta1, cfg.beta2,
                       cfg.weight_decay);
        }

        if (plans_drawn != n)
            throw numeric_error("drew " + std::to_string(plans_drawn) + " mask plans for " +
                                std::to_string(n) + " images in epoch " + std::to_string(epoch));

        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = loss_sum / static_cast<double>(n);
        rec.lr = first_lr;
        rec.gamma = schedule_gamma(epoch, cfg.total_epochs);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.plans = plans_drawn;
        result.log.epochs.push_back(rec);

        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
            epoch != cfg.total_epochs) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
            save(name, epoch, true);
        }
    }

    save("final.ckpt", cfg.total_epochs, true);
    if (!cfg.out_dir.empty()) result.log.write_csv(cfg.out_dir + "/train_log.csv");
    return result;
}

} // namespace sigmae
