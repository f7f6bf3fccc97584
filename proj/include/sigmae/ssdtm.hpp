#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigmae/errors.hpp"
#include "sigmae/patchify.hpp"
#include "sigmae/rng.hpp"

namespace sigmae {

/// Per-patch, per-index moments of the knowledge embeddings. K x L,
/// k-major. sigma is the population standard deviation (divisor P^2).
struct PatchStats {
    std::size_t num_indices = 0; // K
    std::size_t num_patches = 0; // L
    std::vector<double> mu;      // mean of signed values
    std::vector<double> mu_abs;  // mean of absolute values
    std::vector<double> sigma;   // population std of signed values
};

/// Semantic saliency per patch: raw scores, their min-max normalization,
/// and the moments they came from.
struct SaliencyScores {
    PatchStats stats;
    double epsilon = 0.0;
    std::vector<double> q_raw;  // L, >= 0
    std::vector<double> q_norm; // L, in [0, 1]; all 0 when q_raw constant
};

/// One epoch's masking decision for one image, with every intermediate
/// recorded for auditability.
struct MaskPlan {
    int epoch = 0;
    int total_epochs = 0;
    double gamma = 0.0;
    double mask_ratio = 0.0;
    double epsilon = 0.0;
    std::uint64_t rng_seed = 0;
    std::uint64_t image_id = 0;
    std::size_t patch_side = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_patches = 0;            // L
    SaliencyScores saliency;
    std::vector<double> noise;              // nu, L values in [0, 1)
    std::vector<double> scores;             // S, L values
    std::vector<std::size_t> masked;        // T^S, ascending patch indices
    std::vector<std::uint8_t> binary;       // H x W, 1 = masked

    std::size_t num_masked() const { return masked.size(); }
    std::size_t num_visible() const { return num_patches - masked.size(); }

    /// Complement of `masked`, ascending.
    std::vector<std::size_t> visible() const {
        std::vector<std::size_t> vis;
        vis.reserve(num_visible());
        std::size_t m = 0;
        for (std::size_t i = 0; i < num_patches; ++i) {
            if (m < masked.size() && masked[m] == i) {
                ++m;
            } else {
                vis.push_back(i);
            }
        }
        return vis;
    }
};

/// Number of tokens to mask: floor(p_m * L), evaluated with a small slack
/// so exact rationals like 0.3 * 10 floor to 3.
inline std::size_t masked_count(double mask_ratio, std::size_t num_patches) {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
        throw config_error("mask ratio must lie in (0, 1), got " + std::to_string(mask_ratio));
    const auto k = static_cast<std::size_t>(
        std::floor(mask_ratio * static_cast<double>(num_patches) + 1e-9));
    if (k < 1)
        throw config_error("mask ratio " + std::to_string(mask_ratio) + " masks no token for L = " +
                           std::to_string(num_patches));
    return k;
}

/// Mean, mean-of-absolute and population standard deviation of the
/// knowledge values within each patch, per index.
inline PatchStats patch_stats(const PatchKnowledge& a) {
    PatchStats s;
    s.num_indices = a.num_indices;
    s.num_patches = a.num_patches;
    const std::size_t pp = a.patch_side * a.patch_side;
    const std::size_t L = a.num_patches;
    s.mu.assign(a.num_indices * L, 0.0);
    s.mu_abs.assign(a.num_indices * L, 0.0);
    s.sigma.assign(a.num_indices * L, 0.0);
    for (std::size_t k = 0; k < a.num_indices; ++k) {
        const double* plane = &a.a[k * pp * L];
        for (std::size_t i = 0; i < L; ++i) {
            double sum = 0.0, sum_abs = 0.0, sum_sq = 0.0;
            for (std::size_t j = 0; j < pp; ++j) {
                const double v = plane[j * L + i];
                sum += v;
                sum_abs += std::abs(v);
                sum_sq += v * v;
            }
            const double mean = sum / static_cast<double>(pp);
            const double var = sum_sq / static_cast<double>(pp) - mean * mean;
            s.mu[k * L + i] = mean;
            s.mu_abs[k * L + i] = sum_abs / static_cast<double>(pp);
            s.sigma[k * L + i] = std::sqrt(std::max(var, 0.0));
        }
    }
    return s;
}

/// Semantic Saliency Measurement per patch:
///   q_raw[i] = (1/K) sum_k mu_abs[k][i] / sqrt(sigma[k][i]^2 + epsilon)
/// q_norm is the per-image min-max rescaling of q_raw onto [0, 1]; a
/// constant q_raw maps to all zeros.
inline SaliencyScores semantic_saliency(const PatchStats& stats, double epsilon) {
    if (!(epsilon > 0.0)) throw config_error("saliency epsilon must be positive");
    SaliencyScores out;
    out.stats = stats;
    out.epsilon = epsilon;
    const std::size_t L = stats.num_patches;
    const std::size_t K = stats.num_indices;
    out.q_raw.assign(L, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const double sig = stats.sigma[k * L + i];
            acc += stats.mu_abs[k * L + i] / std::sqrt(sig * sig + epsilon);
        }
        out.q_raw[i] = acc / static_cast<double>(K);
    }

    const auto [lo_it, hi_it] = std::minmax_element(out.q_raw.begin(), out.q_raw.end());
    const double lo = *lo_it, hi = *hi_it;
    out.q_norm.assign(L, 0.0);
    if (hi > lo)
        for (std::size_t i = 0; i < L; ++i) out.q_norm[i] = (out.q_raw[i] - lo) / (hi - lo);
    return out;
}

/// Curriculum scaling factor gamma(e) = e / E.
inline double schedule_gamma(int epoch, int total_epochs) {
    if (total_epochs < 1) throw config_error("total epochs must be >= 1");
    if (epoch < 1 || epoch > total_epochs)
        throw config_error("epoch " + std::to_string(epoch) + " outside schedule [1, " +
                           std::to_string(total_epochs) + "]");
    return static_cast<double>(epoch) / static_cast<double>(total_epochs);
}

/// Dynamic masking score, computed exactly as written including the
/// discontinuity at gamma = 0.5:
///   S_i = (1 - 2g) q_i + 2g nu_i        for 0 < g <= 0.5
///   S_i = -g q_i + (1 - g) nu_i         for 0.5 < g <= 1
inline std::vector<double> dynamic_scores(const std::vector<double>& q_norm, double gamma,
                                          const std::vector<double>& noise) {
    if (q_norm.size() != noise.size())
        throw numeric_error("score/noise length mismatch: " + std::to_string(q_norm.size()) +
                            " vs " + std::to_string(noise.size()));
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw config_error("gamma must lie in (0, 1], got " + std::to_string(gamma));
    std::vector<double> s(q_norm.size());
    if (gamma <= 0.5) {
        const double cq = 1.0 - 2.0 * gamma, cn = 2.0 * gamma;
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = cq * q_norm[i] + cn * noise[i];
    } else {
        const double cq = -gamma, cn = 1.0 - gamma;
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = cq * q_norm[i] + cn * noise[i];
    }
    return s;
}

/// Indices of the floor(p_m * L) largest scores. Ties break toward the
/// smaller patch index; the result is sorted ascending.
inline std::vector<std::size_t> select_masked(const std::vector<double>& scores,
                                              double mask_ratio) {
    const std::size_t k = masked_count(mask_ratio, scores.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

/// Pixel-level indicator of the masked patches: 1 exactly on pixels
/// covered by patches in `masked`.
inline std::vector<std::uint8_t> binary_mask(const std::vector<std::size_t>& masked,
                                             std::size_t patch_side, std::size_t height,
                                             std::size_t width) {
    detail::require_divisible(height, width, patch_side);
    const std::size_t gw = width / patch_side;
    const std::size_t gh = height / patch_side;
    std::vector<std::uint8_t> grid(height * width, 0);
    for (std::size_t i : masked) {
        if (i >= gh * gw)
            throw numeric_error("masked patch index " + std::to_string(i) +
                                " out of range for grid " + std::to_string(gh) + "x" +
                                std::to_string(gw));
        const std::size_t gy = i / gw, gx = i % gw;
        for (std::size_t py = 0; py < patch_side; ++py) {
            std::uint8_t* row = &grid[(gy * patch_side + py) * width + gx * patch_side];
            std::fill(row, row + patch_side, std::uint8_t{1});
        }
    }
    return grid;
}

/// Noise stream key for one (seed, epoch, image) triple.
inline std::uint64_t noise_key(std::uint64_t rng_seed, int epoch, std::uint64_t image_id) {
    return stream_key({rng_seed, static_cast<std::uint64_t>(epoch), image_id});
}

/// Full SSDTM composition for one image and epoch: moments -> saliency ->
/// gamma -> noise -> scores -> selection -> binary mask. Deterministic in
/// (rng_seed, epoch, image_id). `noise_override` is a test hook that
/// replaces the drawn noise (e.g. to pin nu = 0).
inline MaskPlan plan_masking(const PatchKnowledge& a, int epoch, int total_epochs,
                             double mask_ratio, double epsilon, std::uint64_t rng_seed,
                             std::uint64_t image_id = 0,
                             const std::optional<std::vector<double>>& noise_override = {}) {
    MaskPlan plan;
    plan.epoch = epoch;
    plan.total_epochs = total_epochs;
    plan.mask_ratio = mask_ratio;
    plan.epsilon = epsilon;
    plan.rng_seed = rng_seed;
    plan.image_id = image_id;
    plan.patch_side = a.patch_side;
    plan.height = a.height;
    plan.width = a.width;
    plan.num_patches = a.num_patches;

    plan.saliency = semantic_saliency(patch_stats(a), epsilon);
    plan.gamma = schedule_gamma(epoch, total_epochs);
    if (noise_override) {
        if (noise_override->size() != a.num_patches)
            throw numeric_error("noise override length " + std::to_string(noise_override->size()) +
                                " does not match L = " + std::to_string(a.num_patches));
        plan.noise = *noise_override;
    } else {
        plan.noise = uniform_vector(noise_key(rng_seed, epoch, image_id), a.num_patches);
    }
    plan.scores = dynamic_scores(plan.saliency.q_norm, plan.gamma, plan.noise);
    plan.masked = select_masked(plan.scores, mask_ratio);
    plan.binary = binary_mask(plan.masked, a.patch_side, a.height, a.width);
    return plan;
}

inline nlohmann::ordered_json mask_plan_to_json(const MaskPlan& plan) {
    nlohmann::ordered_json j;
    j["epoch"] = plan.epoch;
    j["total_epochs"] = plan.total_epochs;
    j["gamma"] = plan.gamma;
    j["mask_ratio"] = plan.mask_ratio;
    j["epsilon"] = plan.epsilon;
    j["seed"] = plan.rng_seed;
    j["image_id"] = plan.image_id;
    j["patch_side"] = plan.patch_side;
    j["height"] = plan.height;
    j["width"] = plan.width;
    j["num_patches"] = plan.num_patches;
    j["q_raw"] = plan.saliency.q_raw;
    j["q_norm"] = plan.saliency.q_norm;
    j["noise"] = plan.noise;
    j["scores"] = plan.scores;
    j["masked"] = plan.masked;
    return j;
}

inline MaskPlan mask_plan_from_json(const nlohmann::json& j) {
    MaskPlan plan;
    try {
        plan.epoch = j.at("epoch").get<int>();
        plan.total_epochs = j.at("total_epochs").get<int>();
        plan.gamma = j.at("gamma").get<double>();
        plan.mask_ratio = j.at("mask_ratio").get<double>();
        plan.epsilon = j.at("epsilon").get<double>();
        plan.rng_seed = j.at("seed").get<std::uint64_t>();
        plan.image_id = j.at("image_id").get<std::uint64_t>();
        plan.patch_side = j.at("patch_side").get<std::size_t>();
        plan.height = j.at("height").get<std::size_t>();
        plan.width = j.at("width").get<std::size_t>();
        plan.num_patches = j.at("num_patches").get<std::size_t>();
        plan.saliency.q_raw = j.at("q_raw").get<std::vector<double>>();
        plan.saliency.q_norm = j.at("q_norm").get<std::vector<double>>();
        plan.noise = j.at("noise").get<std::vector<double>>();
        plan.scores = j.at("scores").get<std::vector<double>>();
        plan.masked = j.at("masked").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("malformed mask plan JSON: ") + e.what());
    }
    plan.binary = binary_mask(plan.masked, plan.patch_side, plan.height, plan.width);
    return plan;
}

} // namespace sigmae
