#pragma once

#include <string>
#include <vector>

#include "sigmae/errors.hpp"
#include "sigmae/raster.hpp"
#include "sigmae/spectral.hpp"

namespace sigmae {

/// Fixed ordering contract shared by everything downstream: patches are
/// enumerated row-major over the (H/P) x (W/P) grid; within a patch,
/// values are channel-major then row-major (width fastest).
struct PatchSequence {
    std::size_t patch_side = 0;  // P
    std::size_t num_patches = 0; // L = (H/P)*(W/P)
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<BandInfo> bands;
    std::vector<double> patches; // L x (P*P*C), row per patch

    std::size_t patch_dim() const { return patch_side * patch_side * channels; }
    std::size_t grid_h() const { return height / patch_side; }
    std::size_t grid_w() const { return width / patch_side; }
};

/// Per-pixel index values grouped by patch: a[k][j][i] with k the index,
/// j the within-patch offset (row-major) and i the patch, matching the
/// PatchSequence enumeration.
struct PatchKnowledge {
    std::size_t num_indices = 0; // K
    std::size_t patch_side = 0;  // P
    std::size_t num_patches = 0; // L
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> a; // K x P^2 x L

    double at(std::size_t k, std::size_t j, std::size_t i) const {
        return a[(k * patch_side * patch_side + j) * num_patches + i];
    }
};

namespace detail {

inline void require_divisible(std::size_t h, std::size_t w, std::size_t patch_side) {
    if (patch_side == 0) throw config_error("patch side must be positive");
    if (h % patch_side != 0 || w % patch_side != 0)
        throw config_error("image " + std::to_string(h) + "x" + std::to_string(w) +
                           " is not divisible by patch side " + std::to_string(patch_side));
}

} // namespace detail

inline PatchSequence patchify_image(const Raster& raster, std::size_t patch_side) {
    detail::require_divisible(raster.height, raster.width, patch_side);
    PatchSequence seq;
    seq.patch_side = patch_side;
    seq.channels = raster.channels;
    seq.height = raster.height;
    seq.width = raster.width;
    seq.bands = raster.bands;
    const std::size_t gh = raster.height / patch_side;
    const std::size_t gw = raster.width / patch_side;
    seq.num_patches = gh * gw;
    seq.patches.resize(seq.num_patches * seq.patch_dim());

    const std::size_t P = patch_side;
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
            double* row = &seq.patches[(gy * gw + gx) * seq.patch_dim()];
            for (std::size_t c = 0; c < raster.channels; ++c)
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px)
                        row[(c * P + py) * P + px] =
                            raster.at(c, gy * P + py, gx * P + px);
        }
    return seq;
}

inline PatchKnowledge patchify_knowledge(const KnowledgeTensor& psi, std::size_t patch_side) {
    detail::require_divisible(psi.height, psi.width, patch_side);
    PatchKnowledge pk;
    pk.num_indices = psi.num_indices;
    pk.patch_side = patch_side;
    pk.height = psi.height;
    pk.width = psi.width;
    const std::size_t gh = psi.height / patch_side;
    const std::size_t gw = psi.width / patch_side;
    pk.num_patches = gh * gw;
    pk.a.resize(pk.num_indices * patch_side * patch_side * pk.num_patches);

    const std::size_t P = patch_side;
    const std::size_t L = pk.num_patches;
    for (std::size_t k = 0; k < pk.num_indices; ++k)
        for (std::size_t gy = 0; gy < gh; ++gy)
            for (std::size_t gx = 0; gx < gw; ++gx) {
                const std::size_t i = gy * gw + gx;
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px)
                        pk.a[(k * P * P + py * P + px) * L + i] =
                            psi.at(k, gy * P + py, gx * P + px);
            }
    return pk;
}

/// Exact inverse of patchify_image.
inline Raster unpatchify(const PatchSequence& seq) {
    if (seq.patches.size() != seq.num_patches * seq.patch_dim())
        throw numeric_error("patch sequence data length " +
                            std::to_string(seq.patches.size()) + " does not match L*P^2*C" +
                            " = " + std::to_string(seq.num_patches * seq.patch_dim()));
    detail::require_divisible(seq.height, seq.width, seq.patch_side);
    const std::size_t gw = seq.width / seq.patch_side;
    const std::size_t gh = seq.height / seq.patch_side;
    if (seq.num_patches != gh * gw)
        throw numeric_error("patch count " + std::to_string(seq.num_patches) +
                            " inconsistent with grid " + std::to_string(gh) + "x" +
                            std::to_string(gw));

    Raster r;
    r.channels = seq.channels;
    r.height = seq.height;
    r.width = seq.width;
    r.bands = seq.bands.empty() ? std::vector<BandInfo>(seq.channels, BandInfo{"?", 10.0})
                                : seq.bands;
    r.data.resize(r.value_count());
    const std::size_t P = seq.patch_side;
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
            const double* row = &seq.patches[(gy * gw + gx) * seq.patch_dim()];
            for (std::size_t c = 0; c < seq.channels; ++c)
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px)
                        r.at(c, gy * P + py, gx * P + px) =
                            static_cast<float>(row[(c * P + py) * P + px]);
        }
    return r;
}

} // namespace sigmae
