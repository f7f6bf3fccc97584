#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "sigmae/errors.hpp"
#include "sigmae/raster.hpp"

namespace sigmae {

/// Semantic band roles used by the normalized-difference indices.
enum class BandRole { Red, Green, NIR, SWIR1 };

inline const char* band_role_name(BandRole r) {
    switch (r) {
        case BandRole::Red: return "Red";
        case BandRole::Green: return "Green";
        case BandRole::NIR: return "NIR";
        case BandRole::SWIR1: return "SWIR1";
    }
    return "?";
}

/// Maps semantic band roles to channel indices of a raster. The default
/// construction targets the ten-band Sentinel-2 stack (B2..B12 without
/// the 60 m bands): Red->B4, Green->B3, NIR->B8, SWIR1->B11.
struct BandMap {
    std::array<std::string, 4> role_band{{"B4", "B3", "B8", "B11"}};

    const std::string& band_for(BandRole r) const {
        return role_band[static_cast<std::size_t>(r)];
    }
    void set(BandRole r, std::string band) {
        role_band[static_cast<std::size_t>(r)] = std::move(band);
    }

    std::size_t resolve(const Raster& raster, BandRole role) const {
        const std::string& name = band_for(role);
        if (name.empty())
            throw config_error(std::string("band role ") + band_role_name(role) +
                               " is not mapped");
        return raster.band_index(name);
    }
};

enum class IndexKind { NDVI, NDWI, NDBI };

inline const char* index_name(IndexKind k) {
    switch (k) {
        case IndexKind::NDVI: return "NDVI";
        case IndexKind::NDWI: return "NDWI";
        case IndexKind::NDBI: return "NDBI";
    }
    return "?";
}

inline const std::vector<IndexKind>& default_index_kinds() {
    static const std::vector<IndexKind> kinds{IndexKind::NDVI, IndexKind::NDWI,
                                              IndexKind::NDBI};
    return kinds;
}

/// (numerator, denominator-partner) roles for each index.
inline std::pair<BandRole, BandRole> index_bands(IndexKind k) {
    switch (k) {
        case IndexKind::NDVI: return {BandRole::NIR, BandRole::Red};
        case IndexKind::NDWI: return {BandRole::Green, BandRole::NIR};
        case IndexKind::NDBI: return {BandRole::SWIR1, BandRole::NIR};
    }
    throw config_error("unknown index kind");
}

/// Stacked per-pixel spectral-index planes, K x H x W, every value in
/// [-1, 1].
struct KnowledgeTensor {
    std::size_t num_indices = 0; // K
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> psi; // K * H * W, plane-major

    double at(std::size_t k, std::size_t h, std::size_t w) const {
        return psi[(k * height + h) * width + w];
    }
};

namespace detail {

inline void require_uniform_resolution(const Raster& raster,
                                       std::size_t a, std::size_t b) {
    if (raster.bands[a].resolution_m != raster.bands[b].resolution_m)
        throw config_error("mixed band resolutions (" + raster.bands[a].name + " at " +
                           std::to_string(raster.bands[a].resolution_m) + " m, " +
                           raster.bands[b].name + " at " +
                           std::to_string(raster.bands[b].resolution_m) +
                           " m); resample before computing indices");
}

} // namespace detail

/// Normalized difference (a-b)/(a+b) of the two bands bound to `kind`.
/// Pixels where a+b = 0 yield exactly 0. Inputs must be reflectance-like
/// (non-negative); digital numbers or calibrated radiances with negative
/// values are rejected.
inline std::vector<double> compute_index(const Raster& raster, IndexKind kind,
                                         const BandMap& map) {
    const auto [role_a, role_b] = index_bands(kind);
    const std::size_t ia = map.resolve(raster, role_a);
    const std::size_t ib = map.resolve(raster, role_b);
    detail::require_uniform_resolution(raster, ia, ib);

    const std::size_t n = raster.pixel_count();
    const float* pa = &raster.data[ia * n];
    const float* pb = &raster.data[ib * n];
    std::vector<double> plane(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = pa[i];
        const double b = pb[i];
        if (a < 0.0 || b < 0.0)
            throw data_error(std::string(index_name(kind)) +
                             ": negative reflectance at pixel " + std::to_string(i) +
                             "; inputs must be non-negative");
        const double sum = a + b;
        plane[i] = sum == 0.0 ? 0.0 : (a - b) / sum;
    }
    return plane;
}

/// Stack compute_index outputs for `kinds`, in order.
inline KnowledgeTensor compute_knowledge_tensor(const Raster& raster,
                                                const std::vector<IndexKind>& kinds,
                                                const BandMap& map) {
    if (kinds.empty()) throw config_error("index kind list must be non-empty");
    KnowledgeTensor kt;
    kt.num_indices = kinds.size();
    kt.height = raster.height;
    kt.width = raster.width;
    kt.psi.reserve(kinds.size() * raster.pixel_count());
    for (IndexKind k : kinds) {
        auto plane = compute_index(raster, k, map);
        kt.psi.insert(kt.psi.end(), plane.begin(), plane.end());
    }
    return kt;
}

/// Knowledge tensor rendered as a raster (one band per index), for the
/// `indices` CLI subcommand.
inline Raster knowledge_to_raster(const KnowledgeTensor& kt,
                                  const std::vector<IndexKind>& kinds,
                                  double resolution_m) {
    Raster r;
    r.channels = kt.num_indices;
    r.height = kt.height;
    r.width = kt.width;
    for (IndexKind k : kinds) r.bands.push_back({index_name(k), resolution_m});
    r.data.resize(kt.psi.size());
    for (std::size_t i = 0; i < kt.psi.size(); ++i) r.data[i] = static_cast<float>(kt.psi[i]);
    return r;
}

} // namespace sigmae
