#include <catch2/catch_amalgamated.hpp>

#include "sigmae/spectral.hpp"
#include "test_util.hpp"

using namespace sigmae;

namespace {

// Raster with the four role bands set to constants; remaining bands 0.5.
Raster role_raster(float red, float green, float nir, float swir1, std::size_t side = 4) {
    Raster r = testutil::random_raster(10, side, side, 1, 0.5f, 0.5f);
    r.bands = {{"B2", 10},  {"B3", 10}, {"B4", 10},  {"B5", 10},  {"B6", 10},
               {"B7", 10},  {"B8", 10}, {"B8A", 10}, {"B11", 10}, {"B12", 10}};
    const std::size_t n = r.pixel_count();
    auto fill = [&](std::size_t band, float v) {
        for (std::size_t i = 0; i < n; ++i) r.data[band * n + i] = v;
    };
    fill(2, red);   // B4
    fill(1, green); // B3
    fill(6, nir);   // B8
    fill(8, swir1); // B11
    return r;
}

} // namespace

TEST_CASE("NDVI of a constant scene") {
    const Raster r = role_raster(0.2f, 0.1f, 0.8f, 0.3f);
    const auto plane = compute_index(r, IndexKind::NDVI, BandMap{});
    for (double v : plane) REQUIRE(v == Catch::Approx(0.6).margin(1e-7));
}

TEST_CASE("zero denominator maps to exactly zero") {
    const Raster r = role_raster(0.0f, 0.1f, 0.0f, 0.3f);
    const auto plane = compute_index(r, IndexKind::NDVI, BandMap{});
    for (double v : plane) REQUIRE(v == 0.0);
}

TEST_CASE("index plane matches a per-pixel oracle") {
    Raster r = testutil::random_raster(10, 4, 4, 77, 0.0f, 1.0f);
    r.bands = role_raster(0, 0, 0, 0).bands;
    const BandMap map;
    for (IndexKind kind : default_index_kinds()) {
        const auto plane = compute_index(r, kind, map);
        const auto [ra, rb] = index_bands(kind);
        const std::size_t ia = map.resolve(r, ra), ib = map.resolve(r, rb);
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t w = 0; w < 4; ++w) {
                const double a = r.at(ia, h, w);
                const double b = r.at(ib, h, w);
                const double expect = (a + b) == 0.0 ? 0.0 : (a - b) / (a + b);
                REQUIRE(plane[h * 4 + w] == Catch::Approx(expect).margin(1e-7));
            }
    }
}

TEST_CASE("knowledge tensor stacks planes in order") {
    const Raster r = testutil::random_raster(10, 4, 4, 5, 0.0f, 1.0f);
    Raster named = r;
    named.bands = role_raster(0, 0, 0, 0).bands;
    const BandMap map;
    const auto kt =
        compute_knowledge_tensor(named, {IndexKind::NDVI, IndexKind::NDWI, IndexKind::NDBI}, map);
    REQUIRE(kt.num_indices == 3);
    const std::size_t n = named.pixel_count();
    std::size_t k = 0;
    for (IndexKind kind : default_index_kinds()) {
        const auto single = compute_index(named, kind, map);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(kt.psi[k * n + i] == single[i]);
        ++k;
    }

    const auto constant = compute_knowledge_tensor(role_raster(0.2f, 0.3f, 0.4f, 0.1f),
                                                   {IndexKind::NDVI}, map);
    for (std::size_t i = 1; i < constant.psi.size(); ++i)
        REQUIRE(constant.psi[i] == constant.psi[0]);
}

TEST_CASE("water-like region has positive NDWI and negative NDVI") {
    const Raster r = role_raster(0.2f, 0.6f, 0.1f, 0.05f);
    const BandMap map;
    const auto ndwi = compute_index(r, IndexKind::NDWI, map);
    const auto ndvi = compute_index(r, IndexKind::NDVI, map);
    for (std::size_t i = 0; i < ndwi.size(); ++i) {
        REQUIRE(ndwi[i] > 0.0);
        REQUIRE(ndvi[i] < 0.0);
    }
}

TEST_CASE("indices stay within [-1, 1] on random reflectances") {
    const BandMap map;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Raster r = testutil::random_raster(10, 6, 6, seed, 0.0f, 1.0f);
        r.bands = role_raster(0, 0, 0, 0).bands;
        for (IndexKind kind : default_index_kinds())
            for (double v : compute_index(r, kind, map)) {
                REQUIRE(v >= -1.0);
                REQUIRE(v <= 1.0);
            }
    }
}

TEST_CASE("swapping the band pair negates the plane exactly") {
    Raster r = testutil::random_raster(10, 5, 5, 9, 0.0f, 1.0f);
    r.bands = role_raster(0, 0, 0, 0).bands;
    const BandMap map;
    BandMap swapped;
    swapped.set(BandRole::NIR, "B4");
    swapped.set(BandRole::Red, "B8");
    const auto plane = compute_index(r, IndexKind::NDVI, map);
    const auto neg = compute_index(r, IndexKind::NDVI, swapped);
    for (std::size_t i = 0; i < plane.size(); ++i) {
        const double denom = r.at(6, i / 5, i % 5) + r.at(2, i / 5, i % 5);
        if (denom != 0.0) REQUIRE(neg[i] == -plane[i]);
    }
}

TEST_CASE("deterministic recomputation") {
    Raster r = testutil::random_raster(10, 8, 8, 31, 0.0f, 1.0f);
    r.bands = role_raster(0, 0, 0, 0).bands;
    const auto a = compute_knowledge_tensor(r, default_index_kinds(), BandMap{});
    const auto b = compute_knowledge_tensor(r, default_index_kinds(), BandMap{});
    REQUIRE(a.psi == b.psi);
}

TEST_CASE("error paths: bad roles, mixed resolution, negative reflectance") {
    Raster r = role_raster(0.2f, 0.3f, 0.4f, 0.1f);

    BandMap wrong;
    wrong.set(BandRole::NIR, "B99");
    REQUIRE_THROWS_AS(compute_index(r, IndexKind::NDVI, wrong), config_error);

    Raster mixed = r;
    mixed.bands[8].resolution_m = 20.0; // SWIR1 left at 20 m
    REQUIRE_THROWS_AS(compute_index(mixed, IndexKind::NDBI, BandMap{}), config_error);
    REQUIRE_NOTHROW(compute_index(mixed, IndexKind::NDVI, BandMap{}));

    Raster negative = r;
    negative.data[6 * r.pixel_count()] = -0.1f;
    REQUIRE_THROWS_AS(compute_index(negative, IndexKind::NDVI, BandMap{}), data_error);

    REQUIRE_THROWS_AS(compute_knowledge_tensor(r, {}, BandMap{}), config_error);
}
