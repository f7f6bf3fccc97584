#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigmae/errors.hpp"
#include "sigmae/raster.hpp"
#include "sigmae/rng.hpp"

namespace sigmae {

struct ClassProfile {
    std::string name;
    std::vector<double> mean; // per-band reflectance
    double jitter_std = 0.02;
};

/// Desk-scale stand-in for a multispectral pretraining corpus: rectangular
/// vegetation / water / built-up regions over a mixed background, with
/// per-pixel jitter. Profiles are chosen so NDVI peaks on vegetation,
/// NDWI on water and NDBI on built-up areas. Region interiors give
/// low-sigma high-saliency patches, boundaries give high-sigma ones.
struct SceneSpec {
    std::size_t side = 64;
    std::vector<std::string> band_names = {"B2", "B3", "B4",  "B5",  "B6",
                                           "B7", "B8", "B8A", "B11", "B12"};
    double resolution_m = 10.0;
    std::size_t min_regions = 3;
    std::size_t max_regions = 7;
    ClassProfile background{"background",
                            {0.15, 0.18, 0.22, 0.24, 0.26, 0.27, 0.28, 0.29, 0.30, 0.28},
                            0.02};
    std::vector<ClassProfile> classes = {
        // Red (B4) 0.10, NIR (B8) 0.60 -> NDVI = 0.5/0.7
        {"vegetation", {0.06, 0.10, 0.10, 0.18, 0.35, 0.50, 0.60, 0.62, 0.25, 0.15}, 0.02},
        // Green (B3) 0.35, NIR 0.05 -> NDWI = 0.30/0.40
        {"water", {0.30, 0.35, 0.20, 0.12, 0.08, 0.06, 0.05, 0.04, 0.02, 0.01}, 0.02},
        // SWIR1 (B11) 0.55, NIR 0.30 -> NDBI = 0.25/0.85
        {"builtup", {0.22, 0.26, 0.32, 0.33, 0.34, 0.34, 0.30, 0.31, 0.55, 0.50}, 0.02},
    };
    std::uint64_t seed = 42;

    void validate() const {
        if (side == 0) throw config_error("scene side must be positive");
        if (band_names.empty()) throw config_error("scene needs at least one band");
        if (min_regions > max_regions)
            throw config_error("min_regions exceeds max_regions");
        auto check_profile = [&](const ClassProfile& p) {
            if (p.mean.size() != band_names.size())
                throw config_error("profile '" + p.name + "' has " +
                                   std::to_string(p.mean.size()) + " bands, spec has " +
                                   std::to_string(band_names.size()));
            for (double v : p.mean)
                if (v < 0.0)
                    throw config_error("profile '" + p.name + "' has a negative reflectance");
            if (p.jitter_std < 0.0)
                throw config_error("profile '" + p.name + "' has negative jitter");
        };
        check_profile(background);
        for (const auto& c : classes) check_profile(c);
    }
};

namespace detail {

// Uniform jitter on [-sqrt(3) s, sqrt(3) s] has standard deviation s.
inline constexpr double kSqrt3 = 1.7320508075688772;

inline void paint_rect(Raster& r, const ClassProfile& profile, std::size_t x0, std::size_t y0,
                       std::size_t w, std::size_t h, Rng& rng) {
    for (std::size_t y = y0; y < y0 + h; ++y)
        for (std::size_t x = x0; x < x0 + w; ++x)
            for (std::size_t c = 0; c < r.channels; ++c) {
                const double jitter =
                    profile.jitter_std > 0.0
                        ? rng.next_range(-kSqrt3 * profile.jitter_std, kSqrt3 * profile.jitter_std)
                        : 0.0;
                r.at(c, y, x) = static_cast<float>(
                    std::clamp(profile.mean[c] + jitter, 0.0, 1.0));
            }
}

} // namespace detail

/// Deterministic function of (spec.seed, index).
inline Raster generate_scene(const SceneSpec& spec, std::uint64_t index) {
    spec.validate();
    Rng rng(stream_key({spec.seed, 0x5ce7eULL, index}));

    Raster r;
    r.channels = spec.band_names.size();
    r.height = spec.side;
    r.width = spec.side;
    for (const auto& name : spec.band_names) r.bands.push_back({name, spec.resolution_m});
    r.data.resize(r.value_count());

    detail::paint_rect(r, spec.background, 0, 0, spec.side, spec.side, rng);

    const std::size_t region_span = spec.max_regions - spec.min_regions + 1;
    const std::size_t regions = spec.min_regions + rng.next_below(region_span);
    const std::size_t min_len = std::max<std::size_t>(1, spec.side / 8);
    const std::size_t max_len = std::max<std::size_t>(min_len, spec.side / 2);
    for (std::size_t i = 0; i < regions; ++i) {
        const auto& cls = spec.classes[rng.next_below(spec.classes.size())];
        const std::size_t w = min_len + rng.next_below(max_len - min_len + 1);
        const std::size_t h = min_len + rng.next_below(max_len - min_len + 1);
        const std::size_t x0 = rng.next_below(spec.side - w + 1);
        const std::size_t y0 = rng.next_below(spec.side - h + 1);
        detail::paint_rect(r, cls, x0, y0, w, h, rng);
    }
    return r;
}

inline nlohmann::ordered_json scene_spec_to_json(const SceneSpec& spec) {
    auto profile = [](const ClassProfile& p) {
        return nlohmann::ordered_json{
            {"name", p.name}, {"mean", p.mean}, {"jitter_std", p.jitter_std}};
    };
    nlohmann::ordered_json j;
    j["side"] = spec.side;
    j["bands"] = spec.band_names;
    j["resolution_m"] = spec.resolution_m;
    j["min_regions"] = spec.min_regions;
    j["max_regions"] = spec.max_regions;
    j["seed"] = spec.seed;
    j["background"] = profile(spec.background);
    auto classes = nlohmann::ordered_json::array();
    for (const auto& c : spec.classes) classes.push_back(profile(c));
    j["classes"] = classes;
    return j;
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    static const char* known[] = {"side",        "bands", "resolution_m", "min_regions",
                                  "max_regions", "seed",  "background",   "classes"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw config_error("unknown scene spec key '" + it.key() + "'");
    }
    auto profile = [](const nlohmann::json& p) {
        static const char* fields[] = {"name", "mean", "jitter_std"};
        for (auto it = p.begin(); it != p.end(); ++it) {
            bool ok = false;
            for (const char* k : fields) ok = ok || it.key() == k;
            if (!ok) throw config_error("unknown profile key '" + it.key() + "'");
        }
        ClassProfile out;
        out.name = p.at("name").get<std::string>();
        out.mean = p.at("mean").get<std::vector<double>>();
        out.jitter_std = p.value("jitter_std", 0.02);
        return out;
    };
    SceneSpec spec;
    try {
        if (j.contains("side")) spec.side = j["side"].get<std::size_t>();
        if (j.contains("bands")) spec.band_names = j["bands"].get<std::vector<std::string>>();
        if (j.contains("resolution_m")) spec.resolution_m = j["resolution_m"].get<double>();
        if (j.contains("min_regions")) spec.min_regions = j["min_regions"].get<std::size_t>();
        if (j.contains("max_regions")) spec.max_regions = j["max_regions"].get<std::size_t>();
        if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("background")) spec.background = profile(j["background"]);
        if (j.contains("classes")) {
            spec.classes.clear();
            for (const auto& c : j["classes"]) spec.classes.push_back(profile(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("malformed scene spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

/// Write n scenes in raster format plus manifest.json listing the files
/// and the generating spec. Regenerating with the same spec is
/// byte-identical.
inline void generate_corpus(const SceneSpec& spec, std::size_t n, const std::string& dir) {
    if (n < 1) throw config_error("corpus size must be >= 1");
    spec.validate();
    std::filesystem::create_directories(dir);

    auto files = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.msr", i);
        save_raster(generate_scene(spec, i), dir + "/" + name);
        files.push_back(name);
    }

    nlohmann::ordered_json manifest;
    manifest["spec"] = scene_spec_to_json(spec);
    manifest["files"] = files;
    std::ofstream out(dir + "/manifest.json", std::ios::trunc);
    if (!out) throw data_error("cannot write corpus manifest in " + dir);
    out << manifest.dump(2) << '\n';
    if (!out) throw data_error("failed writing corpus manifest in " + dir);
}

struct Corpus {
    SceneSpec spec;
    std::vector<std::string> files;
    std::vector<Raster> images;
};

inline Corpus load_corpus(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw data_error("missing corpus manifest " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("corrupt corpus manifest in " + dir + ": " + e.what());
    }
    Corpus corpus;
    try {
        corpus.spec = scene_spec_from_json(manifest.at("spec"));
        corpus.files = manifest.at("files").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error("corpus manifest in " + dir + " missing field: " + e.what());
    }
    corpus.images.reserve(corpus.files.size());
    for (const auto& f : corpus.files) corpus.images.push_back(load_raster(dir + "/" + f));
    return corpus;
}

} // namespace sigmae
