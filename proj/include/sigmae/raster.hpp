#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigmae/errors.hpp"

namespace sigmae {

struct BandInfo {
    std::string name;
    double resolution_m = 10.0;

    bool operator==(const BandInfo&) const = default;
};

/// Multichannel single-precision image, channel-major with row-major
/// channels (width fastest). All bands share one pixel grid.
struct Raster {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<BandInfo> bands;
    std::vector<float> data; // channels * height * width

    float& at(std::size_t c, std::size_t h, std::size_t w) {
        return data[(c * height + h) * width + w];
    }
    float at(std::size_t c, std::size_t h, std::size_t w) const {
        return data[(c * height + h) * width + w];
    }

    std::size_t pixel_count() const { return height * width; }
    std::size_t value_count() const { return channels * height * width; }

    /// Index of the band with the given name, or throws.
    std::size_t band_index(const std::string& name) const {
        for (std::size_t i = 0; i < bands.size(); ++i)
            if (bands[i].name == name) return i;
        throw config_error("raster has no band named '" + name + "'");
    }

    void validate() const {
        if (channels == 0 || height == 0 || width == 0)
            throw data_error("raster dimensions must be positive");
        if (bands.size() != channels)
            throw data_error("band list length " + std::to_string(bands.size()) +
                             " does not match channel count " + std::to_string(channels));
        if (data.size() != value_count())
            throw data_error("raster data length " + std::to_string(data.size()) +
                             " does not equal C*H*W = " + std::to_string(value_count()));
        for (std::size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(data[i]))
                throw data_error("non-finite raster value at flat index " + std::to_string(i));
    }

    bool operator==(const Raster&) const = default;
};

namespace detail {

inline std::uint32_t to_le32(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) | (v >> 24);
    }
    return v;
}

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

} // namespace detail

/// Write `<path>` (raw little-endian binary32 payload, w fastest) plus the
/// `<path>.json` sidecar header. Rejects invalid rasters before touching
/// the filesystem.
inline void save_raster(const Raster& raster, const std::string& path) {
    raster.validate();

    nlohmann::ordered_json header;
    header["version"] = 1;
    header["channels"] = raster.channels;
    header["height"] = raster.height;
    header["width"] = raster.width;
    auto bands = nlohmann::ordered_json::array();
    for (const auto& b : raster.bands)
        bands.push_back({{"name", b.name}, {"resolution_m", b.resolution_m}});
    header["bands"] = bands;

    std::ofstream side(detail::sidecar_path(path), std::ios::trunc);
    if (!side) throw data_error("cannot write sidecar " + detail::sidecar_path(path));
    side << header.dump(2) << '\n';
    side.close();
    if (!side) throw data_error("failed writing sidecar " + detail::sidecar_path(path));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write payload " + path);
    std::vector<std::uint32_t> buf(raster.data.size());
    std::memcpy(buf.data(), raster.data.data(), raster.data.size() * 4);
    for (auto& w : buf) w = detail::to_le32(w);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw data_error("failed writing payload " + path);
}

/// Inverse of save_raster, bit-exact. Header problems, payload length
/// mismatches and non-finite values are reported distinctly.
inline Raster load_raster(const std::string& path) {
    const std::string side_path = detail::sidecar_path(path);
    std::ifstream side(side_path);
    if (!side) throw data_error("missing sidecar header " + side_path);

    nlohmann::json header;
    try {
        side >> header;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("corrupt sidecar header " + side_path + ": " + e.what());
    }

    Raster r;
    try {
        if (header.at("version").get<int>() != 1)
            throw data_error("unsupported raster format version in " + side_path);
        r.channels = header.at("channels").get<std::size_t>();
        r.height = header.at("height").get<std::size_t>();
        r.width = header.at("width").get<std::size_t>();
        for (const auto& b : header.at("bands")) {
            BandInfo info;
            info.name = b.at("name").get<std::string>();
            info.resolution_m = b.at("resolution_m").get<double>();
            r.bands.push_back(info);
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error("corrupt sidecar header " + side_path + ": field " + e.what());
    }
    if (r.channels == 0 || r.height == 0 || r.width == 0)
        throw data_error("sidecar declares empty dimensions: " + side_path);
    if (r.bands.size() != r.channels)
        throw data_error("sidecar band list length " + std::to_string(r.bands.size()) +
                         " does not match channels " + std::to_string(r.channels));

    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw data_error("missing payload " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    const std::size_t expect = r.value_count() * 4;
    if (bytes != expect)
        throw data_error("payload length mismatch in " + path + ": header implies " +
                         std::to_string(expect) + " bytes, file has " + std::to_string(bytes));
    in.seekg(0);
    std::vector<std::uint32_t> buf(r.value_count());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expect));
    if (!in) throw data_error("failed reading payload " + path);

    r.data.resize(r.value_count());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const std::uint32_t w = detail::to_le32(buf[i]);
        float v;
        std::memcpy(&v, &w, 4);
        if (!std::isfinite(v))
            throw data_error("non-finite value in " + path + " at byte offset " +
                             std::to_string(i * 4));
        r.data[i] = v;
    }
    return r;
}

namespace detail {

inline void upsample_plane(const float* src, std::size_t h, std::size_t w,
                           std::size_t scale, float* dst) {
    const std::size_t wo = w * scale;
    for (std::size_t y = 0; y < h * scale; ++y) {
        const float* srow = src + (y / scale) * w;
        float* drow = dst + y * wo;
        for (std::size_t x = 0; x < wo; ++x) drow[x] = srow[x / scale];
    }
}

} // namespace detail

/// Upsample the listed bands by integer factor `scale`, replicating each
/// source pixel scale x scale. A Raster holds a single pixel grid, so for
/// scale > 1 every band must be listed; a partial list is the
/// irreconcilable mixed-resolution case.
inline Raster resample_nearest(const Raster& raster,
                               const std::vector<std::size_t>& band_indices,
                               std::size_t scale) {
    raster.validate();
    if (scale == 0) throw config_error("resample scale must be >= 1");
    std::vector<bool> listed(raster.channels, false);
    for (auto b : band_indices) {
        if (b >= raster.channels)
            throw config_error("band index " + std::to_string(b) + " out of range");
        listed[b] = true;
    }
    if (scale == 1) return raster;
    for (std::size_t c = 0; c < raster.channels; ++c)
        if (!listed[c])
            throw config_error("band " + std::to_string(c) +
                               " is not at target resolution and is not scheduled for "
                               "upsampling; mixed resolutions cannot be unified");

    Raster out;
    out.channels = raster.channels;
    out.height = raster.height * scale;
    out.width = raster.width * scale;
    out.bands = raster.bands;
    for (auto& b : out.bands) b.resolution_m /= static_cast<double>(scale);
    out.data.resize(out.value_count());
    for (std::size_t c = 0; c < raster.channels; ++c)
        detail::upsample_plane(&raster.data[c * raster.pixel_count()], raster.height,
                               raster.width, scale, &out.data[c * out.pixel_count()]);
    return out;
}

/// Merge band groups held at different pixel grids into one raster,
/// upsampling the groups listed in `part_indices` by `scale`. This is the
/// Sentinel-2 style flow: load 10 m and 20 m groups separately, upsample
/// the 20 m group, merge. Output dimensions are the maxima across groups
/// and every group must land on them. Band order follows the input order.
inline Raster resample_nearest(const std::vector<Raster>& parts,
                               const std::vector<std::size_t>& part_indices,
                               std::size_t scale) {
    if (parts.empty()) throw config_error("no rasters to merge");
    if (scale == 0) throw config_error("resample scale must be >= 1");
    std::vector<bool> listed(parts.size(), false);
    for (auto p : part_indices) {
        if (p >= parts.size())
            throw config_error("part index " + std::to_string(p) + " out of range");
        listed[p] = true;
    }

    std::size_t h_out = 0, w_out = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        parts[p].validate();
        const std::size_t f = listed[p] ? scale : 1;
        h_out = std::max(h_out, parts[p].height * f);
        w_out = std::max(w_out, parts[p].width * f);
    }

    Raster out;
    out.height = h_out;
    out.width = w_out;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Raster& part = parts[p];
        const std::size_t f = listed[p] ? scale : 1;
        if (part.height * f != h_out || part.width * f != w_out)
            throw config_error("raster group " + std::to_string(p) + " at " +
                               std::to_string(part.height) + "x" + std::to_string(part.width) +
                               " cannot be unified to " + std::to_string(h_out) + "x" +
                               std::to_string(w_out) + " with scale " + std::to_string(scale));
        for (std::size_t c = 0; c < part.channels; ++c) {
            BandInfo info = part.bands[c];
            info.resolution_m /= static_cast<double>(f);
            out.bands.push_back(info);
            out.data.resize(out.data.size() + h_out * w_out);
            float* dst = &out.data[out.data.size() - h_out * w_out];
            if (f == 1)
                std::memcpy(dst, &part.data[c * part.pixel_count()], h_out * w_out * 4);
            else
                detail::upsample_plane(&part.data[c * part.pixel_count()], part.height,
                                       part.width, f, dst);
        }
        out.channels += part.channels;
    }
    return out;
}

} // namespace sigmae
