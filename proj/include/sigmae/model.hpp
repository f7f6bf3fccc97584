#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sigmae/autodiff.hpp"
#include "sigmae/errors.hpp"
#include "sigmae/patchify.hpp"
#include "sigmae/raster.hpp"
#include "sigmae/rng.hpp"
#include "sigmae/ssdtm.hpp"
#include "sigmae/stats.hpp"

namespace sigmae {

struct ModelConfig {
    std::size_t embed_dim = 64;    // D
    std::size_t encoder_depth = 2;
    std::size_t decoder_dim = 32;  // narrower, shallower decoder
    std::size_t decoder_depth = 1;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t patch_side = 8;    // P
    std::size_t channels = 10;     // C
    std::size_t image_side = 64;

    std::size_t grid_side() const { return image_side / patch_side; }
    std::size_t num_patches() const { return grid_side() * grid_side(); } // L
    std::size_t patch_dim() const { return patch_side * patch_side * channels; }

    void validate() const {
        if (!embed_dim || !decoder_dim || !heads || !mlp_ratio || !patch_side || !channels ||
            !image_side)
            throw config_error("model dimensions must be positive");
        if (embed_dim % heads != 0)
            throw config_error("embed_dim " + std::to_string(embed_dim) +
                               " not divisible by heads " + std::to_string(heads));
        if (decoder_dim % heads != 0)
            throw config_error("decoder_dim " + std::to_string(decoder_dim) +
                               " not divisible by heads " + std::to_string(heads));
        if (embed_dim % 4 != 0 || decoder_dim % 4 != 0)
            throw config_error("embed/decoder dims must be divisible by 4 for 2D sin-cos "
                               "positional embeddings");
        if (image_side % patch_side != 0)
            throw config_error("image side " + std::to_string(image_side) +
                               " not divisible by patch side " + std::to_string(patch_side));
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Fixed 2D sine-cosine positional table: dim/2 entries per spatial axis
/// (height first), alternating sin/cos over geometrically spaced
/// frequencies with base 10000. Rows follow the row-major patch order.
inline std::vector<double> sincos_pos_embed(std::size_t grid_h, std::size_t grid_w,
                                            std::size_t dim) {
    if (dim % 4 != 0)
        throw config_error("positional embedding dim " + std::to_string(dim) +
                           " must be divisible by 4");
    const std::size_t axis_dim = dim / 2;
    const std::size_t freqs = axis_dim / 2;
    std::vector<double> omega(freqs);
    for (std::size_t f = 0; f < freqs; ++f)
        omega[f] = std::pow(10000.0, -static_cast<double>(f) / static_cast<double>(freqs));

    std::vector<double> table(grid_h * grid_w * dim);
    for (std::size_t gy = 0; gy < grid_h; ++gy)
        for (std::size_t gx = 0; gx < grid_w; ++gx) {
            double* row = &table[(gy * grid_w + gx) * dim];
            for (std::size_t f = 0; f < freqs; ++f) {
                row[2 * f] = std::sin(static_cast<double>(gy) * omega[f]);
                row[2 * f + 1] = std::cos(static_cast<double>(gy) * omega[f]);
                row[axis_dim + 2 * f] = std::sin(static_cast<double>(gx) * omega[f]);
                row[axis_dim + 2 * f + 1] = std::cos(static_cast<double>(gx) * omega[f]);
            }
        }
    return table;
}

struct NamedTensor {
    std::string name;
    ad::Shape shape;
    std::vector<double> v;

    std::size_t count() const { return v.size(); }
};

/// Flat parameter store; models address tensors through integer handles.
struct ParamSet {
    std::vector<NamedTensor> tensors;

    std::size_t add(std::string name, ad::Shape shape) {
        NamedTensor t;
        t.name = std::move(name);
        t.shape = std::move(shape);
        t.v.assign(ad::numel(t.shape), 0.0);
        tensors.push_back(std::move(t));
        return tensors.size() - 1;
    }

    NamedTensor& operator[](std::size_t h) { return tensors[h]; }
    const NamedTensor& operator[](std::size_t h) const { return tensors[h]; }
    std::size_t size() const { return tensors.size(); }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.count();
        return n;
    }
};

struct BlockHandles {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

struct ModelParams {
    ModelConfig config;
    ParamSet set;
    std::size_t proj_w = 0, proj_b = 0;
    std::vector<BlockHandles> enc_blocks;
    std::size_t dec_in_w = 0, dec_in_b = 0, mask_token = 0;
    std::vector<BlockHandles> dec_blocks;
    std::size_t out_w = 0, out_b = 0;
};

namespace detail {

inline BlockHandles add_block(ParamSet& set, const std::string& prefix, std::size_t dim,
                              std::size_t mlp_ratio) {
    BlockHandles b;
    b.ln1_g = set.add(prefix + ".ln1_g", {dim});
    b.ln1_b = set.add(prefix + ".ln1_b", {dim});
    b.wq = set.add(prefix + ".wq", {dim, dim});
    b.bq = set.add(prefix + ".bq", {dim});
    b.wk = set.add(prefix + ".wk", {dim, dim});
    b.bk = set.add(prefix + ".bk", {dim});
    b.wv = set.add(prefix + ".wv", {dim, dim});
    b.bv = set.add(prefix + ".bv", {dim});
    b.wo = set.add(prefix + ".wo", {dim, dim});
    b.bo = set.add(prefix + ".bo", {dim});
    b.ln2_g = set.add(prefix + ".ln2_g", {dim});
    b.ln2_b = set.add(prefix + ".ln2_b", {dim});
    b.fc1_w = set.add(prefix + ".fc1_w", {dim, dim * mlp_ratio});
    b.fc1_b = set.add(prefix + ".fc1_b", {dim * mlp_ratio});
    b.fc2_w = set.add(prefix + ".fc2_w", {dim * mlp_ratio, dim});
    b.fc2_b = set.add(prefix + ".fc2_b", {dim});
    return b;
}

} // namespace detail

/// Allocate the full parameter layout with layer-norm gains at 1 and
/// everything else at 0. Weight values come from init_params.
inline ModelParams make_params(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    p.proj_w = p.set.add("proj_w", {config.patch_dim(), config.embed_dim});
    p.proj_b = p.set.add("proj_b", {config.embed_dim});
    for (std::size_t i = 0; i < config.encoder_depth; ++i)
        p.enc_blocks.push_back(detail::add_block(p.set, "enc." + std::to_string(i),
                                                 config.embed_dim, config.mlp_ratio));
    p.dec_in_w = p.set.add("dec_in_w", {config.embed_dim, config.decoder_dim});
    p.dec_in_b = p.set.add("dec_in_b", {config.decoder_dim});
    p.mask_token = p.set.add("mask_token", {1, config.decoder_dim});
    for (std::size_t i = 0; i < config.decoder_depth; ++i)
        p.dec_blocks.push_back(detail::add_block(p.set, "dec." + std::to_string(i),
                                                 config.decoder_dim, config.mlp_ratio));
    p.out_w = p.set.add("out_w", {config.decoder_dim, config.patch_dim()});
    p.out_b = p.set.add("out_b", {config.patch_dim()});

    for (auto& t : p.set.tensors)
        if (t.name.ends_with("ln1_g") || t.name.ends_with("ln2_g"))
            std::fill(t.v.begin(), t.v.end(), 1.0);
    return p;
}

/// Truncated-normal (std 0.02) weights and mask token, zero biases,
/// unit layer-norm gains. Deterministic in the seed.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p = make_params(config);
    Rng rng(stream_key({seed, 0x1417u}));
    for (auto& t : p.set.tensors) {
        const bool is_weight = t.shape.size() == 2; // projections and mask token
        if (!is_weight) continue;
        for (auto& v : t.v) v = 0.02 * rng.next_trunc_normal();
    }
    return p;
}

/// Per-tensor tape leaf ids, aligned with ParamSet order.
using ParamLeaves = std::vector<ad::Tape::Id>;

inline ParamLeaves param_leaves(ad::Tape& tape, const ModelParams& p, bool needs_grad) {
    ParamLeaves ids;
    ids.reserve(p.set.size());
    for (const auto& t : p.set.tensors) ids.push_back(tape.leaf(t.v, t.shape, needs_grad));
    return ids;
}

/// Captured attention weights (one matrix per block x head), for tests.
struct AttnProbe {
    std::vector<std::vector<double>> row_weights;
};

namespace detail {

inline ad::Tape::Id slice_cols(ad::Tape& t, ad::Tape::Id xt /*transposed: dim x n*/,
                               std::size_t c0, std::size_t c1) {
    std::vector<std::size_t> rows(c1 - c0);
    for (std::size_t i = c0; i < c1; ++i) rows[i - c0] = i;
    return t.gather_rows(xt, std::move(rows));
}

inline ad::Tape::Id multi_head_attention(ad::Tape& t, ad::Tape::Id x, const BlockHandles& b,
                                         const ParamLeaves& w, std::size_t heads,
                                         AttnProbe* probe) {
    const std::size_t dim = t.shape(x)[1];
    const std::size_t head_dim = dim / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    const auto qt = t.transpose(t.linear(x, w[b.wq], w[b.bq]));
    const auto kt = t.transpose(t.linear(x, w[b.wk], w[b.bk]));
    const auto vt = t.transpose(t.linear(x, w[b.wv], w[b.bv]));

    ad::Tape::Id merged = -1; // dim x n, heads stacked as rows
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * head_dim, c1 = c0 + head_dim;
        const auto qh_t = slice_cols(t, qt, c0, c1);
        const auto kh_t = slice_cols(t, kt, c0, c1);
        const auto vh_t = slice_cols(t, vt, c0, c1);
        const auto scores = t.scale(t.matmul(t.transpose(qh_t), kh_t), att_scale);
        const auto attn = t.softmax(scores);
        if (probe) probe->row_weights.push_back(t.val(attn));
        const auto head_out_t = t.transpose(t.matmul(attn, t.transpose(vh_t)));
        merged = h == 0 ? head_out_t : t.concat_rows(merged, head_out_t);
    }
    return t.linear(t.transpose(merged), w[b.wo], w[b.bo]);
}

inline ad::Tape::Id transformer_block(ad::Tape& t, ad::Tape::Id x, const BlockHandles& b,
                                      const ParamLeaves& w, std::size_t heads,
                                      AttnProbe* probe) {
    auto h = t.layer_norm(x, w[b.ln1_g], w[b.ln1_b]);
    x = t.add(x, multi_head_attention(t, h, b, w, heads, probe));
    auto h2 = t.layer_norm(x, w[b.ln2_g], w[b.ln2_b]);
    return t.add(x, t.linear(t.gelu(t.linear(h2, w[b.fc1_w], w[b.fc1_b])), w[b.fc2_w],
                             w[b.fc2_b]));
}

} // namespace detail

/// Project patch rows into tokens and add the positional table:
/// tokens = f_proj(z) + pos, in patch order, before any masking.
inline ad::Tape::Id embed_patches_t(ad::Tape& t, ad::Tape::Id patch_rows, const ModelParams& p,
                                    const ParamLeaves& w) {
    const auto& cfg = p.config;
    auto tokens = t.linear(patch_rows, w[p.proj_w], w[p.proj_b]);
    auto pos = t.constant(sincos_pos_embed(cfg.grid_side(), cfg.grid_side(), cfg.embed_dim),
                          {cfg.num_patches(), cfg.embed_dim});
    return t.add(tokens, pos);
}

/// Gather the visible rows (complement of plan.masked, ascending) and run
/// the encoder blocks. Masked tokens never enter any attention.
inline ad::Tape::Id encode_visible_t(ad::Tape& t, ad::Tape::Id tokens, const MaskPlan& plan,
                                     const ModelParams& p, const ParamLeaves& w,
                                     AttnProbe* probe = nullptr) {
    if (t.shape(tokens)[0] != plan.num_patches)
        throw numeric_error("token count " + std::to_string(t.shape(tokens)[0]) +
                            " does not match plan with L = " + std::to_string(plan.num_patches));
    auto x = t.gather_rows(tokens, plan.visible());
    for (const auto& b : p.enc_blocks)
        x = detail::transformer_block(t, x, b, w, p.config.heads, probe);
    return x;
}

struct DecodeProbe {
    std::vector<double> pre_positional; // decoder input rows before pos add
    AttnProbe attn;
};

struct DecodeOut {
    ad::Tape::Id h_d;      // L x decoder_dim latents after decoder blocks
    ad::Tape::Id out_rows; // L x (P^2 C) reconstructed patch rows
};

/// Rebuild the full token sequence (visible latents at their original
/// indices, the shared mask token elsewhere), add decoder positional
/// embeddings, run decoder blocks and project to patch pixels.
inline DecodeOut decode_full_t(ad::Tape& t, ad::Tape::Id h_e, const MaskPlan& plan,
                               const ModelParams& p, const ParamLeaves& w,
                               DecodeProbe* probe = nullptr) {
    const auto& cfg = p.config;
    if (t.shape(h_e)[0] != plan.num_visible())
        throw numeric_error("encoder latent count " + std::to_string(t.shape(h_e)[0]) +
                            " does not match plan visible count " +
                            std::to_string(plan.num_visible()));
    const std::size_t L = plan.num_patches;

    auto dec_vis = t.linear(h_e, w[p.dec_in_w], w[p.dec_in_b]);
    auto ones = t.constant(std::vector<double>(L, 1.0), {L, 1});
    auto token_template = t.matmul(ones, w[p.mask_token]);
    auto seq = t.scatter_rows(dec_vis, plan.visible(), token_template);
    if (probe) probe->pre_positional = t.val(seq);
    auto pos = t.constant(sincos_pos_embed(cfg.grid_side(), cfg.grid_side(), cfg.decoder_dim),
                          {L, cfg.decoder_dim});
    auto x = t.add(seq, pos);
    for (const auto& b : p.dec_blocks)
        x = detail::transformer_block(t, x, b, w, cfg.heads, probe ? &probe->attn : nullptr);
    return {x, t.linear(x, w[p.out_w], w[p.out_b])};
}

/// Eq.-style masked loss in patch space: because masking is per-patch,
/// the mean over masked pixels of the channel-averaged squared error
/// equals the summed squared error over masked patch rows divided by
/// |masked| * P^2 * C.
inline ad::Tape::Id masked_patch_loss_t(ad::Tape& t, ad::Tape::Id out_rows,
                                        ad::Tape::Id target_rows, const MaskPlan& plan,
                                        const ModelConfig& cfg) {
    if (plan.masked.empty()) throw numeric_error("masked loss: empty mask");
    auto pm = t.gather_rows(out_rows, plan.masked);
    auto tm = t.gather_rows(target_rows, plan.masked);
    auto diff = t.add(pm, t.scale(tm, -1.0));
    const double denom = static_cast<double>(plan.masked.size()) *
                         static_cast<double>(cfg.patch_side * cfg.patch_side) *
                         static_cast<double>(cfg.channels);
    return t.scale(t.sum_all(t.mul(diff, diff)), 1.0 / denom);
}

struct MaeForward {
    ad::Tape::Id loss;
    ad::Tape::Id h_e;
    ad::Tape::Id h_d;
    ad::Tape::Id out_rows;
};

/// Full training-path forward for one image on an existing tape. The
/// projection runs over the visible rows only; because linear maps rows
/// independently, this is bit-identical to embedding all L tokens and
/// gathering afterwards (the encode_visible contract), just cheaper.
inline MaeForward mae_forward(ad::Tape& t, const ParamLeaves& w, const ModelParams& p,
                              const PatchSequence& seq, const MaskPlan& plan) {
    const auto& cfg = p.config;
    if (seq.num_patches != cfg.num_patches() || seq.patch_dim() != cfg.patch_dim())
        throw config_error("patch sequence (L=" + std::to_string(seq.num_patches) + ", dim=" +
                           std::to_string(seq.patch_dim()) + ") does not match model (L=" +
                           std::to_string(cfg.num_patches()) + ", dim=" +
                           std::to_string(cfg.patch_dim()) + ")");
    auto patch_rows = t.constant(seq.patches, {seq.num_patches, seq.patch_dim()});

    const auto visible = plan.visible();
    const auto pos = sincos_pos_embed(cfg.grid_side(), cfg.grid_side(), cfg.embed_dim);
    std::vector<double> vis_pos(visible.size() * cfg.embed_dim);
    for (std::size_t r = 0; r < visible.size(); ++r)
        std::copy_n(&pos[visible[r] * cfg.embed_dim], cfg.embed_dim,
                    &vis_pos[r * cfg.embed_dim]);

    auto vis_tokens = t.add(
        t.linear(t.gather_rows(patch_rows, visible), w[p.proj_w], w[p.proj_b]),
        t.constant(std::move(vis_pos), {visible.size(), cfg.embed_dim}));
    auto h_e = vis_tokens;
    for (const auto& b : p.enc_blocks)
        h_e = detail::transformer_block(t, h_e, b, w, cfg.heads, nullptr);

    auto dec = decode_full_t(t, h_e, plan, p, w);
    auto loss = masked_patch_loss_t(t, dec.out_rows, patch_rows, plan, cfg);
    return {loss, h_e, dec.h_d, dec.out_rows};
}

// ---- value-level wrappers ----

inline std::vector<double> embed_patches(const PatchSequence& seq, const ModelParams& p) {
    ad::Tape t;
    const auto w = param_leaves(t, p, false);
    auto rows = t.constant(seq.patches, {seq.num_patches, seq.patch_dim()});
    return t.val(embed_patches_t(t, rows, p, w));
}

inline std::vector<double> encode_visible(const std::vector<double>& tokens,
                                          const MaskPlan& plan, const ModelParams& p,
                                          AttnProbe* probe = nullptr) {
    ad::Tape t;
    const auto w = param_leaves(t, p, false);
    auto tok = t.constant(tokens, {plan.num_patches, p.config.embed_dim});
    return t.val(encode_visible_t(t, tok, plan, p, w, probe));
}

struct Reconstruction {
    Raster image_hat;
    std::vector<double> encoder_latents; // (L - |masked|) x D
    std::vector<double> decoder_latents; // L x decoder_dim
};

inline Reconstruction decode_full(const std::vector<double>& h_e, const MaskPlan& plan,
                                  const ModelParams& p, const std::vector<BandInfo>& bands = {},
                                  DecodeProbe* probe = nullptr) {
    ad::Tape t;
    const auto w = param_leaves(t, p, false);
    auto latents = t.constant(h_e, {plan.num_visible(), p.config.embed_dim});
    auto dec = decode_full_t(t, latents, plan, p, w, probe);

    PatchSequence seq;
    seq.patch_side = p.config.patch_side;
    seq.num_patches = plan.num_patches;
    seq.channels = p.config.channels;
    seq.height = plan.height;
    seq.width = plan.width;
    seq.bands = bands;
    seq.patches = t.val(dec.out_rows);

    Reconstruction rec;
    rec.image_hat = unpatchify(seq);
    rec.encoder_latents = h_e;
    rec.decoder_latents = t.val(dec.h_d);
    return rec;
}

/// Eq.-style masked MSE over pixels, computed through the masked_mse
/// primitive on the concrete reconstruction.
inline double reconstruction_loss(const Raster& image, const Reconstruction& recon,
                                  const MaskPlan& plan) {
    const Raster& hat = recon.image_hat;
    if (hat.channels != image.channels || hat.height != image.height ||
        hat.width != image.width)
        throw numeric_error("reconstruction dims " + std::to_string(hat.channels) + "x" +
                            std::to_string(hat.height) + "x" + std::to_string(hat.width) +
                            " do not match image " + std::to_string(image.channels) + "x" +
                            std::to_string(image.height) + "x" + std::to_string(image.width));
    if (plan.binary.size() != image.pixel_count())
        throw numeric_error("plan mask size does not match image");

    ad::Tape t;
    std::vector<double> pred(hat.data.begin(), hat.data.end());
    std::vector<double> targ(image.data.begin(), image.data.end());
    std::vector<double> mask(plan.binary.begin(), plan.binary.end());
    auto loss = t.masked_mse(
        t.constant(std::move(pred), {image.channels, image.height, image.width}),
        t.constant(std::move(targ), {image.channels, image.height, image.width}),
        t.constant(std::move(mask), {image.height, image.width}));
    return t.scalar_val(loss);
}

// ---- checkpoints ----

struct CheckpointMeta {
    int epochs_done = 0;
    int total_epochs = 0;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
    std::string strategy = "ssdtm";
    double mask_ratio = 0.75;
    double epsilon = 1e-8;
};

/// Checkpoint layout: `<path>` holds the little-endian binary32 payload
/// sections back to back; `<path>.json` is the manifest with the model
/// config, schedule position, seed and one named section per tensor.
inline void save_checkpoint(const ModelParams& p, const CheckpointMeta& meta,
                            const std::string& path,
                            const std::vector<std::vector<double>>* adam_m = nullptr,
                            const std::vector<std::vector<double>>* adam_v = nullptr) {
    nlohmann::ordered_json manifest;
    manifest["version"] = 1;
    manifest["model"] = {{"embed_dim", p.config.embed_dim},
                         {"encoder_depth", p.config.encoder_depth},
                         {"decoder_dim", p.config.decoder_dim},
                         {"decoder_depth", p.config.decoder_depth},
                         {"heads", p.config.heads},
                         {"mlp_ratio", p.config.mlp_ratio},
                         {"patch_side", p.config.patch_side},
                         {"channels", p.config.channels},
                         {"image_side", p.config.image_side}};
    manifest["schedule"] = {{"epochs_done", meta.epochs_done},
                            {"total_epochs", meta.total_epochs},
                            {"step", meta.step}};
    manifest["seed"] = meta.seed;
    manifest["strategy"] = meta.strategy;
    manifest["mask_ratio"] = meta.mask_ratio;
    manifest["epsilon"] = meta.epsilon;

    std::vector<float> payload;
    auto sections = nlohmann::ordered_json::array();
    auto append = [&](const std::string& name, const ad::Shape& shape,
                      const std::vector<double>& v) {
        sections.push_back({{"name", name},
                            {"shape", shape},
                            {"offset", payload.size() * 4},
                            {"count", v.size()}});
        for (double x : v) payload.push_back(static_cast<float>(x));
    };
    for (const auto& t : p.set.tensors) append(t.name, t.shape, t.v);
    if (adam_m && adam_v) {
        for (std::size_t i = 0; i < p.set.size(); ++i) {
            append("adam_m." + p.set[i].name, p.set[i].shape, (*adam_m)[i]);
            append("adam_v." + p.set[i].name, p.set[i].shape, (*adam_v)[i]);
        }
    }
    manifest["params"] = sections;

    std::ofstream side(path + ".json", std::ios::trunc);
    if (!side) throw data_error("cannot write checkpoint manifest " + path + ".json");
    side << manifest.dump(2) << '\n';
    side.close();
    if (!side) throw data_error("failed writing checkpoint manifest " + path + ".json");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write checkpoint payload " + path);
    std::vector<std::uint32_t> buf(payload.size());
    std::memcpy(buf.data(), payload.data(), payload.size() * 4);
    for (auto& wle : buf) wle = detail::to_le32(wle);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw data_error("failed writing checkpoint payload " + path);
}

struct Checkpoint {
    ModelParams params;
    CheckpointMeta meta;
    std::vector<std::vector<double>> adam_m, adam_v; // empty when absent
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream side(path + ".json");
    if (!side) throw data_error("missing checkpoint manifest " + path + ".json");
    nlohmann::json manifest;
    try {
        side >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("corrupt checkpoint manifest " + path + ".json: " + e.what());
    }

    Checkpoint ck;
    try {
        const auto& m = manifest.at("model");
        ModelConfig cfg;
        cfg.embed_dim = m.at("embed_dim").get<std::size_t>();
        cfg.encoder_depth = m.at("encoder_depth").get<std::size_t>();
        cfg.decoder_dim = m.at("decoder_dim").get<std::size_t>();
        cfg.decoder_depth = m.at("decoder_depth").get<std::size_t>();
        cfg.heads = m.at("heads").get<std::size_t>();
        cfg.mlp_ratio = m.at("mlp_ratio").get<std::size_t>();
        cfg.patch_side = m.at("patch_side").get<std::size_t>();
        cfg.channels = m.at("channels").get<std::size_t>();
        cfg.image_side = m.at("image_side").get<std::size_t>();
        ck.params = make_params(cfg);
        ck.meta.epochs_done = manifest.at("schedule").at("epochs_done").get<int>();
        ck.meta.total_epochs = manifest.at("schedule").at("total_epochs").get<int>();
        ck.meta.step = manifest.at("schedule").at("step").get<std::int64_t>();
        ck.meta.seed = manifest.at("seed").get<std::uint64_t>();
        ck.meta.strategy = manifest.at("strategy").get<std::string>();
        ck.meta.mask_ratio = manifest.at("mask_ratio").get<double>();
        ck.meta.epsilon = manifest.at("epsilon").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error("checkpoint manifest " + path + ".json missing field: " + e.what());
    }

    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw data_error("missing checkpoint payload " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint32_t> buf(bytes / 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw data_error("failed reading checkpoint payload " + path);

    auto read_section = [&](std::size_t offset, std::size_t count) {
        if (offset % 4 != 0 || offset / 4 + count > buf.size())
            throw data_error("checkpoint section out of payload bounds in " + path);
        std::vector<double> v(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint32_t wle = detail::to_le32(buf[offset / 4 + i]);
            float f;
            std::memcpy(&f, &wle, 4);
            if (!std::isfinite(f))
                throw data_error("non-finite checkpoint value in " + path + " at byte offset " +
                                 std::to_string(offset + i * 4));
            v[i] = f;
        }
        return v;
    };

    std::size_t found = 0;
    for (const auto& sec : manifest.at("params")) {
        const auto name = sec.at("name").get<std::string>();
        const auto offset = sec.at("offset").get<std::size_t>();
        const auto count = sec.at("count").get<std::size_t>();
        if (name.starts_with("adam_m.") || name.starts_with("adam_v.")) {
            auto& dst = name.starts_with("adam_m.") ? ck.adam_m : ck.adam_v;
            if (dst.empty()) dst.resize(ck.params.set.size());
            const std::string base = name.substr(7);
            for (std::size_t i = 0; i < ck.params.set.size(); ++i)
                if (ck.params.set[i].name == base) {
                    dst[i] = read_section(offset, count);
                    break;
                }
            continue;
        }
        bool matched = false;
        for (auto& tns : ck.params.set.tensors)
            if (tns.name == name) {
                if (tns.count() != count)
                    throw data_error("checkpoint section '" + name + "' holds " +
                                     std::to_string(count) + " values, model expects " +
                                     std::to_string(tns.count()));
                tns.v = read_section(offset, count);
                matched = true;
                ++found;
                break;
            }
        if (!matched) throw data_error("checkpoint section '" + name + "' unknown to model");
    }
    if (found != ck.params.set.size())
        throw data_error("checkpoint is missing " + std::to_string(ck.params.set.size() - found) +
                         " parameter sections");
    return ck;
}

/// FNV-1a fingerprint of the checkpoint payload bytes.
inline std::string checkpoint_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("missing checkpoint payload " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

} // namespace sigmae
