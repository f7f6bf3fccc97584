#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sigmae/errors.hpp"

namespace sigmae::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// gelu tanh approximation; 0.044715 is the cubic coefficient that pairs
// with sqrt(2/pi).
inline constexpr double kGeluC = 0.7978845608028654;
inline constexpr double kGeluK = 0.044715;
inline constexpr double kLayerNormEps = 1e-6;

inline double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x)));
}

inline double gelu_derivative(double x) {
    const double u = kGeluC * (x + kGeluK * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluK * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

/// Reverse-mode tape over dense double tensors. Nodes are appended in
/// evaluation order, which is already topological, so backward() is one
/// reverse sweep. A tape serves a single forward/backward pass.
class Tape {
public:
    using Id = std::int32_t;

    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad; // allocated by backward()
        std::function<void(Tape&)> back;
        bool needs_grad = false;
    };

    Id leaf(std::vector<double> values, Shape shape, bool needs_grad = false) {
        if (values.size() != numel(shape))
            throw numeric_error("leaf value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
        return push(std::move(shape), std::move(values), needs_grad);
    }

    Id constant(std::vector<double> values, Shape shape) {
        return leaf(std::move(values), std::move(shape), false);
    }

    const Shape& shape(Id id) const { return at(id).shape; }
    const std::vector<double>& val(Id id) const { return at(id).val; }
    double scalar_val(Id id) const {
        const Node& n = at(id);
        if (n.val.size() != 1)
            throw numeric_error("expected scalar node, got shape " + shape_str(n.shape));
        return n.val[0];
    }
    const std::vector<double>& grad(Id id) const {
        const Node& n = at(id);
        if (!n.needs_grad)
            throw numeric_error("gradient requested for a node that does not require it");
        return n.grad;
    }
    std::size_t node_count() const { return nodes_.size(); }

    /// Elementwise sum; shapes must match exactly.
    Id add(Id a, Id b) {
        require_same_shape("add", a, b);
        const auto &va = at(a).val, &vb = at(b).val;
        std::vector<double> out(va.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
        const Id r = push(at(a).shape, std::move(out), needs(a) || needs(b));
        if (at(r).needs_grad)
            at(r).back = [a, b, r](Tape& t) {
                const auto& g = t.at(r).grad;
                if (t.needs(a)) {
                    auto& ga = t.at(a).grad;
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (t.needs(b)) {
                    auto& gb = t.at(b).grad;
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
            };
        return r;
    }

    /// Hadamard product.
    Id mul(Id a, Id b) {
        require_same_shape("mul", a, b);
        const auto &va = at(a).val, &vb = at(b).val;
        std::vector<double> out(va.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
        const Id r = push(at(a).shape, std::move(out), needs(a) || needs(b));
        if (at(r).needs_grad)
            at(r).back = [a, b, r](Tape& t) {
                const auto& g = t.at(r).grad;
                if (t.needs(a)) {
                    auto& ga = t.at(a).grad;
                    const auto& vb2 = t.at(b).val;
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb2[i];
                }
                if (t.needs(b)) {
                    auto& gb = t.at(b).grad;
                    const auto& va2 = t.at(a).val;
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va2[i];
                }
            };
        return r;
    }

    /// Multiply by a compile-time constant scalar.
    Id scale(Id a, double s) {
        const auto& va = at(a).val;
        std::vector<double> out(va.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * va[i];
        const Id r = push(at(a).shape, std::move(out), needs(a));
        if (at(r).needs_grad)
            at(r).back = [a, s, r](Tape& t) {
                const auto& g = t.at(r).grad;
                auto& ga = t.at(a).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
            };
        return r;
    }

    /// Matrix product of 2D operands, [m, k] x [k, n] -> [m, n].
    Id matmul(Id a, Id b) {
        require_rank("matmul", a, 2);
        require_rank("matmul", b, 2);
        const std::size_t m = at(a).shape[0], k = at(a).shape[1];
        const std::size_t k2 = at(b).shape[0], n = at(b).shape[1];
        if (k != k2)
            throw numeric_error("matmul: inner dimensions differ: " + shape_str(at(a).shape) +
                                " vs " + shape_str(at(b).shape));
        std::vector<double> out(m * n, 0.0);
        {
            const auto &va = at(a).val, &vb = at(b).val;
            for (std::size_t i = 0; i < m; ++i) {
                double* crow = &out[i * n];
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = va[i * k + p];
                    const double* brow = &vb[p * n];
                    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
            }
        }
        const Id r = push({m, n}, std::move(out), needs(a) || needs(b));
        if (at(r).needs_grad)
            at(r).back = [a, b, r, m, k, n](Tape& t) {
                const auto& g = t.at(r).grad;
                if (t.needs(a)) {
                    auto& ga = t.at(a).grad;
                    const auto& vb2 = t.at(b).val;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            double acc = 0.0;
                            const double* grow = &g[i * n];
                            const double* brow = &vb2[p * n];
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            ga[i * k + p] += acc;
                        }
                }
                if (t.needs(b)) {
                    auto& gb = t.at(b).grad;
                    const auto& va2 = t.at(a).val;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = &g[i * n];
                        for (std::size_t p = 0; p < k; ++p) {
                            const double av = va2[i * k + p];
                            double* gbrow = &gb[p * n];
                            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
            };
        return r;
    }

    Id transpose(Id a) {
        require_rank("transpose", a, 2);
        const std::size_t m = at(a).shape[0], n = at(a).shape[1];
        std::vector<double> out(m * n);
        const auto& va = at(a).val;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[j * m + i] = va[i * n + j];
        const Id r = push({n, m}, std::move(out), needs(a));
        if (at(r).needs_grad)
            at(r).back = [a, r, m, n](Tape& t) {
                const auto& g = t.at(r).grad;
                auto& ga = t.at(a).grad;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
            };
        return r;
    }

    Id gelu(Id a) {
        const auto& va = at(a).val;
        std::vector<double> out(va.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(va[i]);
        const Id r = push(at(a).shape, std::move(out), needs(a));
        if (at(r).needs_grad)
            at(r).back = [a, r](Tape& t) {
                const auto& g = t.at(r).grad;
                const auto& va2 = t.at(a).val;
                auto& ga = t.at(a).grad;
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * gelu_derivative(va2[i]);
            };
        return r;
    }

    /// Softmax over the last axis, max-shifted for stability.
    Id softmax(Id a) {
        const Shape& sh = at(a).shape;
        if (sh.empty() || sh.back() == 0)
            throw numeric_error("softmax: empty last axis in shape " + shape_str(sh));
        const std::size_t n = sh.back();
        const std::size_t rows = numel(sh) / n;
        const auto& va = at(a).val;
        std::vector<double> out(va.size());
        for (std::size_t rix = 0; rix < rows; ++rix) {
            const double* x = &va[rix * n];
            double* y = &out[rix * n];
            double mx = x[0];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
        }
        const Id r = push(sh, std::move(out), needs(a));
        if (at(r).needs_grad)
            at(r).back = [a, r, rows, n](Tape& t) {
                const auto& g = t.at(r).grad;
                const auto& y = t.at(r).val;
                auto& ga = t.at(a).grad;
                for (std::size_t rix = 0; rix < rows; ++rix) {
                    const double* gr = &g[rix * n];
                    const double* yr = &y[rix * n];
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                    double* gar = &ga[rix * n];
                    for (std::size_t j = 0; j < n; ++j) gar[j] += yr[j] * (gr[j] - dot);
                }
            };
        return r;
    }

    /// Layer normalization over the last axis with learnable gain/bias
    /// (population variance, eps = kLayerNormEps).
    Id layer_norm(Id x, Id gain, Id bias) {
        const Shape& sh = at(x).shape;
        if (sh.empty() || sh.back() == 0)
            throw numeric_error("layer_norm: empty last axis in shape " + shape_str(sh));
        const std::size_t n = sh.back();
        const std::size_t rows = numel(sh) / n;
        if (at(gain).val.size() != n || at(bias).val.size() != n)
            throw numeric_error("layer_norm: gain/bias shapes " + shape_str(at(gain).shape) +
                                "/" + shape_str(at(bias).shape) + " do not match last axis of " +
                                shape_str(sh));
        const auto& vx = at(x).val;
        const auto& vg = at(gain).val;
        const auto& vb = at(bias).val;
        std::vector<double> out(vx.size());
        std::vector<double> xhat(vx.size());
        std::vector<double> inv_std(rows);
        for (std::size_t rix = 0; rix < rows; ++rix) {
            const double* xr = &vx[rix * n];
            double mean = 0.0;
            for (std::size_t j = 0; j < n; ++j) mean += xr[j];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double d = xr[j] - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            inv_std[rix] = inv;
            for (std::size_t j = 0; j < n; ++j) {
                const double h = (xr[j] - mean) * inv;
                xhat[rix * n + j] = h;
                out[rix * n + j] = vg[j] * h + vb[j];
            }
        }
        const Id r = push(sh, std::move(out), needs(x) || needs(gain) || needs(bias));
        if (at(r).needs_grad)
            at(r).back = [x, gain, bias, r, rows, n, xhat = std::move(xhat),
                          inv_std = std::move(inv_std)](Tape& t) {
                const auto& g = t.at(r).grad;
                const auto& vg2 = t.at(gain).val;
                for (std::size_t rix = 0; rix < rows; ++rix) {
                    const double* gr = &g[rix * n];
                    const double* hr = &xhat[rix * n];
                    if (t.needs(gain)) {
                        auto& gg = t.at(gain).grad;
                        for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * hr[j];
                    }
                    if (t.needs(bias)) {
                        auto& gb = t.at(bias).grad;
                        for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
                    }
                    if (t.needs(x)) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                            const double dh = gr[j] * vg2[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= static_cast<double>(n);
                        m2 /= static_cast<double>(n);
                        auto& gx = t.at(x).grad;
                        for (std::size_t j = 0; j < n; ++j) {
                            const double dh = gr[j] * vg2[j];
                            gx[rix * n + j] += inv_std[rix] * (dh - m1 - hr[j] * m2);
                        }
                    }
                }
            };
        return r;
    }

    /// Affine map y = x W + b with b broadcast over rows.
    Id linear(Id x, Id w, Id b) {
        require_rank("linear", x, 2);
        require_rank("linear", w, 2);
        const std::size_t rows = at(x).shape[0], in = at(x).shape[1];
        const std::size_t in2 = at(w).shape[0], out_dim = at(w).shape[1];
        if (in != in2)
            throw numeric_error("linear: input dim mismatch " + shape_str(at(x).shape) + " vs " +
                                shape_str(at(w).shape));
        if (at(b).val.size() != out_dim)
            throw numeric_error("linear: bias shape " + shape_str(at(b).shape) +
                                " does not match output dim " + std::to_string(out_dim));
        const auto &vx = at(x).val, &vw = at(w).val, &vb = at(b).val;
        std::vector<double> out(rows * out_dim);
        for (std::size_t i = 0; i < rows; ++i) {
            double* yr = &out[i * out_dim];
            for (std::size_t j = 0; j < out_dim; ++j) yr[j] = vb[j];
            for (std::size_t p = 0; p < in; ++p) {
                const double xv = vx[i * in + p];
                const double* wr = &vw[p * out_dim];
                for (std::size_t j = 0; j < out_dim; ++j) yr[j] += xv * wr[j];
            }
        }
        const Id r = push({rows, out_dim}, std::move(out), needs(x) || needs(w) || needs(b));
        if (at(r).needs_grad)
            at(r).back = [x, w, b, r, rows, in, out_dim](Tape& t) {
                const auto& g = t.at(r).grad;
                if (t.needs(x)) {
                    auto& gx = t.at(x).grad;
                    const auto& vw2 = t.at(w).val;
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t p = 0; p < in; ++p) {
                            double acc = 0.0;
                            const double* gr = &g[i * out_dim];
                            const double* wr = &vw2[p * out_dim];
                            for (std::size_t j = 0; j < out_dim; ++j) acc += gr[j] * wr[j];
                            gx[i * in + p] += acc;
                        }
                }
                if (t.needs(w)) {
                    auto& gw = t.at(w).grad;
                    const auto& vx2 = t.at(x).val;
                    for (std::size_t i = 0; i < rows; ++i) {
                        const double* gr = &g[i * out_dim];
                        for (std::size_t p = 0; p < in; ++p) {
                            const double xv = vx2[i * in + p];
                            double* gwr = &gw[p * out_dim];
                            for (std::size_t j = 0; j < out_dim; ++j) gwr[j] += xv * gr[j];
                        }
                    }
                }
                if (t.needs(b)) {
                    auto& gb = t.at(b).grad;
                    for (std::size_t i = 0; i < rows; ++i) {
                        const double* gr = &g[i * out_dim];
                        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += gr[j];
                    }
                }
            };
        return r;
    }

    /// Extract rows by index list (duplicates allowed).
    Id gather_rows(Id x, std::vector<std::size_t> idx) {
        require_rank("gather_rows", x, 2);
        const std::size_t rows = at(x).shape[0], d = at(x).shape[1];
        for (auto i : idx)
            if (i >= rows)
                throw numeric_error("gather_rows: index " + std::to_string(i) +
                                    " out of range for " + shape_str(at(x).shape));
        const auto& vx = at(x).val;
        std::vector<double> out(idx.size() * d);
        for (std::size_t ridx = 0; ridx < idx.size(); ++ridx)
            std::copy_n(&vx[idx[ridx] * d], d, &out[ridx * d]);
        const std::size_t m = idx.size();
        const Id r = push({m, d}, std::move(out), needs(x));
        if (at(r).needs_grad)
            at(r).back = [x, r, d, idx = std::move(idx)](Tape& t) {
                const auto& g = t.at(r).grad;
                auto& gx = t.at(x).grad;
                for (std::size_t ridx = 0; ridx < idx.size(); ++ridx) {
                    const double* gr = &g[ridx * d];
                    double* gxr = &gx[idx[ridx] * d];
                    for (std::size_t j = 0; j < d; ++j) gxr[j] += gr[j];
                }
            };
        return r;
    }

    /// Copy of `templ` with `rows` placed at the (distinct) indices.
    Id scatter_rows(Id rows, std::vector<std::size_t> idx, Id templ) {
        require_rank("scatter_rows", rows, 2);
        require_rank("scatter_rows", templ, 2);
        const std::size_t m = at(rows).shape[0], d = at(rows).shape[1];
        const std::size_t n = at(templ).shape[0], d2 = at(templ).shape[1];
        if (d != d2 || m != idx.size())
            throw numeric_error("scatter_rows: rows " + shape_str(at(rows).shape) + " with " +
                                std::to_string(idx.size()) + " indices into " +
                                shape_str(at(templ).shape));
        std::vector<std::uint8_t> taken(n, 0);
        for (auto i : idx) {
            if (i >= n)
                throw numeric_error("scatter_rows: index " + std::to_string(i) +
                                    " out of range for " + shape_str(at(templ).shape));
            if (taken[i]++)
                throw numeric_error("scatter_rows: duplicate index " + std::to_string(i));
        }
        std::vector<double> out = at(templ).val;
        const auto& vr = at(rows).val;
        for (std::size_t ridx = 0; ridx < m; ++ridx)
            std::copy_n(&vr[ridx * d], d, &out[idx[ridx] * d]);
        const Id r = push({n, d}, std::move(out), needs(rows) || needs(templ));
        if (at(r).needs_grad)
            at(r).back = [rows, templ, r, d, n, idx = std::move(idx),
                          taken = std::move(taken)](Tape& t) {
                const auto& g = t.at(r).grad;
                if (t.needs(rows)) {
                    auto& gr = t.at(rows).grad;
                    for (std::size_t ridx = 0; ridx < idx.size(); ++ridx) {
                        const double* gsrc = &g[idx[ridx] * d];
                        double* gdst = &gr[ridx * d];
                        for (std::size_t j = 0; j < d; ++j) gdst[j] += gsrc[j];
                    }
                }
                if (t.needs(templ)) {
                    auto& gt = t.at(templ).grad;
                    for (std::size_t i = 0; i < n; ++i) {
                        if (taken[i]) continue;
                        const double* gsrc = &g[i * d];
                        double* gdst = &gt[i * d];
                        for (std::size_t j = 0; j < d; ++j) gdst[j] += gsrc[j];
                    }
                }
            };
        return r;
    }

    /// Vertical stack of two row-major matrices with equal column count.
    Id concat_rows(Id a, Id b) {
        require_rank("concat_rows", a, 2);
        require_rank("concat_rows", b, 2);
        const std::size_t m = at(a).shape[0], d = at(a).shape[1];
        const std::size_t n = at(b).shape[0], d2 = at(b).shape[1];
        if (d != d2)
            throw numeric_error("concat_rows: column mismatch " + shape_str(at(a).shape) +
                                " vs " + shape_str(at(b).shape));
        std::vector<double> out;
        out.reserve((m + n) * d);
        out.insert(out.end(), at(a).val.begin(), at(a).val.end());
        out.insert(out.end(), at(b).val.begin(), at(b).val.end());
        const Id r = push({m + n, d}, std::move(out), needs(a) || needs(b));
        if (at(r).needs_grad)
            at(r).back = [a, b, r, m, n, d](Tape& t) {
                const auto& g = t.at(r).grad;
                if (t.needs(a)) {
                    auto& ga = t.at(a).grad;
                    for (std::size_t i = 0; i < m * d; ++i) ga[i] += g[i];
                }
                if (t.needs(b)) {
                    auto& gb = t.at(b).grad;
                    for (std::size_t i = 0; i < n * d; ++i) gb[i] += g[m * d + i];
                }
            };
        return r;
    }

    /// Masked reconstruction error: mean over masked pixels of the
    /// channel-averaged squared difference. pred/target are [C, H, W],
    /// mask is [H, W] with 1 marking masked pixels.
    Id masked_mse(Id pred, Id target, Id mask) {
        require_rank("masked_mse", pred, 3);
        require_same_shape("masked_mse", pred, target);
        require_rank("masked_mse", mask, 2);
        const std::size_t c = at(pred).shape[0];
        const std::size_t hw = at(pred).shape[1] * at(pred).shape[2];
        if (at(mask).shape[0] != at(pred).shape[1] || at(mask).shape[1] != at(pred).shape[2])
            throw numeric_error("masked_mse: mask shape " + shape_str(at(mask).shape) +
                                " does not match image " + shape_str(at(pred).shape));
        const auto& vm = at(mask).val;
        double mask_count = 0.0;
        for (double m : vm) mask_count += m;
        if (mask_count <= 0.0) throw numeric_error("masked_mse: empty mask");

        const auto &vp = at(pred).val, &vt = at(target).val;
        double acc = 0.0;
        for (std::size_t px = 0; px < hw; ++px) {
            if (vm[px] == 0.0) continue;
            double pix = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double d = vp[ch * hw + px] - vt[ch * hw + px];
                pix += d * d;
            }
            acc += vm[px] * pix / static_cast<double>(c);
        }
        const Id r = push({1}, {acc / mask_count}, needs(pred) || needs(target));
        if (at(r).needs_grad)
            at(r).back = [pred, target, mask, r, c, hw, mask_count](Tape& t) {
                const double g = t.at(r).grad[0];
                const auto &vp2 = t.at(pred).val, &vt2 = t.at(target).val;
                const auto& vm2 = t.at(mask).val;
                const double coef = 2.0 * g / (mask_count * static_cast<double>(c));
                for (std::size_t px = 0; px < hw; ++px) {
                    if (vm2[px] == 0.0) continue;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const double d = coef * vm2[px] * (vp2[ch * hw + px] - vt2[ch * hw + px]);
                        if (t.needs(pred)) t.at(pred).grad[ch * hw + px] += d;
                        if (t.needs(target)) t.at(target).grad[ch * hw + px] -= d;
                    }
                }
            };
        return r;
    }

    /// Sum of all entries, as a scalar.
    Id sum_all(Id a) {
        const auto& va = at(a).val;
        double acc = 0.0;
        for (double v : va) acc += v;
        const Id r = push({1}, {acc}, needs(a));
        if (at(r).needs_grad)
            at(r).back = [a, r](Tape& t) {
                const double g = t.at(r).grad[0];
                auto& ga = t.at(a).grad;
                for (auto& v : ga) v += g;
            };
        return r;
    }

    /// Same data, new shape (copies; tapes are immutable once written).
    Id reshape(Id a, Shape shape) {
        if (numel(shape) != at(a).val.size())
            throw numeric_error("reshape: cannot view " + shape_str(at(a).shape) + " as " +
                                shape_str(shape));
        std::vector<double> out = at(a).val;
        const Id r = push(std::move(shape), std::move(out), needs(a));
        if (at(r).needs_grad)
            at(r).back = [a, r](Tape& t) {
                const auto& g = t.at(r).grad;
                auto& ga = t.at(a).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            };
        return r;
    }

    /// Reverse sweep from a scalar root. Leaves that do not influence the
    /// root end up with zero gradients.
    void backward(Id root) {
        const Node& rn = at(root);
        if (rn.val.size() != 1)
            throw numeric_error("backward: root must be scalar, got shape " +
                                shape_str(rn.shape));
        for (auto& n : nodes_)
            if (n.needs_grad) n.grad.assign(n.val.size(), 0.0);
        if (!rn.needs_grad) return; // constant root: all gradients stay zero
        nodes_[static_cast<std::size_t>(root)].grad[0] = 1.0;
        for (Id i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.needs_grad && n.back) n.back(*this);
        }
    }

private:
    std::vector<Node> nodes_;

    Node& at(Id id) {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw numeric_error("invalid tape node id " + std::to_string(id));
        return nodes_[static_cast<std::size_t>(id)];
    }
    const Node& at(Id id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw numeric_error("invalid tape node id " + std::to_string(id));
        return nodes_[static_cast<std::size_t>(id)];
    }

    bool needs(Id id) const { return at(id).needs_grad; }

    Id push(Shape shape, std::vector<double> values, bool needs_grad) {
        Node n;
        n.shape = std::move(shape);
        n.val = std::move(values);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    void require_same_shape(const char* op, Id a, Id b) const {
        if (at(a).shape != at(b).shape)
            throw numeric_error(std::string(op) + ": shape mismatch " + shape_str(at(a).shape) +
                                " vs " + shape_str(at(b).shape));
    }

    void require_rank(const char* op, Id a, std::size_t rank) const {
        if (at(a).shape.size() != rank)
            throw numeric_error(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(at(a).shape));
    }
};

/// One named input of a finite-difference check.
struct FdPoint {
    Shape shape;
    std::vector<double> values;
};

/// Builds a scalar root from differentiable leaves created by the harness.
using FdBuilder = std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>;

/// Central-difference comparison against reverse-mode gradients. Returns
/// the maximum relative error over all coordinates, with denominators
/// floored at 1e-8.
inline double finite_difference_check(const FdBuilder& f, const std::vector<FdPoint>& point,
                                      double h = 1e-5) {
    if (!(h > 0.0)) throw numeric_error("finite_difference_check: h must be positive");

    const auto eval = [&](const std::vector<FdPoint>& p) {
        Tape t;
        std::vector<Tape::Id> leaves;
        leaves.reserve(p.size());
        for (const auto& fp : p) leaves.push_back(t.leaf(fp.values, fp.shape, false));
        const double v = t.scalar_val(f(t, leaves));
        if (!std::isfinite(v))
            throw numeric_error("finite_difference_check: non-finite evaluation");
        return v;
    };

    Tape t;
    std::vector<Tape::Id> leaves;
    leaves.reserve(point.size());
    for (const auto& fp : point) leaves.push_back(t.leaf(fp.values, fp.shape, true));
    const Tape::Id root = f(t, leaves);
    if (!std::isfinite(t.scalar_val(root)))
        throw numeric_error("finite_difference_check: non-finite evaluation");
    t.backward(root);

    double max_rel = 0.0;
    std::vector<FdPoint> work = point;
    for (std::size_t leaf = 0; leaf < point.size(); ++leaf) {
        const auto& analytic = t.grad(leaves[leaf]);
        for (std::size_t i = 0; i < point[leaf].values.size(); ++i) {
            const double orig = work[leaf].values[i];
            work[leaf].values[i] = orig + h;
            const double up = eval(work);
            work[leaf].values[i] = orig - h;
            const double down = eval(work);
            work[leaf].values[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
            max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
        }
    }
    return max_rel;
}

} // namespace sigmae::ad
