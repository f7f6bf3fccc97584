#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sigmae/errors.hpp"

namespace sigmae {

/// Ranks 1..n with ties assigned the average of the ranks they span.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation with average-rank tie handling. Tie-free
/// inputs use the exact integer d^2 identity, so perfectly reversed
/// rankings give -1.0 with no rounding.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw numeric_error("spearman length mismatch: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
    const std::size_t n = a.size();
    if (n < 2) throw numeric_error("spearman requires at least two samples");

    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);

    bool ties = false;
    for (double r : ra)
        if (r != std::floor(r)) { ties = true; break; }
    if (!ties)
        for (double r : rb)
            if (r != std::floor(r)) { ties = true; break; }

    if (!ties) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = ra[i] - rb[i];
            d2 += d * d;
        }
        const double nn = static_cast<double>(n);
        return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
    }

    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) { ma += ra[i]; mb += rb[i]; }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = ra[i] - ma, db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

/// Adjusted Fisher-Pearson skewness G1. Zero-variance samples (and n < 3)
/// report 0 by convention; the degenerate case is detected exactly via
/// min == max because summation rounding can leave m2 a hair above zero.
inline double skewness(const std::vector<double>& v) {
    const std::size_t n = v.size();
    if (n < 3) return 0.0;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*lo == *hi) return 0.0;
    const double nn = static_cast<double>(n);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= nn;
    double m2 = 0.0, m3 = 0.0;
    for (double x : v) {
        const double d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= nn;
    m3 /= nn;
    if (m2 == 0.0) return 0.0;
    const double g1 = m3 / std::pow(m2, 1.5);
    return g1 * std::sqrt(nn * (nn - 1.0)) / (nn - 2.0);
}

struct Histogram {
    std::vector<double> edges;       // bins + 1, edges[0] = min, edges[bins] = max
    std::vector<std::size_t> counts; // bins

    std::size_t total() const {
        std::size_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }
};

/// Equal-width histogram over the observed [min, max]. A degenerate
/// sample (max == min) puts everything in the first bin.
inline Histogram histogram(const std::vector<double>& v, std::size_t bins) {
    if (bins == 0) throw config_error("histogram needs at least one bin");
    if (v.empty()) throw numeric_error("histogram of an empty sample");
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it, hi = *hi_it;
    Histogram h;
    h.edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i)
        h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    h.edges[bins] = hi;
    h.counts.assign(bins, 0);
    if (hi == lo) {
        h.counts[0] = v.size();
        return h;
    }
    for (double x : v) {
        auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
        if (b >= bins) b = bins - 1;
        ++h.counts[b];
    }
    return h;
}

/// FNV-1a 64-bit hash, used for checkpoint and log fingerprints.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

} // namespace sigmae
