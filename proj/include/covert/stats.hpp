// Small statistics helpers for experiment evaluation: summary moments and a
// Spearman rank-correlation trend test (normal approximation, adequate for
// the series lengths used here).

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace covert {

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean: empty vector");
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

inline double sample_stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

/// Average ranks, ties shared.
inline std::vector<double> ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double shared = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = shared;
        i = j + 1;
    }
    return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("pearson: need two vectors of equal size >= 2");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(ranks(x), ranks(y));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct TrendTest {
    double rho = 0.0;
    double p_value = 1.0; // one-sided, for trend in the requested direction
};

/// Spearman trend of a series against its index. `direction` +1 tests for an
/// increasing trend, -1 for a decreasing one.
inline TrendTest spearman_trend(const std::vector<double>& series, int direction) {
    if (series.size() < 3) throw std::invalid_argument("spearman_trend: series too short");
    std::vector<double> idx(series.size());
    std::iota(idx.begin(), idx.end(), 0.0);
    TrendTest t;
    t.rho = spearman_rho(idx, series);
    const double z = t.rho * std::sqrt(double(series.size()) - 1.0);
    t.p_value = direction >= 0 ? 1.0 - normal_cdf(z) : normal_cdf(z);
    return t;
}

} // namespace covert
