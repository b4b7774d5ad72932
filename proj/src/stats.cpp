#include "isd/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace isd::stats {

namespace {

double tail_p(double p_greater, double p_less, Alternative alt) {
    switch (alt) {
        case Alternative::Greater: return std::clamp(p_greater, 0.0, 1.0);
        case Alternative::Less: return std::clamp(p_less, 0.0, 1.0);
        case Alternative::TwoSided: return std::min(1.0, 2.0 * std::min(p_greater, p_less));
    }
    return 1.0;
}

double tie_term(const std::vector<double>& sorted_values) {
    double acc = 0.0;
    for (std::size_t i = 0; i < sorted_values.size();) {
        std::size_t j = i;
        while (j < sorted_values.size() && sorted_values[j] == sorted_values[i]) ++j;
        const double t = static_cast<double>(j - i);
        acc += t * t * t - t;
        i = j;
    }
    return acc;
}

/// Counts of subset sums over integer weights; counts[s] = number of subsets with sum s.
std::vector<double> subset_sum_counts(const std::vector<long>& weights) {
    const long total = std::accumulate(weights.begin(), weights.end(), 0L);
    std::vector<double> counts(static_cast<std::size_t>(total + 1), 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long w : weights) {
        for (long s = reach; s >= 0; --s) counts[static_cast<std::size_t>(s + w)] += counts[static_cast<std::size_t>(s)];
        reach += w;
    }
    return counts;
}

}  // namespace

double normal_sf(double z) {
    if (std::isinf(z)) return z > 0 ? 0.0 : 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), z));
}

double student_t_sf(double t, double df) {
    if (!(df > 0.0)) throw std::invalid_argument("t distribution needs df > 0");
    if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(df), t));
}

double t_two_sided_p(double t, double df) { return std::min(1.0, 2.0 * student_t_sf(std::abs(t), df)); }

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
        i = j;
    }
    return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman needs equal lengths >= 2");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double ma = mean(ra), mb = mean(rb);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

TestResult paired_t(const std::vector<double>& a, const std::vector<double>& b, Alternative alt) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_t: samples differ in length");
    if (a.size() < 2) throw std::invalid_argument("paired_t: needs at least two pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double n = static_cast<double>(d.size());
    const double m = mean(d), sd = sample_sd(d);
    TestResult r;
    r.df = n - 1.0;
    if (sd == 0.0) {
        r.degenerate = true;
        if (m == 0.0) {
            r.statistic = 0.0;
            r.p = 1.0;
        } else {
            r.statistic = m > 0 ? INFINITY : -INFINITY;
            r.p = tail_p(m > 0 ? 0.0 : 1.0, m > 0 ? 1.0 : 0.0, alt);
        }
        return r;
    }
    r.statistic = m / (sd / std::sqrt(n));
    r.p = tail_p(student_t_sf(r.statistic, r.df), student_t_sf(-r.statistic, r.df), alt);
    return r;
}

TestResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y, Alternative alt,
                                Method method) {
    if (x.size() != y.size()) throw std::invalid_argument("wilcoxon_signed_rank: samples differ in length");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] != y[i]) d.push_back(x[i] - y[i]);
    }
    TestResult r;
    if (d.empty()) {
        r.degenerate = true;
        r.p = 1.0;
        return r;
    }
    std::vector<double> mags(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) mags[i] = std::abs(d[i]);
    const auto ranks = average_ranks(mags);
    double w_plus = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0) w_plus += ranks[i];
    r.statistic = w_plus;
    const std::size_t n = d.size();
    const bool exact = method == Method::Exact || (method == Method::Auto && n <= 12);
    if (exact) {
        std::vector<long> doubled(n);
        for (std::size_t i = 0; i < n; ++i) doubled[i] = std::lround(2.0 * ranks[i]);
        const auto counts = subset_sum_counts(doubled);
        const long obs = std::lround(2.0 * w_plus);
        const double total = std::ldexp(1.0, static_cast<int>(n));
        double ge = 0.0, le = 0.0;
        for (std::size_t s = 0; s < counts.size(); ++s) {
            if (static_cast<long>(s) >= obs) ge += counts[s];
            if (static_cast<long>(s) <= obs) le += counts[s];
        }
        r.exact = true;
        r.p = tail_p(ge / total, le / total, alt);
        return r;
    }
    const double nn = static_cast<double>(n);
    std::sort(mags.begin(), mags.end());
    const double mu = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term(mags) / 48.0;
    if (var <= 0.0) {
        r.degenerate = true;
        r.p = 1.0;
        return r;
    }
    const double sd = std::sqrt(var);
    r.p = tail_p(normal_sf((w_plus - mu - 0.5) / sd), normal_sf(-(w_plus - mu + 0.5) / sd), alt);
    return r;
}

TestResult ranksum(const std::vector<double>& a, const std::vector<double>& b, Alternative alt, Method method) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ranksum: both samples must be non-empty");
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto ranks = average_ranks(pooled);
    const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
    const double N = n1 + n2;
    double r1 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) r1 += ranks[i];
    TestResult r;
    r.statistic = r1 - n1 * (n1 + 1.0) / 2.0;
    const bool exact = method == Method::Exact || (method == Method::Auto && a.size() <= 10 && b.size() <= 10);
    if (exact) {
        // Distribution of the doubled rank sum of |a| items drawn from the pool.
        const std::size_t k = a.size();
        std::vector<long> doubled(pooled.size());
        long total = 0;
        for (std::size_t i = 0; i < pooled.size(); ++i) {
            doubled[i] = std::lround(2.0 * ranks[i]);
            total += doubled[i];
        }
        std::vector<std::vector<double>> dp(k + 1, std::vector<double>(static_cast<std::size_t>(total + 1), 0.0));
        dp[0][0] = 1.0;
        for (std::size_t i = 0; i < doubled.size(); ++i) {
            for (std::size_t c = std::min(k, i + 1); c >= 1; --c) {
                auto& to = dp[c];
                const auto& from = dp[c - 1];
                for (long s = total - doubled[i]; s >= 0; --s) to[static_cast<std::size_t>(s + doubled[i])] += from[static_cast<std::size_t>(s)];
            }
        }
        const long obs = std::lround(2.0 * r1);
        double all = 0.0, ge = 0.0, le = 0.0;
        for (std::size_t s = 0; s < dp[k].size(); ++s) {
            all += dp[k][s];
            if (static_cast<long>(s) >= obs) ge += dp[k][s];
            if (static_cast<long>(s) <= obs) le += dp[k][s];
        }
        r.exact = true;
        r.p = tail_p(ge / all, le / all, alt);
        return r;
    }
    std::sort(pooled.begin(), pooled.end());
    const double mu = n1 * n2 / 2.0;
    const double var = n1 * n2 / 12.0 * ((N + 1.0) - tie_term(pooled) / (N * (N - 1.0)));
    if (!(var > 0.0)) {
        r.degenerate = true;
        r.p = 1.0;
        return r;
    }
    const double sd = std::sqrt(var);
    const double u = r.statistic;
    r.p = tail_p(normal_sf((u - mu - 0.5) / sd), normal_sf(-(u - mu + 0.5) / sd), alt);
    return r;
}

std::string format_p(double p) {
    if (p < 1e-12) return "< 1e-12";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", p);
    return buf;
}

}  // namespace isd::stats
