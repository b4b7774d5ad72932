#pragma once

// Hypothesis tests used by the evaluation reports.

#include <string>
#include <vector>

namespace isd::stats {

enum class Alternative { TwoSided, Greater, Less };
enum class Method { Auto, Exact, Normal };

struct TestResult {
    double statistic = 0.0;
    double p = 1.0;
    double df = 0.0;          // paired t only
    bool degenerate = false;  // zero variance or no non-zero differences
    bool exact = false;
};

/// Survival function of Student's t with `df` degrees of freedom.
double student_t_sf(double t, double df);
/// Two-sided p-value of a t statistic.
double t_two_sided_p(double t, double df);
double normal_sf(double z);

/// Paired t-test on a - b with n - 1 degrees of freedom.
TestResult paired_t(const std::vector<double>& a, const std::vector<double>& b,
                    Alternative alt = Alternative::TwoSided);

/// Signed-rank test on x - y. Zero differences are dropped and tied |d| share
/// average ranks. The statistic is W+, the rank sum of positive differences.
/// Auto uses exact enumeration for n <= 12.
TestResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y,
                                Alternative alt = Alternative::Greater, Method method = Method::Auto);

/// Mann-Whitney U = R_a - n_a (n_a + 1) / 2 with tie-corrected normal
/// approximation (continuity-corrected) or exact enumeration of rank sums.
/// Greater tests whether `a` tends to exceed `b`.
TestResult ranksum(const std::vector<double>& a, const std::vector<double>& b,
                   Alternative alt = Alternative::TwoSided, Method method = Method::Normal);

/// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(const std::vector<double>& v);

double mean(const std::vector<double>& v);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_sd(const std::vector<double>& v);
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// "< 1e-12" below the reporting floor, otherwise %.3g.
std::string format_p(double p);

}  // namespace isd::stats
