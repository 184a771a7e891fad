#pragma once

#include <vector>

namespace lld {

// 1-based fractional ranks (ties get the average rank)
std::vector<double> rankify(const std::vector<double>& values);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

double mean(const std::vector<double>& v);

// unbiased sample standard deviation
double sample_stddev(const std::vector<double>& v);

// regularized incomplete beta function I_x(a, b)
double incomplete_beta(double a, double b, double x);

// one-sided p-value for a paired t-test of H1: mean(diff) > 0
double paired_t_pvalue(const std::vector<double>& diffs);

}  // namespace lld
