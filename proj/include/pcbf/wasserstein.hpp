#pragma once

#include <algorithm>
#include <cmath>
#include <variant>
#include <vector>

#include "pcbf/return_law.hpp"

namespace pcbf::analysis {

namespace detail {

/// CDF of a law evaluated on a sorted, increasing query sequence.
/// For step laws the value is constant on each [x_k, x_{k+1}); for the
/// piecewise-linear law it is linear there.
class CdfOnGrid {
 public:
  explicit CdfOnGrid(const ReturnLaw& law) : law_(law) {
    if (const auto* a = std::get_if<Atoms>(&law)) {
      cum_.reserve(a->probs.size());
      double s = 0.0;
      for (double p : a->probs) cum_.push_back(s += p);
    }
  }

  bool is_step() const { return !std::holds_alternative<ContinuousCdf>(law_); }

  /// F(x), right-continuous. Queries must be non-decreasing.
  double at(double x) {
    if (const auto* a = std::get_if<Atoms>(&law_)) {
      while (pos_ < a->values.size() && a->values[pos_] <= x) ++pos_;
      return pos_ == 0 ? 0.0 : std::min(cum_[pos_ - 1], 1.0);
    }
    if (const auto* e = std::get_if<Empirical>(&law_)) {
      while (pos_ < e->samples.size() && e->samples[pos_] <= x) ++pos_;
      return static_cast<double>(pos_) / static_cast<double>(e->samples.size());
    }
    return cdf(law_, x);
  }

 private:
  const ReturnLaw& law_;
  std::vector<double> cum_;
  std::size_t pos_ = 0;
};

/// Integral over [0, w] of |d0 + (d1 - d0) s / w| ds.
inline double abs_linear_integral(double d0, double d1, double w) {
  if ((d0 >= 0.0 && d1 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0)) return 0.5 * w * (std::abs(d0) + std::abs(d1));
  return 0.5 * w * (d0 * d0 + d1 * d1) / (std::abs(d0) + std::abs(d1));
}

}  // namespace detail

/// Wasserstein-1 distance: the exact integral of |F_a - F_b| over the merged
/// breakpoints of two step or piecewise-linear CDFs.
inline double wasserstein1(const ReturnLaw& a, const ReturnLaw& b) {
  validate(a);
  validate(b);
  std::vector<double> xs = breakpoints(a);
  const std::vector<double> xb = breakpoints(b);
  std::vector<double> merged;
  merged.reserve(xs.size() + xb.size());
  std::merge(xs.begin(), xs.end(), xb.begin(), xb.end(), std::back_inserter(merged));
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());

  detail::CdfOnGrid fa(a), fb(b);
  double total = 0.0;
  double fa_left = fa.at(merged[0]);
  double fb_left = fb.at(merged[0]);
  for (std::size_t k = 0; k + 1 < merged.size(); ++k) {
    const double w = merged[k + 1] - merged[k];
    const double fa_next = fa.at(merged[k + 1]);
    const double fb_next = fb.at(merged[k + 1]);
    // Value just below x_{k+1}: step laws keep their left value.
    const double fa_right = fa.is_step() ? fa_left : fa_next;
    const double fb_right = fb.is_step() ? fb_left : fb_next;
    total += detail::abs_linear_integral(fa_left - fb_left, fa_right - fb_right, w);
    fa_left = fa_next;
    fb_left = fb_next;
  }
  return total;
}

/// Kolmogorov-Smirnov statistic sup |F_n - F| of samples against a law.
inline double ks_statistic(const Empirical& sample, const ReturnLaw& law) {
  validate(sample);
  const double n = static_cast<double>(sample.samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.samples.size(); ++i) {
    const double f = cdf(law, sample.samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic one-sample KS critical value at the 1% level.
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

}  // namespace pcbf::analysis
