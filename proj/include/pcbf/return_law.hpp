#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "pcbf/error.hpp"

namespace pcbf {

/// Finitely supported law: strictly increasing values with positive masses.
struct Atoms {
  std::vector<double> values;
  std::vector<double> probs;
};

/// Continuous law with a piecewise-linear CDF through the knots
/// (xs[i], cdf[i]); cdf rises from 0 at xs.front() to 1 at xs.back().
struct ContinuousCdf {
  std::vector<double> xs;
  std::vector<double> cdf;
};

/// Sorted samples, each with mass 1/n.
struct Empirical {
  std::vector<double> samples;
};

using ReturnLaw = std::variant<Atoms, ContinuousCdf, Empirical>;

inline void validate(const Atoms& a) {
  if (a.values.empty() || a.values.size() != a.probs.size()) throw UsageError("atoms: empty or ragged");
  double total = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!(a.probs[i] > 0.0)) throw UsageError("atoms: probabilities must be positive");
    if (i > 0 && !(a.values[i] > a.values[i - 1])) throw UsageError("atoms: values must be strictly increasing");
    total += a.probs[i];
  }
  if (std::abs(total - 1.0) > 1e-12) throw UsageError("atoms: probabilities must sum to 1");
}

inline void validate(const ContinuousCdf& c) {
  if (c.xs.size() < 2 || c.xs.size() != c.cdf.size()) throw UsageError("continuous cdf: need >= 2 knots");
  if (c.cdf.front() != 0.0 || c.cdf.back() != 1.0) throw UsageError("continuous cdf: must run from 0 to 1");
  for (std::size_t i = 1; i < c.xs.size(); ++i) {
    if (!(c.xs[i] > c.xs[i - 1]) || c.cdf[i] < c.cdf[i - 1]) {
      throw UsageError("continuous cdf: knots must be increasing and monotone");
    }
  }
}

inline void validate(const Empirical& e) {
  if (e.samples.empty()) throw UsageError("empirical law has no samples");
  if (!std::is_sorted(e.samples.begin(), e.samples.end())) throw UsageError("empirical samples must be sorted");
}

inline void validate(const ReturnLaw& law) {
  std::visit([](const auto& l) { validate(l); }, law);
}

inline Empirical make_empirical(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  return Empirical{std::move(samples)};
}

/// Right-continuous CDF.
inline double cdf(const ReturnLaw& law, double x) {
  struct Visitor {
    double x;
    double operator()(const Atoms& a) const {
      const auto it = std::upper_bound(a.values.begin(), a.values.end(), x);
      double s = 0.0;
      for (auto p = a.probs.begin(); p != a.probs.begin() + (it - a.values.begin()); ++p) s += *p;
      return std::min(s, 1.0);
    }
    double operator()(const ContinuousCdf& c) const {
      if (x <= c.xs.front()) return 0.0;
      if (x >= c.xs.back()) return 1.0;
      const auto it = std::upper_bound(c.xs.begin(), c.xs.end(), x);
      const std::size_t i = static_cast<std::size_t>(it - c.xs.begin());
      const double w = (x - c.xs[i - 1]) / (c.xs[i] - c.xs[i - 1]);
      return c.cdf[i - 1] + w * (c.cdf[i] - c.cdf[i - 1]);
    }
    double operator()(const Empirical& e) const {
      const auto it = std::upper_bound(e.samples.begin(), e.samples.end(), x);
      return static_cast<double>(it - e.samples.begin()) / static_cast<double>(e.samples.size());
    }
  };
  return std::visit(Visitor{x}, law);
}

/// Points where the CDF has a jump or a kink, sorted and deduplicated.
inline std::vector<double> breakpoints(const ReturnLaw& law) {
  std::vector<double> out = std::visit(
      [](const auto& l) -> std::vector<double> {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Atoms>) return l.values;
        else if constexpr (std::is_same_v<T, ContinuousCdf>) return l.xs;
        else return l.samples;
      },
      law);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline double law_mean(const ReturnLaw& law) {
  struct Visitor {
    double operator()(const Atoms& a) const {
      double m = 0.0;
      for (std::size_t i = 0; i < a.values.size(); ++i) m += a.values[i] * a.probs[i];
      return m;
    }
    double operator()(const ContinuousCdf& c) const {
      double m = 0.0;
      for (std::size_t i = 1; i < c.xs.size(); ++i) m += 0.5 * (c.xs[i] + c.xs[i - 1]) * (c.cdf[i] - c.cdf[i - 1]);
      return m;
    }
    double operator()(const Empirical& e) const {
      double m = 0.0;
      for (double s : e.samples) m += s;
      return m / static_cast<double>(e.samples.size());
    }
  };
  return std::visit(Visitor{}, law);
}

}  // namespace pcbf
