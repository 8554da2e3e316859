#pragma once

// Clustering and reconstruction scores. Every partition score is computed
// from a ContingencyTable so that the different scores agree on counting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hsiseg/core.hpp"

namespace hsiseg::metrics {

using Label = std::int64_t;

/// counts(c, k): samples with true class c (row) and predicted cluster k
/// (column). Rows and columns follow the sorted order of the label values.
struct ContingencyTable {
  Matrix<std::int64_t> counts;
  std::int64_t n = 0;

  std::vector<std::int64_t> row_sums() const {
    std::vector<std::int64_t> s(counts.rows(), 0);
    for (std::size_t r = 0; r < counts.rows(); ++r)
      for (std::size_t c = 0; c < counts.cols(); ++c) s[r] += counts(r, c);
    return s;
  }
  std::vector<std::int64_t> col_sums() const {
    std::vector<std::int64_t> s(counts.cols(), 0);
    for (std::size_t r = 0; r < counts.rows(); ++r)
      for (std::size_t c = 0; c < counts.cols(); ++c) s[c] += counts(r, c);
    return s;
  }
  ContingencyTable transposed() const {
    ContingencyTable t{Matrix<std::int64_t>(counts.cols(), counts.rows()), n};
    for (std::size_t r = 0; r < counts.rows(); ++r)
      for (std::size_t c = 0; c < counts.cols(); ++c) t.counts(c, r) = counts(r, c);
    return t;
  }
};

template <typename A, typename B>
ContingencyTable contingency(std::span<const A> truth, std::span<const B> pred) {
  if (truth.size() != pred.size()) throw Error("contingency: label length mismatch");
  if (truth.empty()) throw Error("contingency: empty input");
  std::map<A, std::size_t> rows;
  std::map<B, std::size_t> cols;
  for (const auto& t : truth) rows.emplace(t, 0);
  for (const auto& p : pred) cols.emplace(p, 0);
  std::size_t i = 0;
  for (auto& [_, idx] : rows) idx = i++;
  i = 0;
  for (auto& [_, idx] : cols) idx = i++;
  ContingencyTable table{Matrix<std::int64_t>(rows.size(), cols.size(), 0),
                         static_cast<std::int64_t>(truth.size())};
  for (std::size_t s = 0; s < truth.size(); ++s) ++table.counts(rows[truth[s]], cols[pred[s]]);
  return table;
}

template <typename A, typename B>
ContingencyTable contingency(const std::vector<A>& truth, const std::vector<B>& pred) {
  return contingency(std::span<const A>(truth), std::span<const B>(pred));
}

namespace detail {

// 1 - H(rows | cols) / H(rows), natural log. 1 when H(rows) = 0.
inline double conditional_entropy_score(const ContingencyTable& t) {
  const double n = static_cast<double>(t.n);
  const auto rs = t.row_sums();
  const auto cs = t.col_sums();
  double h_rows = 0.0;
  for (auto r : rs) {
    if (r == 0) continue;
    const double p = static_cast<double>(r) / n;
    h_rows -= p * std::log(p);
  }
  if (h_rows == 0.0) return 1.0;
  double h_cond = 0.0;
  for (std::size_t r = 0; r < t.counts.rows(); ++r) {
    for (std::size_t c = 0; c < t.counts.cols(); ++c) {
      const auto nrc = t.counts(r, c);
      if (nrc == 0) continue;
      h_cond -= (static_cast<double>(nrc) / n) *
                std::log(static_cast<double>(nrc) / static_cast<double>(cs[c]));
    }
  }
  return std::clamp(1.0 - h_cond / h_rows, 0.0, 1.0);
}

inline std::int64_t pairs(std::int64_t m) { return m * (m - 1) / 2; }

}  // namespace detail

inline double homogeneity(const ContingencyTable& t) { return detail::conditional_entropy_score(t); }

inline double completeness(const ContingencyTable& t) {
  return detail::conditional_entropy_score(t.transposed());
}

/// V_beta = (1 + beta) h c / (beta h + c); 0 when the denominator vanishes.
/// beta < 1 favours homogeneity.
inline double v_measure(double h, double c, double beta = 1.0) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error("v_measure: beta must lie in [0, 1]");
  const double denom = beta * h + c;
  if (denom == 0.0) return 0.0;
  return (1.0 + beta) * h * c / denom;
}

/// Pair counts underlying the Rand family of scores.
struct PairCounts {
  std::int64_t total = 0;      // C(n, 2)
  std::int64_t same_both = 0;  // same class and same cluster
  std::int64_t same_true = 0;  // same class
  std::int64_t same_pred = 0;  // same cluster
};

inline PairCounts pair_counts(const ContingencyTable& t) {
  PairCounts p;
  p.total = detail::pairs(t.n);
  for (auto v : t.counts.data()) p.same_both += detail::pairs(v);
  for (auto r : t.row_sums()) p.same_true += detail::pairs(r);
  for (auto c : t.col_sums()) p.same_pred += detail::pairs(c);
  return p;
}

inline double rand_score(const PairCounts& p) {
  if (p.total == 0) throw Error("rand_score: need at least two samples");
  const std::int64_t agree = p.total + 2 * p.same_both - p.same_true - p.same_pred;
  return static_cast<double>(agree) / static_cast<double>(p.total);
}

/// ARS = 2 (N n11 - a b) / (N (a + b) - 2 a b) with N pairs in total, n11
/// pairs together in both partitions, a in the truth and b in the prediction.
/// Both terms are exact integers; a vanishing denominator means the two
/// partitions are identical (all one cluster or all singletons).
inline double adjusted_rand(const PairCounts& p) {
  if (p.total == 0) throw Error("adjusted_rand: need at least two samples");
  using Wide = __int128;
  const Wide n = p.total, a = p.same_true, b = p.same_pred, x = p.same_both;
  const Wide num = 2 * (n * x - a * b);
  const Wide den = n * (a + b) - 2 * a * b;
  if (den == 0) return 1.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline double rand_score(const ContingencyTable& t) { return rand_score(pair_counts(t)); }
inline double adjusted_rand(const ContingencyTable& t) { return adjusted_rand(pair_counts(t)); }

template <typename A, typename B>
double adjusted_rand(const std::vector<A>& truth, const std::vector<B>& pred) {
  return adjusted_rand(contingency(truth, pred));
}

// Vector distances. Shared by clustering and reconstruction scoring.

template <typename T, typename U>
double euclidean(std::span<const T> x, std::span<const U> y) {
  if (x.size() != y.size()) throw Error("euclidean: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

/// Spectral angle arccos(<x,y> / (|x||y|)) in radians. Scale invariant.
template <typename T, typename U>
double spectral_angle(std::span<const T> x, std::span<const U> y) {
  if (x.size() != y.size()) throw Error("spectral_angle: length mismatch");
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = static_cast<double>(x[i]);
    const double b = static_cast<double>(y[i]);
    dot += a * b;
    nx += a * a;
    ny += b * b;
  }
  if (nx == 0.0 || ny == 0.0) throw Error("spectral_angle: zero vector");
  return std::acos(std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0));
}

template <typename T, typename U>
double euclidean(const std::vector<T>& x, const std::vector<U>& y) {
  return euclidean(std::span<const T>(x), std::span<const U>(y));
}
template <typename T, typename U>
double spectral_angle(const std::vector<T>& x, const std::vector<U>& y) {
  return spectral_angle(std::span<const T>(x), std::span<const U>(y));
}

/// The four partition scores reported per segmentation.
struct ClusteringReport {
  double homogeneity = 0.0;
  double completeness = 0.0;
  double ars = 0.0;
  double rand_score = 0.0;
};

inline ClusteringReport evaluate(const ContingencyTable& t) {
  const auto p = pair_counts(t);
  return {homogeneity(t), completeness(t), adjusted_rand(p), rand_score(p)};
}

template <typename A, typename B>
ClusteringReport evaluate(const std::vector<A>& truth, const std::vector<B>& pred) {
  return evaluate(contingency(truth, pred));
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string report_csv(const ClusteringReport& r) {
  return "homogeneity,completeness,ars,rand_score\n" + format_double(r.homogeneity) + "," +
         format_double(r.completeness) + "," + format_double(r.ars) + "," +
         format_double(r.rand_score) + "\n";
}

inline std::string report_json(const ClusteringReport& r) {
  return "{\"homogeneity\": " + format_double(r.homogeneity) +
         ", \"completeness\": " + format_double(r.completeness) +
         ", \"ars\": " + format_double(r.ars) + ", \"rand_score\": " + format_double(r.rand_score) +
         "}";
}

}  // namespace hsiseg::metrics
