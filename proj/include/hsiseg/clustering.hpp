#pragma once

// k-means baseline, agglomerative hierarchical clustering, and the merge of
// RBM label clusters into a fixed number of segments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "hsiseg/core.hpp"
#include "hsiseg/metrics.hpp"

namespace hsiseg::clustering {

// ---------------------------------------------------------------------------
// k-means

struct KMeansModel {
  std::size_t k = 0;
  Matrix<double> centroids;  // k x B
  double inertia = 0.0;
};

struct KMeansResult {
  KMeansModel model;
  std::vector<std::size_t> labels;
  std::vector<double> inertia_history;  // after every assignment step
  std::size_t iterations = 0;
};

namespace detail {

template <typename T>
double sq_dist(std::span<const T> x, std::span<const double> c) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - c[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or max_iters is reached. A cluster left empty takes over the
/// point farthest from its current centroid.
template <typename T>
KMeansResult kmeans(const Matrix<T>& data, std::size_t k, std::uint64_t seed, std::size_t max_iters = 300) {
  const std::size_t n = data.rows();
  const std::size_t dim = data.cols();
  if (n == 0) throw Error("kmeans: empty data");
  if (k == 0 || k > n) throw Error("kmeans: need 1 <= k <= N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");

  Rng rng(seed);
  KMeansResult res;
  res.model.k = k;
  Matrix<double>& cent = res.model.centroids;
  cent = Matrix<double>(k, dim);
  auto set_centroid = [&](std::size_t c, std::size_t point) {
    auto row = data.row(point);
    for (std::size_t d = 0; d < dim; ++d) cent(c, d) = static_cast<double>(row[d]);
  };

  std::vector<bool> chosen(n, false);
  std::size_t first = rng.below(n);
  set_centroid(0, first);
  chosen[first] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = detail::sq_dist(data.row(i), cent.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && u < acc) {
          pick = i;
          break;
        }
      }
      if (pick == n)
        for (std::size_t i = n; i-- > 0;)
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    set_centroid(c, pick);
    chosen[pick] = true;
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], detail::sq_dist(data.row(i), cent.row(c)));
  }

  res.labels.assign(n, k);
  std::vector<double> cost(n);
  for (std::size_t it = 0; it < max_iters; ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::sq_dist(data.row(i), cent.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.labels[i] != best) changed = true;
      res.labels[i] = best;
      cost[i] = best_d;
      inertia += best_d;
    }
    res.inertia_history.push_back(inertia);
    res.model.inertia = inertia;
    res.iterations = it + 1;
    if (!changed) break;

    std::vector<std::size_t> counts(k, 0);
    for (auto l : res.labels) ++counts[l];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (counts[res.labels[i]] > 1 && (counts[res.labels[far]] <= 1 || cost[i] > cost[far])) far = i;
      if (counts[res.labels[far]] <= 1) continue;
      --counts[res.labels[far]];
      res.labels[far] = c;
      counts[c] = 1;
      cost[far] = 0.0;
    }
    cent = Matrix<double>(k, dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = data.row(i);
      for (std::size_t d = 0; d < dim; ++d) cent(res.labels[i], d) += static_cast<double>(row[d]);
    }
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t d = 0; d < dim; ++d) cent(c, d) /= static_cast<double>(counts[c]);
  }
  return res;
}

struct RepeatedKMeans {
  std::vector<std::uint64_t> seeds;
  std::vector<metrics::ClusteringReport> per_seed;
  metrics::ClusteringReport mean;
  metrics::ClusteringReport stddev;  // sample standard deviation; 0 for one seed
};

template <typename T, typename L>
RepeatedKMeans kmeans_repeated(const Matrix<T>& data, const std::vector<L>& truth, std::size_t k,
                               const std::vector<std::uint64_t>& seeds, std::size_t max_iters = 300) {
  if (seeds.empty()) throw Error("kmeans_repeated: no seeds");
  RepeatedKMeans out;
  out.seeds = seeds;
  for (auto s : seeds) out.per_seed.push_back(metrics::evaluate(truth, kmeans(data, k, s, max_iters).labels));
  auto field = [](metrics::ClusteringReport& r, int f) -> double& {
    switch (f) {
      case 0: return r.homogeneity;
      case 1: return r.completeness;
      case 2: return r.ars;
      default: return r.rand_score;
    }
  };
  const double n = static_cast<double>(seeds.size());
  for (int f = 0; f < 4; ++f) {
    double sum = 0.0;
    for (auto& r : out.per_seed) sum += field(r, f);
    const double mean = sum / n;
    double ss = 0.0;
    for (auto& r : out.per_seed) ss += (field(r, f) - mean) * (field(r, f) - mean);
    field(out.mean, f) = mean;
    field(out.stddev, f) = seeds.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return out;
}

/// "metric,mean,std" table with one row per score.
inline std::string repeated_csv(const RepeatedKMeans& r) {
  using metrics::format_double;
  return "metric,mean,std\n"
         "homogeneity," + format_double(r.mean.homogeneity) + "," + format_double(r.stddev.homogeneity) + "\n"
         "completeness," + format_double(r.mean.completeness) + "," + format_double(r.stddev.completeness) + "\n"
         "ars," + format_double(r.mean.ars) + "," + format_double(r.stddev.ars) + "\n"
         "rand_score," + format_double(r.mean.rand_score) + "," + format_double(r.stddev.rand_score) + "\n";
}

// ---------------------------------------------------------------------------
// Distances

enum class Metric { euclidean, spectral_angle, hamming };

inline Metric parse_metric(const std::string& s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "spectral_angle" || s == "sad") return Metric::spectral_angle;
  if (s == "hamming") return Metric::hamming;
  throw Error("unknown distance metric '" + s + "'");
}

struct DistanceMatrix {
  std::size_t n = 0;
  Matrix<double> values;

  explicit DistanceMatrix(std::size_t size = 0) : n(size), values(size, size, 0.0) {}
  double operator()(std::size_t i, std::size_t j) const { return values(i, j); }
  void set(std::size_t i, std::size_t j, double d) {
    values(i, j) = d;
    values(j, i) = d;
  }
};

template <typename T, typename U>
double distance(std::span<const T> x, std::span<const U> y, Metric metric) {
  switch (metric) {
    case Metric::euclidean: return metrics::euclidean(x, y);
    case Metric::spectral_angle: return metrics::spectral_angle(x, y);
    case Metric::hamming: {
      if (x.size() != y.size()) throw Error("hamming: length mismatch");
      std::size_t d = 0;
      for (std::size_t i = 0; i < x.size(); ++i) d += static_cast<double>(x[i]) != static_cast<double>(y[i]);
      return static_cast<double>(d);
    }
  }
  return 0.0;
}

template <typename T>
DistanceMatrix pairwise_distances(const Matrix<T>& data, Metric metric) {
  if (data.rows() == 0) throw Error("pairwise_distances: empty data");
  DistanceMatrix dm(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i)
    for (std::size_t j = i + 1; j < data.rows(); ++j) dm.set(i, j, distance(data.row(i), data.row(j), metric));
  return dm;
}

inline std::string distance_csv(const DistanceMatrix& dm) {
  std::string out = "i,j,distance\n";
  for (std::size_t i = 0; i < dm.n; ++i)
    for (std::size_t j = i + 1; j < dm.n; ++j)
      out += std::to_string(i) + "," + std::to_string(j) + "," + metrics::format_double(dm(i, j)) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Agglomerative hierarchical clustering

enum class Linkage { complete, average };

inline Linkage parse_linkage(const std::string& s) {
  if (s == "complete") return Linkage::complete;
  if (s == "average") return Linkage::average;
  throw Error("unknown linkage '" + s + "'");
}

struct Merge {
  std::size_t a = 0;  // smaller cluster id
  std::size_t b = 0;
  double distance = 0.0;
  std::size_t new_id = 0;
};

/// Leaves have ids 0..n-1; the cluster formed at step s gets id n + s.
struct Dendrogram {
  std::vector<Merge> merges;
};

struct AhcResult {
  std::vector<std::size_t> labels;  // clusters numbered by their smallest leaf
  Dendrogram dendrogram;
};

/// Merges the closest pair until target_k clusters remain. Complete linkage
/// keeps the max pairwise distance; average linkage keeps the sum of
/// pairwise distances and divides by the pair count when comparing. Equal
/// distances go to the lexicographically smallest (id, id) pair.
inline AhcResult ahc(const DistanceMatrix& dist, Linkage linkage, std::size_t target_k) {
  const std::size_t n = dist.n;
  if (target_k < 1 || target_k > n)
    throw Error("ahc: target_k must lie in [1, " + std::to_string(n) + "], got " + std::to_string(target_k));
  for (std::size_t i = 0; i < n; ++i) {
    if (dist(i, i) != 0.0) throw Error("ahc: non-zero diagonal");
    for (std::size_t j = i + 1; j < n; ++j)
      if (!(dist(i, j) >= 0.0)) throw Error("ahc: negative or NaN distance");
  }

  Matrix<double> agg = dist.values;  // max or sum, per linkage
  std::vector<std::size_t> size(n, 1), id(n);
  std::iota(id.begin(), id.end(), 0);
  std::vector<bool> active(n, true);
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};

  using Key = std::tuple<double, std::size_t, std::size_t>;
  auto key = [&](std::size_t i, std::size_t j) -> Key {
    const double d = linkage == Linkage::average
                         ? agg(i, j) / (static_cast<double>(size[i]) * static_cast<double>(size[j]))
                         : agg(i, j);
    return {d, std::min(id[i], id[j]), std::max(id[i], id[j])};
  };
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> nn(n, kNone);
  std::vector<Key> nn_key(n);
  auto refresh = [&](std::size_t i) {
    nn[i] = kNone;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !active[j]) continue;
      const Key k = key(i, j);
      if (nn[i] == kNone || k < nn_key[i]) {
        nn[i] = j;
        nn_key[i] = k;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh(i);

  AhcResult res;
  std::size_t clusters = n;
  for (std::size_t step = 0; clusters > target_k; ++step, --clusters) {
    std::size_t best = kNone;
    for (std::size_t i = 0; i < n; ++i)
      if (active[i] && nn[i] != kNone && (best == kNone || nn_key[i] < nn_key[best])) best = i;
    std::size_t s1 = best, s2 = nn[best];
    const auto [d, lo, hi] = nn_key[best];
    res.dendrogram.merges.push_back({lo, hi, d, n + step});

    // Merged cluster lives in slot s1.
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == s1 || k == s2) continue;
      const double v = linkage == Linkage::complete ? std::max(agg(s1, k), agg(s2, k)) : agg(s1, k) + agg(s2, k);
      agg(s1, k) = agg(k, s1) = v;
    }
    active[s2] = false;
    size[s1] += size[s2];
    id[s1] = n + step;
    members[s1].insert(members[s1].end(), members[s2].begin(), members[s2].end());
    members[s2].clear();

    refresh(s1);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == s1) continue;
      if (nn[k] == s1 || nn[k] == s2) {
        refresh(k);
      } else {
        const Key kk = key(k, s1);
        if (kk < nn_key[k]) {
          nn[k] = s1;
          nn_key[k] = kk;
        }
      }
    }
  }

  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < n; ++i)
    if (active[i]) slots.push_back(i);
  std::sort(slots.begin(), slots.end(), [&](std::size_t x, std::size_t y) {
    return *std::min_element(members[x].begin(), members[x].end()) <
           *std::min_element(members[y].begin(), members[y].end());
  });
  res.labels.assign(n, 0);
  for (std::size_t c = 0; c < slots.size(); ++c)
    for (auto leaf : members[slots[c]]) res.labels[leaf] = c;
  return res;
}

inline std::string dendrogram_csv(const Dendrogram& d) {
  std::string out = "step,a,b,distance,new_id\n";
  for (std::size_t s = 0; s < d.merges.size(); ++s) {
    const auto& m = d.merges[s];
    out += std::to_string(s) + "," + std::to_string(m.a) + "," + std::to_string(m.b) + "," +
           metrics::format_double(m.distance) + "," + std::to_string(m.new_id) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// RBM label clusters -> segments

enum class RbmDistanceMode { hamming_labels, centroid_euclidean, centroid_sad };

inline RbmDistanceMode parse_rbm_distance(const std::string& s) {
  if (s == "hamming" || s == "hamming_labels") return RbmDistanceMode::hamming_labels;
  if (s == "euclidean" || s == "centroid_euclidean") return RbmDistanceMode::centroid_euclidean;
  if (s == "sad" || s == "centroid_sad") return RbmDistanceMode::centroid_sad;
  throw Error("unknown RBM cluster distance '" + s + "'");
}

struct RbmClusters {
  std::vector<Bits> labels;                // distinct labels, sorted
  std::vector<std::size_t> pixel_cluster;  // per pixel index into `labels`
  DistanceMatrix dist;
};

/// One cluster per distinct RBM label. Hamming mode compares the label bit
/// vectors; centroid modes compare the mean spectra of member pixels.
template <typename T>
RbmClusters rbm_cluster_distance(const std::vector<Bits>& pixel_labels, const Matrix<T>& pixels,
                                 RbmDistanceMode mode) {
  if (pixel_labels.size() != pixels.rows()) throw Error("rbm_cluster_distance: label/pixel count mismatch");
  RbmClusters out;
  std::map<Bits, std::size_t> index;
  for (const auto& l : pixel_labels) index.emplace(l, 0);
  if (index.size() < 2) throw Error("rbm_cluster_distance: need at least two distinct labels");
  for (auto& [bits, idx] : index) {
    idx = out.labels.size();
    out.labels.push_back(bits);
  }
  out.pixel_cluster.reserve(pixel_labels.size());
  for (const auto& l : pixel_labels) out.pixel_cluster.push_back(index[l]);

  const std::size_t n = out.labels.size();
  out.dist = DistanceMatrix(n);
  if (mode == RbmDistanceMode::hamming_labels) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        out.dist.set(i, j, static_cast<double>(hamming(out.labels[i], out.labels[j])));
    return out;
  }
  Matrix<double> centroids(n, pixels.cols(), 0.0);
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t p = 0; p < pixels.rows(); ++p) {
    const auto c = out.pixel_cluster[p];
    ++counts[c];
    auto row = pixels.row(p);
    for (std::size_t d = 0; d < pixels.cols(); ++d) centroids(c, d) += static_cast<double>(row[d]);
  }
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t d = 0; d < pixels.cols(); ++d) centroids(c, d) /= static_cast<double>(counts[c]);
  out.dist = pairwise_distances(centroids, mode == RbmDistanceMode::centroid_euclidean ? Metric::euclidean
                                                                                        : Metric::spectral_angle);
  return out;
}

struct MergeResult {
  std::vector<std::size_t> pixel_labels;  // final segment per pixel
  AhcResult ahc;
};

/// Each pixel takes the AHC cluster of its RBM label. With no more distinct
/// labels than target_k the clusters are kept as they are.
inline MergeResult merge_rbm_clusters(const RbmClusters& clusters, Linkage linkage, std::size_t target_k = 7) {
  if (target_k < 1) throw Error("merge_rbm_clusters: target_k must be positive");
  MergeResult out;
  out.ahc = ahc(clusters.dist, linkage, std::min(target_k, clusters.dist.n));
  out.pixel_labels.reserve(clusters.pixel_cluster.size());
  for (auto c : clusters.pixel_cluster) out.pixel_labels.push_back(out.ahc.labels[c]);
  return out;
}

}  // namespace hsiseg::clustering
