#pragma once

// Negative-phase sampling backends and the RBM <-> QUBO bridge.
//
// Every sampler returns a SampleSet over QUBO variables; for an RBM the
// variable order is visible units 0..nv-1 followed by hidden units.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsiseg/core.hpp"
#include "hsiseg/rbm_model.hpp"

namespace hsiseg::samplers {

using rbm::RbmModel;

/// objective(x) = offset + sum_i linear_i x_i + sum_{i<j} quadratic_ij x_i x_j
struct QuboProblem {
  std::size_t n_vars = 0;
  std::vector<double> linear;
  std::map<std::pair<std::size_t, std::size_t>, double> quadratic;
  double offset = 0.0;

  explicit QuboProblem(std::size_t n = 0) : n_vars(n), linear(n, 0.0) {}

  void add_quadratic(std::size_t i, std::size_t j, double q) {
    if (i == j) throw Error("QuboProblem: self-pair quadratic term");
    if (i > j) std::swap(i, j);
    if (j >= n_vars) throw Error("QuboProblem: variable index out of range");
    quadratic[{i, j}] += q;
  }

  void validate() const {
    if (linear.size() != n_vars) throw Error("QuboProblem: linear length mismatch");
    for (const auto& [key, q] : quadratic) {
      if (key.first >= key.second) throw Error("QuboProblem: quadratic key not strictly upper-triangular");
      if (key.second >= n_vars) throw Error("QuboProblem: quadratic index out of range");
      if (!std::isfinite(q)) throw Error("QuboProblem: non-finite coefficient");
    }
    for (double l : linear)
      if (!std::isfinite(l)) throw Error("QuboProblem: non-finite coefficient");
    if (!std::isfinite(offset)) throw Error("QuboProblem: non-finite offset");
  }
};

inline double qubo_energy(const QuboProblem& p, std::span<const std::uint8_t> x) {
  if (x.size() != p.n_vars) throw Error("qubo_energy: assignment length mismatch");
  require_binary(x, "qubo_energy");
  double e = p.offset;
  for (std::size_t i = 0; i < p.n_vars; ++i) e += p.linear[i] * static_cast<double>(x[i]);
  for (const auto& [key, q] : p.quadratic)
    e += q * static_cast<double>(x[key.first]) * static_cast<double>(x[key.second]);
  return e;
}

/// Visible variable i -> i, hidden variable j -> nv + j. linear = -a, -b;
/// quadratic (i, nv + j) = -W_ij. The objective equals the RBM energy.
inline QuboProblem rbm_to_qubo(const RbmModel& m) {
  QuboProblem p(m.n_visible + m.n_hidden);
  for (std::size_t i = 0; i < m.n_visible; ++i) p.linear[i] = -m.a[i];
  for (std::size_t j = 0; j < m.n_hidden; ++j) p.linear[m.n_visible + j] = -m.b[j];
  for (std::size_t i = 0; i < m.n_visible; ++i)
    for (std::size_t j = 0; j < m.n_hidden; ++j) p.quadratic[{i, m.n_visible + j}] = -m.W(i, j);
  return p;
}

struct SampleSet {
  std::vector<Bits> assignments;
  std::vector<double> energies;
  std::vector<std::uint64_t> occurrences;
  std::string sampler_info;

  std::uint64_t total_reads() const {
    std::uint64_t t = 0;
    for (auto o : occurrences) t += o;
    return t;
  }
  bool empty() const { return assignments.empty(); }

  /// Lowest energy among the samples.
  double best_energy() const {
    if (energies.empty()) throw Error("SampleSet::best_energy: empty sample set");
    return *std::min_element(energies.begin(), energies.end());
  }
};

/// Collapses repeated assignments; first occurrence fixes the order.
class SampleSetBuilder {
 public:
  explicit SampleSetBuilder(std::string info) { set_.sampler_info = std::move(info); }

  void add(Bits assignment, double energy, std::uint64_t count = 1) {
    auto [it, inserted] = index_.try_emplace(assignment, set_.assignments.size());
    if (inserted) {
      set_.assignments.push_back(std::move(assignment));
      set_.energies.push_back(energy);
      set_.occurrences.push_back(count);
    } else {
      set_.occurrences[it->second] += count;
    }
  }

  SampleSet build() && { return std::move(set_); }

 private:
  SampleSet set_;
  std::map<Bits, std::size_t> index_;
};

/// Checks the sampler contract: energies agree with the objective within
/// `tol` and the occurrence counts add up to `num_reads`.
inline void validate_sample_set(const QuboProblem& p, const SampleSet& s, std::uint64_t num_reads,
                                double tol = 1e-9) {
  if (s.assignments.size() != s.energies.size() || s.assignments.size() != s.occurrences.size())
    throw Error("SampleSet: assignments, energies and occurrences differ in length");
  for (std::size_t i = 0; i < s.assignments.size(); ++i) {
    if (s.assignments[i].size() != p.n_vars) throw Error("SampleSet: assignment has wrong length");
    const double e = qubo_energy(p, s.assignments[i]);
    if (!(std::abs(e - s.energies[i]) <= tol))
      throw Error("SampleSet: reported energy " + std::to_string(s.energies[i]) + " differs from objective " +
                  std::to_string(e));
  }
  if (s.total_reads() != num_reads)
    throw Error("SampleSet: occurrences sum to " + std::to_string(s.total_reads()) + ", expected " +
                std::to_string(num_reads));
}

// ---------------------------------------------------------------------------
// Exact enumeration

constexpr std::size_t kMaxExactVars = 20;

struct ExactDistribution {
  std::size_t n_vars = 0;
  std::vector<double> probabilities;  // index k <-> assignment bit i = (k >> i) & 1
  std::vector<double> energies;
};

inline ExactDistribution exact_boltzmann(const QuboProblem& p, double beta) {
  if (p.n_vars > kMaxExactVars)
    throw Error("exact_boltzmann: " + std::to_string(p.n_vars) + " variables exceeds the limit of " +
                std::to_string(kMaxExactVars));
  const std::size_t states = std::size_t{1} << p.n_vars;
  ExactDistribution d{p.n_vars, std::vector<double>(states), std::vector<double>(states)};
  double e_min = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < states; ++k) {
    d.energies[k] = qubo_energy(p, code_to_bits(k, p.n_vars));
    e_min = std::min(e_min, d.energies[k]);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < states; ++k) {
    d.probabilities[k] = std::exp(-beta * (d.energies[k] - e_min));
    z += d.probabilities[k];
  }
  for (auto& pk : d.probabilities) pk /= z;
  return d;
}

/// i.i.d. draws from the exact Boltzmann distribution by inverse CDF.
inline SampleSet exact_sample(const QuboProblem& p, double beta, std::uint64_t num_reads, std::uint64_t seed) {
  const auto dist = exact_boltzmann(p, beta);
  std::vector<double> cdf(dist.probabilities.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < cdf.size(); ++k) cdf[k] = acc += dist.probabilities[k];
  Rng rng(seed);
  SampleSetBuilder builder("exact");
  for (std::uint64_t r = 0; r < num_reads; ++r) {
    const double u = rng.uniform() * acc;
    auto k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    k = std::min(k, cdf.size() - 1);
    builder.add(code_to_bits(k, p.n_vars), dist.energies[k]);
  }
  return std::move(builder).build();
}

// ---------------------------------------------------------------------------
// Gibbs sampling on the RBM

struct GibbsOptions {
  std::size_t sweeps = 1;      // burn-in sweeps per chain (k)
  std::size_t num_chains = 0;  // 0: one independent chain per read
  std::size_t thin = 1;        // sweeps between successive reads of a chain
};

/// Block Gibbs: each sweep draws h ~ p(h|v) then v ~ p(v|h). Chains start
/// from uniform random visible states.
inline SampleSet gibbs_sample(const RbmModel& m, const GibbsOptions& opt, std::uint64_t num_reads,
                              std::uint64_t seed) {
  if (opt.sweeps < 1) throw Error("gibbs_sample: need at least one sweep");
  SampleSetBuilder builder("gibbs k=" + std::to_string(opt.sweeps));
  if (num_reads == 0) return std::move(builder).build();
  const std::size_t chains = opt.num_chains ? std::min<std::uint64_t>(opt.num_chains, num_reads) : num_reads;
  const std::size_t thin = std::max<std::size_t>(1, opt.thin);
  Bits v(m.n_visible), h(m.n_hidden);
  for (std::size_t c = 0; c < chains; ++c) {
    Rng rng(seed ^ c);
    for (auto& vi : v) vi = static_cast<std::uint8_t>(rng.next() >> 63);
    auto sweep = [&] {
      rbm::sample_bits(hidden_probs(m, std::span<const std::uint8_t>(v)), rng, h);
      rbm::sample_bits(visible_probs(m, std::span<const std::uint8_t>(h)), rng, v);
    };
    for (std::size_t s = 0; s < opt.sweeps; ++s) sweep();
    const std::uint64_t reads = num_reads / chains + (c < num_reads % chains ? 1 : 0);
    for (std::uint64_t r = 0; r < reads; ++r) {
      if (r > 0)
        for (std::size_t s = 0; s < thin; ++s) sweep();
      Bits x(v);
      x.insert(x.end(), h.begin(), h.end());
      builder.add(std::move(x), rbm::energy(m, v, h));
    }
  }
  return std::move(builder).build();
}

// ---------------------------------------------------------------------------
// Simulated annealing on a QUBO

struct AnnealSchedule {
  double beta_start = 0.1;
  double beta_end = 5.0;
  std::size_t sweeps = 1000;
  std::size_t num_restarts = 1;

  void validate() const {
    if (!(beta_start > 0.0) || !(beta_end >= beta_start))
      throw Error("AnnealSchedule: need beta_end >= beta_start > 0");
    if (sweeps < 1) throw Error("AnnealSchedule: need at least one sweep");
    if (num_restarts < 1) throw Error("AnnealSchedule: need at least one restart");
  }

  /// Geometric ramp from beta_start (first sweep) to beta_end (last sweep).
  double beta_at(std::size_t sweep) const {
    if (sweeps == 1) return beta_end;
    const double t = static_cast<double>(sweep) / static_cast<double>(sweeps - 1);
    return beta_start * std::pow(beta_end / beta_start, t);
  }
};

namespace detail {

struct Adjacency {
  std::vector<std::vector<std::pair<std::size_t, double>>> neighbours;
  explicit Adjacency(const QuboProblem& p) : neighbours(p.n_vars) {
    for (const auto& [key, q] : p.quadratic) {
      neighbours[key.first].emplace_back(key.second, q);
      neighbours[key.second].emplace_back(key.first, q);
    }
  }
};

}  // namespace detail

/// Single-flip Metropolis under the schedule; each read starts from a
/// uniformly random state and records its final state. With several
/// restarts the lowest-energy final state of the read is kept.
inline SampleSet sa_sample(const QuboProblem& p, const AnnealSchedule& schedule, std::uint64_t num_reads,
                           std::uint64_t seed) {
  p.validate();
  schedule.validate();
  const detail::Adjacency adj(p);
  std::vector<double> betas(schedule.sweeps);
  for (std::size_t s = 0; s < schedule.sweeps; ++s) betas[s] = schedule.beta_at(s);
  SampleSetBuilder builder("simulated_annealing beta=[" + std::to_string(schedule.beta_start) + "," +
                           std::to_string(schedule.beta_end) + "] sweeps=" + std::to_string(schedule.sweeps));
  Bits x(p.n_vars), best;
  std::vector<double> field(p.n_vars);  // energy change for setting x_i = 1 given the rest
  for (std::uint64_t r = 0; r < num_reads; ++r) {
    Rng rng(seed ^ r);
    double best_e = std::numeric_limits<double>::infinity();
    for (std::size_t restart = 0; restart < schedule.num_restarts; ++restart) {
      for (auto& xi : x) xi = static_cast<std::uint8_t>(rng.next() >> 63);
      for (std::size_t i = 0; i < p.n_vars; ++i) {
        double f = p.linear[i];
        for (const auto& [j, q] : adj.neighbours[i]) f += q * x[j];
        field[i] = f;
      }
      for (double beta : betas) {
        for (std::size_t i = 0; i < p.n_vars; ++i) {
          const double delta = x[i] ? -field[i] : field[i];
          if (delta <= 0.0 || rng.uniform() < std::exp(-beta * delta)) {
            x[i] ^= 1U;
            const double sign = x[i] ? 1.0 : -1.0;
            for (const auto& [j, q] : adj.neighbours[i]) field[j] += sign * q;
          }
        }
      }
      const double e = qubo_energy(p, x);
      if (e < best_e) {
        best_e = e;
        best = x;
      }
    }
    builder.add(best, best_e);
  }
  return std::move(builder).build();
}

// ---------------------------------------------------------------------------
// Negative phase

/// Model-side sufficient statistics <v h'>, <v>, <h>.
struct PhaseStats {
  Matrix<double> vh;
  std::vector<double> v;
  std::vector<double> h;

  PhaseStats() = default;
  PhaseStats(std::size_t nv, std::size_t nh) : vh(nv, nh, 0.0), v(nv, 0.0), h(nh, 0.0) {}
};

/// Occurrence-weighted means over joint (v, h) samples.
inline PhaseStats negative_phase(const SampleSet& s, std::size_t nv, std::size_t nh) {
  if (s.empty()) throw Error("negative_phase: empty sample set");
  PhaseStats st(nv, nh);
  double total = 0.0;
  for (std::size_t k = 0; k < s.assignments.size(); ++k) {
    const auto& x = s.assignments[k];
    if (x.size() != nv + nh) throw Error("negative_phase: assignment length is not n_visible + n_hidden");
    const double w = static_cast<double>(s.occurrences[k]);
    total += w;
    for (std::size_t i = 0; i < nv; ++i) {
      if (!x[i]) continue;
      st.v[i] += w;
      for (std::size_t j = 0; j < nh; ++j)
        if (x[nv + j]) st.vh(i, j) += w;
    }
    for (std::size_t j = 0; j < nh; ++j)
      if (x[nv + j]) st.h[j] += w;
  }
  for (auto& e : st.vh.data()) e /= total;
  for (auto& e : st.v) e /= total;
  for (auto& e : st.h) e /= total;
  return st;
}

/// Exact model expectations. Enumerates the smaller layer and integrates the
/// other analytically, so it needs min(nv, nh) <= kMaxExactVars.
inline PhaseStats exact_model_stats(const RbmModel& m) {
  const bool over_hidden = m.n_hidden <= m.n_visible;
  const std::size_t n_enum = over_hidden ? m.n_hidden : m.n_visible;
  const std::size_t n_other = over_hidden ? m.n_visible : m.n_hidden;
  if (n_enum > kMaxExactVars) throw Error("exact_model_stats: both layers exceed the enumeration limit");
  const std::size_t states = std::size_t{1} << n_enum;
  auto weight = [&](std::size_t e, std::size_t o) { return over_hidden ? m.W(o, e) : m.W(e, o); };
  const auto& bias_enum = over_hidden ? m.b : m.a;
  const auto& bias_other = over_hidden ? m.a : m.b;

  std::vector<double> log_w(states);
  std::vector<std::vector<double>> cond(states, std::vector<double>(n_other));
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < states; ++k) {
    double lw = 0.0;
    for (std::size_t e = 0; e < n_enum; ++e)
      if ((k >> e) & 1U) lw += bias_enum[e];
    for (std::size_t o = 0; o < n_other; ++o) {
      double act = bias_other[o];
      for (std::size_t e = 0; e < n_enum; ++e)
        if ((k >> e) & 1U) act += weight(e, o);
      // log(1 + exp(act)), stable
      lw += act > 0 ? act + std::log1p(std::exp(-act)) : std::log1p(std::exp(act));
      cond[k][o] = sigmoid(act);
    }
    log_w[k] = lw;
    max_log = std::max(max_log, lw);
  }
  double z = 0.0;
  for (auto& lw : log_w) z += (lw = std::exp(lw - max_log));

  PhaseStats st(m.n_visible, m.n_hidden);
  for (std::size_t k = 0; k < states; ++k) {
    const double p = log_w[k] / z;
    for (std::size_t e = 0; e < n_enum; ++e) {
      if (!((k >> e) & 1U)) continue;
      (over_hidden ? st.h[e] : st.v[e]) += p;
      for (std::size_t o = 0; o < n_other; ++o) {
        if (over_hidden) st.vh(o, e) += p * cond[k][o];
        else st.vh(e, o) += p * cond[k][o];
      }
    }
    for (std::size_t o = 0; o < n_other; ++o) (over_hidden ? st.v[o] : st.h[o]) += p * cond[k][o];
  }
  return st;
}

/// Source of the model-expectation term of the log-likelihood gradient.
class NegativePhase {
 public:
  virtual ~NegativePhase() = default;
  virtual std::string name() const = 0;
  /// `batch` holds the visible rows of the current minibatch; only
  /// data-dependent estimators (CD) read it.
  virtual PhaseStats estimate(const RbmModel& m, std::span<const std::span<const std::uint8_t>> batch,
                              Rng& rng) = 0;
};

class ExactNegativePhase final : public NegativePhase {
 public:
  std::string name() const override { return "exact"; }
  PhaseStats estimate(const RbmModel& m, std::span<const std::span<const std::uint8_t>>, Rng&) override {
    return exact_model_stats(m);
  }
};

class GibbsNegativePhase final : public NegativePhase {
 public:
  GibbsNegativePhase(GibbsOptions opt, std::uint64_t num_reads) : opt_(opt), num_reads_(num_reads) {}
  std::string name() const override { return "gibbs"; }
  PhaseStats estimate(const RbmModel& m, std::span<const std::span<const std::uint8_t>>, Rng& rng) override {
    return negative_phase(gibbs_sample(m, opt_, num_reads_, rng.next()), m.n_visible, m.n_hidden);
  }

 private:
  GibbsOptions opt_;
  std::uint64_t num_reads_;
};

/// Simulated annealing over rbm_to_qubo(m); final states only.
class AnnealingNegativePhase final : public NegativePhase {
 public:
  AnnealingNegativePhase(AnnealSchedule schedule, std::uint64_t num_reads)
      : schedule_(schedule), num_reads_(num_reads) {}
  std::string name() const override { return "sa"; }
  PhaseStats estimate(const RbmModel& m, std::span<const std::span<const std::uint8_t>>, Rng& rng) override {
    return negative_phase(sa_sample(rbm_to_qubo(m), schedule_, num_reads_, rng.next()), m.n_visible,
                          m.n_hidden);
  }

 private:
  AnnealSchedule schedule_;
  std::uint64_t num_reads_;
};

}  // namespace hsiseg::samplers
