#pragma once

// RBM training with pluggable negative phase, pixel labelling by binarized
// hidden probabilities, and the threshold / architecture selection
// procedures built on top of them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsiseg/core.hpp"
#include "hsiseg/metrics.hpp"
#include "hsiseg/rbm_model.hpp"
#include "hsiseg/samplers.hpp"

namespace hsiseg::rbm {

using samplers::NegativePhase;
using samplers::PhaseStats;
using BitRows = std::vector<std::span<const std::uint8_t>>;

inline BitRows rows_of(const Matrix<std::uint8_t>& data) {
  BitRows rows;
  rows.reserve(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) rows.push_back(data.row(i));
  return rows;
}

/// Data-side statistics: means of v p(h|v)', v and p(h|v) over the batch.
inline PhaseStats positive_phase(const RbmModel& m, std::span<const std::span<const std::uint8_t>> batch) {
  if (batch.empty()) throw Error("positive_phase: empty batch");
  PhaseStats st(m.n_visible, m.n_hidden);
  for (const auto& v : batch) {
    if (v.size() != m.n_visible) throw Error("positive_phase: visible length mismatch");
    const auto ph = hidden_probs(m, v);
    for (std::size_t i = 0; i < m.n_visible; ++i) {
      if (!v[i]) continue;
      st.v[i] += 1.0;
      for (std::size_t j = 0; j < m.n_hidden; ++j) st.vh(i, j) += ph[j];
    }
    for (std::size_t j = 0; j < m.n_hidden; ++j) st.h[j] += ph[j];
  }
  const double n = static_cast<double>(batch.size());
  for (auto& e : st.vh.data()) e /= n;
  for (auto& e : st.v) e /= n;
  for (auto& e : st.h) e /= n;
  return st;
}

/// One Gibbs step off the data: h ~ p(h|v), v' ~ p(v|h); statistics use
/// v' and p(h|v').
class Cd1NegativePhase final : public NegativePhase {
 public:
  std::string name() const override { return "cd1"; }
  PhaseStats estimate(const RbmModel& m, std::span<const std::span<const std::uint8_t>> batch,
                      Rng& rng) override {
    if (batch.empty()) throw Error("cd1: empty batch");
    PhaseStats st(m.n_visible, m.n_hidden);
    Bits h(m.n_hidden), v1(m.n_visible);
    for (const auto& v0 : batch) {
      sample_bits(hidden_probs(m, v0), rng, h);
      sample_bits(visible_probs(m, std::span<const std::uint8_t>(h)), rng, v1);
      const auto ph1 = hidden_probs(m, std::span<const std::uint8_t>(v1));
      for (std::size_t i = 0; i < m.n_visible; ++i) {
        if (!v1[i]) continue;
        st.v[i] += 1.0;
        for (std::size_t j = 0; j < m.n_hidden; ++j) st.vh(i, j) += ph1[j];
      }
      for (std::size_t j = 0; j < m.n_hidden; ++j) st.h[j] += ph1[j];
    }
    const double n = static_cast<double>(batch.size());
    for (auto& e : st.vh.data()) e /= n;
    for (auto& e : st.v) e /= n;
    for (auto& e : st.h) e /= n;
    return st;
  }
};

/// Log-likelihood gradient estimate (positive minus negative phase).
struct Gradient {
  Matrix<double> dW;
  std::vector<double> da;
  std::vector<double> db;
};

inline Gradient difference(const PhaseStats& pos, const PhaseStats& neg) {
  Gradient g{pos.vh, pos.v, pos.h};
  for (std::size_t k = 0; k < g.dW.data().size(); ++k) g.dW.data()[k] -= neg.vh.data()[k];
  for (std::size_t i = 0; i < g.da.size(); ++i) g.da[i] -= neg.v[i];
  for (std::size_t j = 0; j < g.db.size(); ++j) g.db[j] -= neg.h[j];
  return g;
}

inline Gradient cd1_update(const RbmModel& m, std::span<const std::span<const std::uint8_t>> batch, Rng& rng) {
  if (batch.empty()) throw Error("cd1_update: empty batch");
  Cd1NegativePhase cd;
  const auto pos = positive_phase(m, batch);
  return difference(pos, cd.estimate(m, batch, rng));
}

/// Mean per-bit cross-entropy between v and its mean-field one-step
/// reconstruction p(v | p(h|v)).
inline double reconstruction_loss(const RbmModel& m, std::span<const std::span<const std::uint8_t>> data) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  constexpr double kEps = 1e-12;
  double total = 0.0;
  for (const auto& v : data) {
    const auto ph = hidden_probs(m, v);
    const auto pv = visible_probs(m, std::span<const double>(ph));
    for (std::size_t i = 0; i < m.n_visible; ++i) {
      const double p = std::clamp(pv[i], kEps, 1.0 - kEps);
      total -= v[i] ? std::log(p) : std::log(1.0 - p);
    }
  }
  return total / static_cast<double>(data.size() * m.n_visible);
}

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 1000;
  std::size_t batch_size = 64;
  std::size_t checkpoint_every = 100;
  double init_sigma = 0.01;
  std::uint64_t seed = 0;
};

struct LossRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct Checkpoint {
  std::size_t epoch = 0;
  RbmModel model;
};

struct TrainResult {
  RbmModel model;
  std::vector<LossRecord> history;
  std::vector<Checkpoint> checkpoints;
};

using CheckpointSink = std::function<void(const Checkpoint&)>;

/// Minibatch ascent: params += lr * (positive - negative). Checkpoints are
/// taken at every multiple of checkpoint_every and handed to `sink`.
inline TrainResult train_rbm(RbmModel model, const Matrix<std::uint8_t>& data, const TrainConfig& cfg,
                             NegativePhase& negative, const Matrix<std::uint8_t>* validation = nullptr,
                             const CheckpointSink& sink = {}) {
  if (data.rows() == 0) throw Error("train_rbm: empty training data");
  if (data.cols() != model.n_visible)
    throw Error("train_rbm: data rows have " + std::to_string(data.cols()) + " bits, model expects " +
                std::to_string(model.n_visible));
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) throw Error("train_rbm: invalid configuration");
  const BitRows rows = rows_of(data);
  const BitRows val_rows = validation ? rows_of(*validation) : BitRows{};
  Rng rng(cfg.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result{std::move(model), {}, {}};
  RbmModel& m = result.model;
  BitRows batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t s = start; s < end; ++s) batch.push_back(rows[order[s]]);
      const auto pos = positive_phase(m, batch);
      PhaseStats neg;
      try {
        neg = negative.estimate(m, batch, rng);
      } catch (const std::exception& e) {
        throw Error("train_rbm: " + negative.name() + " negative phase failed at epoch " + std::to_string(epoch) +
                    ": " + e.what());
      }
      const Gradient g = difference(pos, neg);
      for (std::size_t k = 0; k < m.W.data().size(); ++k) m.W.data()[k] += cfg.learning_rate * g.dW.data()[k];
      for (std::size_t i = 0; i < m.n_visible; ++i) m.a[i] += cfg.learning_rate * g.da[i];
      for (std::size_t j = 0; j < m.n_hidden; ++j) m.b[j] += cfg.learning_rate * g.db[j];
    }
    if (!m.finite()) throw Error("train_rbm: non-finite parameters after epoch " + std::to_string(epoch));
    result.history.push_back({epoch, reconstruction_loss(m, rows), reconstruction_loss(m, val_rows)});
    if (cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0) {
      result.checkpoints.push_back({epoch, m});
      if (sink) sink(result.checkpoints.back());
    }
  }
  return result;
}

inline TrainResult train_rbm(const Matrix<std::uint8_t>& data, std::size_t n_hidden, const TrainConfig& cfg,
                             NegativePhase& negative, const Matrix<std::uint8_t>* validation = nullptr,
                             const CheckpointSink& sink = {}) {
  return train_rbm(RbmModel::random(data.cols(), n_hidden, cfg.seed, cfg.init_sigma), data, cfg, negative,
                   validation, sink);
}

inline std::string history_csv(const std::vector<LossRecord>& history) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + "," + metrics::format_double(e.train_loss) + "," +
           metrics::format_double(e.val_loss) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Labelling

/// bit_j = 1 iff P(h_j = 1 | v) >= threshold.
inline Bits label_pixel(const RbmModel& m, std::span<const std::uint8_t> v, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("label_pixel: threshold must lie in (0, 1)");
  const auto p = hidden_probs(m, v);
  Bits bits(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) bits[j] = p[j] >= threshold ? 1 : 0;
  return bits;
}

/// Integer code of every row's label (bit j -> 2^j).
inline std::vector<std::uint64_t> label_codes(const RbmModel& m, const Matrix<std::uint8_t>& visible,
                                              double threshold) {
  std::vector<std::uint64_t> codes(visible.rows());
  for (std::size_t i = 0; i < visible.rows(); ++i) codes[i] = bits_to_code(label_pixel(m, visible.row(i), threshold));
  return codes;
}

inline std::vector<double> threshold_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 9; ++k) g.push_back(k / 10.0);
  return g;
}

struct ThresholdSelection {
  double best = 0.5;
  std::vector<std::pair<double, double>> table;  // (threshold, ARS)
};

/// Argmax of ARS against the ground truth over 0.1..0.9; ties keep the lower
/// threshold.
template <typename L>
ThresholdSelection select_threshold(const RbmModel& m, const Matrix<std::uint8_t>& visible,
                                    const std::vector<L>& truth) {
  if (visible.rows() == 0) throw Error("select_threshold: empty dataset");
  ThresholdSelection sel;
  double best_ars = -std::numeric_limits<double>::infinity();
  for (double th : threshold_grid()) {
    const double ars = metrics::adjusted_rand(truth, label_codes(m, visible, th));
    sel.table.emplace_back(th, ars);
    if (ars > best_ars) {
      best_ars = ars;
      sel.best = th;
    }
  }
  return sel;
}

struct BetaChoice {
  double beta = 0.0;
  double v = 0.0;
};

/// Maximizes V_beta over beta in {0, 0.01, ..., 1}; ties keep the smaller beta.
inline BetaChoice best_beta(double h, double c) {
  BetaChoice best{0.0, -1.0};
  for (int k = 0; k <= 100; ++k) {
    const double beta = k / 100.0;
    const double v = metrics::v_measure(h, c, beta);
    if (v > best.v) best = {beta, v};
  }
  return best;
}

/// Threshold chosen by ARS, then homogeneity/completeness and the best V.
struct ModelScore {
  double threshold = 0.5;
  metrics::ClusteringReport report;
  BetaChoice beta;
};

template <typename L>
ModelScore score_model(const RbmModel& m, const Matrix<std::uint8_t>& visible, const std::vector<L>& truth) {
  ModelScore s;
  s.threshold = select_threshold(m, visible, truth).best;
  s.report = metrics::evaluate(truth, label_codes(m, visible, s.threshold));
  s.beta = best_beta(s.report.homogeneity, s.report.completeness);
  return s;
}

/// Index of the checkpoint with the highest V score; ties keep the earlier.
template <typename L>
std::size_t select_checkpoint(std::span<const Checkpoint> checkpoints, const Matrix<std::uint8_t>& visible,
                              const std::vector<L>& truth) {
  if (checkpoints.empty()) throw Error("select_checkpoint: no checkpoints");
  std::size_t best = 0;
  double best_v = -1.0;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const double v = score_model(checkpoints[i].model, visible, truth).beta.v;
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Architecture scan

using NegativePhaseFactory = std::function<std::unique_ptr<NegativePhase>()>;

struct ArchitectureRun {
  std::size_t n_hidden = 0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  ModelScore score;
};

struct ArchitectureReport {
  std::vector<ArchitectureRun> runs;
  std::vector<std::pair<std::size_t, std::size_t>> wins;  // (n_hidden, first places)
  std::size_t best_hidden = 0;
};

/// For every repeat, trains each hidden size and awards a first place to the
/// size with the best V (ties to the smaller size). The winner has the most
/// first places, ties again to the smaller size. `on_run` observes each
/// trained run.
template <typename L>
ArchitectureReport select_architecture(
    const Matrix<std::uint8_t>& train, const Matrix<std::uint8_t>& eval, const std::vector<L>& eval_truth,
    std::size_t hidden_min, std::size_t hidden_max, std::size_t repeats, const TrainConfig& base,
    const NegativePhaseFactory& make_negative,
    const std::function<void(const ArchitectureRun&, const TrainResult&)>& on_run = {}) {
  if (hidden_min < 1 || hidden_max < hidden_min || repeats < 1)
    throw Error("select_architecture: invalid hidden range or repeat count");
  ArchitectureReport report;
  for (std::size_t h = hidden_min; h <= hidden_max; ++h) report.wins.emplace_back(h, 0);
  for (std::size_t r = 0; r < repeats; ++r) {
    std::size_t winner = 0;
    double winner_v = -1.0;
    for (std::size_t h = hidden_min; h <= hidden_max; ++h) {
      TrainConfig cfg = base;
      cfg.seed = base.seed + 1000003ULL * r + h;
      auto negative = make_negative();
      auto trained = train_rbm(train, h, cfg, *negative, &eval);
      ArchitectureRun run{h, r, cfg.seed, score_model(trained.model, eval, eval_truth)};
      if (on_run) on_run(run, trained);
      if (run.score.beta.v > winner_v) {
        winner_v = run.score.beta.v;
        winner = h;
      }
      report.runs.push_back(run);
    }
    ++report.wins[winner - hidden_min].second;
  }
  std::size_t best_count = 0;
  for (const auto& [h, count] : report.wins)
    if (count > best_count) {
      best_count = count;
      report.best_hidden = h;
    }
  return report;
}

}  // namespace hsiseg::rbm
