#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "hsiseg/rbm.hpp"
#include "oracles.hpp"

using namespace hsiseg;
using namespace hsiseg::rbm;

namespace {

Matrix<std::uint8_t> patterns(const std::vector<Bits>& rows) {
  Matrix<std::uint8_t> m;
  for (const auto& r : rows) m.append_row(r);
  return m;
}

std::vector<Bits> as_rows(const Matrix<std::uint8_t>& m) {
  std::vector<Bits> out;
  for (std::size_t i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).begin(), m.row(i).end());
  return out;
}

const std::vector<Bits> kEight{{1, 1, 0, 0}, {1, 1, 0, 0}, {1, 1, 1, 0}, {1, 1, 0, 1},
                               {0, 0, 1, 1}, {1, 0, 1, 1}, {1, 1, 1, 1}, {1, 1, 0, 0}};

}  // namespace

TEST(RbmModel, EnergyMatchesOracle) {
  const auto m = RbmModel::random(3, 2, 4, 0.7);
  for (std::uint64_t c = 0; c < 32; ++c) {
    const auto x = code_to_bits(c, 5);
    const Bits v(x.begin(), x.begin() + 3), h(x.begin() + 3, x.end());
    EXPECT_NEAR(energy(m, v, h), oracle::rbm_energy(m, v, h), 1e-12);
  }
}

TEST(RbmModel, ConditionalsAreLogisticInTheFields) {
  RbmModel m(2, 1);
  m.W(0, 0) = 2.0;
  m.W(1, 0) = -1.0;
  m.b[0] = 0.5;
  m.a = {0.25, -0.25};
  EXPECT_NEAR(hidden_probs(m, Bits{1, 1})[0], sigmoid(1.5), 1e-15);
  EXPECT_NEAR(visible_probs(m, Bits{1})[1], sigmoid(-1.25), 1e-15);
  EXPECT_THROW(hidden_probs(m, Bits{1}), Error);
}

TEST(RbmModel, JsonRoundTrip) {
  const auto m = RbmModel::random(5, 3, 1, 0.3);
  const auto path = std::filesystem::temp_directory_path() / "hsiseg_rbm_roundtrip.rbm.json";
  save(m, path, {{"note", "x"}});
  EXPECT_EQ(load(path), m);
  std::filesystem::remove(path);
  auto j = to_json(m);
  j["n_hidden"] = 4;
  EXPECT_THROW(from_json(j), std::exception);
}

TEST(Cd1, GradientHasExpectedSignOnBiases) {
  const auto data = patterns({{1, 1, 1}, {1, 1, 1}});
  RbmModel m(3, 2);
  Rng rng(1);
  const auto rows = rows_of(data);
  const auto g = cd1_update(m, rows, rng);
  for (double x : g.da) EXPECT_GE(x, 0.0);
}

TEST(Train, ExactGradientAscendsLikelihood) {
  const auto data = patterns(kEight);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 60;
  cfg.batch_size = 8;
  cfg.checkpoint_every = 0;
  cfg.seed = 3;
  samplers::ExactNegativePhase exact;
  auto m = RbmModel::random(4, 3, cfg.seed, cfg.init_sigma);
  double prev = oracle::rbm_log_likelihood(m, kEight);
  const double start = prev;
  cfg.epochs = 1;
  for (int e = 0; e < 60; ++e) {
    m = train_rbm(m, data, cfg, exact).model;
    const double ll = oracle::rbm_log_likelihood(m, kEight);
    EXPECT_GE(ll, prev - 1e-12);
    prev = ll;
  }
  EXPECT_GT(prev - start, 0.1);
}

TEST(Train, CheckpointsAndHistory) {
  const auto data = patterns(kEight);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 3;
  cfg.checkpoint_every = 10;
  cfg.seed = 9;
  Cd1NegativePhase cd;
  std::vector<std::size_t> seen;
  const auto r = train_rbm(data, 2, cfg, cd, &data, [&](const Checkpoint& c) { seen.push_back(c.epoch); });
  EXPECT_EQ(r.history.size(), 25u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{10, 20}));
  ASSERT_EQ(r.checkpoints.size(), 2u);
  EXPECT_EQ(r.history.back().train_loss, r.history.back().val_loss);
  const auto again = train_rbm(data, 2, cfg, cd, &data);
  EXPECT_EQ(again.model, r.model);
  EXPECT_EQ(history_csv(r.history).substr(0, 26), "epoch,train_loss,val_loss\n");
}

TEST(Train, RejectsBadInput) {
  Cd1NegativePhase cd;
  TrainConfig cfg;
  EXPECT_THROW(train_rbm(Matrix<std::uint8_t>(), 2, cfg, cd), Error);
  const auto data = patterns(kEight);
  EXPECT_THROW(train_rbm(RbmModel(3, 2), data, cfg, cd), Error);
  cfg.batch_size = 0;
  EXPECT_THROW(train_rbm(data, 2, cfg, cd), Error);
}

TEST(Labelling, ThresholdControlsBits) {
  RbmModel m(1, 2);
  m.b = {0.0, 2.0};  // p = 0.5, 0.88
  EXPECT_EQ(label_pixel(m, Bits{0}, 0.5), (Bits{1, 1}));
  EXPECT_EQ(label_pixel(m, Bits{0}, 0.6), (Bits{0, 1}));
  EXPECT_EQ(label_pixel(m, Bits{0}, 0.9), (Bits{0, 0}));
  EXPECT_THROW(label_pixel(m, Bits{0}, 1.0), Error);
  EXPECT_EQ(threshold_grid().size(), 9u);
}

TEST(Selection, BestBetaMaximisesV) {
  const auto b = best_beta(0.9, 0.3);
  for (int k = 0; k <= 100; ++k) EXPECT_LE(metrics::v_measure(0.9, 0.3, k / 100.0), b.v);
  EXPECT_DOUBLE_EQ(best_beta(0.5, 0.5).beta, 0.0);
}

TEST(Selection, ArchitectureScanCountsWins) {
  const auto data = patterns(kEight);
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 1, 0};
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.checkpoint_every = 0;
  std::size_t calls = 0;
  const auto rep = select_architecture(
      data, data, truth, 2, 4, 2, cfg, [] { return std::make_unique<Cd1NegativePhase>(); },
      [&](const ArchitectureRun&, const TrainResult& r) {
        ++calls;
        EXPECT_FALSE(std::isnan(r.history.back().val_loss));
      });
  EXPECT_EQ(calls, 6u);
  EXPECT_EQ(rep.runs.size(), 6u);
  std::size_t total = 0;
  for (const auto& [h, w] : rep.wins) total += w;
  EXPECT_EQ(total, 2u);
  EXPECT_GE(rep.best_hidden, 2u);
  EXPECT_LE(rep.best_hidden, 4u);
  EXPECT_THROW(select_architecture(data, data, truth, 3, 2, 1, cfg, [] { return std::make_unique<Cd1NegativePhase>(); }),
               Error);
}

TEST(Selection, CheckpointTiesKeepEarlier) {
  const auto data = patterns(kEight);
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 1, 0};
  const RbmModel m(4, 2);
  const std::vector<Checkpoint> cps{{10, m}, {20, m}};
  EXPECT_EQ(select_checkpoint(std::span<const Checkpoint>(cps), data, truth), 0u);
  EXPECT_EQ(as_rows(data).size(), 8u);
}
