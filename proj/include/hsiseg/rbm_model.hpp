#pragma once

// Bernoulli-Bernoulli RBM parameters, energy and conditionals.
//
// E(v, h) = -a.v - b.h - v'Wh

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsiseg/core.hpp"

namespace hsiseg::rbm {

struct RbmModel {
  std::size_t n_visible = 0;
  std::size_t n_hidden = 0;
  Matrix<double> W;  // n_visible x n_hidden
  std::vector<double> a;  // visible biases
  std::vector<double> b;  // hidden biases

  RbmModel() = default;
  RbmModel(std::size_t nv, std::size_t nh) : n_visible(nv), n_hidden(nh), W(nv, nh, 0.0), a(nv, 0.0), b(nh, 0.0) {}

  /// Weights ~ N(0, sigma^2), biases zero.
  static RbmModel random(std::size_t nv, std::size_t nh, std::uint64_t seed, double sigma = 0.01) {
    RbmModel m(nv, nh);
    Rng rng(seed);
    for (auto& w : m.W.data()) w = rng.normal(0.0, sigma);
    return m;
  }

  bool finite() const {
    for (double v : W.data())
      if (!std::isfinite(v)) return false;
    for (double v : a)
      if (!std::isfinite(v)) return false;
    for (double v : b)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const RbmModel&) const = default;
};

inline double energy(const RbmModel& m, std::span<const std::uint8_t> v, std::span<const std::uint8_t> h) {
  if (v.size() != m.n_visible || h.size() != m.n_hidden) throw Error("energy: length mismatch");
  // Term order matches qubo_energy on rbm_to_qubo(m) so the two agree bitwise.
  double e = 0.0;
  for (std::size_t i = 0; i < m.n_visible; ++i) e += (-m.a[i]) * static_cast<double>(v[i]);
  for (std::size_t j = 0; j < m.n_hidden; ++j) e += (-m.b[j]) * static_cast<double>(h[j]);
  for (std::size_t i = 0; i < m.n_visible; ++i)
    for (std::size_t j = 0; j < m.n_hidden; ++j)
      e += (-m.W(i, j)) * static_cast<double>(v[i]) * static_cast<double>(h[j]);
  return e;
}

/// P(h_j = 1 | v) = sigmoid(b_j + sum_i v_i W_ij). Accepts real-valued v.
template <typename T>
std::vector<double> hidden_probs(const RbmModel& m, std::span<const T> v) {
  if (v.size() != m.n_visible) throw Error("hidden_probs: length mismatch");
  std::vector<double> act(m.b);
  for (std::size_t i = 0; i < m.n_visible; ++i) {
    const double vi = static_cast<double>(v[i]);
    if (vi == 0.0) continue;
    const auto row = m.W.row(i);
    for (std::size_t j = 0; j < m.n_hidden; ++j) act[j] += vi * row[j];
  }
  for (auto& x : act) x = sigmoid(x);
  return act;
}

/// P(v_i = 1 | h) = sigmoid(a_i + sum_j W_ij h_j). Accepts real-valued h.
template <typename T>
std::vector<double> visible_probs(const RbmModel& m, std::span<const T> h) {
  if (h.size() != m.n_hidden) throw Error("visible_probs: length mismatch");
  std::vector<double> act(m.a);
  for (std::size_t i = 0; i < m.n_visible; ++i) {
    const auto row = m.W.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < m.n_hidden; ++j) s += row[j] * static_cast<double>(h[j]);
    act[i] = sigmoid(act[i] + s);
  }
  return act;
}

template <typename T>
std::vector<double> hidden_probs(const RbmModel& m, const std::vector<T>& v) {
  return hidden_probs(m, std::span<const T>(v));
}
template <typename T>
std::vector<double> visible_probs(const RbmModel& m, const std::vector<T>& h) {
  return visible_probs(m, std::span<const T>(h));
}

inline void sample_bits(std::span<const double> probs, Rng& rng, std::span<std::uint8_t> out) {
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = rng.uniform() < probs[i] ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Persistence (.rbm.json)

inline nlohmann::json to_json(const RbmModel& m, const nlohmann::json& provenance = nlohmann::json::object()) {
  nlohmann::json w = nlohmann::json::array();
  for (std::size_t i = 0; i < m.n_visible; ++i) {
    const auto row = m.W.row(i);
    w.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"format", "rbm"}, {"version", 1}, {"n_visible", m.n_visible}, {"n_hidden", m.n_hidden},
          {"W", std::move(w)}, {"a", m.a},    {"b", m.b},                 {"provenance", provenance}};
}

inline RbmModel from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "rbm") throw Error("not an RBM model document");
  if (j.value("version", 0) != 1) throw Error("unsupported RBM model version");
  RbmModel m(j.at("n_visible").get<std::size_t>(), j.at("n_hidden").get<std::size_t>());
  const auto& w = j.at("W");
  if (w.size() != m.n_visible) throw Error("rbm json: W has wrong row count");
  for (std::size_t i = 0; i < m.n_visible; ++i) {
    const auto row = w[i].get<std::vector<double>>();
    if (row.size() != m.n_hidden) throw Error("rbm json: W has wrong column count");
    for (std::size_t k = 0; k < m.n_hidden; ++k) m.W(i, k) = row[k];
  }
  m.a = j.at("a").get<std::vector<double>>();
  m.b = j.at("b").get<std::vector<double>>();
  if (m.a.size() != m.n_visible || m.b.size() != m.n_hidden) throw Error("rbm json: bias length mismatch");
  if (!m.finite()) throw Error("rbm json: non-finite parameter");
  return m;
}

inline void save(const RbmModel& m, const std::filesystem::path& path,
                 const nlohmann::json& provenance = nlohmann::json::object()) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(m, provenance).dump(1) << "\n";
}

inline RbmModel load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return from_json(nlohmann::json::parse(in));
}

}  // namespace hsiseg::rbm
