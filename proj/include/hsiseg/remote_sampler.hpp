#pragma once

// JSON-over-HTTP annealer protocol: client, wire codec, and a local stub
// service backed by simulated annealing.
//
//   POST <endpoint>/sample[?seed=N]
//   request  {"linear": [f], "quadratic": [[i, j, f]], "offset": f, "num_reads": n}
//   response {"assignments": [[bit]], "energies": [f], "occurrences": [n], "sampler_info": s}
//
// The service answers 400 for malformed problems and 503 when overloaded.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "hsiseg/core.hpp"
#include "hsiseg/samplers.hpp"

namespace hsiseg::remote {

using samplers::AnnealSchedule;
using samplers::QuboProblem;
using samplers::SampleSet;

class RemoteError : public Error {
 public:
  enum class Kind { transport, timeout, http_status, malformed, energy_mismatch };
  RemoteError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline nlohmann::json problem_to_json(const QuboProblem& p, std::uint64_t num_reads) {
  nlohmann::json quad = nlohmann::json::array();
  for (const auto& [key, q] : p.quadratic) quad.push_back({key.first, key.second, q});
  return {{"linear", p.linear}, {"quadratic", std::move(quad)}, {"offset", p.offset}, {"num_reads", num_reads}};
}

/// Parses and validates a request body; throws Error with a message fit for
/// a 400 response.
inline std::pair<QuboProblem, std::uint64_t> problem_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("request must be a JSON object");
  for (const char* field : {"linear", "quadratic", "offset", "num_reads"})
    if (!j.contains(field)) throw Error(std::string("missing field '") + field + "'");
  if (!j["linear"].is_array() || !j["quadratic"].is_array()) throw Error("'linear' and 'quadratic' must be arrays");
  if (!j["offset"].is_number()) throw Error("'offset' must be a number");
  if (!j["num_reads"].is_number_unsigned()) throw Error("'num_reads' must be a non-negative integer");
  QuboProblem p(j["linear"].size());
  for (std::size_t i = 0; i < p.n_vars; ++i) {
    if (!j["linear"][i].is_number()) throw Error("'linear' entries must be numbers");
    p.linear[i] = j["linear"][i].get<double>();
  }
  for (const auto& t : j["quadratic"]) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_number_unsigned() || !t[1].is_number_unsigned() ||
        !t[2].is_number())
      throw Error("'quadratic' entries must be [i, j, value]");
    const auto a = t[0].get<std::size_t>(), b = t[1].get<std::size_t>();
    if (a == b || std::max(a, b) >= p.n_vars) throw Error("quadratic index out of range or self-pair");
    p.add_quadratic(a, b, t[2].get<double>());
  }
  p.offset = j["offset"].get<double>();
  p.validate();
  return {std::move(p), j["num_reads"].get<std::uint64_t>()};
}

inline nlohmann::json sample_set_to_json(const SampleSet& s) {
  nlohmann::json assignments = nlohmann::json::array();
  for (const auto& a : s.assignments) {
    nlohmann::json row = nlohmann::json::array();
    for (auto bit : a) row.push_back(static_cast<int>(bit));
    assignments.push_back(std::move(row));
  }
  return {{"assignments", std::move(assignments)},
          {"energies", s.energies},
          {"occurrences", s.occurrences},
          {"sampler_info", s.sampler_info}};
}

inline SampleSet sample_set_from_json(const nlohmann::json& j) {
  SampleSet s;
  try {
    for (const auto& row : j.at("assignments")) {
      Bits a;
      for (const auto& bit : row) {
        const int v = bit.get<int>();
        if (v != 0 && v != 1) throw Error("assignment value is not a bit");
        a.push_back(static_cast<std::uint8_t>(v));
      }
      s.assignments.push_back(std::move(a));
    }
    s.energies = j.at("energies").get<std::vector<double>>();
    s.occurrences = j.at("occurrences").get<std::vector<std::uint64_t>>();
    s.sampler_info = j.value("sampler_info", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed sample set: ") + e.what());
  }
  return s;
}

struct Endpoint {
  std::string scheme_host_port;  // "http://host:port"
  std::string path_prefix;       // "" or "/api"
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("endpoint '" + url + "' has no scheme");
  const auto path = url.find('/', scheme + 3);
  Endpoint e{url.substr(0, path), path == std::string::npos ? "" : url.substr(path)};
  while (!e.path_prefix.empty() && e.path_prefix.back() == '/') e.path_prefix.pop_back();
  return e;
}

inline std::string problem_id(const std::string& body) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(body)));
  return buf;
}

/// Submits the problem and validates the answer locally: energies must match
/// the objective within 1e-6 and occurrences must add up to num_reads.
inline SampleSet remote_sample(const std::string& endpoint, const QuboProblem& p, std::uint64_t num_reads,
                               std::chrono::milliseconds timeout, std::optional<std::uint64_t> seed = {}) {
  using Kind = RemoteError::Kind;
  const Endpoint ep = parse_endpoint(endpoint);
  const std::string body = problem_to_json(p, num_reads).dump();
  const std::string id = problem_id(body);
  httplib::Client client(ep.scheme_host_port);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  std::string path = ep.path_prefix + "/sample";
  if (seed) path += "?seed=" + std::to_string(*seed);

  const auto started = std::chrono::steady_clock::now();
  auto res = client.Post(path, body, "application/json");
  if (!res) {
    const auto elapsed = std::chrono::steady_clock::now() - started;
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || (err == httplib::Error::Read && elapsed >= timeout))
      throw RemoteError(Kind::timeout, "remote sampler timed out after " + std::to_string(timeout.count()) +
                                           " ms (problem " + id + ")");
    throw RemoteError(Kind::transport, "remote sampler transport failure (problem " + id +
                                           "): " + httplib::to_string(err));
  }
  if (res->status != 200)
    throw RemoteError(Kind::http_status, "remote sampler returned HTTP " + std::to_string(res->status) +
                                             " (problem " + id + "): " + res->body);
  SampleSet s;
  try {
    s = sample_set_from_json(nlohmann::json::parse(res->body));
  } catch (const std::exception& e) {
    throw RemoteError(Kind::malformed, std::string("malformed response (problem ") + id + "): " + e.what());
  }
  if (s.assignments.size() != s.energies.size() || s.assignments.size() != s.occurrences.size())
    throw RemoteError(Kind::malformed, "response arrays differ in length (problem " + id + ")");
  for (std::size_t i = 0; i < s.assignments.size(); ++i) {
    if (s.assignments[i].size() != p.n_vars)
      throw RemoteError(Kind::malformed, "assignment of wrong length (problem " + id + ")");
    const double e = samplers::qubo_energy(p, s.assignments[i]);
    if (!(std::abs(e - s.energies[i]) <= 1e-6))
      throw RemoteError(Kind::energy_mismatch, "untrusted sampler: reported energy " + std::to_string(s.energies[i]) +
                                                   " but objective is " + std::to_string(e) + " (problem " + id + ")");
  }
  if (s.total_reads() != num_reads)
    throw RemoteError(Kind::malformed, "occurrences sum to " + std::to_string(s.total_reads()) + ", requested " +
                                           std::to_string(num_reads) + " (problem " + id + ")");
  return s;
}

/// Negative phase drawn from a remote annealer over rbm_to_qubo(m).
class RemoteNegativePhase final : public samplers::NegativePhase {
 public:
  RemoteNegativePhase(std::string endpoint, std::chrono::milliseconds timeout, std::uint64_t num_reads)
      : endpoint_(std::move(endpoint)), timeout_(timeout), num_reads_(num_reads) {}
  std::string name() const override { return "remote"; }
  samplers::PhaseStats estimate(const rbm::RbmModel& m, std::span<const std::span<const std::uint8_t>>,
                                Rng& rng) override {
    const auto s = remote_sample(endpoint_, samplers::rbm_to_qubo(m), num_reads_, timeout_, rng.next());
    return samplers::negative_phase(s, m.n_visible, m.n_hidden);
  }

 private:
  std::string endpoint_;
  std::chrono::milliseconds timeout_;
  std::uint64_t num_reads_;
};

// ---------------------------------------------------------------------------
// Stub service

struct StubResponse {
  int status = 200;
  std::string body;
};

/// Request handling without the socket layer.
inline StubResponse handle_sample_request(const std::string& body, std::uint64_t seed,
                                          const AnnealSchedule& schedule) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    return {400, nlohmann::json{{"error", std::string("invalid JSON: ") + e.what()}}.dump()};
  }
  std::pair<QuboProblem, std::uint64_t> parsed;
  try {
    parsed = problem_from_json(j);
  } catch (const std::exception& e) {
    return {400, nlohmann::json{{"error", e.what()}}.dump()};
  }
  auto samples = samplers::sa_sample(parsed.first, schedule, parsed.second, seed);
  samples.sampler_info = "stub " + samples.sampler_info;
  return {200, sample_set_to_json(samples).dump()};
}

struct StubOptions {
  AnnealSchedule schedule;
  std::size_t max_in_flight = 4;
};

class StubAnnealService {
 public:
  explicit StubAnnealService(StubOptions opt = {}) : opt_(std::move(opt)) {
    opt_.schedule.validate();
    server_.Post("/sample", [this](const httplib::Request& req, httplib::Response& res) {
      struct InFlight {
        std::atomic<std::size_t>& n;
        explicit InFlight(std::atomic<std::size_t>& c) : n(c) { ++n; }
        ~InFlight() { --n; }
      } guard(in_flight_);
      if (in_flight_.load() > opt_.max_in_flight) {
        res.status = 503;
        res.set_content(R"({"error": "overloaded"})", "application/json");
        return;
      }
      std::uint64_t seed = 0;
      AnnealSchedule schedule = opt_.schedule;
      try {
        if (req.has_param("seed")) seed = std::stoull(req.get_param_value("seed"));
        if (req.has_param("beta_start")) schedule.beta_start = std::stod(req.get_param_value("beta_start"));
        if (req.has_param("beta_end")) schedule.beta_end = std::stod(req.get_param_value("beta_end"));
        if (req.has_param("sweeps")) schedule.sweeps = std::stoull(req.get_param_value("sweeps"));
        schedule.validate();
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(nlohmann::json{{"error", std::string("bad query parameter: ") + e.what()}}.dump(),
                        "application/json");
        return;
      }
      const auto out = handle_sample_request(req.body, seed, schedule);
      res.status = out.status;
      res.set_content(out.body, "application/json");
    });
  }

  ~StubAnnealService() { stop(); }
  StubAnnealService(const StubAnnealService&) = delete;
  StubAnnealService& operator=(const StubAnnealService&) = delete;

  /// Binds (port 0 picks a free port), serves on a background thread and
  /// returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("stub service: cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called elsewhere.
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw Error("stub service: cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }

 private:
  StubOptions opt_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<std::size_t> in_flight_{0};
  std::string host_ = "127.0.0.1";
  int port_ = -1;
};

}  // namespace hsiseg::remote
