#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnnfp/extraction.hpp"
#include "gnnfp/fingerprint.hpp"
#include "gnnfp/serialize.hpp"

namespace gnnfp {

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                  nullptr))
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

struct RegistryRecord {
  std::string model_id;
  std::string commitment;    // SHA-256 of the canonical model bytes
  std::uint64_t sequence = 0;  // registry-local monotonic timestamp
  std::string registered_at;   // wall-clock ISO-8601, informational
  std::string owner_id;
};

enum class DisputeStatus {
  opened,
  rejected_timestamp,
  rejected_malformed,
  rejected_fidelity,
  verified_surrogate,
  verified_independent,
};

inline const char* dispute_status_name(DisputeStatus s) {
  switch (s) {
    case DisputeStatus::opened: return "opened";
    case DisputeStatus::rejected_timestamp: return "rejected-timestamp";
    case DisputeStatus::rejected_malformed: return "rejected-malformed";
    case DisputeStatus::rejected_fidelity: return "rejected-fidelity";
    case DisputeStatus::verified_surrogate: return "verified-surrogate";
    case DisputeStatus::verified_independent: return "verified-independent";
  }
  return "?";
}

inline bool dispute_terminal(DisputeStatus s) {
  return s != DisputeStatus::opened;
}

struct Dispute {
  std::uint64_t id = 0;
  RegistryRecord accuser_record;
  RegistryRecord responder_record;
  DisputeStatus status = DisputeStatus::opened;
  std::string reason;
  std::optional<VerdictReport> verdict;
  // Submitted model bytes, held for the resolution stage.
  std::string target_bytes;
  std::string suspect_bytes;
};

struct WellFormednessReport {
  bool passed = true;
  std::vector<std::pair<int, std::string>> findings;  // (layer index, issue)

  void add(int layer, std::string issue) {
    passed = false;
    findings.emplace_back(layer, std::move(issue));
  }
};

namespace detail {

inline int layer_of(const std::string& tensor_name) {
  if (tensor_name.rfind("layer", 0) == 0)
    return std::atoi(tensor_name.c_str() + 5);
  return -1;
}

}  // namespace detail

// A model is well-formed iff its tensors are exactly those the declared
// architecture prescribes, at the prescribed shapes. Anything extra is how a
// cheater would smuggle in an output transformation.
inline WellFormednessReport check_well_formed(const GnnModel& model) {
  WellFormednessReport rep;
  GnnModel expected;
  try {
    expected = build_model(model.config);
  } catch (const std::exception& e) {
    rep.add(-1, std::string("invalid config: ") + e.what());
    return rep;
  }
  auto have = model.all_tensors();
  auto want = expected.all_tensors();
  for (std::size_t i = 0; i < have.size(); ++i) {
    if (have[i]->value.rows() != want[i]->value.rows() ||
        have[i]->value.cols() != want[i]->value.cols())
      rep.add(detail::layer_of(have[i]->name),
              "shape mismatch: " + have[i]->name);
  }
  for (const auto& t : model.extra_tensors)
    rep.add(detail::layer_of(t.name), "unrecognized output layer: " + t.name);
  return rep;
}

inline std::vector<int> sample_probe_nodes(const std::vector<int>& d_v,
                                           std::uint64_t seed,
                                           std::size_t count = 32) {
  std::vector<int> pool = d_v;
  auto rng = make_rng(seed, "fidelity-probe");
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(count, pool.size()));
  return pool;
}

// True iff the deployed oracle's embeddings match the registered model's on
// the probe nodes (1e-6 max-abs; this catches post-processed outputs).
inline bool fidelity_check(const GnnModel& registered, QueryOracle& deployed,
                           const GraphDataset& g,
                           const std::vector<int>& probe_nodes,
                           std::uint64_t seed, double tol = 1e-6) {
  if (probe_nodes.empty())
    throw std::invalid_argument("fidelity_check: empty probe set");
  GraphDataset probe = induced_subgraph(g, probe_nodes);
  std::uint64_t s = mix_seed(seed, "fidelity");
  Matrix deployed_h = deployed.query(probe, s);
  std::vector<int> all(probe.node_count);
  std::iota(all.begin(), all.end(), 0);
  Matrix registered_h = forward(registered, probe, all, s).first;
  if (deployed_h.rows() != registered_h.rows() ||
      deployed_h.cols() != registered_h.cols())
    return false;
  return (deployed_h - registered_h).cwiseAbs().maxCoeff() <= tol;
}

// Registration, disputes, and the staged verification workflow, persisted as
// an append-only JSON-lines event log plus an in-memory index.
class Registry {
 public:
  // Called once per gate with (gate name, passed): "commitment",
  // "timestamp", "well-formed", "fidelity", "verify".
  std::function<void(const std::string&, bool)> gate_hook;

  Registry() = default;
  explicit Registry(std::filesystem::path log_path)
      : log_path_(std::move(log_path)) {
    replay();
  }

  RegistryRecord register_model(const std::string& model_bytes,
                                const std::string& owner_id) {
    deserialize_model(model_bytes);  // unparseable bytes are rejected here
    std::lock_guard lock(mu_);
    RegistryRecord rec;
    rec.sequence = next_seq_++;
    rec.commitment = sha256_hex(model_bytes);
    rec.model_id = "m" + std::to_string(rec.sequence);
    rec.registered_at = now_iso8601();
    rec.owner_id = owner_id;
    records_[rec.model_id] = rec;
    append_event({{"event", "register"},
                  {"model_id", rec.model_id},
                  {"commitment", rec.commitment},
                  {"sequence", rec.sequence},
                  {"registered_at", rec.registered_at},
                  {"owner_id", rec.owner_id}});
    return rec;
  }

  const RegistryRecord& record(const std::string& model_id) const {
    auto it = records_.find(model_id);
    if (it == records_.end())
      throw std::runtime_error("unknown model id: " + model_id);
    return it->second;
  }

  Dispute& open_dispute(const std::string& accuser_id,
                        const std::string& responder_id,
                        std::string target_bytes, std::string suspect_bytes) {
    std::lock_guard lock(mu_);
    Dispute d;
    d.accuser_record = record(accuser_id);
    d.responder_record = record(responder_id);
    d.id = next_dispute_++;
    d.target_bytes = std::move(target_bytes);
    d.suspect_bytes = std::move(suspect_bytes);

    bool c_ok = sha256_hex(d.target_bytes) == d.accuser_record.commitment &&
                sha256_hex(d.suspect_bytes) == d.responder_record.commitment;
    gate(d, "commitment", c_ok);
    if (!c_ok)
      throw std::runtime_error("commitment mismatch: submitted bytes do not "
                               "match the registered commitment");

    bool t_ok = d.accuser_record.sequence < d.responder_record.sequence;
    gate(d, "timestamp", t_ok);
    if (!t_ok) {
      d.status = DisputeStatus::rejected_timestamp;
      d.reason = "accuser was not registered before responder";
    }
    disputes_[d.id] = d;
    append_event({{"event", "dispute_opened"},
                  {"dispute_id", d.id},
                  {"accuser", accuser_id},
                  {"responder", responder_id},
                  {"status", dispute_status_name(d.status)},
                  {"reason", d.reason}});
    return disputes_[d.id];
  }

  // Runs the remaining gates, then the fingerprint verdict. Optional oracles
  // stand for the deployed models; when absent, the submitted models answer
  // their own fidelity probes. Terminal disputes pass through unchanged.
  Dispute& resolve(std::uint64_t dispute_id, const SimilarityClassifier& csim,
                   const GraphDataset& g, const std::vector<int>& d_v,
                   std::uint64_t seed, QueryOracle* deployed_target = nullptr,
                   QueryOracle* deployed_suspect = nullptr) {
    std::lock_guard lock(mu_);
    Dispute& d = dispute(dispute_id);
    if (dispute_terminal(d.status)) return d;

    GnnModel target = deserialize_model(d.target_bytes);
    GnnModel suspect = deserialize_model(d.suspect_bytes);
    auto wf_t = check_well_formed(target);
    auto wf_s = check_well_formed(suspect);
    bool wf_ok = wf_t.passed && wf_s.passed;
    gate(d, "well-formed", wf_ok);
    if (!wf_ok) {
      d.status = DisputeStatus::rejected_malformed;
      const auto& findings = wf_t.passed ? wf_s.findings : wf_t.findings;
      d.reason = findings.empty() ? "malformed model" : findings[0].second;
    } else {
      auto probes = sample_probe_nodes(d_v, seed);
      InProcessOracle self_t(target), self_s(suspect);
      QueryOracle& ot = deployed_target ? *deployed_target : self_t;
      QueryOracle& os = deployed_suspect ? *deployed_suspect : self_s;
      bool f_ok = fidelity_check(target, ot, g, probes, seed) &&
                  fidelity_check(suspect, os, g, probes, seed);
      gate(d, "fidelity", f_ok);
      if (!f_ok) {
        d.status = DisputeStatus::rejected_fidelity;
        d.reason = "deployed outputs do not match the registered model";
      } else {
        d.verdict = verify(csim, target, suspect, g, d_v, seed);
        gate(d, "verify", true);
        d.status = d.verdict->surrogate ? DisputeStatus::verified_surrogate
                                        : DisputeStatus::verified_independent;
      }
    }
    nlohmann::json ev = {{"event", "dispute_resolved"},
                         {"dispute_id", d.id},
                         {"status", dispute_status_name(d.status)},
                         {"reason", d.reason}};
    if (d.verdict) ev["verdict"] = d.verdict->to_json();
    append_event(ev);
    return d;
  }

  Dispute& dispute(std::uint64_t id) {
    auto it = disputes_.find(id);
    if (it == disputes_.end())
      throw std::runtime_error("unknown dispute id: " + std::to_string(id));
    return it->second;
  }

  const std::map<std::string, RegistryRecord>& records() const {
    return records_;
  }

  static std::string now_iso8601() {
    auto t = std::chrono::system_clock::to_time_t(
        std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

 private:
  void gate(const Dispute& d, const std::string& name, bool passed) {
    if (gate_hook) gate_hook(name, passed);
    append_event({{"event", "gate"},
                  {"dispute_id", d.id},
                  {"gate", name},
                  {"passed", passed}});
  }

  void append_event(const nlohmann::json& ev) {
    if (log_path_.empty()) return;
    std::ofstream out(log_path_, std::ios::app);
    out << ev.dump() << '\n';
  }

  void replay() {
    if (log_path_.empty() || !std::filesystem::exists(log_path_)) return;
    std::ifstream in(log_path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto ev = nlohmann::json::parse(line);
      auto kind = ev.at("event").get<std::string>();
      if (kind == "register") {
        RegistryRecord rec;
        rec.model_id = ev.at("model_id");
        rec.commitment = ev.at("commitment");
        rec.sequence = ev.at("sequence");
        rec.registered_at = ev.at("registered_at");
        rec.owner_id = ev.at("owner_id");
        records_[rec.model_id] = rec;
        next_seq_ = std::max(next_seq_, rec.sequence + 1);
      } else if (kind == "dispute_opened") {
        Dispute d;
        d.id = ev.at("dispute_id");
        d.accuser_record = records_.at(ev.at("accuser"));
        d.responder_record = records_.at(ev.at("responder"));
        for (auto s : {DisputeStatus::opened, DisputeStatus::rejected_timestamp})
          if (ev.at("status").get<std::string>() == dispute_status_name(s))
            d.status = s;
        d.reason = ev.at("reason");
        disputes_[d.id] = d;
        next_dispute_ = std::max(next_dispute_, d.id + 1);
      } else if (kind == "dispute_resolved") {
        auto& d = disputes_.at(ev.at("dispute_id"));
        for (auto s :
             {DisputeStatus::rejected_malformed, DisputeStatus::rejected_fidelity,
              DisputeStatus::verified_surrogate,
              DisputeStatus::verified_independent})
          if (ev.at("status").get<std::string>() == dispute_status_name(s))
            d.status = s;
        d.reason = ev.at("reason");
      }
    }
  }

  std::filesystem::path log_path_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t next_dispute_ = 1;
  std::map<std::string, RegistryRecord> records_;
  std::map<std::uint64_t, Dispute> disputes_;
  std::mutex mu_;
};

}  // namespace gnnfp
