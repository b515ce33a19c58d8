#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "gnnfp/extraction.hpp"
#include "gnnfp/registry.hpp"

#include <httplib.h>
#include <json.hpp>

namespace gnnfp {

inline std::string base64_encode(std::string_view in) {
  static const char* tbl =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < in.size(); i += 3) {
    std::uint32_t v = static_cast<unsigned char>(in[i]) << 16;
    if (i + 1 < in.size()) v |= static_cast<unsigned char>(in[i + 1]) << 8;
    if (i + 2 < in.size()) v |= static_cast<unsigned char>(in[i + 2]);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(i + 1 < in.size() ? tbl[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < in.size() ? tbl[v & 63] : '=');
  }
  return out;
}

inline std::string base64_decode(std::string_view in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : in) {
    int v = val(c);
    if (v < 0) continue;
    buf = (buf << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

// ---- embedding-oracle wire format ----
// Request:  {"features": [[f,...],...], "edges": [[u,v],...], "seed": n}
//   features  dense node feature rows, node index = row index
//   edges     undirected edge list over those node indices
//   seed      neighbor-sampling seed, echoed into the forward pass
// Response: {"embeddings": [[e,...],...]}, one row per requested node.

inline nlohmann::json oracle_request_json(const GraphDataset& ds,
                                          std::uint64_t seed) {
  nlohmann::json feats = nlohmann::json::array();
  for (int i = 0; i < ds.node_count; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < ds.features.cols(); ++j) row.push_back(ds.features(i, j));
    feats.push_back(std::move(row));
  }
  nlohmann::json edges = nlohmann::json::array();
  for (int u = 0; u < ds.node_count; ++u)
    for (int v : ds.neighbors[u])
      if (u < v) edges.push_back({u, v});
  return {{"features", std::move(feats)},
          {"edges", std::move(edges)},
          {"seed", seed}};
}

inline GraphDataset graph_from_oracle_request(const nlohmann::json& j) {
  GraphDataset ds;
  const auto& feats = j.at("features");
  ds.node_count = static_cast<int>(feats.size());
  if (ds.node_count == 0) throw std::runtime_error("oracle request: no nodes");
  int dim = static_cast<int>(feats.at(0).size());
  ds.features.resize(ds.node_count, dim);
  for (int i = 0; i < ds.node_count; ++i)
    for (int k = 0; k < dim; ++k) ds.features(i, k) = feats.at(i).at(k);
  std::vector<std::set<int>> adj(ds.node_count);
  for (const auto& e : j.at("edges"))
    detail::add_edge(adj, e.at(0).get<int>(), e.at(1).get<int>());
  ds.neighbors = detail::finalize_adj(adj);
  ds.labels.assign(ds.node_count, 0);
  ds.num_classes = 1;
  return ds;
}

// Serves a model's embeddings over HTTP; the deployed-model endpoint the
// attack and the fidelity check can both target.
class OracleServer {
 public:
  explicit OracleServer(const GnnModel& model) : model_(&model) {
    server_.Post("/embed", [this](const httplib::Request& req,
                                  httplib::Response& res) {
      try {
        auto j = nlohmann::json::parse(req.body);
        GraphDataset ds = graph_from_oracle_request(j);
        std::vector<int> nodes(ds.node_count);
        std::iota(nodes.begin(), nodes.end(), 0);
        Matrix emb =
            forward(*model_, ds, nodes, j.at("seed").get<std::uint64_t>()).first;
        nlohmann::json rows = nlohmann::json::array();
        for (int i = 0; i < emb.rows(); ++i) {
          nlohmann::json row = nlohmann::json::array();
          for (int k = 0; k < emb.cols(); ++k) row.push_back(emb(i, k));
          rows.push_back(std::move(row));
        }
        res.set_content(nlohmann::json{{"embeddings", std::move(rows)}}.dump(),
                        "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(),
                        "application/json");
      }
    });
  }

  int start(int port = 0) {  // port 0 picks a free one; returns the bound port
    if (port > 0) {
      if (!server_.bind_to_port("127.0.0.1", port))
        throw std::runtime_error("cannot bind port " + std::to_string(port));
      port_ = port;
    } else {
      port_ = server_.bind_to_any_port("127.0.0.1");
    }
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  ~OracleServer() { stop(); }

 private:
  const GnnModel* model_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

class HttpOracle : public QueryOracle {
 public:
  HttpOracle(std::string host, int port) : host_(std::move(host)), port_(port) {}

  Matrix query(const GraphDataset& ds, std::uint64_t seed) override {
    httplib::Client cli(host_, port_);
    auto res = cli.Post("/embed", oracle_request_json(ds, seed).dump(),
                        "application/json");
    if (!res || res->status != 200)
      throw std::runtime_error("oracle unreachable or rejected query");
    auto j = nlohmann::json::parse(res->body);
    const auto& rows = j.at("embeddings");
    Matrix emb(rows.size(), rows.at(0).size());
    for (Eigen::Index i = 0; i < emb.rows(); ++i)
      for (Eigen::Index k = 0; k < emb.cols(); ++k)
        emb(i, k) = rows.at(i).at(k);
    return emb;
  }

 private:
  std::string host_;
  int port_;
};

// Registry over HTTP. Model bytes travel base64-encoded.
//  POST /models                {"owner_id": s, "model_b64": s} -> record
//  POST /disputes              {"accuser_id": s, "responder_id": s,
//                               "target_b64": s, "suspect_b64": s} -> dispute
//  POST /disputes/{id}/resolve {} -> dispute
//  GET  /disputes/{id}         -> dispute
class RegistryServer {
 public:
  RegistryServer(Registry& registry, const SimilarityClassifier& csim,
                 const GraphDataset& graph, std::vector<int> d_v,
                 std::uint64_t seed)
      : registry_(registry), csim_(csim), graph_(graph), d_v_(std::move(d_v)),
        seed_(seed) {
    server_.Post("/models", [this](const httplib::Request& req,
                                   httplib::Response& res) {
      handle(res, [&] {
        auto j = nlohmann::json::parse(req.body);
        auto rec = registry_.register_model(
            base64_decode(j.at("model_b64").get<std::string>()),
            j.at("owner_id").get<std::string>());
        return nlohmann::json{{"model_id", rec.model_id},
                              {"commitment", rec.commitment},
                              {"sequence", rec.sequence},
                              {"registered_at", rec.registered_at},
                              {"owner_id", rec.owner_id}};
      });
    });
    server_.Post("/disputes", [this](const httplib::Request& req,
                                     httplib::Response& res) {
      handle(res, [&] {
        auto j = nlohmann::json::parse(req.body);
        auto& d = registry_.open_dispute(
            j.at("accuser_id").get<std::string>(),
            j.at("responder_id").get<std::string>(),
            base64_decode(j.at("target_b64").get<std::string>()),
            base64_decode(j.at("suspect_b64").get<std::string>()));
        return dispute_json(d);
      });
    });
    server_.Post(R"(/disputes/(\d+)/resolve)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   handle(res, [&] {
                     auto id = std::stoull(req.matches[1]);
                     return dispute_json(
                         registry_.resolve(id, csim_, graph_, d_v_, seed_));
                   });
                 });
    server_.Get(R"(/disputes/(\d+))", [this](const httplib::Request& req,
                                             httplib::Response& res) {
      handle(res, [&] {
        return dispute_json(registry_.dispute(std::stoull(req.matches[1])));
      });
    });
  }

  int start(int port = 0) {  // port 0 picks a free one; returns the bound port
    if (port > 0) {
      if (!server_.bind_to_port("127.0.0.1", port))
        throw std::runtime_error("cannot bind port " + std::to_string(port));
      port_ = port;
    } else {
      port_ = server_.bind_to_any_port("127.0.0.1");
    }
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  ~RegistryServer() { stop(); }

  static nlohmann::json dispute_json(const Dispute& d) {
    nlohmann::json j{{"id", d.id},
                     {"status", dispute_status_name(d.status)},
                     {"reason", d.reason},
                     {"accuser", d.accuser_record.model_id},
                     {"responder", d.responder_record.model_id}};
    if (d.verdict) j["verdict"] = d.verdict->to_json();
    return j;
  }

 private:
  template <class Fn>
  void handle(httplib::Response& res, Fn&& fn) {
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(),
                      "application/json");
    }
  }

  Registry& registry_;
  const SimilarityClassifier& csim_;
  const GraphDataset& graph_;
  std::vector<int> d_v_;
  std::uint64_t seed_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace gnnfp
