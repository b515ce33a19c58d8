#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gnnfp/http.hpp"

using namespace gnnfp;

namespace {

struct Wire {
  GraphDataset ds;
  DataSplit split;
  GnnModel target;
  GnnModel surrogate;
  GnnModel independent;
  SimilarityClassifier csim;
};

const Wire& wire() {
  static const Wire w = [] {
    SyntheticGraphSpec spec;
    spec.nodes_per_class = 100;
    spec.num_classes = 2;
    spec.seed = 701;
    Wire w;
    w.ds = generate_synthetic(spec);
    w.split = split_dataset(w.ds, {0.35, 0.35, 0.2, 0.1}, 702);
    GnnConfig cfg = GnnConfig::defaults(Arch::GraphSAGE);
    cfg.hidden_dim = 16;
    cfg.max_epochs = 60;
    cfg.input_dim = w.ds.feature_dim();
    cfg.num_classes = w.ds.num_classes;
    cfg.seed = 703;
    w.target = train(cfg, w.ds, w.split.target_train).first;
    InProcessOracle oracle(w.target);
    AttackConfig acfg;
    acfg.epochs = 80;
    acfg.seed = 704;
    w.surrogate = run_extraction(oracle, w.ds, acfg);
    GnnConfig icfg = cfg;
    icfg.seed = 705;
    w.independent = train(icfg, w.ds, w.split.surrogate_train).first;
    auto ts = build_training_set(w.target, {&w.surrogate}, {&w.independent},
                                 w.ds, w.split.verification, 706);
    w.csim = train_csim(ts, 707);
    return w;
  }();
  return w;
}

}  // namespace

TEST_CASE("base64 matches the RFC 4648 vectors") {
  const std::pair<std::string, std::string> vectors[] = {
      {"", ""},           {"f", "Zg=="},     {"fo", "Zm8="},
      {"foo", "Zm9v"},    {"foob", "Zm9vYg=="},
      {"fooba", "Zm9vYmE="}, {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, enc] : vectors) {
    CHECK(base64_encode(plain) == enc);
    CHECK(base64_decode(enc) == plain);
  }
}

TEST_CASE("base64 round-trips arbitrary bytes") {
  std::mt19937_64 rng(3);
  for (int len : {1, 2, 3, 57, 256, 1000}) {
    std::string bytes(len, '\0');
    for (auto& c : bytes) c = static_cast<char>(rng());
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
}

TEST_CASE("the oracle wire format preserves the graph") {
  const Wire& w = wire();
  auto j = oracle_request_json(w.ds, 42);
  CHECK(j.at("seed") == 42);
  GraphDataset back = graph_from_oracle_request(j);
  CHECK(back.node_count == w.ds.node_count);
  CHECK(back.neighbors == w.ds.neighbors);
  CHECK(back.features == w.ds.features);
}

TEST_CASE("an HTTP oracle answers exactly like the in-process one") {
  const Wire& w = wire();
  OracleServer server(w.target);
  int port = server.start();
  HttpOracle remote("127.0.0.1", port);
  InProcessOracle local(w.target);
  Matrix a = remote.query(w.ds, 9);
  Matrix b = local.query(w.ds, 9);
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  CHECK(a == b);  // JSON doubles round-trip exactly
}

TEST_CASE("extraction against an HTTP oracle matches the in-process run") {
  const Wire& w = wire();
  OracleServer server(w.target);
  int port = server.start();
  HttpOracle remote("127.0.0.1", port);
  InProcessOracle local(w.target);
  AttackConfig acfg;
  acfg.epochs = 5;
  acfg.seed = 11;
  GnnModel s_remote = run_extraction(remote, w.ds, acfg);
  GnnModel s_local = run_extraction(local, w.ds, acfg);
  auto tr = s_remote.all_tensors(), tl = s_local.all_tensors();
  REQUIRE(tr.size() == tl.size());
  for (std::size_t i = 0; i < tr.size(); ++i) CHECK(tr[i]->value == tl[i]->value);
}

TEST_CASE("a malformed oracle request gets a 400 with an error body") {
  const Wire& w = wire();
  OracleServer server(w.target);
  int port = server.start();
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Post("/embed", "{not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(nlohmann::json::parse(res->body).contains("error"));
}

TEST_CASE("the registry endpoints run a dispute end to end") {
  const Wire& w = wire();
  Registry reg;
  RegistryServer server(reg, w.csim, w.ds, w.split.verification, 13);
  int port = server.start();
  httplib::Client cli("127.0.0.1", port);

  auto post = [&](const std::string& path, const nlohmann::json& body) {
    auto res = cli.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    return std::pair{res->status, nlohmann::json::parse(res->body)};
  };

  auto tb = serialize_model(w.target);
  auto sb = serialize_model(w.surrogate);
  auto [st1, r1] = post(
      "/models", {{"owner_id", "owner"}, {"model_b64", base64_encode(tb)}});
  CHECK(st1 == 200);
  CHECK(r1.at("owner_id") == "owner");
  auto [st2, r2] = post(
      "/models", {{"owner_id", "thief"}, {"model_b64", base64_encode(sb)}});
  CHECK(st2 == 200);
  CHECK(r2.at("sequence").get<std::uint64_t>() >
        r1.at("sequence").get<std::uint64_t>());

  auto [st3, d] = post("/disputes",
                       {{"accuser_id", r1.at("model_id")},
                        {"responder_id", r2.at("model_id")},
                        {"target_b64", base64_encode(tb)},
                        {"suspect_b64", base64_encode(sb)}});
  CHECK(st3 == 200);
  CHECK(d.at("status") == "opened");

  auto id = d.at("id").get<std::uint64_t>();
  auto [st4, resolved] =
      post("/disputes/" + std::to_string(id) + "/resolve", nlohmann::json::object());
  CHECK(st4 == 200);
  CHECK(resolved.at("status") == "verified-surrogate");
  CHECK(resolved.at("verdict").at("similar_fraction").get<double>() > 0.5);

  auto got = cli.Get("/disputes/" + std::to_string(id));
  REQUIRE(got);
  CHECK(got->status == 200);
  CHECK(nlohmann::json::parse(got->body).at("status") == "verified-surrogate");

  // failures surface as 400s with an error message
  auto [st5, err1] = post(
      "/models", {{"owner_id", "x"}, {"model_b64", base64_encode("junk")}});
  CHECK(st5 == 400);
  CHECK(err1.contains("error"));
  auto [st6, err2] = post("/disputes/9999/resolve", nlohmann::json::object());
  CHECK(st6 == 400);
  CHECK(err2.contains("error"));
  auto [st7, err3] = post("/disputes",
                          {{"accuser_id", "m404"},
                           {"responder_id", r2.at("model_id")},
                           {"target_b64", base64_encode(tb)},
                           {"suspect_b64", base64_encode(sb)}});
  CHECK(st7 == 400);
  CHECK(err3.contains("error"));
}

TEST_CASE("the fidelity gate accepts a deployment served over HTTP") {
  const Wire& w = wire();
  OracleServer server(w.target);
  int port = server.start();
  HttpOracle remote("127.0.0.1", port);
  auto probes = sample_probe_nodes(w.split.verification, 15);
  CHECK(fidelity_check(w.target, remote, w.ds, probes, 16));
  CHECK_FALSE(fidelity_check(w.independent, remote, w.ds, probes, 16));
}
