// gnnfp: train GNN node classifiers, extract surrogates, fingerprint
// ownership, and settle disputes through a commitment registry.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "gnnfp/experiment.hpp"
#include "gnnfp/http.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace gnnfp;
using nlohmann::json;

namespace {

Arch parse_arch(const std::string& s) { return arch_from_name(s); }

DataSplit make_split(const GraphDataset& ds, const std::string& fractions,
                     std::uint64_t seed) {
  std::array<double, 4> f{0.35, 0.35, 0.2, 0.1};
  if (!fractions.empty()) {
    std::stringstream ss(fractions);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',') && i < 4) f[i++] = std::stod(tok);
    if (i != 4) throw CLI::ValidationError("--split needs 4 fractions");
  }
  return split_dataset(ds, f, seed);
}

std::vector<GnnModel> load_models(const std::vector<std::string>& paths) {
  std::vector<GnnModel> out;
  for (const auto& p : paths) out.push_back(load_model(p));
  return out;
}

std::vector<const GnnModel*> as_ptrs(const std::vector<GnnModel>& v) {
  std::vector<const GnnModel*> out;
  for (const auto& m : v) out.push_back(&m);
  return out;
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GNN fingerprinting toolkit"};
  app.require_subcommand(1);

  // shared knobs, reused across verbs
  std::string dataset_dir, out_path, arch_s = "graphsage", split_s;
  std::uint64_t seed = 0, split_seed = 0;
  int hidden = 64, epochs = 120;

  auto add_dataset = [&](CLI::App* c) {
    c->add_option("--dataset", dataset_dir, "dataset directory")->required();
  };
  auto add_split = [&](CLI::App* c) {
    c->add_option("--split", split_s,
                  "train,attack,test,verify fractions (default "
                  "0.35,0.35,0.2,0.1)");
    c->add_option("--split-seed", split_seed, "split shuffle seed");
  };

  // ---- dataset ----
  auto* dataset = app.add_subcommand("dataset", "inspect or generate graphs");
  dataset->require_subcommand(1);
  auto* d_load = dataset->add_subcommand("load", "validate and summarize");
  add_dataset(d_load);
  auto* d_synth = dataset->add_subcommand("synth", "generate a synthetic SBM");
  SyntheticGraphSpec synth;
  d_synth->add_option("--out", out_path, "output directory")->required();
  d_synth->add_option("--nodes-per-class", synth.nodes_per_class);
  d_synth->add_option("--classes", synth.num_classes);
  d_synth->add_option("--intra", synth.intra_edge_prob);
  d_synth->add_option("--inter", synth.inter_edge_prob);
  d_synth->add_option("--dim", synth.feature_dim);
  d_synth->add_option("--noise", synth.feature_noise);
  d_synth->add_option("--seed", synth.seed);

  // ---- train-target ----
  auto* tt = app.add_subcommand("train-target", "train a target classifier");
  add_dataset(tt);
  add_split(tt);
  tt->add_option("--arch", arch_s, "graphsage|gat|gin");
  tt->add_option("--hidden", hidden);
  tt->add_option("--epochs", epochs);
  tt->add_option("--seed", seed);
  tt->add_option("--out", out_path, "model file")->required();

  // ---- attack ----
  auto* at = app.add_subcommand("attack", "extract a surrogate via queries");
  std::string oracle_model, oracle_url;
  int attack_type = 1, knn_k = 5, oracle_port = 0;
  add_dataset(at);
  add_split(at);
  at->add_option("--oracle", oracle_model, "target model file (in-process)");
  at->add_option("--oracle-host", oracle_url, "HTTP oracle host");
  at->add_option("--oracle-port", oracle_port, "HTTP oracle port");
  at->add_option("--type", attack_type, "1 = same graph, 2 = kNN estimate");
  at->add_option("--knn-k", knn_k);
  at->add_option("--arch", arch_s, "surrogate architecture");
  at->add_option("--epochs", epochs);
  at->add_option("--seed", seed);
  at->add_flag("--double", "extract a surrogate of the surrogate");
  at->add_option("--out", out_path, "surrogate model file")->required();

  // ---- cohort ----
  auto* co = app.add_subcommand("cohort", "train independent models");
  int count = 10;
  std::string cohort_dir;
  add_dataset(co);
  add_split(co);
  co->add_option("--count", count);
  co->add_option("--arch", arch_s);
  co->add_option("--hidden", hidden);
  co->add_option("--epochs", epochs);
  co->add_option("--seed", seed);
  co->add_option("--out-dir", cohort_dir, "output directory")->required();

  // ---- fingerprint ----
  auto* fp = app.add_subcommand("fingerprint", "train or apply C_sim");
  fp->require_subcommand(1);
  auto* fp_train = fp->add_subcommand("train", "fit the similarity classifier");
  std::string target_path, csim_path;
  std::vector<std::string> surrogate_paths, independent_paths;
  std::vector<double> robust_ratios;
  add_dataset(fp_train);
  add_split(fp_train);
  fp_train->add_option("--target", target_path)->required();
  fp_train->add_option("--surrogates", surrogate_paths)->required();
  fp_train->add_option("--independents", independent_paths)->required();
  fp_train->add_option("--robust", robust_ratios,
                       "prune ratios for robustness augmentation");
  fp_train->add_option("--seed", seed);
  fp_train->add_option("--out", out_path, "classifier JSON")->required();

  auto* fp_verify = fp->add_subcommand("verify", "judge a suspect model");
  std::string suspect_path;
  add_dataset(fp_verify);
  add_split(fp_verify);
  fp_verify->add_option("--target", target_path)->required();
  fp_verify->add_option("--suspect", suspect_path)->required();
  fp_verify->add_option("--csim", csim_path)->required();
  fp_verify->add_option("--seed", seed);

  // ---- registry ----
  auto* rg = app.add_subcommand("registry", "commitment registry service");
  rg->require_subcommand(1);
  std::string log_path, owner, accuser, responder, url_host = "127.0.0.1";
  int port = 8356;
  auto* rg_serve = rg->add_subcommand("serve", "run the HTTP registry");
  add_dataset(rg_serve);
  add_split(rg_serve);
  rg_serve->add_option("--log", log_path, "event log (JSONL)")->required();
  rg_serve->add_option("--csim", csim_path)->required();
  rg_serve->add_option("--port", port);
  rg_serve->add_option("--seed", seed);
  auto* rg_register = rg->add_subcommand("register", "register model bytes");
  rg_register->add_option("--host", url_host);
  rg_register->add_option("--port", port);
  rg_register->add_option("--model", target_path)->required();
  rg_register->add_option("--owner", owner)->required();
  auto* rg_dispute = rg->add_subcommand("dispute", "open and resolve a dispute");
  rg_dispute->add_option("--host", url_host);
  rg_dispute->add_option("--port", port);
  rg_dispute->add_option("--accuser", accuser, "accuser model id")->required();
  rg_dispute->add_option("--responder", responder, "responder model id")
      ->required();
  rg_dispute->add_option("--target", target_path, "accuser model bytes")
      ->required();
  rg_dispute->add_option("--suspect", suspect_path, "responder model bytes")
      ->required();
  rg_dispute->add_flag("--resolve", "run the verification gates immediately");

  // ---- experiment ----
  auto* ex = app.add_subcommand("experiment", "orchestrated benchmark runs");
  ex->require_subcommand(1);
  auto* ex_run = ex->add_subcommand("run", "full pipeline from a JSON config");
  std::string config_path, exp_out;
  int repeats = -1;
  std::int64_t seed_flag = -1;
  ex_run->add_option("--config", config_path, "JSON config (defaults apply)");
  ex_run->add_option("--out-dir", exp_out, "overrides the config's out_dir");
  ex_run->add_option("--seed", seed_flag, "overrides the config's seed");
  ex_run->add_option("--repeats", repeats, "overrides the config's repeats");

  // ---- plot ----
  auto* pl = app.add_subcommand("plot", "embedding diagnostics");
  pl->require_subcommand(1);
  std::vector<std::string> model_paths, model_labels;
  std::string plot_method = "pca", plot_out;
  auto* pl_proj = pl->add_subcommand("projection", "2-D embedding scatter");
  add_dataset(pl_proj);
  add_split(pl_proj);
  pl_proj->add_option("--models", model_paths)->required();
  pl_proj->add_option("--labels", model_labels, "one label per model");
  pl_proj->add_option("--method", plot_method, "pca|tsne");
  pl_proj->add_option("--seed", seed);
  pl_proj->add_option("--out-dir", plot_out)->required();
  auto* pl_dist = pl->add_subcommand("distances", "distance histograms");
  add_dataset(pl_dist);
  add_split(pl_dist);
  pl_dist->add_option("--target", target_path)->required();
  pl_dist->add_option("--others", model_paths)->required();
  pl_dist->add_option("--labels", model_labels, "one label per model");
  pl_dist->add_option("--seed", seed);
  pl_dist->add_option("--out-dir", plot_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*d_load) {
      GraphDataset ds = load_dataset(dataset_dir);
      std::size_t edges = 0;
      for (const auto& n : ds.neighbors) edges += n.size();
      json j{{"nodes", ds.node_count},
             {"edges", edges / 2},
             {"feature_dim", ds.feature_dim()},
             {"classes", ds.num_classes}};
      std::cout << j.dump(2) << '\n';
    } else if (*d_synth) {
      GraphDataset ds = generate_synthetic(synth);
      save_dataset(ds, out_path);
      std::cout << "wrote " << ds.node_count << " nodes to " << out_path
                << '\n';
    } else if (*tt) {
      GraphDataset ds = load_dataset(dataset_dir);
      DataSplit split = make_split(ds, split_s, split_seed);
      GnnConfig cfg = GnnConfig::defaults(parse_arch(arch_s));
      cfg.hidden_dim = hidden;
      cfg.max_epochs = epochs;
      cfg.input_dim = ds.feature_dim();
      cfg.num_classes = ds.num_classes;
      cfg.seed = seed;
      auto [model, report] = train(cfg, ds, split.target_train);
      save_model(model, out_path);
      auto pred = predict(model, ds, split.test, mix_seed(seed, "cli-eval"));
      std::vector<int> truth;
      for (int v : split.test) truth.push_back(ds.labels[v]);
      json j{{"model", out_path},
             {"epochs_run", report.epochs_run},
             {"test_accuracy", accuracy(pred, truth)}};
      std::cout << j.dump(2) << '\n';
    } else if (*at) {
      if (oracle_model.empty() == oracle_url.empty())
        throw CLI::ValidationError(
            "pass exactly one of --oracle / --oracle-host");
      GraphDataset ds = load_dataset(dataset_dir);
      DataSplit split = make_split(ds, split_s, split_seed);
      GraphDataset attack_view = induced_subgraph(ds, split.surrogate_train);
      AttackConfig acfg;
      acfg.attack_type =
          attack_type == 2 ? AttackType::TypeII : AttackType::TypeI;
      acfg.knn_k = knn_k;
      acfg.epochs = epochs;
      acfg.surrogate_architecture = parse_arch(arch_s);
      acfg.seed = seed;
      GnnModel loaded;
      std::unique_ptr<QueryOracle> oracle;
      if (!oracle_model.empty()) {
        loaded = load_model(oracle_model);
        oracle = std::make_unique<InProcessOracle>(loaded);
      } else {
        oracle = std::make_unique<HttpOracle>(oracle_url, oracle_port);
      }
      ExtractionReport rep;
      GnnModel surrogate =
          at->count("--double")
              ? double_extract(*oracle, attack_view, acfg, &rep)
              : run_extraction(*oracle, attack_view, acfg, &rep);
      save_model(surrogate, out_path);
      json j{{"model", out_path},
             {"recon_loss", rep.final_recon_loss},
             {"class_loss", rep.final_class_loss},
             {"epochs_run", rep.epochs_run}};
      std::cout << j.dump(2) << '\n';
    } else if (*co) {
      GraphDataset ds = load_dataset(dataset_dir);
      DataSplit split = make_split(ds, split_s, split_seed);
      fs::create_directories(cohort_dir);
      for (int k = 0; k < count; ++k) {
        GnnConfig cfg = GnnConfig::defaults(parse_arch(arch_s));
        cfg.hidden_dim = hidden;
        cfg.max_epochs = epochs;
        cfg.input_dim = ds.feature_dim();
        cfg.num_classes = ds.num_classes;
        cfg.seed = mix_seed(seed, "cohort", k);
        GnnModel m = train(cfg, ds, split.surrogate_train).first;
        save_model(m, fs::path(cohort_dir) /
                          ("independent-" + std::to_string(k) + ".gnfp"));
      }
      std::cout << "wrote " << count << " models to " << cohort_dir << '\n';
    } else if (*fp_train) {
      GraphDataset ds = load_dataset(dataset_dir);
      DataSplit split = make_split(ds, split_s, split_seed);
      GnnModel target = load_model(target_path);
      auto surrogates = load_models(surrogate_paths);
      auto independents = load_models(independent_paths);
      auto ts = build_training_set(target, as_ptrs(surrogates),
                                   as_ptrs(independents), ds,
                                   split.verification, seed);
      if (!robust_ratios.empty())
        ts = build_robust_training_set(ts, target, as_ptrs(surrogates),
                                       robust_ratios, ds, split.verification,
                                       seed);
      auto csim = train_csim(ts, seed);
      save_csim(csim, out_path);
      save_training_set(ts, fs::path(out_path).replace_extension(".csv"));
      json j{{"classifier", out_path},
             {"cv_accuracy", csim.cv_accuracy},
             {"rows", ts.rows.rows()}};
      std::cout << j.dump(2) << '\n';
    } else if (*fp_verify) {
      GraphDataset ds = load_dataset(dataset_dir);
      DataSplit split = make_split(ds, split_s, split_seed);
      auto csim = load_csim(csim_path);
      auto report = verify(csim, load_model(target_path),
                           load_model(suspect_path), ds, split.verification,
                           seed);
      std::cout << report.to_json().dump(2) << '\n';
      return report.surrogate ? 0 : 1;  // scriptable verdict
    } else if (*rg_serve) {
      GraphDataset ds = load_dataset(dataset_dir);
      DataSplit split = make_split(ds, split_s, split_seed);
      auto csim = load_csim(csim_path);
      Registry registry{fs::path(log_path)};
      RegistryServer server(registry, csim, ds, split.verification, seed);
      int bound = server.start(port);
      std::cout << "registry listening on 127.0.0.1:" << bound << '\n';
      std::signal(SIGINT, [](int) { g_stop = 1; });
      std::signal(SIGTERM, [](int) { g_stop = 1; });
      while (!g_stop)
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
    } else if (*rg_register) {
      httplib::Client cli(url_host, port);
      json body{{"owner_id", owner},
                {"model_b64", base64_encode(read_file_bytes(target_path))}};
      auto res = cli.Post("/models", body.dump(), "application/json");
      if (!res) throw std::runtime_error("registry unreachable");
      std::cout << json::parse(res->body).dump(2) << '\n';
      return res->status == 200 ? 0 : 1;
    } else if (*rg_dispute) {
      httplib::Client cli(url_host, port);
      json body{{"accuser_id", accuser},
                {"responder_id", responder},
                {"target_b64", base64_encode(read_file_bytes(target_path))},
                {"suspect_b64", base64_encode(read_file_bytes(suspect_path))}};
      auto res = cli.Post("/disputes", body.dump(), "application/json");
      if (!res) throw std::runtime_error("registry unreachable");
      if (res->status != 200) {
        std::cout << json::parse(res->body).dump(2) << '\n';
        return 1;
      }
      auto d = json::parse(res->body);
      if (rg_dispute->count("--resolve") && d.at("status") == "opened") {
        auto r2 = cli.Post(
            "/disputes/" + std::to_string(d.at("id").get<std::uint64_t>()) +
                "/resolve",
            "{}", "application/json");
        if (!r2) throw std::runtime_error("registry unreachable");
        d = json::parse(r2->body);
      }
      std::cout << d.dump(2) << '\n';
    } else if (*ex_run) {
      ExperimentConfig cfg;
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open " + config_path);
        json j;
        in >> j;
        cfg = experiment_config_from_json(j);
      }
      if (!exp_out.empty()) cfg.out_dir = exp_out;
      if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
      if (repeats >= 1) cfg.repeats = repeats;
      auto result = run_experiment(cfg);
      std::cout << result.table.to_json().dump(2) << '\n';
    } else if (*pl_proj) {
      GraphDataset ds = load_dataset(dataset_dir);
      DataSplit split = make_split(ds, split_s, split_seed);
      std::vector<EmbeddingSet> sets;
      for (std::size_t i = 0; i < model_paths.size(); ++i) {
        GnnModel m = load_model(model_paths[i]);
        sets.push_back({i < model_labels.size() ? model_labels[i]
                                                : fs::path(model_paths[i])
                                                      .stem()
                                                      .string(),
                        detail::dv_embeddings(m, ds, split.verification,
                                              seed)});
      }
      fs::create_directories(plot_out);
      emit_projection_plot(sets,
                           plot_method == "tsne" ? ProjectionMethod::TSNE
                                                 : ProjectionMethod::PCA,
                           fs::path(plot_out) / "projection.svg",
                           fs::path(plot_out) / "projection.csv", seed);
      std::cout << "wrote " << (fs::path(plot_out) / "projection.svg").string()
                << '\n';
    } else if (*pl_dist) {
      GraphDataset ds = load_dataset(dataset_dir);
      DataSplit split = make_split(ds, split_s, split_seed);
      GnnModel target = load_model(target_path);
      Matrix h_t =
          detail::dv_embeddings(target, ds, split.verification, seed);
      std::vector<DistanceSeries> series;
      for (std::size_t i = 0; i < model_paths.size(); ++i) {
        GnnModel m = load_model(model_paths[i]);
        Matrix h =
            detail::dv_embeddings(m, ds, split.verification, seed);
        DistanceSeries s;
        s.label = i < model_labels.size()
                      ? model_labels[i]
                      : fs::path(model_paths[i]).stem().string();
        for (int r = 0; r < h_t.rows(); ++r)
          s.distances.push_back((h_t.row(r) - h.row(r)).norm());
        series.push_back(std::move(s));
      }
      fs::create_directories(plot_out);
      emit_distance_histogram(series, fs::path(plot_out) / "distances.svg",
                              fs::path(plot_out) / "distances.csv");
      std::cout << "wrote " << (fs::path(plot_out) / "distances.svg").string()
                << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
