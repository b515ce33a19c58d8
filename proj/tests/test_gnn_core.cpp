#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "gnnfp/gnn.hpp"
#include "gnnfp/graph.hpp"

using namespace gnnfp;

namespace {

// 6-node toy graph: two triangles joined by one edge.
GraphDataset toy_graph() {
  GraphDataset g;
  g.node_count = 6;
  g.num_classes = 2;
  g.labels = {0, 0, 0, 1, 1, 1};
  std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 2}, {0, 2},
                                            {3, 4}, {4, 5}, {3, 5}, {2, 3}};
  std::vector<std::set<int>> adj(6);
  for (auto [u, v] : edges) detail::add_edge(adj, u, v);
  g.neighbors = detail::finalize_adj(adj);
  auto rng = make_rng(42, "toy-features");
  std::normal_distribution<double> gauss;
  g.features.resize(6, 3);
  for (int i = 0; i < g.features.size(); ++i) g.features.data()[i] = gauss(rng);
  return g;
}

GnnConfig small_config(Arch a, int hidden = 8) {
  auto cfg = GnnConfig::defaults(a);
  cfg.hidden_dim = hidden;
  cfg.num_layers = 2;
  cfg.neighbor_samples = {3, 3};
  cfg.dropout = 0.0;
  cfg.input_dim = 3;
  cfg.num_classes = 2;
  cfg.seed = 17;
  return cfg;
}

// Loss over fixed pre-sampled blocks so finite differences see a smooth
// function of the parameters.
double loss_on_blocks(const GnnModel& model, const GraphDataset& g,
                      const std::vector<SampledBlock>& blocks,
                      const std::vector<int>& labels) {
  Matrix emb = gnn_embed(model, g, blocks);
  Matrix logits = model.head.forward(emb);
  return softmax_cross_entropy(logits, labels);
}

void gradient_check(Arch arch) {
  auto g = toy_graph();
  auto cfg = small_config(arch);
  GnnModel model = build_model(cfg);
  std::vector<int> nodes = {0, 1, 2, 3, 4, 5};
  std::vector<int> labels = detail::labels_for(g, nodes);
  auto rng = make_rng(5, "grad-check");
  auto blocks = sample_blocks(g, nodes, cfg.neighbor_samples, rng);

  ForwardCache cache;
  Matrix emb = gnn_embed(model, g, blocks, &cache);
  Matrix logits = model.head.forward(emb, &cache.head_cache);
  Matrix d_logits;
  softmax_cross_entropy(logits, labels, &d_logits);
  model.zero_grad();
  Matrix d_emb = model.head.backward(cache.head_cache, d_logits);
  gnn_backward(model, blocks, cache, d_emb);

  const double h = 1e-5;
  double worst = 0.0;
  for (auto* t : model.all_tensors()) {
    for (int i = 0; i < t->value.size(); ++i) {
      double orig = t->value.data()[i];
      t->value.data()[i] = orig + h;
      double up = loss_on_blocks(model, g, blocks, labels);
      t->value.data()[i] = orig - h;
      double down = loss_on_blocks(model, g, blocks, labels);
      t->value.data()[i] = orig;
      double fd = (up - down) / (2 * h);
      double an = t->grad.data()[i];
      double rel = std::abs(an - fd) / std::max({1e-4, std::abs(an), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst <= 1e-4);
}

}  // namespace

TEST_CASE("gradient check vs central differences: GraphSAGE") {
  gradient_check(Arch::GraphSAGE);
}
TEST_CASE("gradient check vs central differences: GAT") {
  gradient_check(Arch::GAT);
}
TEST_CASE("gradient check vs central differences: GIN") {
  gradient_check(Arch::GIN);
}

TEST_CASE("GAT attention coefficients sum to 1 per node per head") {
  auto g = toy_graph();
  auto cfg = small_config(Arch::GAT);
  GnnModel model = build_model(cfg);
  std::vector<int> nodes = {0, 1, 2, 3, 4, 5};
  auto rng = make_rng(9, "att");
  auto blocks = sample_blocks(g, nodes, cfg.neighbor_samples, rng);
  Matrix h = g.features;
  LayerCache cache;
  layer_forward(cfg, 0, model.layers[0], h, blocks[0], &cache);
  for (int k = 0; k < cfg.heads_at(0); ++k)
    for (int i = 0; i < blocks[0].dst_count; ++i) {
      if (blocks[0].neigh[i].empty()) continue;
      const auto& alpha = cache.al[k][i];
      CHECK(alpha.minCoeff() >= 0.0);
      CHECK(alpha.sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("GAT: single neighbor gets attention coefficient 1") {
  auto cfg = small_config(Arch::GAT);
  GnnModel model = build_model(cfg);
  SampledBlock blk;
  blk.src = {0, 1};
  blk.dst_count = 1;
  blk.neigh = {{1}};
  Matrix h = Matrix::Random(2, 3);
  LayerCache cache;
  layer_forward(cfg, 0, model.layers[0], h, blk, &cache);
  for (int k = 0; k < cfg.heads_at(0); ++k)
    CHECK(cache.al[k][0](0) == doctest::Approx(1.0));
}

TEST_CASE("GraphSAGE and GIN: neighbor-permutation invariance") {
  auto cfg_sage = small_config(Arch::GraphSAGE);
  auto cfg_gin = small_config(Arch::GIN);
  for (const auto* cfg : {&cfg_sage, &cfg_gin}) {
    GnnModel model = build_model(*cfg);
    SampledBlock blk;
    blk.src = {0, 1, 2, 3, 4};
    blk.dst_count = 2;
    blk.neigh = {{1, 2, 3, 4}, {2, 4}};
    Matrix h = Matrix::Random(5, 3);
    Matrix out1 = layer_forward(*cfg, 0, model.layers[0], h, blk, nullptr);
    SampledBlock perm = blk;
    perm.neigh = {{4, 3, 2, 1}, {4, 2}};
    Matrix out2 = layer_forward(*cfg, 0, model.layers[0], h, perm, nullptr);
    CHECK((out1 - out2).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("GIN: eps=0 and zero neighbors reduces to MLP of self") {
  auto cfg = small_config(Arch::GIN);
  GnnModel model = build_model(cfg);
  SampledBlock blk;
  blk.src = {0, 1, 2};
  blk.dst_count = 1;
  blk.neigh = {{1, 2}};
  Matrix h = Matrix::Zero(3, 3);
  h.row(0) = Eigen::RowVector3d(0.3, -0.2, 0.8);  // neighbors stay zero
  Matrix out = layer_forward(cfg, 0, model.layers[0], h, blk, nullptr);
  // oracle: run the internal MLP by hand on the self row (the layer scales
  // its aggregate by 1/sqrt(1 + samples) before the MLP)
  const auto& t = model.layers[0].t;
  double scale = 1.0 / std::sqrt(1.0 + cfg.neighbor_samples[0]);
  Eigen::RowVectorXd pre1 =
      h.row(0) * scale * t[1].value.transpose() + t[2].value.col(0).transpose();
  Eigen::RowVectorXd post1 = pre1.cwiseMax(0.0);
  Eigen::RowVectorXd pre2 =
      post1 * t[3].value.transpose() + t[4].value.col(0).transpose();
  CHECK((out.row(0) - pre2.cwiseMax(0.0)).norm() <= 1e-12);
}

TEST_CASE("forward: default config emits 256-dim embeddings") {
  SyntheticGraphSpec spec;
  spec.nodes_per_class = 20;
  spec.feature_dim = 4;
  auto g = generate_synthetic(spec);
  for (Arch a : {Arch::GraphSAGE, Arch::GAT, Arch::GIN}) {
    auto cfg = GnnConfig::defaults(a);
    cfg.input_dim = g.feature_dim();
    cfg.num_classes = g.num_classes;
    GnnModel model = build_model(cfg);
    auto [emb, logits] = forward(model, g, {0, 5, 11}, 3);
    CHECK(emb.rows() == 3);
    CHECK(emb.cols() == 256);
    CHECK(logits.cols() == g.num_classes);
  }
}

TEST_CASE("forward: deterministic for fixed seed; empty node set rejected") {
  auto g = toy_graph();
  auto cfg = small_config(Arch::GraphSAGE);
  GnnModel model = build_model(cfg);
  auto [e1, l1] = forward(model, g, {0, 2, 4}, 123);
  auto [e2, l2] = forward(model, g, {0, 2, 4}, 123);
  CHECK((e1 - e2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((l1 - l2).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(forward(model, g, {}, 1), std::invalid_argument);
}

TEST_CASE("forward: single isolated node yields finite outputs") {
  GraphDataset g;
  g.node_count = 1;
  g.num_classes = 2;
  g.labels = {0};
  g.neighbors = {{}};
  g.features = Matrix::Ones(1, 3);
  for (Arch a : {Arch::GraphSAGE, Arch::GAT, Arch::GIN}) {
    auto cfg = small_config(a);
    GnnModel model = build_model(cfg);
    auto [emb, logits] = forward(model, g, {0}, 0);
    CHECK(emb.allFinite());
    CHECK(logits.allFinite());
  }
}

namespace {

// Simple multinomial logistic regression on raw features, as a baseline the
// GNN has to beat.
double logistic_baseline_accuracy(const GraphDataset& g,
                                  const std::vector<int>& train,
                                  const std::vector<int>& test) {
  Mlp lr({g.feature_dim(), g.num_classes}, Activation::None, 7, "logit");
  Adam opt(0.05);
  Matrix x(train.size(), g.feature_dim());
  std::vector<int> y;
  for (std::size_t i = 0; i < train.size(); ++i) {
    x.row(i) = g.features.row(train[i]);
    y.push_back(g.labels[train[i]]);
  }
  for (int e = 0; e < 300; ++e) {
    Mlp::Cache c;
    Matrix logits = lr.forward(x, &c);
    Matrix d;
    softmax_cross_entropy(logits, y, &d);
    lr.zero_grad();
    lr.backward(c, d);
    opt.step(lr.tensor_ptrs());
  }
  Matrix xt(test.size(), g.feature_dim());
  for (std::size_t i = 0; i < test.size(); ++i) xt.row(i) = g.features.row(test[i]);
  auto pred = argmax_rows(lr.forward(xt));
  int hit = 0;
  for (std::size_t i = 0; i < test.size(); ++i) hit += pred[i] == g.labels[test[i]];
  return static_cast<double>(hit) / test.size();
}

}  // namespace

TEST_CASE("train: beats majority-class and logistic baselines on synthetic data") {
  SyntheticGraphSpec spec;  // defaults: 2 classes x 50, noisy one-hot features
  spec.nodes_per_class = 100;
  spec.seed = 31;
  auto g = generate_synthetic(spec);
  auto sp = split_dataset(g, {0.6, 0.0, 0.4, 0.0}, 2);

  auto cfg = GnnConfig::defaults(Arch::GraphSAGE);
  cfg.hidden_dim = 32;
  cfg.max_epochs = 200;
  cfg.seed = 4;
  auto [model, report] = train(cfg, g, sp.target_train);
  CHECK(report.epochs_run <= cfg.max_epochs);

  auto pred = predict(model, g, sp.test, 11);
  int hit = 0;
  double majority = 0.5;  // balanced classes by construction
  for (std::size_t i = 0; i < pred.size(); ++i)
    hit += pred[i] == g.labels[sp.test[i]];
  double acc = static_cast<double>(hit) / pred.size();
  double logit = logistic_baseline_accuracy(g, sp.target_train, sp.test);
  CHECK(acc >= 0.9);
  CHECK(acc > majority);
  CHECK(acc > logit);
}

TEST_CASE("train: rejects empty and single-class training sets") {
  auto g = toy_graph();
  auto cfg = small_config(Arch::GraphSAGE);
  CHECK_THROWS_AS(train(cfg, g, {}), std::invalid_argument);
  CHECK_THROWS_AS(train(cfg, g, {0, 1, 2}), std::invalid_argument);
}

TEST_CASE("train: patience 0 disables early stopping") {
  auto g = toy_graph();
  auto cfg = small_config(Arch::GraphSAGE);
  cfg.max_epochs = 7;
  cfg.early_stop_patience = 0;
  auto [model, report] = train(cfg, g, {0, 1, 2, 3, 4, 5});
  CHECK(report.epochs_run == 7);
}

TEST_CASE("train: deterministic for fixed seed") {
  SyntheticGraphSpec spec;
  spec.nodes_per_class = 30;
  auto g = generate_synthetic(spec);
  auto cfg = small_config(Arch::GIN);
  cfg.input_dim = 0;
  cfg.num_classes = 0;
  cfg.max_epochs = 15;
  std::vector<int> nodes(g.node_count);
  std::iota(nodes.begin(), nodes.end(), 0);
  auto [m1, r1] = train(cfg, g, nodes);
  auto [m2, r2] = train(cfg, g, nodes);
  CHECK(r1.final_train_loss == r2.final_train_loss);
  CHECK(r1.epochs_run == r2.epochs_run);
}

TEST_CASE("prune: identity at 0, total at 1, oracle at 0.5") {
  auto g = toy_graph();
  auto cfg = small_config(Arch::GraphSAGE, 4);
  GnnModel model = build_model(cfg);
  // make every parameter entry nonzero and distinct
  double v = 0.01;
  for (auto* t : model.all_tensors())
    for (int i = 0; i < t->value.size(); ++i) t->value.data()[i] = (v += 0.01);

  auto same = prune(model, 0.0);
  auto dead = prune(model, 1.0);
  auto ts0 = model.all_tensors();
  auto ts1 = same.all_tensors();
  auto ts2 = dead.all_tensors();
  std::vector<double> flat;
  for (std::size_t i = 0; i < ts0.size(); ++i) {
    CHECK((ts0[i]->value - ts1[i]->value).cwiseAbs().maxCoeff() == 0.0);
    CHECK(ts2[i]->value.cwiseAbs().maxCoeff() == 0.0);
    for (int j = 0; j < ts0[i]->value.size(); ++j)
      flat.push_back(ts0[i]->value.data()[j]);
  }

  // sort-based oracle: the floor(r*W) smallest |w| must be zeroed, rest kept
  double ratio = 0.5;
  std::vector<double> mags = flat;
  for (auto& m : mags) m = std::abs(m);
  std::sort(mags.begin(), mags.end());
  double cutoff = mags[static_cast<std::size_t>(std::floor(ratio * mags.size())) - 1];
  auto half = prune(model, ratio);
  auto tsh = half.all_tensors();
  std::size_t zeros = 0, kept = 0;
  for (std::size_t i = 0; i < ts0.size(); ++i)
    for (int j = 0; j < ts0[i]->value.size(); ++j) {
      double before = ts0[i]->value.data()[j];
      double after = tsh[i]->value.data()[j];
      if (after == 0.0) {
        ++zeros;
        CHECK(std::abs(before) <= cutoff);
      } else {
        ++kept;
        CHECK(after == before);
      }
    }
  CHECK(zeros == static_cast<std::size_t>(std::floor(ratio * flat.size())));
  CHECK(zeros + kept == flat.size());

  CHECK_THROWS_AS(prune(model, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(prune(model, 1.1), std::invalid_argument);
}

TEST_CASE("fine_tune: returns a new model, original untouched; errors checked") {
  SyntheticGraphSpec spec;
  spec.nodes_per_class = 80;
  auto g = generate_synthetic(spec);
  auto sp = split_dataset(g, {0.4, 0.3, 0.3, 0.0}, 3);
  auto cfg = small_config(Arch::GraphSAGE, 16);
  cfg.input_dim = 0;
  cfg.num_classes = 0;
  cfg.max_epochs = 40;
  auto [model, rep] = train(cfg, g, sp.target_train);
  Matrix before = model.layers[0].t[0].value;

  CHECK_THROWS_AS(fine_tune(model, g, sp.surrogate_train, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(fine_tune(model, g, {}, 5), std::invalid_argument);

  auto tuned = fine_tune(model, g, sp.surrogate_train, 2);
  CHECK((model.layers[0].t[0].value - before).cwiseAbs().maxCoeff() == 0.0);
  CHECK((tuned.layers[0].t[0].value - before).cwiseAbs().maxCoeff() > 0.0);

  // a few epochs barely move the decision function
  auto p_old = predict(model, g, sp.test, 5);
  auto p_new = predict(tuned, g, sp.test, 5);
  int agree = 0;
  for (std::size_t i = 0; i < p_old.size(); ++i) agree += p_old[i] == p_new[i];
  CHECK(static_cast<double>(agree) / p_old.size() > 0.95);
}
