#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "gnnfp/gnn.hpp"
#include "gnnfp/graph.hpp"
#include "gnnfp/nn.hpp"

namespace gnnfp {

// Black-box access to a deployed model: node features + structure in,
// embedding matrix out. Never exposes weights.
class QueryOracle {
 public:
  virtual ~QueryOracle() = default;
  // One embedding row per node of `ds`, in node order.
  virtual Matrix query(const GraphDataset& ds, std::uint64_t seed) = 0;
};

class InProcessOracle : public QueryOracle {
 public:
  explicit InProcessOracle(const GnnModel& model) : model_(&model) {}
  Matrix query(const GraphDataset& ds, std::uint64_t seed) override {
    std::vector<int> nodes(ds.node_count);
    std::iota(nodes.begin(), nodes.end(), 0);
    return forward(*model_, ds, nodes, seed).first;
  }

 private:
  const GnnModel* model_;
};

enum class AttackType { TypeI, TypeII };

struct AttackConfig {
  AttackType attack_type = AttackType::TypeI;
  int knn_k = 5;  // Type II structure estimate
  int epochs = 200;
  double learning_rate = 1e-3;
  Arch surrogate_architecture = Arch::GraphSAGE;
  int classifier_hidden = 128;
  // decoupled L2 decay on the surrogate's weights; keeps the fit from
  // balancing precision across many small weights, which magnitude pruning
  // would otherwise destroy
  double weight_decay = 1e-2;
  // dropout inside the surrogate's embedding network during the fit; the
  // objective is a regression onto fixed oracle responses, but a little
  // dropout still regularizes against the response's sampling noise
  double surrogate_dropout = 0.5;
  std::uint64_t seed = 0;
};

// (1/n) * sum of per-row L2 norms of H_s - H_t.
inline double row_21_loss(const Matrix& h_s, const Matrix& h_t,
                          Matrix* d_hs = nullptr) {
  if (h_s.rows() != h_t.rows() || h_s.cols() != h_t.cols())
    throw std::invalid_argument("row_21_loss: shape mismatch");
  int n = static_cast<int>(h_s.rows());
  double loss = 0.0;
  if (d_hs) d_hs->setZero(h_s.rows(), h_s.cols());
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd r = h_s.row(i) - h_t.row(i);
    double norm = r.norm();
    loss += norm;
    if (d_hs && norm > 1e-12) d_hs->row(i) = r / (norm * n);
  }
  return loss / n;
}

struct ExtractionReport {
  double final_recon_loss = 0.0;
  double final_class_loss = 0.0;
  int epochs_run = 0;
};

// Observation point for the alternating schedule. Called with the epoch,
// one of "epoch-start" / "after-embed-step" / "after-head-step", and the
// surrogate in its current state.
using PhaseHook =
    std::function<void(int, const std::string&, const GnnModel&)>;

namespace detail {

inline std::vector<int> all_nodes(const GraphDataset& ds) {
  std::vector<int> v(ds.node_count);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Shared trainer for the plain and distribution-shift attacks. When
// `discriminator` is set, the embedding step additionally pushes H_s toward
// being classified as standard Gaussian, with weight `adv_weight`.
inline GnnModel extract_impl(QueryOracle& oracle, const GraphDataset& ds_in,
                             const AttackConfig& cfg, ExtractionReport* report,
                             Mlp* discriminator, double adv_weight,
                             double recon_weight = 1.0,
                             const PhaseHook& hook = {}) {
  if (ds_in.node_count == 0)
    throw std::invalid_argument("extraction: empty surrogate split");
  GraphDataset ds = ds_in;
  if (cfg.attack_type == AttackType::TypeII) {
    if (cfg.knn_k < 1) throw std::invalid_argument("extraction: knn_k < 1");
    ds.neighbors = knn_graph(ds.features, cfg.knn_k);
  }
  Matrix h_t = oracle.query(ds, mix_seed(cfg.seed, "oracle-query"));

  GnnConfig scfg = GnnConfig::defaults(cfg.surrogate_architecture);
  scfg.hidden_dim = static_cast<int>(h_t.cols());
  scfg.head_hidden = cfg.classifier_hidden;
  scfg.learning_rate = cfg.learning_rate;
  scfg.input_dim = ds.feature_dim();
  scfg.num_classes = ds.num_classes;
  scfg.dropout = cfg.surrogate_dropout;
  scfg.seed = mix_seed(cfg.seed, "surrogate-init");
  GnnModel model = build_model(scfg);

  std::vector<Tensor*> gnn_tensors;
  for (auto& l : model.layers)
    for (auto& t : l.t) gnn_tensors.push_back(&t);
  Adam opt_gnn(cfg.learning_rate, cfg.weight_decay);
  Adam opt_head(cfg.learning_rate, cfg.weight_decay);
  Adam opt_disc(cfg.learning_rate);

  auto nodes = all_nodes(ds);
  auto labels = detail::labels_for(ds, nodes);
  ExtractionReport rep;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto rng = make_rng(cfg.seed, "ext-epoch", static_cast<std::uint64_t>(e));
    // linear decay to 10%: full-batch Adam on the row-2,1 objective cycles
    // at a fixed rate instead of settling
    double lr_e =
        cfg.learning_rate * (1.0 - 0.9 * static_cast<double>(e) / cfg.epochs);
    opt_gnn.set_lr(lr_e);
    opt_head.set_lr(lr_e);
    if (hook) hook(e, "epoch-start", model);
    // embedding step: fit H_s to the queried H_t
    auto blocks = sample_blocks(ds, nodes, scfg.neighbor_samples, rng);
    ForwardCache cache;
    Matrix h_s = gnn_embed(model, ds, blocks, &cache, true, &rng);
    Matrix d_hs;
    rep.final_recon_loss = row_21_loss(h_s, h_t, &d_hs);
    if (recon_weight != 1.0) d_hs *= recon_weight;
    if (discriminator) {
      // discriminator step on gaussian-vs-surrogate, then generator gradient
      std::normal_distribution<double> gauss(0.0, 1.0);
      Matrix real(h_s.rows(), h_s.cols());
      for (Eigen::Index i = 0; i < real.size(); ++i) real.data()[i] = gauss(rng);
      Matrix stacked(2 * h_s.rows(), h_s.cols());
      stacked << real, h_s;
      std::vector<int> dlabels(2 * h_s.rows(), 1);
      std::fill(dlabels.begin() + h_s.rows(), dlabels.end(), 0);
      Mlp::Cache dc;
      Matrix dlogits = discriminator->forward(stacked, &dc);
      Matrix d_dlogits;
      sigmoid_bce(dlogits, dlabels, &d_dlogits);
      discriminator->zero_grad();
      discriminator->backward(dc, d_dlogits);
      opt_disc.step(discriminator->tensor_ptrs());
      // generator term: make D label H_s as gaussian
      Mlp::Cache gc;
      Matrix glogits = discriminator->forward(h_s, &gc);
      Matrix d_glogits;
      std::vector<int> want_real(h_s.rows(), 1);
      sigmoid_bce(glogits, want_real, &d_glogits);
      discriminator->zero_grad();  // scratch; only the input grad is used
      Matrix d_hs_adv = discriminator->backward(gc, d_glogits);
      d_hs += adv_weight * d_hs_adv;
    }
    for (auto* t : gnn_tensors) t->zero_grad();
    model.head.zero_grad();
    gnn_backward(model, blocks, cache, d_hs);
    opt_gnn.step(gnn_tensors);
    if (hook) hook(e, "after-embed-step", model);

    // classifier step: embedding network frozen, head fits ground-truth labels
    auto blocks2 = sample_blocks(ds, nodes, scfg.neighbor_samples, rng);
    Matrix emb = gnn_embed(model, ds, blocks2);
    Mlp::Cache hc;
    Matrix logits = model.head.forward(emb, &hc);
    Matrix d_logits;
    rep.final_class_loss = softmax_cross_entropy(logits, labels, &d_logits);
    model.head.zero_grad();
    model.head.backward(hc, d_logits);
    opt_head.step(model.head.tensor_ptrs());
    if (hook) hook(e, "after-head-step", model);
    rep.epochs_run = e + 1;
  }
  if (report) *report = rep;
  return model;
}

}  // namespace detail

// Embedding-targeted extraction: per epoch the embedding network is fit to
// the oracle's responses, then frozen while the MLP classifier head fits the
// adversary's ground-truth labels.
inline GnnModel run_extraction(QueryOracle& oracle, const GraphDataset& ds,
                               const AttackConfig& cfg,
                               ExtractionReport* report = nullptr,
                               const PhaseHook& hook = {}) {
  return detail::extract_impl(oracle, ds, cfg, report, nullptr, 0.0, 1.0,
                              hook);
}

// Surrogate-of-a-surrogate: extract an intermediate model, then attack it
// with the same attack type.
inline GnnModel double_extract(QueryOracle& target_oracle,
                               const GraphDataset& ds, const AttackConfig& cfg,
                               ExtractionReport* report = nullptr) {
  AttackConfig first = cfg;
  first.seed = mix_seed(cfg.seed, "double-stage1");
  GnnModel intermediate = run_extraction(target_oracle, ds, first);
  InProcessOracle oracle2(intermediate);
  AttackConfig second = cfg;
  second.seed = mix_seed(cfg.seed, "double-stage2");
  return run_extraction(oracle2, ds, second, report);
}

// Evasion attempt: the surrogate doubles as a generator against a
// discriminator that detects standard-Gaussian embeddings.
inline GnnModel distribution_shift_attack(QueryOracle& oracle,
                                          const GraphDataset& ds,
                                          const AttackConfig& cfg,
                                          Matrix* probe_h_t = nullptr,
                                          ExtractionReport* report = nullptr,
                                          double adv_weight = 0.1,
                                          double recon_weight = 1.0) {
  GraphDataset probe = ds;
  if (cfg.attack_type == AttackType::TypeII)
    probe.neighbors = knn_graph(probe.features, cfg.knn_k);
  Matrix h_t = oracle.query(probe, mix_seed(cfg.seed, "oracle-query"));
  if (probe_h_t) *probe_h_t = h_t;
  Mlp disc({static_cast<int>(h_t.cols()), 64, 32, 1}, Activation::ReLU,
           mix_seed(cfg.seed, "disc-init"), "disc");
  return detail::extract_impl(oracle, ds, cfg, report, &disc, adv_weight,
                              recon_weight);
}

}  // namespace gnnfp
