#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnnfp/gnn.hpp"
#include "gnnfp/graph.hpp"
#include "gnnfp/nn.hpp"

namespace gnnfp {

// Element-wise squared difference of two node embeddings; one input row of
// the similarity classifier.
inline Vector distance_vector(const Eigen::Ref<const Eigen::RowVectorXd>& h_a,
                              const Eigen::Ref<const Eigen::RowVectorXd>& h_b) {
  if (h_a.size() != h_b.size())
    throw std::invalid_argument("embedding dimension mismatch");
  return (h_a - h_b).array().square().matrix().transpose();
}

struct ProvenanceRow {
  std::string target_id;
  std::string other_id;
  int node_id = 0;
  std::string kind;  // surrogate | independent | pruned-surrogate
};

struct FingerprintTrainingSet {
  Matrix rows;              // one distance vector per row
  std::vector<int> labels;  // 1 = similar (positive), 0 = not similar
  std::vector<ProvenanceRow> provenance;

  void append(const Vector& dv, int label, ProvenanceRow prov) {
    Matrix grown(rows.rows() + 1, dv.size());
    if (rows.rows() > 0) grown.topRows(rows.rows()) = rows;
    grown.row(rows.rows()) = dv.transpose();
    rows = std::move(grown);
    labels.push_back(label);
    provenance.push_back(std::move(prov));
  }
};

struct SimilarityClassifier {
  Mlp mlp;  // input_dim -> hidden -> 1, sigmoid decision at 0.5
  double cv_accuracy = 0.0;
  double pair_threshold = 0.5;

  int input_dim() const { return mlp.input_dim(); }

  Vector pair_probability(const Matrix& dvs) const {
    Matrix logits = mlp.forward(dvs);
    return (1.0 / (1.0 + (-logits.col(0).array()).exp())).matrix();
  }
};

struct VerdictReport {
  double similar_fraction = 0.0;
  bool surrogate = false;  // true iff similar_fraction > 0.5
  int pair_count = 0;
  std::vector<bool> per_node_decisions;

  nlohmann::json to_json() const {
    return {{"similar_fraction", similar_fraction},
            {"verdict", surrogate ? "surrogate" : "independent"},
            {"pair_count", pair_count}};
  }
};

namespace detail {

// Both models are queried with the same seed so they see identical sampled
// neighborhoods; the embedding pairs are node-aligned by construction. The
// Monte-Carlo average strips single-pass sampling noise out of the distance
// vectors, which would otherwise swamp the surrogate/independent margin.
inline Matrix dv_embeddings(const GnnModel& model, const GraphDataset& g,
                            const std::vector<int>& d_v, std::uint64_t seed) {
  Matrix h = forward_mean(model, g, d_v, mix_seed(seed, "dv-embed")).first;
  // row-normalize: embedding scale varies with initialization luck, and an
  // independent that lands on a small scale would fake small distances
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    double n = h.row(i).norm();
    if (n > 0) h.row(i) /= n;
  }
  return h;
}

inline void append_pairs(FingerprintTrainingSet& ts, const Matrix& h_t,
                         const Matrix& h_o, const std::vector<int>& d_v,
                         int label, const std::string& target_id,
                         const std::string& other_id, const std::string& kind) {
  if (h_t.cols() != h_o.cols())
    throw std::invalid_argument("embedding dimension mismatch");
  int start = static_cast<int>(ts.rows.rows());
  Matrix grown(start + h_t.rows(), h_t.cols());
  if (start > 0) grown.topRows(start) = ts.rows;
  grown.bottomRows(h_t.rows()) =
      (h_t - h_o).array().square().matrix();
  ts.rows = std::move(grown);
  for (int i = 0; i < h_t.rows(); ++i) {
    ts.labels.push_back(label);
    ts.provenance.push_back({target_id, other_id, d_v[i], kind});
  }
}

}  // namespace detail

// |d_v| positive rows per surrogate and |d_v| negative rows per independent.
inline FingerprintTrainingSet build_training_set(
    const GnnModel& target, const std::vector<const GnnModel*>& surrogates,
    const std::vector<const GnnModel*>& independents, const GraphDataset& g,
    const std::vector<int>& d_v, std::uint64_t seed,
    const std::string& target_id = "target") {
  if (surrogates.empty() || independents.empty())
    throw std::invalid_argument("build_training_set: empty model list");
  FingerprintTrainingSet ts;
  Matrix h_t = detail::dv_embeddings(target, g, d_v, seed);
  for (std::size_t i = 0; i < surrogates.size(); ++i) {
    Matrix h_s = detail::dv_embeddings(*surrogates[i], g, d_v, seed);
    detail::append_pairs(ts, h_t, h_s, d_v, 1, target_id,
                         "surrogate" + std::to_string(i), "surrogate");
  }
  for (std::size_t i = 0; i < independents.size(); ++i) {
    Matrix h_i = detail::dv_embeddings(*independents[i], g, d_v, seed);
    detail::append_pairs(ts, h_t, h_i, d_v, 0, target_id,
                         "independent" + std::to_string(i), "independent");
  }
  return ts;
}

// Adds positive rows from pruned surrogate variants; makes C_sim robust to
// pruning-based evasion. Ratios beyond 0.4 are rejected: at that point the
// accuracy loss already deters the adversary.
inline FingerprintTrainingSet build_robust_training_set(
    const FingerprintTrainingSet& base, const GnnModel& target,
    const std::vector<const GnnModel*>& surrogates,
    const std::vector<double>& prune_ratios, const GraphDataset& g,
    const std::vector<int>& d_v, std::uint64_t seed,
    const std::string& target_id = "target") {
  for (double r : prune_ratios)
    if (r <= 0.0 || r > 0.4)
      throw std::invalid_argument("robust training: ratio outside (0, 0.4]");
  FingerprintTrainingSet ts = base;
  Matrix h_t = detail::dv_embeddings(target, g, d_v, seed);
  for (std::size_t i = 0; i < surrogates.size(); ++i) {
    for (double r : prune_ratios) {
      GnnModel pruned = prune(*surrogates[i], r);
      Matrix h_p = detail::dv_embeddings(pruned, g, d_v, seed);
      detail::append_pairs(ts, h_t, h_p, d_v, 1, target_id,
                           "surrogate" + std::to_string(i) + "-pruned" +
                               std::to_string(r),
                           "pruned-surrogate");
    }
  }
  return ts;
}

namespace detail {

struct CsimHyper {
  int hidden;
  Activation act;
};

inline Mlp fit_csim_mlp(const Matrix& x, const std::vector<int>& y,
                        const CsimHyper& hp, std::uint64_t seed,
                        int epochs = 200) {
  Mlp mlp({static_cast<int>(x.cols()), hp.hidden, 1}, hp.act, seed, "csim");
  Adam opt(1e-3);
  for (int e = 0; e < epochs; ++e) {
    Mlp::Cache cache;
    Matrix logits = mlp.forward(x, &cache);
    Matrix d;
    sigmoid_bce(logits, y, &d);
    mlp.zero_grad();
    mlp.backward(cache, d);
    opt.step(mlp.tensor_ptrs());
  }
  return mlp;
}

inline double csim_accuracy(const Mlp& mlp, const Matrix& x,
                            const std::vector<int>& y) {
  Matrix logits = mlp.forward(x);
  int hit = 0;
  for (int i = 0; i < logits.rows(); ++i)
    hit += (logits(i, 0) > 0.0) == (y[i] == 1);
  return static_cast<double>(hit) / logits.rows();
}

}  // namespace detail

// Grid search over hidden {64,128} x activation {Tanh,ReLU}, scored by mean
// 10-fold cross-validation accuracy, ties toward the smaller hidden layer;
// the winner is refit on the full data.
inline SimilarityClassifier train_csim(const FingerprintTrainingSet& ts,
                                       std::uint64_t seed, int folds = 10) {
  int n = static_cast<int>(ts.rows.rows());
  if (n == 0) throw std::invalid_argument("train_csim: empty training set");
  bool has_pos = false, has_neg = false;
  for (int y : ts.labels) (y ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument("train_csim: single-label training set");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, "csim-cv");
  std::shuffle(order.begin(), order.end(), rng);
  folds = std::min(folds, n);

  const detail::CsimHyper grid[] = {{64, Activation::Tanh},
                                    {64, Activation::ReLU},
                                    {128, Activation::Tanh},
                                    {128, Activation::ReLU}};
  double best_acc = -1.0;
  detail::CsimHyper best = grid[0];
  for (const auto& hp : grid) {
    double acc_sum = 0.0;
    for (int f = 0; f < folds; ++f) {
      std::vector<int> tr, te;
      for (int i = 0; i < n; ++i)
        (i % folds == f ? te : tr).push_back(order[i]);
      Matrix xtr(tr.size(), ts.rows.cols()), xte(te.size(), ts.rows.cols());
      std::vector<int> ytr, yte;
      for (std::size_t i = 0; i < tr.size(); ++i) {
        xtr.row(i) = ts.rows.row(tr[i]);
        ytr.push_back(ts.labels[tr[i]]);
      }
      for (std::size_t i = 0; i < te.size(); ++i) {
        xte.row(i) = ts.rows.row(te[i]);
        yte.push_back(ts.labels[te[i]]);
      }
      Mlp mlp = detail::fit_csim_mlp(xtr, ytr, hp,
                                     mix_seed(seed, "csim-fold", f));
      acc_sum += detail::csim_accuracy(mlp, xte, yte);
    }
    double acc = acc_sum / folds;
    if (acc > best_acc + 1e-12) {
      best_acc = acc;
      best = hp;
    }
  }
  SimilarityClassifier csim;
  csim.cv_accuracy = best_acc;
  csim.mlp = detail::fit_csim_mlp(ts.rows, ts.labels, best,
                                  mix_seed(seed, "csim-refit"));
  return csim;
}

// Per-node distance vectors through C_sim; suspect is a surrogate iff more
// than half the pairs are classified similar.
inline VerdictReport verify(const SimilarityClassifier& csim,
                            const GnnModel& target, const GnnModel& suspect,
                            const GraphDataset& g, const std::vector<int>& d_v,
                            std::uint64_t seed) {
  Matrix h_t = detail::dv_embeddings(target, g, d_v, seed);
  Matrix h_q = detail::dv_embeddings(suspect, g, d_v, seed);
  if (h_t.cols() != h_q.cols())
    throw std::invalid_argument("embedding dimension mismatch");
  Matrix dvs = (h_t - h_q).array().square().matrix();
  Vector prob = csim.pair_probability(dvs);
  VerdictReport rep;
  rep.pair_count = static_cast<int>(d_v.size());
  int similar = 0;
  for (int i = 0; i < prob.size(); ++i) {
    bool s = prob(i) > csim.pair_threshold;
    rep.per_node_decisions.push_back(s);
    similar += s;
  }
  rep.similar_fraction = static_cast<double>(similar) / rep.pair_count;
  rep.surrogate = rep.similar_fraction > 0.5;
  return rep;
}

// ---- persistence ----

inline void save_training_set(const FingerprintTrainingSet& ts,
                              const std::filesystem::path& p) {
  std::ofstream out(p);
  out.precision(17);
  int d = static_cast<int>(ts.rows.cols());
  for (int j = 0; j < d; ++j) out << "d" << j << ",";
  out << "label,target_id,other_id,node_id,kind\n";
  for (int i = 0; i < ts.rows.rows(); ++i) {
    for (int j = 0; j < d; ++j) out << ts.rows(i, j) << ',';
    const auto& pr = ts.provenance[i];
    out << ts.labels[i] << ',' << pr.target_id << ',' << pr.other_id << ','
        << pr.node_id << ',' << pr.kind << '\n';
  }
}

inline nlohmann::json csim_to_json(const SimilarityClassifier& csim) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& t : csim.mlp.tensors()) {
    std::vector<double> flat(t.value.data(), t.value.data() + t.value.size());
    layers.push_back({{"name", t.name},
                      {"rows", t.value.rows()},
                      {"cols", t.value.cols()},
                      {"data", flat}});
  }
  return {{"kind", "similarity_classifier"},
          {"activation",
           csim.mlp.activation() == Activation::Tanh ? "tanh" : "relu"},
          {"cv_accuracy", csim.cv_accuracy},
          {"pair_threshold", csim.pair_threshold},
          {"tensors", layers}};
}

inline SimilarityClassifier csim_from_json(const nlohmann::json& j) {
  Activation act = j.at("activation").get<std::string>() == "tanh"
                       ? Activation::Tanh
                       : Activation::ReLU;
  const auto& layers = j.at("tensors");
  int input = layers.at(0).at("cols").get<int>();
  int hidden = layers.at(0).at("rows").get<int>();
  SimilarityClassifier csim;
  csim.mlp = Mlp({input, hidden, 1}, act, 0, "csim");
  csim.cv_accuracy = j.at("cv_accuracy").get<double>();
  csim.pair_threshold = j.at("pair_threshold").get<double>();
  auto ptrs = csim.mlp.tensor_ptrs();
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    const auto& lj = layers.at(i);
    int r = lj.at("rows").get<int>(), c = lj.at("cols").get<int>();
    auto flat = lj.at("data").get<std::vector<double>>();
    ptrs[i]->value.resize(r, c);
    std::copy(flat.begin(), flat.end(), ptrs[i]->value.data());
  }
  return csim;
}

inline void save_csim(const SimilarityClassifier& csim,
                      const std::filesystem::path& p) {
  std::ofstream out(p);
  out << csim_to_json(csim).dump(2) << '\n';
}

inline SimilarityClassifier load_csim(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  nlohmann::json j;
  in >> j;
  return csim_from_json(j);
}

}  // namespace gnnfp
