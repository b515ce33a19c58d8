#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnnfp/graph.hpp"
#include "gnnfp/nn.hpp"
#include "gnnfp/rng.hpp"

namespace gnnfp {

enum class Arch { GraphSAGE, GAT, GIN };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::GraphSAGE: return "graphsage";
    case Arch::GAT: return "gat";
    case Arch::GIN: return "gin";
  }
  return "?";
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "graphsage" || s == "sage") return Arch::GraphSAGE;
  if (s == "gat") return Arch::GAT;
  if (s == "gin") return Arch::GIN;
  throw std::invalid_argument("unknown architecture: " + s);
}

struct GnnConfig {
  Arch arch = Arch::GraphSAGE;
  int num_layers = 2;
  int hidden_dim = 256;
  std::vector<int> neighbor_samples = {25, 10};
  int attention_heads = 4;  // GAT, all layers but the last
  double dropout = 0.5;
  double learning_rate = 1e-3;
  int max_epochs = 200;
  int early_stop_patience = 20;
  int head_hidden = 0;  // 0: single dense head; >0: 2-layer MLP head width
  int input_dim = 0;
  int num_classes = 0;
  std::uint64_t seed = 0;

  static GnnConfig defaults(Arch a) {
    GnnConfig c;
    c.arch = a;
    switch (a) {
      case Arch::GraphSAGE:
        c.num_layers = 2;
        c.neighbor_samples = {25, 10};
        c.dropout = 0.5;
        break;
      case Arch::GAT:
      case Arch::GIN:
        c.num_layers = 3;
        c.neighbor_samples = {10, 10, 10};
        c.dropout = 0.0;
        break;
    }
    return c;
  }

  void check() const {
    if (hidden_dim <= 0) throw std::invalid_argument("hidden_dim <= 0");
    if (static_cast<int>(neighbor_samples.size()) != num_layers)
      throw std::invalid_argument("neighbor_samples length != num_layers");
    if (arch == Arch::GAT && num_layers > 1 && hidden_dim % attention_heads)
      throw std::invalid_argument("hidden_dim not divisible by heads");
  }

  // Heads are used on every GAT layer except the last.
  int heads_at(int layer) const {
    if (arch != Arch::GAT) return 1;
    return layer + 1 < num_layers ? attention_heads : 1;
  }
  int layer_in_dim(int layer) const {
    return layer == 0 ? input_dim : hidden_dim;
  }
};

struct GnnLayer {
  std::vector<Tensor> t;
};

// Per-layer neighborhood sample. src holds global node ids; the first
// dst_count entries of src are the nodes this layer computes. neigh[i] are
// positions into src (duplicates allowed: sampling with replacement when
// degree < sample size).
struct SampledBlock {
  std::vector<int> src;
  int dst_count = 0;
  std::vector<std::vector<int>> neigh;
};

inline std::vector<SampledBlock> sample_blocks(
    const GraphDataset& g, const std::vector<int>& nodes,
    const std::vector<int>& samples, std::mt19937_64& rng) {
  if (nodes.empty()) throw std::invalid_argument("sample_blocks: empty node set");
  int num_layers = static_cast<int>(samples.size());
  std::vector<SampledBlock> blocks(num_layers);
  std::vector<int> dst = nodes;
  for (int l = num_layers - 1; l >= 0; --l) {
    SampledBlock& blk = blocks[l];
    blk.dst_count = static_cast<int>(dst.size());
    blk.src = dst;
    std::vector<int> pos(g.node_count, -1);
    for (int i = 0; i < blk.dst_count; ++i) pos[blk.src[i]] = i;
    blk.neigh.resize(blk.dst_count);
    int s = samples[l];
    for (int i = 0; i < blk.dst_count; ++i) {
      const auto& nb = g.neighbors[dst[i]];
      int deg = static_cast<int>(nb.size());
      if (deg == 0) continue;  // zero-neighbor aggregation handles this
      std::vector<int> chosen;
      chosen.reserve(s);
      if (deg <= s) {
        chosen = nb;
        std::uniform_int_distribution<int> pick(0, deg - 1);
        while (static_cast<int>(chosen.size()) < s)
          chosen.push_back(nb[pick(rng)]);
      } else {
        std::vector<int> copy = nb;
        for (int j = 0; j < s; ++j) {
          std::uniform_int_distribution<int> pick(j, deg - 1);
          std::swap(copy[j], copy[pick(rng)]);
        }
        chosen.assign(copy.begin(), copy.begin() + s);
      }
      for (int u : chosen) {
        if (pos[u] < 0) {
          pos[u] = static_cast<int>(blk.src.size());
          blk.src.push_back(u);
        }
        blk.neigh[i].push_back(pos[u]);
      }
    }
    dst = blk.src;
  }
  return blocks;
}

struct LayerCache {
  bool activated = true;  // whether the output activation was applied
  Matrix in;         // layer input (after dropout when training)
  Matrix drop_mask;  // empty when dropout off
  // GraphSAGE
  Matrix concat, pre;
  // GIN
  Matrix sum, pre1, post1, pre2;
  // GAT (per head)
  std::vector<Matrix> p;                         // projected src embeddings
  std::vector<std::vector<Eigen::VectorXd>> s;   // raw attention scores
  std::vector<std::vector<Eigen::VectorXd>> al;  // softmax coefficients
  std::vector<Matrix> u;                         // per-head pre-activation
};

namespace detail {

constexpr double kLeakySlope = 0.2;

inline void init_layer(GnnLayer& layer, const GnnConfig& cfg, int l,
                       std::mt19937_64& rng) {
  int in = cfg.layer_in_dim(l);
  int out = cfg.hidden_dim;
  std::string ln = "layer" + std::to_string(l);
  switch (cfg.arch) {
    case Arch::GraphSAGE:
      layer.t.emplace_back(ln + ".W", glorot(out, 2 * in, rng));
      layer.t.emplace_back(ln + ".b", Matrix::Zero(out, 1));
      break;
    case Arch::GIN:
      layer.t.emplace_back(ln + ".eps", Matrix::Zero(1, 1));
      layer.t.emplace_back(ln + ".mlp0.W", glorot(cfg.hidden_dim, in, rng));
      layer.t.emplace_back(ln + ".mlp0.b", Matrix::Zero(cfg.hidden_dim, 1));
      layer.t.emplace_back(ln + ".mlp1.W", glorot(out, cfg.hidden_dim, rng));
      layer.t.emplace_back(ln + ".mlp1.b", Matrix::Zero(out, 1));
      break;
    case Arch::GAT: {
      int heads = cfg.heads_at(l);
      int dh = out / heads;
      for (int k = 0; k < heads; ++k) {
        std::string hn = ln + ".head" + std::to_string(k);
        layer.t.emplace_back(hn + ".W", glorot(dh, in, rng));
        layer.t.emplace_back(hn + ".a_src", glorot(dh, 1, rng));
        layer.t.emplace_back(hn + ".a_dst", glorot(dh, 1, rng));
        layer.t.emplace_back(hn + ".b", Matrix::Zero(dh, 1));
      }
      break;
    }
  }
}

}  // namespace detail

// Forward pass of one message-passing layer over a sampled block.
// h_in has one row per block.src node; the result has one row per dst node.
inline Matrix layer_forward(const GnnConfig& cfg, int l, const GnnLayer& layer,
                            const Matrix& h_in_raw, const SampledBlock& blk,
                            LayerCache* cache, double dropout = 0.0,
                            std::mt19937_64* rng = nullptr,
                            bool activate = true) {
  Matrix h_in = h_in_raw;
  Matrix mask;
  if (dropout > 0.0 && rng) {
    std::bernoulli_distribution keep(1.0 - dropout);
    mask.resize(h_in.rows(), h_in.cols());
    double scale = 1.0 / (1.0 - dropout);
    for (int i = 0; i < mask.rows(); ++i)
      for (int j = 0; j < mask.cols(); ++j)
        mask(i, j) = keep(*rng) ? scale : 0.0;
    h_in = h_in.cwiseProduct(mask);
  }
  if (cache) {
    cache->in = h_in;
    cache->drop_mask = mask;
    cache->activated = activate;
  }
  int nd = blk.dst_count;
  switch (cfg.arch) {
    case Arch::GraphSAGE: {
      const Matrix& w = layer.t[0].value;
      const Matrix& b = layer.t[1].value;
      int din = static_cast<int>(h_in.cols());
      Matrix cat(nd, 2 * din);
      cat.leftCols(din) = h_in.topRows(nd);
      for (int i = 0; i < nd; ++i) {
        Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(din);
        for (int j : blk.neigh[i]) m += h_in.row(j);
        if (!blk.neigh[i].empty()) m /= static_cast<double>(blk.neigh[i].size());
        cat.row(i).tail(din) = m;
      }
      Matrix pre = (cat * w.transpose()).rowwise() + b.col(0).transpose();
      if (cache) {
        cache->concat = cat;
        cache->pre = pre;
      }
      return activate ? pre.cwiseMax(0.0) : pre;
    }
    case Arch::GIN: {
      double eps = layer.t[0].value(0, 0);
      const Matrix& w1 = layer.t[1].value;
      const Matrix& b1 = layer.t[2].value;
      const Matrix& w2 = layer.t[3].value;
      const Matrix& b2 = layer.t[4].value;
      // the sum aggregates ~(1 + samples) unit-scale node vectors; the fixed
      // 1/sqrt factor keeps activations at unit scale so mlp0's weights stay
      // comparable in magnitude to every other tensor (a weight-equivalent
      // reparameterization — the factor could live in mlp0.W instead, but
      // then global magnitude pruning would single out GIN layers)
      double scale = 1.0 / std::sqrt(1.0 + cfg.neighbor_samples[l]);
      Matrix sum(nd, h_in.cols());
      for (int i = 0; i < nd; ++i) {
        Eigen::RowVectorXd acc = (1.0 + eps) * h_in.row(i);
        for (int j : blk.neigh[i]) acc += h_in.row(j);
        sum.row(i) = acc * scale;
      }
      Matrix pre1 = (sum * w1.transpose()).rowwise() + b1.col(0).transpose();
      Matrix post1 = pre1.cwiseMax(0.0);
      Matrix pre2 = (post1 * w2.transpose()).rowwise() + b2.col(0).transpose();
      if (cache) {
        cache->sum = sum;
        cache->pre1 = pre1;
        cache->post1 = post1;
        cache->pre2 = pre2;
      }
      return activate ? pre2.cwiseMax(0.0) : pre2;
    }
    case Arch::GAT: {
      int heads = cfg.heads_at(l);
      int dh = cfg.hidden_dim / heads;
      Matrix out(nd, cfg.hidden_dim);
      if (cache) {
        cache->p.resize(heads);
        cache->s.assign(heads, {});
        cache->al.assign(heads, {});
        cache->u.resize(heads);
      }
      for (int k = 0; k < heads; ++k) {
        const Matrix& w = layer.t[4 * k + 0].value;
        const Matrix& a_src = layer.t[4 * k + 1].value;
        const Matrix& a_dst = layer.t[4 * k + 2].value;
        const Matrix& b = layer.t[4 * k + 3].value;
        Matrix p = h_in * w.transpose();  // |src| x dh
        Vector qs = p * a_src.col(0);
        Vector qd = p * a_dst.col(0);
        Matrix u(nd, dh);
        std::vector<Eigen::VectorXd> s_all(nd), al_all(nd);
        for (int i = 0; i < nd; ++i) {
          const auto& js = blk.neigh[i];
          Eigen::RowVectorXd agg = Eigen::RowVectorXd::Zero(dh);
          if (!js.empty()) {
            Eigen::VectorXd s(js.size());
            for (std::size_t m = 0; m < js.size(); ++m) {
              double raw = qs(i) + qd(js[m]);
              s(m) = raw > 0 ? raw : detail::kLeakySlope * raw;
            }
            Eigen::VectorXd e = (s.array() - s.maxCoeff()).exp();
            Eigen::VectorXd alpha = e / e.sum();
            for (std::size_t m = 0; m < js.size(); ++m)
              agg += alpha(m) * p.row(js[m]);
            s_all[i] = std::move(s);
            al_all[i] = std::move(alpha);
          }
          u.row(i) = agg + b.col(0).transpose();
        }
        out.middleCols(k * dh, dh) = activate ? u.cwiseMax(0.0) : u;
        if (cache) {
          cache->p[k] = std::move(p);
          cache->s[k] = std::move(s_all);
          cache->al[k] = std::move(al_all);
          cache->u[k] = std::move(u);
        }
      }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

// Backward pass; accumulates parameter gradients into layer.t[*].grad and
// returns the gradient w.r.t. the raw (pre-dropout) layer input.
inline Matrix layer_backward(const GnnConfig& cfg, int l, GnnLayer& layer,
                             const SampledBlock& blk, const LayerCache& cache,
                             const Matrix& d_out) {
  int nd = blk.dst_count;
  int ns = static_cast<int>(blk.src.size());
  Matrix d_in = Matrix::Zero(ns, cache.in.cols());
  switch (cfg.arch) {
    case Arch::GraphSAGE: {
      const Matrix& w = layer.t[0].value;
      int din = static_cast<int>(cache.in.cols());
      Matrix d_pre =
          cache.activated
              ? d_out.cwiseProduct(
                    (cache.pre.array() > 0.0).cast<double>().matrix())
              : d_out;
      layer.t[0].grad += d_pre.transpose() * cache.concat;
      layer.t[1].grad.col(0) += d_pre.colwise().sum().transpose();
      Matrix d_cat = d_pre * w;
      d_in.topRows(nd) += d_cat.leftCols(din);
      for (int i = 0; i < nd; ++i) {
        if (blk.neigh[i].empty()) continue;
        Eigen::RowVectorXd share =
            d_cat.row(i).tail(din) / static_cast<double>(blk.neigh[i].size());
        for (int j : blk.neigh[i]) d_in.row(j) += share;
      }
      break;
    }
    case Arch::GIN: {
      double eps = layer.t[0].value(0, 0);
      const Matrix& w1 = layer.t[1].value;
      const Matrix& w2 = layer.t[3].value;
      Matrix d2 = cache.activated
                      ? d_out.cwiseProduct(
                            (cache.pre2.array() > 0.0).cast<double>().matrix())
                      : d_out;
      layer.t[3].grad += d2.transpose() * cache.post1;
      layer.t[4].grad.col(0) += d2.colwise().sum().transpose();
      Matrix d1 = (d2 * w2).cwiseProduct(
          (cache.pre1.array() > 0.0).cast<double>().matrix());
      layer.t[1].grad += d1.transpose() * cache.sum;
      layer.t[2].grad.col(0) += d1.colwise().sum().transpose();
      Matrix d_sum = d1 * w1;
      d_sum *= 1.0 / std::sqrt(1.0 + cfg.neighbor_samples[l]);
      double d_eps = 0.0;
      for (int i = 0; i < nd; ++i) {
        d_eps += d_sum.row(i).dot(cache.in.row(i));
        d_in.row(i) += (1.0 + eps) * d_sum.row(i);
        for (int j : blk.neigh[i]) d_in.row(j) += d_sum.row(i);
      }
      layer.t[0].grad(0, 0) += d_eps;
      break;
    }
    case Arch::GAT: {
      int heads = cfg.heads_at(l);
      int dh = cfg.hidden_dim / heads;
      for (int k = 0; k < heads; ++k) {
        const Matrix& w = layer.t[4 * k + 0].value;
        const Matrix& a_src = layer.t[4 * k + 1].value;
        const Matrix& a_dst = layer.t[4 * k + 2].value;
        const Matrix& p = cache.p[k];
        Matrix d_u = d_out.middleCols(k * dh, dh);
        if (cache.activated)
          d_u = d_u.cwiseProduct(
              (cache.u[k].array() > 0.0).cast<double>().matrix());
        layer.t[4 * k + 3].grad.col(0) += d_u.colwise().sum().transpose();
        Matrix d_p = Matrix::Zero(ns, dh);
        Vector d_qs = Vector::Zero(ns), d_qd = Vector::Zero(ns);
        for (int i = 0; i < nd; ++i) {
          const auto& js = blk.neigh[i];
          if (js.empty()) continue;
          const Eigen::VectorXd& alpha = cache.al[k][i];
          const Eigen::VectorXd& s = cache.s[k][i];
          Eigen::VectorXd d_alpha(js.size());
          for (std::size_t m = 0; m < js.size(); ++m) {
            d_alpha(m) = d_u.row(i).dot(p.row(js[m]));
            d_p.row(js[m]) += alpha(m) * d_u.row(i);
          }
          double dot = alpha.dot(d_alpha);
          for (std::size_t m = 0; m < js.size(); ++m) {
            double d_e = alpha(m) * (d_alpha(m) - dot);
            double d_s = d_e * (s(m) > 0 ? 1.0 : detail::kLeakySlope);
            d_qs(i) += d_s;
            d_qd(js[m]) += d_s;
          }
        }
        layer.t[4 * k + 1].grad += p.transpose() * d_qs;
        layer.t[4 * k + 2].grad += p.transpose() * d_qd;
        d_p += d_qs * a_src.col(0).transpose();
        d_p += d_qd * a_dst.col(0).transpose();
        layer.t[4 * k + 0].grad += d_p.transpose() * cache.in;
        d_in += d_p * w;
      }
      break;
    }
  }
  if (cache.drop_mask.size() > 0) d_in = d_in.cwiseProduct(cache.drop_mask);
  return d_in;
}

struct TrainReport {
  int epochs_run = 0;
  double final_train_loss = 0.0;
  double validation_accuracy = 0.0;
  double wall_time_seconds = 0.0;
};

struct ForwardCache {
  std::vector<SampledBlock> blocks;
  std::vector<LayerCache> layers;
  Matrix embeddings;
  Mlp::Cache head_cache;
};

// A message-passing network plus a dense classifier head. Embeddings are the
// output of the last message-passing layer.
struct GnnModel {
  GnnConfig config;
  std::vector<GnnLayer> layers;
  Mlp head;
  // Tensors present in a serialized file but not part of the architecture.
  // Kept so the registry's well-formedness check can report them.
  std::vector<Tensor> extra_tensors;

  std::vector<Tensor*> all_tensors() {
    std::vector<Tensor*> out;
    for (auto& l : layers)
      for (auto& t : l.t) out.push_back(&t);
    for (auto& t : head.tensors()) out.push_back(&t);
    return out;
  }
  std::vector<const Tensor*> all_tensors() const {
    std::vector<const Tensor*> out;
    for (auto& l : layers)
      for (auto& t : l.t) out.push_back(&t);
    for (auto& t : head.tensors()) out.push_back(&t);
    return out;
  }
  void zero_grad() {
    for (auto* t : all_tensors()) t->zero_grad();
  }
};

inline GnnModel build_model(const GnnConfig& cfg) {
  if (cfg.input_dim <= 0 || cfg.num_classes <= 0)
    throw std::invalid_argument("build_model: input_dim/num_classes unset");
  cfg.check();
  GnnModel m;
  m.config = cfg;
  auto rng = make_rng(cfg.seed, "model-init");
  m.layers.resize(cfg.num_layers);
  for (int l = 0; l < cfg.num_layers; ++l)
    detail::init_layer(m.layers[l], cfg, l, rng);
  std::vector<int> dims = {cfg.hidden_dim, cfg.num_classes};
  if (cfg.head_hidden > 0)
    dims = {cfg.hidden_dim, cfg.head_hidden, cfg.num_classes};
  m.head = Mlp(dims, Activation::ReLU, mix_seed(cfg.seed, "head-init"), "head");
  return m;
}

// Embeddings for the dst nodes of pre-sampled blocks.
inline Matrix gnn_embed(const GnnModel& model, const GraphDataset& g,
                        const std::vector<SampledBlock>& blocks,
                        ForwardCache* cache = nullptr, bool training = false,
                        std::mt19937_64* rng = nullptr) {
  const auto& cfg = model.config;
  Matrix h(blocks[0].src.size(), g.features.cols());
  for (std::size_t i = 0; i < blocks[0].src.size(); ++i)
    h.row(i) = g.features.row(blocks[0].src[i]);
  if (cache) cache->layers.resize(cfg.num_layers);
  for (int l = 0; l < cfg.num_layers; ++l) {
    double drop = training ? cfg.dropout : 0.0;
    bool last = l + 1 == cfg.num_layers;
    h = layer_forward(cfg, l, model.layers[l], h, blocks[l],
                      cache ? &cache->layers[l] : nullptr, drop, rng, !last);
  }
  if (cache) cache->embeddings = h;
  return h;
}

// Backward from a gradient on the embeddings down through all layers.
inline void gnn_backward(GnnModel& model, const std::vector<SampledBlock>& blocks,
                         ForwardCache& cache, const Matrix& d_emb) {
  Matrix d = d_emb;
  for (int l = model.config.num_layers - 1; l >= 0; --l)
    d = layer_backward(model.config, l, model.layers[l], blocks[l],
                       cache.layers[l], d);
}

// Deterministic inference: embeddings and logits for `nodes`, with neighbor
// sampling driven entirely by `seed`.
inline std::pair<Matrix, Matrix> forward(const GnnModel& model,
                                         const GraphDataset& g,
                                         const std::vector<int>& nodes,
                                         std::uint64_t seed) {
  if (nodes.empty()) throw std::invalid_argument("forward: empty node set");
  auto rng = make_rng(seed, "forward-sample");
  auto blocks = sample_blocks(g, nodes, model.config.neighbor_samples, rng);
  Matrix emb = gnn_embed(model, g, blocks);
  Matrix logits = model.head.forward(emb);
  return {emb, logits};
}

inline std::vector<int> predict(const GnnModel& model, const GraphDataset& g,
                                const std::vector<int>& nodes,
                                std::uint64_t seed) {
  return argmax_rows(forward(model, g, nodes, seed).second);
}

// Monte-Carlo inference: embeddings and logits averaged over `samples` seeded
// forward passes. Neighbor sampling adds variance to a single pass; averaging
// estimates the expected output while keeping each layer's input distribution
// identical to training. Still deterministic for a fixed seed.
inline std::pair<Matrix, Matrix> forward_mean(const GnnModel& model,
                                              const GraphDataset& g,
                                              const std::vector<int>& nodes,
                                              std::uint64_t seed,
                                              int samples = 16) {
  if (samples < 1) throw std::invalid_argument("forward_mean: samples < 1");
  Matrix emb, logits;
  for (int k = 0; k < samples; ++k) {
    auto [e, l] = forward(model, g, nodes, mix_seed(seed, "mc-forward", k));
    if (k == 0) {
      emb = e;
      logits = l;
    } else {
      emb += e;
      logits += l;
    }
  }
  emb /= samples;
  logits /= samples;
  return {emb, logits};
}

inline std::vector<int> predict_mean(const GnnModel& model,
                                     const GraphDataset& g,
                                     const std::vector<int>& nodes,
                                     std::uint64_t seed, int samples = 16) {
  return argmax_rows(forward_mean(model, g, nodes, seed, samples).second);
}

namespace detail {

inline std::vector<int> labels_for(const GraphDataset& g,
                                   const std::vector<int>& nodes) {
  std::vector<int> out;
  out.reserve(nodes.size());
  for (int v : nodes) out.push_back(g.labels[v]);
  return out;
}

inline double eval_accuracy(const GnnModel& model, const GraphDataset& g,
                            const std::vector<int>& nodes, std::uint64_t seed,
                            double* ce_loss = nullptr) {
  auto logits = forward(model, g, nodes, seed).second;
  auto truth = labels_for(g, nodes);
  if (ce_loss) *ce_loss = softmax_cross_entropy(logits, truth);
  auto pred = argmax_rows(logits);
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / pred.size();
}

inline std::vector<Matrix> snapshot(const GnnModel& m) {
  std::vector<Matrix> out;
  for (const auto* t : m.all_tensors()) out.push_back(t->value);
  return out;
}

inline void restore(GnnModel& m, const std::vector<Matrix>& snap) {
  auto ts = m.all_tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i]->value = snap[i];
}

}  // namespace detail

// One cross-entropy training step over `nodes`; returns the loss.
inline double train_step(GnnModel& model, const GraphDataset& g,
                         const std::vector<int>& nodes, Adam& opt,
                         std::mt19937_64& rng, bool training_mode = true) {
  auto blocks = sample_blocks(g, nodes, model.config.neighbor_samples, rng);
  ForwardCache cache;
  Matrix emb = gnn_embed(model, g, blocks, &cache, training_mode, &rng);
  Matrix logits = model.head.forward(emb, &cache.head_cache);
  Matrix d_logits;
  double loss =
      softmax_cross_entropy(logits, detail::labels_for(g, nodes), &d_logits);
  model.zero_grad();
  Matrix d_emb = model.head.backward(cache.head_cache, d_logits);
  gnn_backward(model, blocks, cache, d_emb);
  opt.step(model.all_tensors());
  return loss;
}

// Full-batch training with per-epoch neighbor resampling and early stopping
// on a 10% validation carve-out of the training nodes (patience <= 0 disables
// early stopping and runs max_epochs).
inline std::pair<GnnModel, TrainReport> train(const GnnConfig& cfg_in,
                                              const GraphDataset& g,
                                              const std::vector<int>& train_nodes) {
  if (train_nodes.empty()) throw std::invalid_argument("train: empty node set");
  {
    int first = g.labels[train_nodes[0]];
    bool multi = false;
    for (int v : train_nodes) multi |= g.labels[v] != first;
    if (!multi) throw std::invalid_argument("train: single-class training set");
  }
  GnnConfig cfg = cfg_in;
  cfg.input_dim = g.feature_dim();
  cfg.num_classes = g.num_classes;
  GnnModel model = build_model(cfg);

  std::vector<int> fit = train_nodes, val;
  bool early = cfg.early_stop_patience > 0;
  if (early) {
    auto rng = make_rng(cfg.seed, "val-carve");
    std::shuffle(fit.begin(), fit.end(), rng);
    std::size_t nv = std::max<std::size_t>(1, fit.size() / 10);
    if (nv < fit.size()) {
      val.assign(fit.end() - nv, fit.end());
      fit.resize(fit.size() - nv);
    } else {
      early = false;
    }
  }

  auto t0 = std::chrono::steady_clock::now();
  Adam opt(cfg.learning_rate);
  TrainReport rep;
  double best_val = -1.0, best_val_loss = 1e300;
  int since_best = 0;
  std::vector<Matrix> best_snap;
  for (int e = 0; e < cfg.max_epochs; ++e) {
    auto rng = make_rng(cfg.seed, "epoch", static_cast<std::uint64_t>(e));
    rep.final_train_loss = train_step(model, g, fit, opt, rng);
    rep.epochs_run = e + 1;
    if (early) {
      // accuracy drives early stopping; CE loss breaks ties so a small
      // validation carve-out saturating at 1.0 does not freeze training
      double vloss = 0.0;
      double acc = detail::eval_accuracy(model, g, val,
                                         mix_seed(cfg.seed, "val-eval", e),
                                         &vloss);
      bool improved =
          acc > best_val || (acc == best_val && vloss < best_val_loss - 1e-6);
      if (improved) {
        best_val = acc;
        best_val_loss = vloss;
        best_snap = detail::snapshot(model);
        since_best = 0;
      } else if (++since_best >= cfg.early_stop_patience) {
        break;
      }
    }
  }
  if (early && !best_snap.empty()) {
    detail::restore(model, best_snap);
    rep.validation_accuracy = best_val;
  } else if (!val.empty()) {
    rep.validation_accuracy = detail::eval_accuracy(
        model, g, val, mix_seed(cfg.seed, "val-eval-final"));
  }
  rep.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {std::move(model), rep};
}

// Global magnitude pruning over every parameter entry. Ties broken by
// flattened position so the zeroed set is reproducible.
inline GnnModel prune(const GnnModel& model, double ratio) {
  if (ratio < 0.0 || ratio > 1.0)
    throw std::invalid_argument("prune: ratio outside [0,1]");
  GnnModel out = model;
  auto tensors = out.all_tensors();
  std::vector<std::pair<double, std::pair<int, int>>> entries;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    const Matrix& v = tensors[ti]->value;
    for (int j = 0; j < v.size(); ++j)
      entries.push_back({std::abs(v.data()[j]),
                         {static_cast<int>(ti), j}});
  }
  std::size_t kill =
      static_cast<std::size_t>(std::floor(ratio * entries.size()));
  std::sort(entries.begin(), entries.end());
  for (std::size_t i = 0; i < kill; ++i) {
    auto [ti, j] = entries[i].second;
    tensors[ti]->value.data()[j] = 0.0;
  }
  return out;
}

// End-to-end fine-tuning: both message-passing layers and the classifier head
// keep training on `nodes` for a fixed number of epochs.
inline GnnModel fine_tune(const GnnModel& model, const GraphDataset& g,
                          const std::vector<int>& nodes, int epochs,
                          std::uint64_t seed = 1) {
  if (epochs <= 0) throw std::invalid_argument("fine_tune: epochs <= 0");
  if (nodes.empty()) throw std::invalid_argument("fine_tune: empty node set");
  GnnModel out = model;
  Adam opt(out.config.learning_rate);
  for (int e = 0; e < epochs; ++e) {
    auto rng = make_rng(seed, "fine-tune", static_cast<std::uint64_t>(e));
    train_step(out, g, nodes, opt, rng);
  }
  return out;
}

}  // namespace gnnfp
