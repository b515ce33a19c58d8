#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnnfp/rng.hpp"

namespace gnnfp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Adjacency kept as sorted neighbor lists; graphs here are undirected,
// binary, and small enough that an edge set per node is the simplest
// faithful representation.
struct GraphDataset {
  int node_count = 0;
  std::vector<std::vector<int>> neighbors;  // sorted, no self loops
  Matrix features;                          // node_count x feature_dim
  std::vector<int> labels;
  int num_classes = 0;

  int feature_dim() const { return static_cast<int>(features.cols()); }

  bool has_edge(int u, int v) const {
    const auto& nu = neighbors[u];
    return std::binary_search(nu.begin(), nu.end(), v);
  }

  std::size_t edge_count() const {  // undirected edges
    std::size_t d = 0;
    for (const auto& n : neighbors) d += n.size();
    return d / 2;
  }

  void validate() const {
    if (static_cast<int>(neighbors.size()) != node_count ||
        features.rows() != node_count ||
        static_cast<int>(labels.size()) != node_count)
      throw std::invalid_argument("graph: inconsistent node_count");
    for (int v = 0; v < node_count; ++v) {
      for (int u : neighbors[v]) {
        if (u < 0 || u >= node_count)
          throw std::invalid_argument("graph: edge endpoint out of range");
        if (u == v) throw std::invalid_argument("graph: self loop");
        if (!has_edge(u, v))
          throw std::invalid_argument("graph: adjacency not symmetric");
      }
    }
    for (int y : labels)
      if (y < 0 || y >= num_classes)
        throw std::invalid_argument("graph: label out of range");
  }
};

struct DataSplit {
  std::vector<int> target_train;
  std::vector<int> surrogate_train;
  std::vector<int> test;
  std::vector<int> verification;  // D_v
};

struct SyntheticGraphSpec {
  int nodes_per_class = 50;
  int num_classes = 2;
  double intra_edge_prob = 0.2;
  double inter_edge_prob = 0.01;
  int feature_dim = 8;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void add_edge(std::vector<std::set<int>>& adj, int u, int v) {
  if (u == v) return;
  adj[u].insert(v);
  adj[v].insert(u);
}

inline std::vector<std::vector<int>> finalize_adj(
    std::vector<std::set<int>>& adj) {
  std::vector<std::vector<int>> out(adj.size());
  for (std::size_t i = 0; i < adj.size(); ++i)
    out[i].assign(adj[i].begin(), adj[i].end());
  return out;
}

inline std::vector<std::string> split_fields(const std::string& line,
                                             char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// Directory layout: <name>/edges.tsv (two columns, node ids), features.csv
// and labels.csv (headerless, one row per node id in order).
inline GraphDataset load_dataset(const std::filesystem::path& dir) {
  auto edges_path = dir / "edges.tsv";
  auto feat_path = dir / "features.csv";
  auto label_path = dir / "labels.csv";
  for (const auto& p : {edges_path, feat_path, label_path})
    if (!std::filesystem::exists(p))
      throw std::runtime_error("missing file: " + p.string());

  GraphDataset ds;
  // features
  {
    std::ifstream in(feat_path);
    std::string line;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto fields = detail::split_fields(line, ',');
      std::vector<double> row;
      row.reserve(fields.size());
      for (const auto& f : fields) row.push_back(std::stod(f));
      if (!rows.empty() && rows[0].size() != row.size())
        throw std::runtime_error("features.csv: ragged rows");
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("features.csv: empty");
    ds.node_count = static_cast<int>(rows.size());
    ds.features.resize(ds.node_count, static_cast<int>(rows[0].size()));
    for (int i = 0; i < ds.node_count; ++i)
      for (int j = 0; j < ds.features.cols(); ++j)
        ds.features(i, j) = rows[i][j];
  }
  // labels
  {
    std::ifstream in(label_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::size_t pos = 0;
      int y = std::stoi(line, &pos);
      while (pos < line.size() &&
             (line[pos] == '\r' || std::isspace(static_cast<unsigned char>(line[pos]))))
        ++pos;
      if (pos != line.size())
        throw std::runtime_error("labels.csv: non-integer label '" + line + "'");
      ds.labels.push_back(y);
    }
    if (static_cast<int>(ds.labels.size()) != ds.node_count)
      throw std::runtime_error("labels.csv: row count != features row count");
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  }
  // edges (symmetrized)
  {
    std::ifstream in(edges_path);
    std::string line;
    std::vector<std::set<int>> adj(ds.node_count);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto fields = detail::split_fields(line, '\t');
      if (fields.size() < 2) throw std::runtime_error("edges.tsv: bad row");
      int u = std::stoi(fields[0]);
      int v = std::stoi(fields[1]);
      if (u < 0 || u >= ds.node_count || v < 0 || v >= ds.node_count)
        throw std::runtime_error("edges.tsv: unknown node id " +
                                 std::to_string(std::max(u, v)));
      detail::add_edge(adj, u, v);
    }
    ds.neighbors = detail::finalize_adj(adj);
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const GraphDataset& ds,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "edges.tsv");
    for (int u = 0; u < ds.node_count; ++u)
      for (int v : ds.neighbors[u])
        if (u < v) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(dir / "features.csv");
    out.precision(17);
    for (int i = 0; i < ds.node_count; ++i) {
      for (int j = 0; j < ds.features.cols(); ++j) {
        if (j) out << ',';
        out << ds.features(i, j);
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "labels.csv");
    for (int y : ds.labels) out << y << '\n';
  }
}

// Floor rounding on the first three fractions; all remainder nodes land in
// the verification split so the train splits stay exactly at their fraction.
inline DataSplit split_dataset(const GraphDataset& ds,
                               const std::array<double, 4>& fractions,
                               std::uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2] + fractions[3];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");
  std::vector<int> order(ds.node_count);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, "split_dataset");
  std::shuffle(order.begin(), order.end(), rng);

  auto n = static_cast<std::size_t>(ds.node_count);
  std::size_t n_t = static_cast<std::size_t>(std::floor(fractions[0] * n));
  std::size_t n_s = static_cast<std::size_t>(std::floor(fractions[1] * n));
  std::size_t n_test = static_cast<std::size_t>(std::floor(fractions[2] * n));

  DataSplit sp;
  auto it = order.begin();
  sp.target_train.assign(it, it + n_t);
  it += n_t;
  sp.surrogate_train.assign(it, it + n_s);
  it += n_s;
  sp.test.assign(it, it + n_test);
  it += n_test;
  sp.verification.assign(it, order.end());
  return sp;
}

inline GraphDataset generate_synthetic(const SyntheticGraphSpec& spec) {
  if (spec.intra_edge_prob <= spec.inter_edge_prob)
    throw std::invalid_argument("synthetic: intra_edge_prob must exceed inter");
  if (spec.intra_edge_prob < 0 || spec.intra_edge_prob > 1 ||
      spec.inter_edge_prob < 0 || spec.inter_edge_prob > 1)
    throw std::invalid_argument("synthetic: probabilities outside [0,1]");
  if (spec.feature_noise < 0)
    throw std::invalid_argument("synthetic: negative feature_noise");

  GraphDataset ds;
  ds.node_count = spec.nodes_per_class * spec.num_classes;
  ds.num_classes = spec.num_classes;
  ds.labels.resize(ds.node_count);
  for (int v = 0; v < ds.node_count; ++v)
    ds.labels[v] = v / spec.nodes_per_class;

  auto rng = make_rng(spec.seed, "synthetic");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::set<int>> adj(ds.node_count);
  for (int u = 0; u < ds.node_count; ++u)
    for (int v = u + 1; v < ds.node_count; ++v) {
      double p = ds.labels[u] == ds.labels[v] ? spec.intra_edge_prob
                                              : spec.inter_edge_prob;
      if (unif(rng) < p) detail::add_edge(adj, u, v);
    }
  ds.neighbors = detail::finalize_adj(adj);

  // Class mean = scaled one-hot, plus isotropic Gaussian noise.
  std::normal_distribution<double> gauss(0.0, 1.0);
  ds.features = Matrix::Zero(ds.node_count, spec.feature_dim);
  for (int v = 0; v < ds.node_count; ++v) {
    ds.features(v, ds.labels[v] % spec.feature_dim) += 1.0;
    for (int j = 0; j < spec.feature_dim; ++j)
      ds.features(v, j) += spec.feature_noise * gauss(rng);
  }
  return ds;
}

// Symmetric kNN graph: u-v connected iff v is among u's k nearest neighbors
// (Euclidean) or vice versa. Ties broken by lower node index.
inline std::vector<std::vector<int>> knn_graph(const Matrix& features, int k) {
  int n = static_cast<int>(features.rows());
  if (k < 1 || k >= n) throw std::invalid_argument("knn_graph: k out of range");
  std::vector<std::set<int>> adj(n);
  std::vector<std::pair<double, int>> dist;
  dist.reserve(n - 1);
  for (int u = 0; u < n; ++u) {
    dist.clear();
    for (int v = 0; v < n; ++v) {
      if (v == u) continue;
      dist.emplace_back((features.row(u) - features.row(v)).squaredNorm(), v);
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int i = 0; i < k; ++i) detail::add_edge(adj, u, dist[i].second);
  }
  return detail::finalize_adj(adj);
}

// Induced subgraph over `nodes` (in the given order), relabeled 0..n-1.
inline GraphDataset induced_subgraph(const GraphDataset& ds,
                                     const std::vector<int>& nodes) {
  GraphDataset sub;
  sub.node_count = static_cast<int>(nodes.size());
  sub.num_classes = ds.num_classes;
  std::vector<int> index(ds.node_count, -1);
  for (int i = 0; i < sub.node_count; ++i) index[nodes[i]] = i;
  sub.features.resize(sub.node_count, ds.features.cols());
  sub.labels.resize(sub.node_count);
  sub.neighbors.resize(sub.node_count);
  for (int i = 0; i < sub.node_count; ++i) {
    sub.features.row(i) = ds.features.row(nodes[i]);
    sub.labels[i] = ds.labels[nodes[i]];
    for (int u : ds.neighbors[nodes[i]])
      if (index[u] >= 0) sub.neighbors[i].push_back(index[u]);
    std::sort(sub.neighbors[i].begin(), sub.neighbors[i].end());
  }
  return sub;
}

}  // namespace gnnfp
