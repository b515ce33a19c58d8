#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnnfp/nn.hpp"
#include "gnnfp/rng.hpp"

namespace gnnfp {

enum class ProjectionMethod { PCA, TSNE };

struct EmbeddingSet {
  std::string label;
  Matrix rows;
};

inline Matrix pca_2d(const Matrix& x) {
  Eigen::RowVectorXd mean = x.colwise().mean();
  Matrix c = x.rowwise() - mean;
  Matrix cov = (c.transpose() * c) / std::max<double>(1.0, x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  int d = static_cast<int>(cov.rows());
  Matrix basis(d, 2);
  basis.col(0) = es.eigenvectors().col(d - 1);
  if (d > 1)
    basis.col(1) = es.eigenvectors().col(d - 2);
  else
    basis.col(1).setZero();
  // deterministic sign convention
  for (int j = 0; j < 2; ++j) {
    Eigen::Index imax;
    basis.col(j).cwiseAbs().maxCoeff(&imax);
    if (basis(imax, j) < 0) basis.col(j) *= -1.0;
  }
  return c * basis;
}

// Exact (O(n^2)) t-SNE; adequate for desk-scale embedding sets.
inline Matrix tsne_2d(const Matrix& x, std::uint64_t seed,
                      double perplexity = 30.0, int iters = 300) {
  int n = static_cast<int>(x.rows());
  perplexity = std::min(perplexity, (n - 1) / 3.0);
  Matrix d2(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();

  Matrix p = Matrix::Zero(n, n);
  double target_entropy = std::log(std::max(2.0, perplexity));
  for (int i = 0; i < n; ++i) {
    double lo = 1e-12, hi = 1e12, beta = 1.0;
    Eigen::VectorXd pr(n);
    for (int it = 0; it < 50; ++it) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        pr(j) = j == i ? 0.0 : std::exp(-beta * d2(i, j));
        sum += pr(j);
      }
      if (sum <= 0) break;
      pr /= sum;
      double h = 0.0;
      for (int j = 0; j < n; ++j)
        if (pr(j) > 1e-12) h -= pr(j) * std::log(pr(j));
      if (h > target_entropy)
        lo = beta, beta = hi > 1e11 ? beta * 2 : (beta + hi) / 2;
      else
        hi = beta, beta = (lo + beta) / 2;
    }
    p.row(i) = pr.transpose();
  }
  p = (p + p.transpose()) / (2.0 * n);
  p = p.cwiseMax(1e-12);

  auto rng = make_rng(seed, "tsne-init");
  std::normal_distribution<double> gauss(0.0, 1e-4);
  Matrix y(n, 2), vel = Matrix::Zero(n, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j) y(i, j) = gauss(rng);
  double lr = 100.0;
  for (int it = 0; it < iters; ++it) {
    Matrix num(n, n);
    double z = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        z += num(i, j);
      }
    double exaggeration = it < 50 ? 4.0 : 1.0;
    Matrix grad = Matrix::Zero(n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        double q = std::max(num(i, j) / z, 1e-12);
        double coef = 4.0 * (exaggeration * p(i, j) - q) * num(i, j);
        grad.row(i) += coef * (y.row(i) - y.row(j));
      }
    double momentum = it < 50 ? 0.5 : 0.8;
    vel = momentum * vel - lr * grad;
    y += vel;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

struct ProjectedPoint {
  double x, y;
  std::string label;
};

// 2-D scatter of one or more embedding sets, emitted as SVG + CSV. The CSV
// carries the raw 2-D points for headless assertions.
inline std::vector<ProjectedPoint> emit_projection_plot(
    const std::vector<EmbeddingSet>& sets, ProjectionMethod method,
    const std::filesystem::path& svg_path, const std::filesystem::path& csv_path,
    std::uint64_t seed = 0) {
  Eigen::Index total = 0;
  for (const auto& s : sets) total += s.rows.rows();
  if (total < 2) throw std::invalid_argument("projection: fewer than 2 points");
  Matrix stacked(total, sets[0].rows.cols());
  Eigen::Index at = 0;
  for (const auto& s : sets) {
    stacked.middleRows(at, s.rows.rows()) = s.rows;
    at += s.rows.rows();
  }
  Matrix p2 = method == ProjectionMethod::PCA ? pca_2d(stacked)
                                              : tsne_2d(stacked, seed);
  std::vector<ProjectedPoint> pts;
  at = 0;
  for (const auto& s : sets)
    for (Eigen::Index i = 0; i < s.rows.rows(); ++i, ++at)
      pts.push_back({p2(at, 0), p2(at, 1), s.label});

  {
    std::ofstream csv(csv_path);
    csv.precision(17);
    csv << "x,y,label\n";
    for (const auto& p : pts) csv << p.x << ',' << p.y << ',' << p.label << '\n';
  }
  {
    const char* palette[] = {"#1f6fb2", "#d1495b", "#3a9d6c",
                             "#8e6fb2", "#c98a2b", "#4f4f4f"};
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& p : pts) {
      xmin = std::min(xmin, p.x), xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y), ymax = std::max(ymax, p.y);
    }
    double sx = xmax > xmin ? 560.0 / (xmax - xmin) : 1.0;
    double sy = ymax > ymin ? 560.0 / (ymax - ymin) : 1.0;
    std::ofstream svg(svg_path);
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='600' height='600'>\n";
    std::vector<std::string> seen;
    for (const auto& p : pts) {
      std::size_t ci =
          std::find(seen.begin(), seen.end(), p.label) - seen.begin();
      if (ci == seen.size()) seen.push_back(p.label);
      svg << "<circle cx='" << 20 + (p.x - xmin) * sx << "' cy='"
          << 580 - (p.y - ymin) * sy << "' r='3' fill='" << palette[ci % 6]
          << "' fill-opacity='0.6'/>\n";
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
      svg << "<text x='10' y='" << 15 + 16 * i << "' fill='" << palette[i % 6]
          << "' font-size='12'>" << seen[i] << "</text>\n";
    svg << "</svg>\n";
  }
  return pts;
}

struct DistanceSeries {
  std::string label;
  std::vector<double> distances;  // per-node Euclidean distances to target
};

// Per-node Euclidean distance histograms between a target's embeddings and
// each other model's, as SVG + CSV of raw distances.
inline void emit_distance_histogram(const std::vector<DistanceSeries>& series,
                                    const std::filesystem::path& svg_path,
                                    const std::filesystem::path& csv_path,
                                    int bins = 20) {
  if (series.empty()) throw std::invalid_argument("histogram: no series");
  {
    std::ofstream csv(csv_path);
    csv.precision(17);
    csv << "label,distance\n";
    for (const auto& s : series)
      for (double d : s.distances) csv << s.label << ',' << d << '\n';
  }
  double mx = 0.0;
  for (const auto& s : series)
    for (double d : s.distances) mx = std::max(mx, d);
  if (mx <= 0.0) mx = 1.0;
  const char* palette[] = {"#1f6fb2", "#d1495b", "#3a9d6c", "#8e6fb2"};
  std::ofstream svg(svg_path);
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='400'>\n";
  double bw = 600.0 / bins;
  for (std::size_t si = 0; si < series.size(); ++si) {
    std::vector<int> counts(bins, 0);
    for (double d : series[si].distances) {
      int b = std::min(bins - 1, static_cast<int>(d / mx * bins));
      counts[b]++;
    }
    int cmax = *std::max_element(counts.begin(), counts.end());
    if (cmax == 0) cmax = 1;
    for (int b = 0; b < bins; ++b) {
      double h = 340.0 * counts[b] / cmax;
      svg << "<rect x='" << 20 + b * bw + si * (bw / series.size())
          << "' y='" << 380 - h << "' width='" << bw / series.size() - 1
          << "' height='" << h << "' fill='" << palette[si % 4]
          << "' fill-opacity='0.7'/>\n";
    }
    svg << "<text x='10' y='" << 15 + 16 * si << "' fill='" << palette[si % 4]
        << "' font-size='12'>" << series[si].label << "</text>\n";
  }
  svg << "</svg>\n";
}

}  // namespace gnnfp
