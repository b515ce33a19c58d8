#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "gnnfp/plots.hpp"

using namespace gnnfp;

namespace {

Matrix gaussian_blob(int n, int dim, double cx, double spread,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(n, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = cx + spread * g(rng);
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("PCA recovers the dominant axis") {
  // points on a line in 5-D, plus a little noise on other axes
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Matrix x(100, 5);
  for (int i = 0; i < 100; ++i) {
    double t = i * 0.1;
    for (int j = 0; j < 5; ++j) x(i, j) = 0.01 * g(rng);
    x(i, 0) += t;
    x(i, 1) += 2.0 * t;
  }
  Matrix p = pca_2d(x);
  REQUIRE(p.cols() == 2);
  // first component captures nearly all the variance
  double v0 = (p.col(0).array() - p.col(0).mean()).square().sum();
  double v1 = (p.col(1).array() - p.col(1).mean()).square().sum();
  CHECK(v0 > 100.0 * v1);
  // deterministic: no RNG involved
  CHECK(pca_2d(x) == p);
}

TEST_CASE("t-SNE keeps well-separated blobs apart") {
  Matrix a = gaussian_blob(30, 6, 0.0, 0.1, 2);
  Matrix b = gaussian_blob(30, 6, 10.0, 0.1, 3);
  Matrix x(60, 6);
  x << a, b;
  Matrix y = tsne_2d(x, 4, 10.0, 250);
  REQUIRE(y.rows() == 60);
  Eigen::RowVector2d ca = y.topRows(30).colwise().mean();
  Eigen::RowVector2d cb = y.bottomRows(30).colwise().mean();
  // every point lands nearer its own cluster's centroid
  int correct = 0;
  for (int i = 0; i < 60; ++i) {
    bool in_a = (y.row(i) - ca).norm() < (y.row(i) - cb).norm();
    correct += in_a == (i < 30);
  }
  CHECK(correct >= 58);
  CHECK((ca - cb).norm() > 1.0);
  CHECK(tsne_2d(x, 4, 10.0, 250) == y);  // seeded, deterministic
}

TEST_CASE("projection plot writes SVG and CSV that agree") {
  auto dir = std::filesystem::temp_directory_path() / "gnnfp_plots_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::vector<EmbeddingSet> sets{{"target", gaussian_blob(20, 4, 0.0, 1.0, 5)},
                                 {"suspect", gaussian_blob(15, 4, 3.0, 1.0, 6)}};
  auto pts = emit_projection_plot(sets, ProjectionMethod::PCA,
                                  dir / "proj.svg", dir / "proj.csv");
  REQUIRE(pts.size() == 35);
  CHECK(pts[0].label == "target");
  CHECK(pts[34].label == "suspect");

  auto svg = slurp(dir / "proj.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("target") != std::string::npos);

  std::ifstream csv(dir / "proj.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "x,y,label");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 35);
  std::filesystem::remove_all(dir);
}

TEST_CASE("projection of fewer than 2 points is rejected") {
  auto dir = std::filesystem::temp_directory_path();
  std::vector<EmbeddingSet> one{{"x", Matrix::Zero(1, 3)}};
  CHECK_THROWS_AS(emit_projection_plot(one, ProjectionMethod::PCA,
                                       dir / "no.svg", dir / "no.csv"),
                  std::invalid_argument);
}

TEST_CASE("distance histogram records every raw distance") {
  auto dir = std::filesystem::temp_directory_path() / "gnnfp_plots_hist";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::vector<DistanceSeries> series{{"surrogate", {0.1, 0.2, 0.15}},
                                     {"independent", {1.0, 1.2}}};
  emit_distance_histogram(series, dir / "h.svg", dir / "h.csv");
  auto csv = slurp(dir / "h.csv");
  CHECK(csv.rfind("label,distance\n", 0) == 0);
  CHECK(csv.find("surrogate,") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  auto svg = slurp(dir / "h.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK_THROWS_AS(emit_distance_histogram({}, dir / "x.svg", dir / "x.csv"),
                  std::invalid_argument);
  std::filesystem::remove_all(dir);
}
