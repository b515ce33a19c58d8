#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "gnnfp/extraction.hpp"
#include "gnnfp/fingerprint.hpp"

using namespace gnnfp;

namespace {

// One target, three extracted surrogates, three independent models, all on
// the same synthetic graph. Built once; several tests share it.
struct Zoo {
  GraphDataset ds;
  DataSplit split;
  GnnModel target;
  std::vector<GnnModel> surrogates;
  std::vector<GnnModel> independents;
};

const Zoo& zoo() {
  static const Zoo z = [] {
    SyntheticGraphSpec spec;
    spec.nodes_per_class = 150;
    spec.num_classes = 2;
    spec.seed = 101;
    GraphDataset ds = generate_synthetic(spec);
    DataSplit split = split_dataset(ds, {0.35, 0.35, 0.2, 0.1}, 102);
    GnnConfig cfg = GnnConfig::defaults(Arch::GraphSAGE);
    cfg.hidden_dim = 32;
    cfg.max_epochs = 80;
    cfg.input_dim = ds.feature_dim();
    cfg.num_classes = ds.num_classes;
    cfg.seed = 103;
    Zoo z;
    z.ds = std::move(ds);
    z.split = std::move(split);
    z.target = train(cfg, z.ds, z.split.target_train).first;
    InProcessOracle oracle(z.target);
    for (int i = 0; i < 3; ++i) {
      AttackConfig acfg;
      acfg.epochs = 100;
      acfg.seed = 200 + i;
      z.surrogates.push_back(run_extraction(oracle, z.ds, acfg));
      GnnConfig icfg = cfg;
      icfg.seed = 300 + i;
      z.independents.push_back(
          train(icfg, z.ds, z.split.surrogate_train).first);
    }
    return z;
  }();
  return z;
}

std::vector<const GnnModel*> ptrs(const std::vector<GnnModel>& v, int from,
                                  int to) {
  std::vector<const GnnModel*> out;
  for (int i = from; i < to; ++i) out.push_back(&v[i]);
  return out;
}

// Separable toy set: positive distance vectors concentrated near zero,
// negative ones far away.
FingerprintTrainingSet gaussian_set(int per_class, double pos_scale,
                                    double neg_scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  FingerprintTrainingSet ts;
  ts.rows.resize(2 * per_class, 8);
  for (int i = 0; i < 2 * per_class; ++i) {
    double s = i < per_class ? pos_scale : neg_scale;
    for (int j = 0; j < 8; ++j) {
      double d = s * g(rng);
      ts.rows(i, j) = d * d;
    }
    ts.labels.push_back(i < per_class ? 1 : 0);
    ts.provenance.push_back({"t", "o", i, i < per_class ? "surrogate" : "independent"});
  }
  return ts;
}

}  // namespace

TEST_CASE("distance_vector is the element-wise squared difference") {
  Eigen::RowVectorXd a(2), b(2);
  a << 0.0, 3.0;
  b << 4.0, 0.0;
  Vector dv = distance_vector(a, b);
  CHECK(dv(0) == doctest::Approx(16.0));
  CHECK(dv(1) == doctest::Approx(9.0));
  CHECK(distance_vector(a, a).isZero());
  CHECK(distance_vector(a, b) == distance_vector(b, a));
  Eigen::RowVectorXd c(3);
  c.setZero();
  CHECK_THROWS_WITH_AS(distance_vector(a, c), "embedding dimension mismatch",
                       std::invalid_argument);
}

TEST_CASE("distance_vector is nonnegative on random input") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::RowVectorXd a(6), b(6);
    for (int j = 0; j < 6; ++j) {
      a(j) = g(rng);
      b(j) = g(rng);
    }
    Vector dv = distance_vector(a, b);
    CHECK(dv.minCoeff() >= 0.0);
    CHECK(dv.sum() == doctest::Approx((a - b).squaredNorm()));
  }
}

TEST_CASE("training set has |d_v| rows per model with the right labels") {
  const Zoo& z = zoo();
  auto d_v = z.split.verification;
  auto ts = build_training_set(z.target, ptrs(z.surrogates, 0, 2),
                               ptrs(z.independents, 0, 3), z.ds, d_v, 9);
  int n = static_cast<int>(d_v.size());
  REQUIRE(ts.rows.rows() == 5 * n);
  REQUIRE(static_cast<int>(ts.labels.size()) == 5 * n);
  int pos = 0;
  for (int y : ts.labels) pos += y;
  CHECK(pos == 2 * n);
  CHECK(ts.provenance.front().kind == "surrogate");
  CHECK(ts.provenance.back().kind == "independent");
  CHECK(ts.provenance.front().node_id == d_v.front());
  CHECK(ts.rows.cols() == z.target.config.hidden_dim);
  CHECK(ts.rows.minCoeff() >= 0.0);

  CHECK_THROWS_AS(build_training_set(z.target, {}, ptrs(z.independents, 0, 1),
                                     z.ds, d_v, 9),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_training_set(z.target, ptrs(z.surrogates, 0, 1), {},
                                     z.ds, d_v, 9),
                  std::invalid_argument);
}

TEST_CASE("surrogate distance vectors sit closer to zero than independents") {
  const Zoo& z = zoo();
  auto ts = build_training_set(z.target, ptrs(z.surrogates, 0, 3),
                               ptrs(z.independents, 0, 3), z.ds,
                               z.split.verification, 9);
  double pos_mean = 0, neg_mean = 0;
  int np = 0, nn = 0;
  for (int i = 0; i < ts.rows.rows(); ++i) {
    if (ts.labels[i]) {
      pos_mean += ts.rows.row(i).sum();
      ++np;
    } else {
      neg_mean += ts.rows.row(i).sum();
      ++nn;
    }
  }
  CHECK(pos_mean / np < neg_mean / nn);
}

TEST_CASE("cross-validation on a separable set is near perfect") {
  auto ts = gaussian_set(100, 0.05, 2.0, 13);
  auto csim = train_csim(ts, 14);
  CHECK(csim.cv_accuracy >= 0.99);
  // probabilities land on the correct sides
  Vector p = csim.pair_probability(ts.rows);
  int hit = 0;
  for (int i = 0; i < p.size(); ++i)
    hit += (p(i) > 0.5) == (ts.labels[i] == 1);
  CHECK(static_cast<double>(hit) / p.size() >= 0.99);
}

TEST_CASE("cross-validation on shuffled labels hovers at chance") {
  auto ts = gaussian_set(100, 0.05, 2.0, 15);
  std::shuffle(ts.labels.begin(), ts.labels.end(), std::mt19937_64(16));
  auto csim = train_csim(ts, 17);
  CHECK(csim.cv_accuracy > 0.35);
  CHECK(csim.cv_accuracy < 0.65);
}

TEST_CASE("degenerate training sets are rejected") {
  FingerprintTrainingSet empty;
  CHECK_THROWS_AS(train_csim(empty, 1), std::invalid_argument);
  auto ts = gaussian_set(10, 0.05, 2.0, 18);
  std::fill(ts.labels.begin(), ts.labels.end(), 1);
  CHECK_THROWS_WITH_AS(train_csim(ts, 1),
                       "train_csim: single-label training set",
                       std::invalid_argument);
}

TEST_CASE("end to end: held-out surrogate flagged, independent cleared") {
  const Zoo& z = zoo();
  auto d_v = z.split.verification;
  auto ts = build_training_set(z.target, ptrs(z.surrogates, 0, 2),
                               ptrs(z.independents, 0, 2), z.ds, d_v, 9);
  auto csim = train_csim(ts, 10);
  CHECK(csim.cv_accuracy > 0.8);

  auto v_sur = verify(csim, z.target, z.surrogates[2], z.ds, d_v, 11);
  auto v_ind = verify(csim, z.target, z.independents[2], z.ds, d_v, 11);
  CAPTURE(v_sur.similar_fraction);
  CAPTURE(v_ind.similar_fraction);
  CHECK(v_sur.surrogate);
  CHECK_FALSE(v_ind.surrogate);
  CHECK(v_sur.pair_count == static_cast<int>(d_v.size()));
  CHECK(v_sur.per_node_decisions.size() == d_v.size());

  // the target is trivially similar to itself
  auto v_self = verify(csim, z.target, z.target, z.ds, d_v, 11);
  CHECK(v_self.similar_fraction == doctest::Approx(1.0));
  CHECK(v_self.surrogate);

  auto j = v_sur.to_json();
  CHECK(j.at("verdict") == "surrogate");
  CHECK(j.at("pair_count") == v_sur.pair_count);
}

TEST_CASE("pair_threshold drives per-node decisions") {
  const Zoo& z = zoo();
  auto d_v = z.split.verification;
  auto ts = build_training_set(z.target, ptrs(z.surrogates, 0, 2),
                               ptrs(z.independents, 0, 2), z.ds, d_v, 9);
  auto csim = train_csim(ts, 10);
  csim.pair_threshold = 1.1;  // nothing clears this bar
  auto none = verify(csim, z.target, z.surrogates[2], z.ds, d_v, 11);
  CHECK(none.similar_fraction == 0.0);
  CHECK_FALSE(none.surrogate);
  csim.pair_threshold = -0.1;  // everything does
  auto all = verify(csim, z.target, z.independents[2], z.ds, d_v, 11);
  CHECK(all.similar_fraction == 1.0);
  CHECK(all.surrogate);
}

TEST_CASE("robust training set adds pruned-surrogate positives") {
  const Zoo& z = zoo();
  auto d_v = z.split.verification;
  auto base = build_training_set(z.target, ptrs(z.surrogates, 0, 2),
                                 ptrs(z.independents, 0, 2), z.ds, d_v, 9);
  auto ts = build_robust_training_set(base, z.target, ptrs(z.surrogates, 0, 2),
                                      {0.2, 0.4}, z.ds, d_v, 9);
  int n = static_cast<int>(d_v.size());
  CHECK(ts.rows.rows() == base.rows.rows() + 4 * n);
  int pruned = 0;
  for (const auto& pr : ts.provenance) pruned += pr.kind == "pruned-surrogate";
  CHECK(pruned == 4 * n);
  for (std::size_t i = base.labels.size(); i < ts.labels.size(); ++i)
    CHECK(ts.labels[i] == 1);

  CHECK_THROWS_AS(build_robust_training_set(base, z.target,
                                            ptrs(z.surrogates, 0, 1), {0.5},
                                            z.ds, d_v, 9),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_robust_training_set(base, z.target,
                                            ptrs(z.surrogates, 0, 1), {0.0},
                                            z.ds, d_v, 9),
                  std::invalid_argument);
}

TEST_CASE("classifier round-trips through JSON and disk") {
  auto ts = gaussian_set(50, 0.05, 2.0, 19);
  auto csim = train_csim(ts, 20);
  auto back = csim_from_json(csim_to_json(csim));
  CHECK(back.cv_accuracy == csim.cv_accuracy);
  CHECK(back.pair_threshold == csim.pair_threshold);
  Matrix probe = ts.rows.topRows(10);
  CHECK(back.pair_probability(probe) == csim.pair_probability(probe));

  auto dir = std::filesystem::temp_directory_path() / "gnnfp_fp_test";
  std::filesystem::create_directories(dir);
  save_csim(csim, dir / "csim.json");
  auto loaded = load_csim(dir / "csim.json");
  CHECK(loaded.pair_probability(probe) == csim.pair_probability(probe));
  CHECK_THROWS_AS(load_csim(dir / "missing.json"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training set CSV has a header plus one line per row") {
  auto ts = gaussian_set(5, 0.05, 2.0, 21);
  auto dir = std::filesystem::temp_directory_path() / "gnnfp_fp_csv";
  std::filesystem::create_directories(dir);
  save_training_set(ts, dir / "ts.csv");
  std::ifstream in(dir / "ts.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line.substr(0, 3) == "d0,");
  CHECK(line.find("label,target_id,other_id,node_id,kind") != std::string::npos);
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == ts.rows.rows());
  std::filesystem::remove_all(dir);
}
