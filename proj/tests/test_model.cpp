#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moseslab/errors.hpp"
#include "moseslab/lottery.hpp"
#include "moseslab/model.hpp"
#include "moseslab/rng.hpp"
#include "test_util.hpp"

using namespace moseslab;
using moseslab::testutil::expect_error;
using moseslab::testutil::repo_path;

namespace {

Eigen::MatrixXd random_features(int rows, int cols, std::uint64_t seed) {
  RngStream rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform01();
  return m;
}

RankingBatch random_batch(int rows, int dim, std::uint64_t seed) {
  RankingBatch batch;
  batch.task_id = "t";
  batch.features = random_features(rows, dim, seed);
  RngStream rng(seed + 1);
  batch.labels = Eigen::VectorXd(rows);
  for (int r = 0; r < rows; ++r) batch.labels(r) = 0.1 + rng.uniform01();
  return batch;
}

// Flat parameter walker mirroring the canonical order.
std::vector<double*> flat_params(CostModelParams& p) {
  std::vector<double*> out;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    for (Eigen::Index i = 0; i < p.w[l].size(); ++i) out.push_back(p.w[l].data() + i);
    for (Eigen::Index i = 0; i < p.b[l].size(); ++i) out.push_back(p.b[l].data() + i);
  }
  return out;
}

std::vector<double> flat_grads(const GradientSet& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.gw.size(); ++l) {
    for (Eigen::Index i = 0; i < g.gw[l].size(); ++i) out.push_back(*(g.gw[l].data() + i));
    for (Eigen::Index i = 0; i < g.gb[l].size(); ++i) out.push_back(*(g.gb[l].data() + i));
  }
  return out;
}

// Rectifier kinks make central differences invalid near zero preactivations,
// so trials whose forward pass grazes a kink are rejected and redrawn.
bool grazes_kink(const CostModelParams& p, const Eigen::MatrixXd& rows, double margin) {
  Eigen::MatrixXd z1 = rows * p.w[0].transpose();
  z1.rowwise() += p.b[0].transpose();
  if (z1.array().abs().minCoeff() < margin) return true;
  Eigen::MatrixXd h1 = z1.cwiseMax(0.0);
  Eigen::MatrixXd z2 = h1 * p.w[1].transpose();
  z2.rowwise() += p.b[1].transpose();
  return z2.array().abs().minCoeff() < margin;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter count for the canonical shape") {
  const CostModelParams p = init_random({16, 512, 512, 1}, 0);
  CHECK(param_count(p) == 16 * 512 + 512 + 512 * 512 + 512 + 512 + 1);
  CHECK(param_count(p) == 271873);
}

TEST_CASE("init bounds biases and determinism") {
  const CostModelParams a = init_random({16, 512, 512, 1}, 4);
  const CostModelParams b = init_random({16, 512, 512, 1}, 4);
  const CostModelParams c = init_random({16, 512, 512, 1}, 5);
  for (int l = 0; l < 3; ++l) {
    CHECK(a.b[l].isZero(0.0));
    CHECK(a.mw[l].isZero(0.0));
    CHECK(a.mb[l].isZero(0.0));
    const double bound = std::sqrt(6.0 / (a.w[l].cols() + a.w[l].rows()));
    CHECK(a.w[l].array().abs().maxCoeff() <= bound);
    CHECK((a.w[l] - b.w[l]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK((a.w[0] - c.w[0]).cwiseAbs().maxCoeff() > 0.0);
  const double mean = a.w[0].mean();
  CHECK(std::abs(mean) < 0.01);
}

TEST_CASE("init rejects non-canonical arity") {
  expect_error(ErrorCode::BadDims, [] { init_random({16, 512, 1}, 0); });
  expect_error(ErrorCode::BadDims, [] { init_random({16, 512, 512, 2}, 0); });
  expect_error(ErrorCode::BadDims, [] { init_random({0, 512, 512, 1}, 0); });
}

TEST_CASE("predict zero params zero input") {
  CostModelParams p = init_random({4, 8, 8, 1}, 1);
  for (auto& w : p.w) w.setZero();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 4);
  const Eigen::VectorXd s = predict(p, x);
  REQUIRE(s.size() == 3);
  CHECK(s.isZero(0.0));
}

TEST_CASE("predict purity on duplicated rows") {
  const CostModelParams p = init_random({4, 8, 8, 1}, 2);
  Eigen::MatrixXd x = random_features(2, 4, 9);
  x.row(1) = x.row(0);
  const Eigen::VectorXd s = predict(p, x);
  CHECK(s(0) == s(1));
}

TEST_CASE("predict matches a hand forward pass") {
  const CostModelParams p = init_random({4, 8, 8, 1}, 3);
  const Eigen::MatrixXd x = random_features(5, 4, 10);
  const Eigen::VectorXd s = predict(p, x);
  for (int r = 0; r < 5; ++r) {
    Eigen::VectorXd h = x.row(r).transpose();
    h = ((p.w[0] * h + p.b[0]).array().max(0.0)).matrix();
    h = ((p.w[1] * h + p.b[1]).array().max(0.0)).matrix();
    const double out = (p.w[2] * h + p.b[2])(0);
    CHECK(s(r) == doctest::Approx(out).epsilon(1e-10));
  }
}

TEST_CASE("predict rejects wrong feature width") {
  const CostModelParams p = init_random({4, 8, 8, 1}, 3);
  expect_error(ErrorCode::DimMismatch, [&] { predict(p, random_features(2, 5, 0)); });
}

TEST_CASE("penultimate activations are the second hidden layer") {
  const CostModelParams p = init_random({4, 8, 8, 1}, 6);
  const Eigen::MatrixXd x = random_features(3, 4, 11);
  const Eigen::MatrixXd h2 = penultimate_activations(p, x);
  REQUIRE(h2.rows() == 3);
  REQUIRE(h2.cols() == 8);
  const Eigen::VectorXd s = predict(p, x);
  for (int r = 0; r < 3; ++r) {
    const double out = (p.w[2] * h2.row(r).transpose() + p.b[2])(0);
    CHECK(s(r) == doctest::Approx(out).epsilon(1e-12));
  }
  CHECK(h2.minCoeff() >= 0.0);
}

TEST_CASE("ranking loss hand cases") {
  Eigen::VectorXd scores(2), labels(2);
  scores << 2.0, 1.0;
  labels << 3.0, 1.0;
  CHECK(pairwise_ranking_loss(scores, labels) ==
        doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  scores << 1.0, 1.0;
  CHECK(pairwise_ranking_loss(scores, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  labels << 1.0, 1.0;  // no ordered pair
  CHECK(pairwise_ranking_loss(scores, labels) == 0.0);
}

TEST_CASE("ranking loss matches brute force pair enumeration") {
  RngStream rng(14);
  Eigen::VectorXd scores(8), labels(8);
  for (int i = 0; i < 8; ++i) {
    scores(i) = rng.uniform01() * 4.0 - 2.0;
    labels(i) = rng.uniform01();
  }
  double sum = 0.0;
  int pairs = 0;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      if (labels(i) > labels(j)) {
        sum += std::log(1.0 + std::exp(-(scores(i) - scores(j))));
        ++pairs;
      }
  CHECK(pairwise_ranking_loss(scores, labels) ==
        doctest::Approx(sum / pairs).epsilon(1e-12));
}

TEST_CASE("ranking loss translation invariance and margin monotonicity") {
  RngStream rng(15);
  Eigen::VectorXd scores(6), labels(6);
  for (int i = 0; i < 6; ++i) {
    scores(i) = rng.uniform01() * 2.0;
    labels(i) = rng.uniform01();
  }
  const double base = pairwise_ranking_loss(scores, labels);
  Eigen::VectorXd shifted = scores.array() + 17.5;
  CHECK(pairwise_ranking_loss(shifted, labels) == doctest::Approx(base).epsilon(1e-12));
  // Scale gaps on a correctly ordered list: loss must strictly fall.
  Eigen::VectorXd ordered(3), ordered_labels(3);
  ordered << 0.1, 0.2, 0.3;
  ordered_labels << 1.0, 2.0, 3.0;
  const double l1 = pairwise_ranking_loss(ordered, ordered_labels);
  Eigen::VectorXd scaled = ordered * 3.0;
  CHECK(pairwise_ranking_loss(scaled, ordered_labels) < l1);
}

TEST_CASE("gradient zero for pair-free batches") {
  const CostModelParams p = init_random({4, 8, 8, 1}, 7);
  RankingBatch batch = random_batch(4, 4, 20);
  batch.labels.setConstant(1.0);
  const GradientSet g = gradients(p, batch);
  for (const double v : flat_grads(g)) CHECK(v == 0.0);
}

TEST_CASE("beta zero equals adversary-free bit-exactly") {
  const CostModelParams p = init_random({4, 8, 8, 1}, 8);
  const RankingBatch batch = random_batch(6, 4, 21);
  const AdversaryState adv = make_adversary(random_features(5, 4, 22), 8, 77);
  const GradientSet with_adv = gradients(p, batch, &adv, 0.0);
  const GradientSet without = gradients(p, batch, nullptr, 0.0);
  const auto a = flat_grads(with_adv);
  const auto b = flat_grads(without);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("finite difference agreement on small nets") {
  const double h = 1e-4;
  int done = 0;
  std::uint64_t seed = 100;
  while (done < 10) {
    ++seed;
    CostModelParams p = init_random({4, 8, 8, 1}, seed);
    const RankingBatch batch = random_batch(6, 4, seed * 3 + 1);
    const AdversaryState adv = make_adversary(random_features(8, 4, seed * 3 + 2), 8, seed);
    const double beta = (done % 2 == 0) ? 0.0 : 0.01;
    Eigen::MatrixXd rows(batch.features.rows() + adv.replay_features.rows(), 4);
    rows << batch.features, adv.replay_features;
    if (grazes_kink(p, rows, 1e-3)) continue;
    const GradientSet g = gradients(p, batch, &adv, beta);
    const auto flat_g = flat_grads(g);
    auto ptrs = flat_params(p);
    double worst = 0.0;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      const double keep = *ptrs[i];
      *ptrs[i] = keep + h;
      const double up = objective(p, batch, &adv, beta);
      *ptrs[i] = keep - h;
      const double down = objective(p, batch, &adv, beta);
      *ptrs[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(flat_g[i]), 1e-3});
      worst = std::max(worst, std::abs(fd - flat_g[i]) / denom);
    }
    CHECK(worst < 1e-4);
    ++done;
  }
}

TEST_CASE("objective matches loss reported by gradients") {
  const CostModelParams p = init_random({4, 8, 8, 1}, 30);
  const RankingBatch batch = random_batch(6, 4, 31);
  const AdversaryState adv = make_adversary(random_features(7, 4, 32), 8, 33);
  double loss = 0.0;
  gradients(p, batch, &adv, 0.01, &loss);
  CHECK(loss == doctest::Approx(objective(p, batch, &adv, 0.01)).epsilon(1e-12));
}

TEST_CASE("update arithmetic") {
  CostModelParams p = init_random({4, 8, 8, 1}, 40);
  p.w[0](0, 0) = 1.0;
  GradientSet g;
  for (int l = 0; l < 3; ++l) {
    g.gw.push_back(Eigen::MatrixXd::Zero(p.w[l].rows(), p.w[l].cols()));
    g.gb.push_back(Eigen::VectorXd::Zero(p.b[l].size()));
  }
  g.gw[0](0, 0) = 2.0;
  TrainHyper hyper;
  hyper.learning_rate = 0.001;
  const CostModelParams before = p;
  apply_update(p, g, hyper, nullptr, false);
  CHECK(p.w[0](0, 0) == doctest::Approx(0.998).epsilon(1e-15));
  // All other scalars untouched.
  CHECK(p.w[1] == before.w[1]);
  CHECK(p.w[2] == before.w[2]);

  // Momentum: v1 = g, v2 = mu*g + g; w = w0 - a*g - a*(mu*g + g).
  CostModelParams q = init_random({4, 8, 8, 1}, 41);
  const double w0 = q.w[0](0, 0);
  apply_update(q, g, hyper, nullptr, true);
  apply_update(q, g, hyper, nullptr, true);
  const double expect = w0 - 0.001 * 2.0 - 0.001 * (0.9 * 2.0 + 2.0);
  CHECK(q.w[0](0, 0) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("zero gradient leaves params bit-identical") {
  CostModelParams p = init_random({4, 8, 8, 1}, 42);
  GradientSet g;
  for (int l = 0; l < 3; ++l) {
    g.gw.push_back(Eigen::MatrixXd::Zero(p.w[l].rows(), p.w[l].cols()));
    g.gb.push_back(Eigen::VectorXd::Zero(p.b[l].size()));
  }
  const CostModelParams before = p;
  TrainHyper hyper;
  apply_update(p, g, hyper, nullptr, false);
  for (int l = 0; l < 3; ++l) {
    CHECK(p.w[l] == before.w[l]);
    CHECK(p.b[l] == before.b[l]);
  }
}

TEST_CASE("all-variant mask is a no-op") {
  CostModelParams p = init_random({4, 8, 8, 1}, 43);
  GradientSet g;
  for (int l = 0; l < 3; ++l) {
    g.gw.push_back(Eigen::MatrixXd::Constant(p.w[l].rows(), p.w[l].cols(), 1.0));
    g.gb.push_back(Eigen::VectorXd::Constant(p.b[l].size(), 1.0));
  }
  ParamMask mask;
  mask.transferable = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(param_count(p), false);
  const CostModelParams before = p;
  TrainHyper hyper;
  apply_update(p, g, hyper, &mask, false);
  for (int l = 0; l < 3; ++l) {
    CHECK(p.w[l] == before.w[l]);
    CHECK(p.b[l] == before.b[l]);
  }
}

TEST_CASE("ranking accuracy hand case") {
  CostModelParams p = init_random({4, 8, 8, 1}, 44);
  RankingBatch batch = random_batch(3, 4, 50);
  batch.labels << 1.0, 2.0, 3.0;
  const Eigen::VectorXd s = predict(p, batch.features);
  // Count concordant ordered pairs directly.
  int pairs = 0, good = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (batch.labels(i) > batch.labels(j)) {
        ++pairs;
        if (s(i) > s(j)) ++good;
      }
  CHECK(ranking_accuracy(p, {batch}) ==
        doctest::Approx(static_cast<double>(good) / pairs).epsilon(1e-12));
}

TEST_CASE("serialize roundtrip is bit exact") {
  CostModelParams p = init_random({16, 512, 512, 1}, 60);
  // Touch momentum so the roundtrip covers it.
  p.mw[0](3, 5) = 0.25;
  p.mb[2](0) = -1.5;
  const std::string bytes = serialize(p);
  const CostModelParams q = deserialize(bytes);
  CHECK(serialize(q) == bytes);
  for (int l = 0; l < 3; ++l) {
    CHECK(p.w[l] == q.w[l]);
    CHECK(p.b[l] == q.b[l]);
    CHECK(p.mw[l] == q.mw[l]);
    CHECK(p.mb[l] == q.mb[l]);
  }
}

TEST_CASE("deserialize failure modes") {
  const CostModelParams p = init_random({16, 512, 512, 1}, 61);
  std::string bytes = serialize(p);
  std::string bad = bytes;
  bad[0] = 'X';
  expect_error(ErrorCode::CorruptStream, [&] { deserialize(bad); });
  bad = bytes;
  bad[4] = 9;  // version byte
  expect_error(ErrorCode::VersionMismatch, [&] { deserialize(bad); });
  expect_error(ErrorCode::CorruptStream,
               [&] { deserialize(bytes.substr(0, bytes.size() / 2)); });
  expect_error(ErrorCode::CorruptStream, [&] { deserialize(""); });
}

TEST_CASE("model file io") {
  const std::string path = (std::filesystem::temp_directory_path() / "moseslab_model.bin").string();
  const CostModelParams p = init_random({16, 512, 512, 1}, 62);
  save_model(p, path);
  const CostModelParams q = load_model(path);
  CHECK(serialize(p) == serialize(q));
  std::filesystem::remove(path);
  expect_error(ErrorCode::IoError, [&] { load_model(path); });
}

// The golden file freezes both the format and the init chain: a stored model
// must keep loading and predicting identically release over release.
TEST_CASE("golden model predicts frozen scores") {
  const CostModelParams p = load_model(repo_path("tests/golden/model_v1.bin"));
  REQUIRE(p.dims == std::vector<int>{16, 512, 512, 1});
  Eigen::MatrixXd x(3, 16);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 16; ++c) x(r, c) = (r + 1) * 0.1 + c * 0.01;
  const Eigen::VectorXd s = predict(p, x);
  // Frozen at generation time; see tests/golden/README.md.
  CHECK(s(0) == doctest::Approx(0.068432722090836534).epsilon(1e-12));
  CHECK(s(1) == doctest::Approx(0.10419522897402726).epsilon(1e-12));
  CHECK(s(2) == doctest::Approx(0.14194361818494705).epsilon(1e-12));
}

}  // TEST_SUITE
