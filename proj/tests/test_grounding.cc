// Copyright 2026 The ctxalign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <cmath>
#include <random>
#include <vector>

#include "ctxalign/grounding.h"
#include "doctest.h"
#include "test_util.h"

using namespace ctxalign;
using Eigen::MatrixXd;

namespace {

// Direct transcription of the score definition with explicit loops.
double naive_score(const MatrixXd& r, const MatrixXd& w) {
  const int n_i = static_cast<int>(r.rows());
  const int n_c = static_cast<int>(w.rows());
  double total = 0;
  for (int j = 0; j < n_c; ++j) {
    std::vector<double> sim(n_i);
    for (int i = 0; i < n_i; ++i) {
      double s = 0;
      for (int k = 0; k < r.cols(); ++k) s += r(i, k) * w(j, k);
      sim[i] = s;
    }
    double denom = 0;
    for (int i = 0; i < n_i; ++i) denom += std::exp(sim[i]);
    for (int i = 0; i < n_i; ++i) total += std::exp(sim[i]) / denom * sim[i];
  }
  return total / n_c;
}

}  // namespace

TEST_CASE("grounding score matches a naive loop") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n_i(1, 6), n_c(1, 5), d(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const int dd = d(rng);
    const MatrixXd r = ctxalign::testing::random_matrix(n_i(rng), dd, rng);
    const MatrixXd w = ctxalign::testing::random_matrix(n_c(rng), dd, rng);
    CHECK(grounding_score(r, w).score == doctest::Approx(naive_score(r, w)).epsilon(1e-12));
  }
}

TEST_CASE("attention columns sum to one") {
  std::mt19937_64 rng(3);
  const MatrixXd sim = ctxalign::testing::random_matrix(5, 4, rng, 20.0);
  const MatrixXd a = attention(sim);
  for (int j = 0; j < 4; ++j) CHECK(a.col(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((a.array() >= 0).all());
}

TEST_CASE("attention is stable for large similarities") {
  MatrixXd sim(2, 1);
  sim << 1000, 999;
  const MatrixXd a = attention(sim);
  CHECK(a.allFinite());
  CHECK(a(0, 0) == doctest::Approx(1 / (1 + std::exp(-1.0))));
}

TEST_CASE("single region gets all attention") {
  MatrixXd r(1, 2), w(3, 2);
  r << 1, 2;
  w << 1, 0, 0, 1, 1, 1;
  const auto res = grounding_score(r, w);
  CHECK(res.attn.isOnes());
  CHECK(res.score == doctest::Approx((1 + 2 + 3) / 3.0));
}

TEST_CASE("grounding score input errors") {
  const MatrixXd r = MatrixXd::Ones(2, 3);
  CHECK_THROWS_AS(grounding_score(r, MatrixXd(0, 3)), Error);
  CHECK_THROWS_AS(grounding_score(MatrixXd(0, 3), r), Error);
  CHECK_THROWS_AS(grounding_score(r, MatrixXd::Ones(2, 4)), Error);
}

TEST_CASE("score gradient matches finite differences") {
  std::mt19937_64 rng(5);
  const MatrixXd r = ctxalign::testing::random_matrix(4, 3, rng);
  const MatrixXd w = ctxalign::testing::random_matrix(3, 3, rng);
  const auto res = grounding_score(r, w);
  const MatrixXd g = score_grad_wrt_sim(res);
  const double h = 1e-6;
  for (int i = 0; i < res.sim.rows(); ++i) {
    for (int j = 0; j < res.sim.cols(); ++j) {
      MatrixXd plus = res.sim, minus = res.sim;
      plus(i, j) += h;
      minus(i, j) -= h;
      const auto f = [&](const MatrixXd& s) {
        return (attention(s).array() * s.array()).sum() / s.cols();
      };
      CHECK(g(i, j) == doctest::Approx((f(plus) - f(minus)) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("contrastive loss values") {
  const std::vector<double> tie = {1.5};
  CHECK(loss_image_side(1.5, std::span<const double>(tie)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const std::vector<double> zero = {0.0};
  CHECK(loss_caption_side(2.0, std::span<const double>(zero)) ==
        doctest::Approx(0.126928).epsilon(1e-6));
  CHECK(loss_image_side(3.0, std::span<const double>()) == 0.0);
  const std::vector<double> huge = {-1000.0};
  CHECK(loss_image_side(1000.0, std::span<const double>(huge)) == doctest::Approx(0.0));
  const std::vector<double> neg_inf = {-std::numeric_limits<double>::infinity()};
  CHECK(std::isfinite(loss_image_side(0.0, std::span<const double>(neg_inf))));
}

TEST_CASE("image-side loss is non-negative and grows with each negative") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    const double pos = normal(rng);
    std::vector<double> others(1 + trial % 5);
    for (double& o : others) o = normal(rng);
    const double before = loss_image_side(pos, std::span<const double>(others));
    CHECK(before >= 0);
    others.push_back(normal(rng));
    CHECK(loss_image_side(pos, std::span<const double>(others)) > before);
  }
}

TEST_CASE("normalize_rows leaves zero rows alone") {
  MatrixXd m(2, 2);
  m << 3, 4, 0, 0;
  const MatrixXd n = normalize_rows(m);
  CHECK(n(0, 0) == doctest::Approx(0.6));
  CHECK(n(0, 1) == doctest::Approx(0.8));
  CHECK(n.row(1).isZero());
}

TEST_CASE("grounding score works with float") {
  Eigen::MatrixXf r = Eigen::MatrixXf::Ones(2, 2), w = Eigen::MatrixXf::Ones(1, 2);
  CHECK(grounding_score(r, w).score == doctest::Approx(2.0f));
}
