#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "grafuse/error.hpp"
#include "grafuse/transport.hpp"
#include "support/gradcheck.hpp"

using namespace grafuse;
using grafuse::testing::grad_check;
using grafuse::testing::random_tensor;

namespace {

DiscreteCloud line_cloud(std::vector<double> xs) {
  const std::size_t m = xs.size();
  return DiscreteCloud::uniform(Tensor::from({m, 1}, std::move(xs)));
}

DiscreteCloud random_cloud(std::size_t m, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  return DiscreteCloud::uniform(random_tensor({m, d}, seed, scale, false));
}

DiscreteCloud scaled(const DiscreteCloud& c, double s) {
  std::vector<double> v(c.points.values().begin(), c.points.values().end());
  for (auto& x : v) x *= s;
  return {Tensor::from(c.points.shape(), std::move(v)), c.weights};
}

double median_cost(const DiscreteCloud& a, const DiscreteCloud& b, double p) {
  auto c = cost_matrix(a, b, p);
  std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(c.size() / 2), c.end());
  return c[c.size() / 2];
}

// Weighted cloud whose weights are k_i / total, and its uniform expansion
// with point i repeated k_i times: both describe the same measure.
std::pair<DiscreteCloud, DiscreteCloud> rational_cloud(const std::vector<std::size_t>& counts, std::size_t d,
                                                       std::uint64_t seed) {
  const Tensor base = random_tensor({counts.size(), d}, seed, 1.0, false);
  std::size_t total = 0;
  for (auto k : counts) total += k;
  std::vector<double> w, expanded;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    w.push_back(static_cast<double>(counts[i]) / static_cast<double>(total));
    for (std::size_t r = 0; r < counts[i]; ++r)
      for (std::size_t k = 0; k < d; ++k) expanded.push_back(base.at(i, k));
  }
  double sum = 0.0;
  for (double x : w) sum += x;
  w.back() += 1.0 - sum;
  return {DiscreteCloud{base, w}, DiscreteCloud::uniform(Tensor::from({total, d}, expanded))};
}

}  // namespace

TEST_CASE("cost_matrix") {
  CHECK(cost_matrix(line_cloud({2.0}), line_cloud({2.0}), 2.0) == std::vector<double>{0.0});
  CHECK(cost_matrix(line_cloud({0.0}), line_cloud({3.0}), 2.0) == std::vector<double>{9.0});
  const auto a = random_cloud(6, 4, 3);
  const auto c = cost_matrix(a, a, 2.0);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(c[i * 6 + i] == 0.0);
    for (std::size_t j = 0; j < 6; ++j) CHECK(c[i * 6 + j] == c[j * 6 + i]);
  }
  CHECK_THROWS_AS(cost_matrix(a, random_cloud(2, 3, 1), 2.0), DimensionError);
}

TEST_CASE("exact_wr: forced cases") {
  CHECK(exact_wr(random_cloud(5, 3, 9), random_cloud(5, 3, 9)).distance == 0.0);
  for (double p : {1.0, 2.0, 3.0}) CHECK(exact_wr(line_cloud({0.5}), line_cloud({2.0}), p).distance == doctest::Approx(1.5));
  // {0,1} vs {1,2} on a line: the monotone matching moves each point by 1.
  const auto r = exact_wr(line_cloud({0.0, 1.0}), line_cloud({1.0, 2.0}), 1.0);
  CHECK(r.distance == doctest::Approx(1.0));
  CHECK(r.plan.at(0, 0) == doctest::Approx(0.5));
  CHECK(r.plan.at(1, 1) == doctest::Approx(0.5));
}

TEST_CASE("exact_wr: size cap names the entropic solver") {
  CHECK_THROWS_WITH_AS(exact_wr(random_cloud(9, 2, 1), random_cloud(8, 2, 2)), doctest::Contains("sinkhorn_wr"),
                       ContractError);
}

TEST_CASE("exact_wr: flow route agrees with exhaustive matching") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t m = 2 + seed % 5;
    const auto a = random_cloud(m, 3, seed);
    const auto b = random_cloud(m, 3, seed + 1000);
    const double p = seed % 2 ? 1.0 : 2.0;
    CHECK(exact_wr_flow(a, b, p).distance == doctest::Approx(exact_wr(a, b, p).distance).epsilon(1e-10));
  }
}

TEST_CASE("exact_wr: weighted clouds match their uniform expansion") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [wa, ua] = rational_cloud({1 + seed % 3, 2, 1}, 2, seed);
    const auto [wb, ub] = rational_cloud({1, 1 + seed % 2, 2}, 2, seed + 77);
    if (ua.size() != ub.size()) continue;
    const auto weighted = exact_wr(wa, wb);
    const auto uniform = exact_wr(ua, ub);
    CHECK(weighted.distance == doctest::Approx(uniform.distance).epsilon(1e-10));
    const auto rows = weighted.plan.row_sums();
    const auto cols = weighted.plan.col_sums();
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i] == doctest::Approx(wa.weights[i]).epsilon(1e-12));
    for (std::size_t j = 0; j < cols.size(); ++j) CHECK(cols[j] == doctest::Approx(wb.weights[j]).epsilon(1e-12));
  }
}

TEST_CASE("exact_wr: 2x2 closed form") {
  // With two points per side the polytope is a segment gamma_00 = t.
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    KeyedRng rng(seed, 31);
    const double a0 = 0.1 + 0.8 * rng.next_uniform(), b0 = 0.1 + 0.8 * rng.next_uniform();
    const DiscreteCloud a{random_tensor({2, 2}, seed, 1.0, false), {a0, 1.0 - a0}};
    const DiscreteCloud b{random_tensor({2, 2}, seed + 5, 1.0, false), {b0, 1.0 - b0}};
    const auto c = cost_matrix(a, b, 2.0);
    const auto cost = [&](double t) { return t * c[0] + (a0 - t) * c[1] + (b0 - t) * c[2] + (1 - a0 - b0 + t) * c[3]; };
    const double lo = std::max(0.0, a0 + b0 - 1.0), hi = std::min(a0, b0);
    const double best = std::min(cost(lo), cost(hi));
    CHECK(exact_wr(a, b).plan.cost == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("exact_wr: metric axioms") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = random_cloud(5, 3, 3 * seed), b = random_cloud(5, 3, 3 * seed + 1), c = random_cloud(5, 3, 3 * seed + 2);
    const double ab = exact_wr(a, b).distance, ba = exact_wr(b, a).distance;
    CHECK(ab == ba);
    CHECK(exact_wr(a, a).distance < 1e-12);
    CHECK(exact_wr(a, c).distance <= ab + exact_wr(b, c).distance + 1e-9);
  }
}

TEST_CASE("scaling property") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = random_cloud(5, 2, seed), b = random_cloud(5, 2, seed + 50);
    const double s = 0.5 + seed;
    const double base = exact_wr(a, b).distance;
    CHECK(exact_wr(scaled(a, s), scaled(b, s)).distance == doctest::Approx(s * base).epsilon(1e-6));
    const double e0 = sinkhorn_wr(a, b).distance;
    CHECK(sinkhorn_wr(scaled(a, s), scaled(b, s)).distance == doctest::Approx(s * e0).epsilon(0.05));
  }
}

TEST_CASE("sinkhorn_wr: forced cases") {
  const auto a = random_cloud(6, 3, 4);
  SinkhornOptions opt;
  opt.epsilon = 0.01;
  opt.max_iters = 2000;
  CHECK(sinkhorn_wr(a, a, 2.0, opt).distance < 0.05 * std::sqrt(median_cost(a, a, 2.0)));

  for (double eps : {1e-3, 1.0, 100.0}) {
    opt.epsilon = eps;
    const auto r = sinkhorn_wr(line_cloud({0.0}), line_cloud({4.0}), 2.0, opt);
    CHECK(r.plan.coupling == std::vector<double>{1.0});
    CHECK(r.distance == doctest::Approx(4.0));
  }
}

TEST_CASE("sinkhorn_wr: agrees with exact_wr at small regularization") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto a = random_cloud(5, 3, seed), b = random_cloud(5, 3, seed + 300, 1.5);
    SinkhornOptions opt;
    opt.epsilon = 0.005 * median_cost(a, b, 2.0);
    opt.max_iters = 50000;
    opt.tol = 1e-10;
    const auto r = sinkhorn_wr(a, b, 2.0, opt);
    const double exact = exact_wr(a, b).distance;
    CHECK(std::abs(r.distance - exact) / exact < 0.02);
  }
}

TEST_CASE("sinkhorn_wr: marginals, trace and convergence flag") {
  const auto a = random_cloud(20, 4, 1), b = random_cloud(30, 4, 2);
  SinkhornOptions opt;
  opt.record_trace = true;
  opt.max_iters = 5000;
  opt.tol = 1e-9;
  const auto r = sinkhorn_wr(a, b, 2.0, opt);
  REQUIRE(r.plan.converged);
  const auto rows = r.plan.row_sums();
  const auto cols = r.plan.col_sums();
  double err = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) err += std::abs(rows[i] - a.weights[i]);
  CHECK(err <= opt.tol);
  for (std::size_t j = 0; j < cols.size(); ++j) CHECK(cols[j] == doctest::Approx(b.weights[j]).epsilon(1e-12));
  REQUIRE(r.plan.cost_trace.size() == r.plan.iterations);
  // The sharp plan cost is not monotone across sweeps in general; it settles
  // onto the final plan cost.
  CHECK(r.plan.cost_trace.back() == r.plan.cost);
  const std::size_t tail = r.plan.cost_trace.size();
  REQUIRE(tail > 10);
  CHECK(std::abs(r.plan.cost_trace[tail - 1] - r.plan.cost_trace[tail - 2]) <
        std::abs(r.plan.cost_trace[1] - r.plan.cost_trace[0]));

  opt.epsilon = 1e-3;
  opt.max_iters = 1;
  CHECK_FALSE(sinkhorn_wr(a, b, 2.0, opt).plan.converged);
}

TEST_CASE("sinkhorn_wr: non-finite input") {
  const DiscreteCloud bad{Tensor::from({1, 1}, {std::numeric_limits<double>::infinity()}), {1.0}};
  CHECK_THROWS_AS(sinkhorn_wr(bad, line_cloud({0.0})), DataError);
}

TEST_CASE("transport_cost: envelope gradient matches finite differences") {
  for (double p : {1.0, 2.0, 3.0})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Tensor x = random_tensor({4, 3}, seed);
      Tensor y = random_tensor({5, 3}, seed + 11);
      const auto plan = sinkhorn_wr(DiscreteCloud::uniform(x.detach()), DiscreteCloud::uniform(y.detach()), p).plan.coupling;
      const auto check = grad_check({x, y}, [&] { return transport_cost(x, y, plan, p); });
      CHECK(check.worst() < 1e-6);
    }
}

TEST_CASE("class_wr_loss") {
  const std::size_t n = 8, d = 3;
  const std::vector<std::uint16_t> labels(n, 1);
  const std::vector<Split> split(n, Split::kTrain);
  WrLossConfig cfg;

  SUBCASE("identical embeddings") {
    const Tensor e = random_tensor({n, d}, 3);
    const Tensor other = random_tensor({n, d}, 30);
    // Entropic blur keeps the default-regularization value above zero, but
    // well below the distance between unrelated clouds.
    CHECK(class_wr_loss(e, e, labels, split, 1, cfg).item() < 0.2 * class_wr_loss(e, other, labels, split, 1, cfg).item());
    const double scale = std::sqrt(median_cost(DiscreteCloud::uniform(e), DiscreteCloud::uniform(e), 2.0));
    cfg.epsilon_scale = 0.005;
    cfg.max_iters = 5000;
    CHECK(class_wr_loss(e, e, labels, split, 1, cfg).item() < 0.05 * scale);
  }
  SUBCASE("translation approaches the shift length") {
    const Tensor e = random_tensor({n, d}, 4, 1.0, false);
    const std::vector<double> v{0.3, -0.4, 1.2};
    std::vector<double> shifted(e.values().begin(), e.values().end());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) shifted[i * d + k] += v[k];
    const Tensor f = Tensor::from({n, d}, shifted);
    const double norm = std::sqrt(0.09 + 0.16 + 1.44);
    CHECK(exact_wr(DiscreteCloud::uniform(e), DiscreteCloud::uniform(f)).distance == doctest::Approx(norm).epsilon(1e-9));
    cfg.epsilon_scale = 0.002;
    cfg.max_iters = 20000;
    cfg.tol = 1e-10;
    CHECK(class_wr_loss(e, f, labels, split, 1, cfg).item() == doctest::Approx(norm).epsilon(0.02));
  }
  SUBCASE("descent step shrinks the loss") {
    const std::vector<std::uint16_t> two(2, 0);
    const std::vector<Split> train(2, Split::kTrain);
    Tensor x = Tensor::from({2, 2}, {0.0, 0.0, 1.0, 0.0}, true);
    const Tensor y = Tensor::from({2, 2}, {0.2, 1.0, 1.3, 0.8});
    const Tensor loss = class_wr_loss(x, y, two, train, 0, cfg);
    loss.backward();
    std::vector<double> stepped(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < 4; ++i) stepped[i] -= 0.1 * x.grad()[i];
    const Tensor x2 = Tensor::from({2, 2}, stepped);
    CHECK(class_wr_loss(x2, y, two, train, 0, cfg).item() < loss.item());
  }
  SUBCASE("fewer than two nodes gives zero") {
    std::vector<Split> only_one(n, Split::kTest);
    only_one[2] = Split::kTrain;
    const Tensor e = random_tensor({n, d}, 5);
    const Tensor loss = class_wr_loss(e, e, labels, only_one, 1, cfg);
    CHECK(loss.item() == 0.0);
    CHECK(class_wr_loss(e, e, labels, split, 0, cfg).item() == 0.0);
  }
}

TEST_CASE("sample_class_nodes is keyed by seed and epoch") {
  std::vector<std::uint16_t> labels(500);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint16_t>(i % 3);
  const std::vector<Split> split(500, Split::kTrain);
  const auto a = sample_class_nodes(labels, split, 2, 40, 7, 3);
  CHECK(a.size() == 40);
  CHECK(std::is_sorted(a.begin(), a.end()));
  for (auto id : a) CHECK(labels[id] == 2);
  CHECK(a == sample_class_nodes(labels, split, 2, 40, 7, 3));
  CHECK(a != sample_class_nodes(labels, split, 2, 40, 7, 4));
  CHECK(sample_class_nodes(labels, split, 2, 1000, 7, 3).size() == 166);
}
