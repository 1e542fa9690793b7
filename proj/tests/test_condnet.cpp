#include <doctest.h>

#include <cmath>
#include <random>

#include "tdisc/condnet.hpp"
#include "tdisc/grad.hpp"

using namespace tdisc;

TEST_CASE("embed_condition examples") {
  CHECK(embed_condition(2, 4) == std::vector<double>{0.0, 0.0, 0.5, 0.0});
  CHECK(embed_condition(0, 1) == std::vector<double>{1.0});
  const auto e = embed_condition(3, 9);
  double norm2 = 0.0;
  for (double v : e) norm2 += v * v;
  CHECK(norm2 == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  CHECK_THROWS_AS(embed_condition(4, 4), std::invalid_argument);
  CHECK_THROWS_AS(embed_condition(-1, 4), std::invalid_argument);
}

TEST_CASE("zero weights decode to the uniform grid") {
  PhiDims dims{5, 16, 3};
  PhiNetwork phi = init_phi(1, dims);
  std::fill(phi.params.begin(), phi.params.end(), 0.0);
  const auto s = NoiseSchedule::ot();
  const auto xi = decode_heads(phi_forward(phi, {0.3, -2.0}, 1), phi.decoding, s);
  const auto u = heuristic(HeuristicKind::Uniform, s, 5);
  CHECK(xi.taus == u.taus);
  for (double d : xi.dtaus) CHECK(d == 0.0);
  for (double g : xi.gammas) CHECK(g == 1.0);
}

TEST_CASE("fresh network decodes to uniform for every x_T") {
  const PhiDims dims{4, 64, 0};
  const PhiNetwork phi = init_phi(3, dims);
  const auto s = NoiseSchedule::ot();
  const auto u = heuristic(HeuristicKind::Uniform, s, 4);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 100; ++i) {
    const auto xi = decode_heads(phi_forward(phi, {n01(rng), n01(rng)}, -1), phi.decoding, s);
    CHECK(xi.taus == u.taus);
    for (double g : xi.gammas) CHECK(g == 1.0);
  }
}

TEST_CASE("init determinism, shapes and purity") {
  const PhiDims dims{3, 32, 2};
  const auto a = init_phi(11, dims);
  const auto b = init_phi(11, dims);
  const auto c = init_phi(12, dims);
  CHECK(a.params == b.params);
  CHECK(a.params != c.params);
  CHECK(a.params.size() == 32 * 4 + 32 + 9 * 32 + 9);

  PhiNetwork r = a;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  for (auto& w : r.params) w = n01(rng);
  const auto h1 = phi_forward(r, {0.5, 0.25}, 1);
  const auto h2 = phi_forward(r, {0.5, 0.25}, 1);
  CHECK(h1.flat() == h2.flat());
  CHECK(h1.steps() == 3);
}

TEST_CASE("unconditional network ignores the condition") {
  const PhiDims dims{3, 16, 0};
  PhiNetwork phi = init_phi(5, dims);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  for (auto& w : phi.params) w = n01(rng);
  CHECK(phi_forward(phi, {1.0, 2.0}, -1).flat() == phi_forward(phi, {1.0, 2.0}, 7).flat());
}

TEST_CASE("Glorot first layer statistics") {
  const PhiDims dims{3, 64, 0};
  const auto phi = init_phi(21, dims);
  const double limit = std::sqrt(6.0 / (dims.in_dim() + dims.hidden));
  const double predicted_std = std::sqrt(dims.in_dim() * limit * limit / 3.0);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (int i = 0; i < 10000; ++i) {
    const double x0 = n01(rng), x1 = n01(rng);
    for (std::size_t h = 0; h < dims.hidden; ++h) {
      const double pre = phi.params[h * 2] * x0 + phi.params[h * 2 + 1] * x1;
      sum += pre;
      sum2 += pre * pre;
      ++count;
    }
  }
  const double std = std::sqrt(sum2 / count - (sum / count) * (sum / count));
  CHECK(std >= 0.3 * predicted_std);
  CHECK(std <= 3.0 * predicted_std);
  for (std::size_t i = dims.hidden * dims.in_dim(); i < dims.parameter_count(); ++i) CHECK(phi.params[i] == 0.0);
  for (std::size_t i = 0; i < dims.hidden * dims.in_dim(); ++i) CHECK(std::abs(phi.params[i]) <= limit);
}

TEST_CASE("output gradients match finite differences") {
  const PhiDims dims{2, 8, 3};
  PhiNetwork phi = init_phi(9, dims);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n01;
  for (auto& w : phi.params) w = 0.5 * n01(rng);
  const Point x{0.7, -0.4};
  const int c = 2;
  double worst = 0.0;
  for (std::size_t out = 0; out < dims.out_dim(); ++out) {
    grad::Tape tape;
    std::vector<grad::Var> leaves;
    for (double w : phi.params) leaves.push_back(tape.variable(w));
    const auto heads = phi_forward<grad::Var>(dims, 1.0, leaves, {grad::Var(x[0]), grad::Var(x[1])}, c).flat();
    const auto g = tape.backward(heads[out]);
    for (std::size_t i = 0; i < phi.params.size(); ++i) {
      const double h = 1e-6;
      PhiNetwork up = phi, down = phi;
      up.params[i] += h;
      down.params[i] -= h;
      const double fd = (phi_forward(up, x, c).flat()[out] - phi_forward(down, x, c).flat()[out]) / (2 * h);
      const double a = g[leaves[i]];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
    }
  }
  CHECK(worst < 1e-5);
}
