#include <doctest.h>

#include <cmath>
#include <random>

#include "tdisc/discretization.hpp"
#include "tdisc/training.hpp"

using namespace tdisc;

namespace {

Problem toy_problem() { return Problem::make(NoiseSchedule::ot(), build_tree_mixture(TreeConfig{}), SolverSpec::euler()); }

TrainConfig raw_config(std::size_t iterations, std::size_t batch) {
  TrainConfig cfg;
  cfg.lr_max = 0.05;
  cfg.lr_min = 1e-4;
  cfg.ema_fraction = 0.0;
  cfg.iterations = iterations;
  cfg.batch = batch;
  return cfg;
}

double sample_loss(const Problem& p, const GeneralDiscretization& xi, const TeacherSet& set, std::size_t i) {
  const auto& r = set.records[i];
  return endpoint_distance(student_endpoint(p, xi, record_prior(p, r), r.condition), r.endpoint);
}

}  // namespace

TEST_CASE("heuristic examples") {
  NoiseSchedule unit = NoiseSchedule::ot();
  unit.t_min = 0.0;
  unit.t_max = 1.0;
  const auto u = heuristic(HeuristicKind::Uniform, unit, 3);
  CHECK(u.taus[0] == 0.0);
  CHECK(u.taus[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(u.taus[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(u.taus[3] == 1.0);

  const auto s = NoiseSchedule::ot();
  const auto d = heuristic(HeuristicKind::Uniform, s, 3);
  CHECK(d.taus[0] == 0.002);
  CHECK(d.taus[1] == doctest::Approx(0.3306666667).epsilon(1e-9));
  CHECK(d.taus[2] == doctest::Approx(0.6593333333).epsilon(1e-9));
  CHECK(d.taus[3] == 0.988);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(d.dtaus[i] == 0.0);
    CHECK(d.gammas[i] == 1.0);
  }

  for (const auto& sch : {NoiseSchedule::ot(), NoiseSchedule::vp(), NoiseSchedule::ve()}) {
    const auto l = heuristic(HeuristicKind::LogSNR, sch, 2);
    CHECK(log_snr(sch, l.taus[1]) ==
          doctest::Approx(0.5 * (log_snr(sch, sch.t_max) + log_snr(sch, sch.t_min))).epsilon(1e-9));
  }

  const auto poly = heuristic(HeuristicKind::Polynomial, s, 4, 7.0);
  for (std::size_t i = 0; i <= 4; ++i) {
    const double a = std::pow(0.002, 1 / 7.0), b = std::pow(0.988, 1 / 7.0);
    CHECK(poly.taus[i] == doctest::Approx(std::pow(a + (i / 4.0) * (b - a), 7.0)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(heuristic(HeuristicKind::Uniform, s, 0), std::invalid_argument);
}

TEST_CASE("decode examples") {
  const auto s = NoiseSchedule::ot();
  const HeadDecoding dec;
  const auto xi = decode_heads(RawHeads<double>::zeros(4), dec, s);
  const std::vector<double> want{0.002, 0.2485, 0.495, 0.7415, 0.988};
  for (std::size_t i = 0; i < 5; ++i) CHECK(xi.taus[i] == doctest::Approx(want[i]).epsilon(1e-14));
  CHECK(xi.taus.front() == s.t_min);
  CHECK(xi.taus.back() == s.t_max);
  for (double g : xi.gammas) CHECK(g == 1.0);
  for (double d : xi.dtaus) CHECK(d == 0.0);
  // Zero heads reproduce the uniform heuristic bit for bit.
  CHECK(xi.taus == heuristic(HeuristicKind::Uniform, s, 4).taus);

  auto raw = RawHeads<double>::zeros(2);
  raw.o_dtau[0] = 2.0;
  const auto shifted = decode_heads(raw, dec, s);
  CHECK(shifted.dtaus[0] == doctest::Approx(0.0380797).epsilon(1e-6));

  HeadDecoding off;
  off.dtau_head = false;
  off.gamma_head = false;
  raw.o_gamma[1] = 3.0;
  const auto plain = decode_heads(raw, off, s);
  CHECK(plain.dtaus[0] == 0.0);
  CHECK(plain.gammas[1] == 1.0);
}

TEST_CASE("decode is monotone and strictly bounded for random heads") {
  const auto s = NoiseSchedule::ot();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> pick_n(1, 12);
  for (const auto param : {TimestepParam::Softmax, TimestepParam::Sigmoid}) {
    HeadDecoding dec;
    dec.timestep_param = param;
    for (int trial = 0; trial < 1000; ++trial) {
      const auto n = static_cast<std::size_t>(pick_n(rng));
      RawHeads<double> raw = RawHeads<double>::zeros(n);
      for (std::size_t i = 0; i < n; ++i) {
        raw.o_tau[i] = 3.0 * n01(rng);
        raw.o_dtau[i] = 5.0 * n01(rng);
        raw.o_gamma[i] = 5.0 * n01(rng);
      }
      const auto xi = decode_heads(raw, dec, s);
      REQUIRE(xi.taus.size() == n + 1);
      CHECK(xi.taus.front() == s.t_min);
      CHECK(xi.taus.back() == s.t_max);
      for (std::size_t i = 1; i <= n; ++i) CHECK(xi.taus[i] > xi.taus[i - 1]);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(xi.dtaus[i]) < dec.bounds.b_dtau);
        CHECK(std::abs(xi.gammas[i] - 1.0) < dec.bounds.b_gamma);
      }
    }
  }
}

TEST_CASE("decode is invariant to shifting o_tau") {
  const auto s = NoiseSchedule::ot();
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 100; ++trial) {
    RawHeads<double> raw = RawHeads<double>::zeros(6);
    for (auto& o : raw.o_tau) o = n01(rng);
    auto moved = raw;
    const double c = 10.0 * n01(rng);
    for (auto& o : moved.o_tau) o += c;
    const auto a = decode_heads(raw, HeadDecoding{}, s);
    const auto b = decode_heads(moved, HeadDecoding{}, s);
    for (std::size_t i = 0; i < a.taus.size(); ++i) CHECK(a.taus[i] == doctest::Approx(b.taus[i]).epsilon(1e-12));
  }
}

TEST_CASE("optimize_global never ends above its start") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 64, 5);
  // Teacher built from the uniform student itself: uniform is already optimal.
  TeacherSet self = set;
  const auto uniform = heuristic(HeuristicKind::Uniform, p.schedule, 3);
  for (auto& r : self.records) r.endpoint = student_endpoint(p, uniform, record_prior(p, r), r.condition);
  for (const TeacherSet* t : std::vector<const TeacherSet*>{&set, &self}) {
    const auto fit = optimize_global(p, *t, 3, HeadDecoding{}, raw_config(60, 16));
    CHECK(fit.final_loss <= fit.initial_loss);
    for (double l : fit.trace) CHECK(std::isfinite(l));
  }
  const auto fit = optimize_global(p, set, 3, HeadDecoding{}, raw_config(100, 64));
  CHECK(fit.final_loss < 0.8 * fit.initial_loss);
}

TEST_CASE("single-sample global equals per-instance") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 5, 9);
  for (std::size_t i = 0; i < set.size(); ++i) {
    TeacherSet one = set;
    one.records = {set.records[i]};
    const auto g = optimize_global(p, one, 3, HeadDecoding{}, raw_config(50, 1));
    const auto o = optimize_per_instance(p, set, i, 3, HeadDecoding{}, raw_config(50, 1));
    CHECK(std::abs(g.final_loss - o.final_loss) < 1e-6);
  }
}

TEST_CASE("per-instance beats global on most samples") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 200, 31);
  const auto global = optimize_global(p, set, 3, HeadDecoding{}, raw_config(200, 200));
  const auto fits = optimize_overfit(p, set, 3, HeadDecoding{}, raw_config(200, 1), 4);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    wins += fits[i].final_loss <= sample_loss(p, global.xi, set, i) ? 1 : 0;
  }
  MESSAGE("per-instance <= global on " << wins << "/200");
  CHECK(wins >= 190);
}

TEST_CASE("one-step problem recovers the teacher's evaluation time") {
  const auto p = toy_problem();
  const auto s = p.schedule;
  // Teacher: one Euler step with the oracle queried at T - 0.02.
  auto shifted = heuristic(HeuristicKind::Uniform, s, 1);
  shifted.dtaus[0] = -0.02;
  TeacherSet set;
  set.schedule = s;
  set.records.resize(1);
  set.records[0].seed = 77;
  set.records[0].endpoint = student_endpoint(p, shifted, record_prior(p, set.records[0]), -1);

  HeadDecoding dec;
  dec.gamma_head = false;
  const auto fit = optimize_per_instance(p, set, 0, 1, dec, raw_config(1000, 1));
  const double learned = fit.xi.taus[1] + fit.xi.dtaus[0];
  CHECK(std::abs(learned - (s.t_max - 0.02)) < 1e-4);

  // Independent grid scan of the 1-D loss.
  double best_t = 0.0, best = 1e300;
  for (int k = 0; k <= 20000; ++k) {
    auto xi = heuristic(HeuristicKind::Uniform, s, 1);
    xi.dtaus[0] = -0.05 + 0.05 * k / 20000.0;
    const double l = sample_loss(p, xi, set, 0);
    if (l < best) {
      best = l;
      best_t = xi.taus[1] + xi.dtaus[0];
    }
  }
  CHECK(std::abs(learned - best_t) < 1e-4);
}
