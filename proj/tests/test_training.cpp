#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "tdisc/rng.hpp"
#include "tdisc/training.hpp"

using namespace tdisc;

namespace {

Problem toy_problem() { return Problem::make(NoiseSchedule::ot(), build_tree_mixture(TreeConfig{}), SolverSpec::euler()); }

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch = 16;
  cfg.iterations = 30;
  cfg.seed = 3;
  return cfg;
}

PhiNetwork fresh_phi(std::size_t n, const Problem& p) {
  return init_phi(7, PhiDims{n, 16, 0}, HeadDecoding{}, 1.0 / p.schedule.sigma_max());
}

}  // namespace

TEST_CASE("cosine learning rate") {
  CHECK(cosine_lr(1e-2, 1e-4, 0, 100) == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(cosine_lr(1e-2, 1e-4, 100, 100) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(cosine_lr(1e-2, 1e-4, 50, 100) == doctest::Approx(0.5 * (1e-2 + 1e-4)).epsilon(1e-12));
  for (std::size_t s = 1; s <= 100; ++s) CHECK(cosine_lr(1e-2, 1e-4, s, 100) <= cosine_lr(1e-2, 1e-4, s - 1, 100));
}

TEST_CASE("EMA single update") {
  std::vector<double> ema{0.0, 0.0};
  const std::vector<double> w{1.0, 1.0};
  ema_update(ema, w, 0.2);
  CHECK(ema[0] == doctest::Approx(0.2).epsilon(1e-15));
  ema_update(ema, w, 0.2);
  CHECK(ema[1] == doctest::Approx(0.36).epsilon(1e-15));
}

TEST_CASE("first Adam step is -lr sign(g)") {
  Adam adam(3, 0.9, 0.999, 1e-8);
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -7.0, 1e-3};
  adam.step(p, g, 0.01);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.batch = 0;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.lr_min = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.ema_fraction = 1.5;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("teacher generation is deterministic and reproducible from seeds") {
  const auto p = toy_problem();
  const auto a = generate_teacher(p, TeacherSpec{}, 1, 42);
  const auto b = generate_teacher(p, TeacherSpec{}, 1, 42);
  CHECK(a.records[0].seed == b.records[0].seed);
  CHECK(a.records[0].endpoint == b.records[0].endpoint);
  const auto many = generate_teacher(p, TeacherSpec{}, 50, 42, 0, 4);
  CHECK(many.records[0].endpoint == a.records[0].endpoint);
  for (const auto& r : many.records) {
    CHECK(teacher_endpoint(p, TeacherSpec{}, record_prior(p, r), r.condition) == r.endpoint);
  }
}

TEST_CASE("mean teacher endpoint lies near the data") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 10000, 1, 0, 4);
  double m0 = 0, m1 = 0;
  for (const auto& r : set.records) {
    m0 += r.endpoint[0];
    m1 += r.endpoint[1];
  }
  m0 /= set.size();
  m1 /= set.size();
  const auto box = p.mixture.bounding_box();
  const double pad = 3 * p.mixture.max_std();
  CHECK(m0 >= box[0] - pad);
  CHECK(m0 <= box[2] + pad);
  CHECK(m1 >= box[1] - pad);
  CHECK(m1 <= box[3] + pad);
}

TEST_CASE("iteration-0 loss equals the uniform heuristic loss on the same batch") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 100, 2);
  const auto cfg = small_config();
  auto state = start_training(fresh_phi(3, p), cfg);
  train_instance(state, p, set, cfg, 1, 1);
  REQUIRE(state.trace.size() == 1);
  const auto batch = batch_indices(set.size(), cfg.batch, derive_seed(cfg.seed, "instance"), 0);
  const auto uniform = heuristic(HeuristicKind::Uniform, p.schedule, 3);
  double sum = 0.0;
  for (std::size_t i : batch) {
    const auto& r = set.records[i];
    sum += endpoint_distance(student_endpoint(p, uniform, record_prior(p, r), -1), r.endpoint);
  }
  CHECK(state.trace[0].batch_loss == doctest::Approx(sum / batch.size()).epsilon(1e-14));
}

TEST_CASE("EMA weights stay inside the hull of visited weights") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 64, 4);
  const auto cfg = small_config();
  auto state = start_training(fresh_phi(3, p), cfg);
  std::vector<double> lo = state.phi.params, hi = state.phi.params;
  bool inside = true;
  train_instance(state, p, set, cfg, 2, std::nullopt, [&](const TraceRow&) {
    for (std::size_t i = 0; i < lo.size(); ++i) {
      lo[i] = std::min(lo[i], state.phi.params[i]);
      hi[i] = std::max(hi[i], state.phi.params[i]);
      inside = inside && state.ema[i] >= lo[i] - 1e-15 && state.ema[i] <= hi[i] + 1e-15;
    }
  });
  CHECK(state.iteration == cfg.iterations);
  CHECK(inside);
}

TEST_CASE("training is reproducible and independent of jobs") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 64, 4);
  const auto cfg = small_config();
  auto a = start_training(fresh_phi(3, p), cfg);
  auto b = start_training(fresh_phi(3, p), cfg);
  train_instance(a, p, set, cfg, 1);
  train_instance(b, p, set, cfg, 4);
  CHECK(a.phi.params == b.phi.params);
  CHECK(a.ema == b.ema);
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].batch_loss == b.trace[i].batch_loss);

  // Stopping and continuing lands on the same weights.
  auto c = start_training(fresh_phi(3, p), cfg);
  train_instance(c, p, set, cfg, 1, 11);
  CHECK(c.iteration == 11);
  train_instance(c, p, set, cfg, 1);
  CHECK(c.phi.params == a.phi.params);
}

TEST_CASE("zero-init instance strategy reports exactly like uniform") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 200, 6);
  StrategyArtifacts art;
  art.phi = fresh_phi(3, p);
  const auto u = evaluate_strategy(Strategy::Uniform, art, p, set, 3);
  const auto i = evaluate_strategy(Strategy::Instance, art, p, set, 3);
  CHECK(u.mean_mse == i.mean_mse);
  CHECK(u.kl == i.kl);
  CHECK(u.wasserstein == i.wasserstein);
  const auto again = evaluate_strategy(Strategy::Instance, art, p, set, 3, EvalOptions{}, 3);
  CHECK(again.mean_mse == i.mean_mse);
  CHECK(again.kl == i.kl);
  CHECK(again.wasserstein == i.wasserstein);
  double sum = 0.0;
  for (const auto& e : i.per_sample_errors) sum += e.error;
  CHECK(std::abs(sum / set.size() - i.mean_mse) < 1e-12);
}

TEST_CASE("strategy contract errors") {
  const auto p = toy_problem();
  const auto set = generate_teacher(p, TeacherSpec{}, 10, 6);
  StrategyArtifacts art;
  CHECK_THROWS_AS(evaluate_strategy(Strategy::Global, art, p, set, 3), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_strategy(Strategy::Instance, art, p, set, 3), std::invalid_argument);
  art.overfit[set.records[0].seed] = heuristic(HeuristicKind::Uniform, p.schedule, 3);
  CHECK_THROWS_AS(evaluate_strategy(Strategy::Overfit, art, p, set, 3), std::invalid_argument);
  art.global = heuristic(HeuristicKind::Uniform, p.schedule, 4);
  CHECK_THROWS_AS(evaluate_strategy(Strategy::Global, art, p, set, 3), std::invalid_argument);
  CHECK(strategy_from_string("logsnr") == Strategy::LogSNR);
  CHECK_THROWS_AS(strategy_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("non-finite loss raises TrainingDiverged with the last good weights") {
  const auto p = toy_problem();
  auto set = generate_teacher(p, TeacherSpec{}, 8, 6);
  for (auto& r : set.records) r.endpoint = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  const auto cfg = small_config();
  auto state = start_training(fresh_phi(3, p), cfg);
  const auto before = state.phi.params;
  try {
    train_instance(state, p, set, cfg);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.iteration() == 0);
    CHECK(e.last_good() == before);
  }
  CHECK_THROWS_AS(optimize_global(p, set, 3, HeadDecoding{}, cfg), TrainingDiverged);
}
