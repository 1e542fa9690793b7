#include <doctest.h>

#include <cmath>
#include <random>

#include "tdisc/mixture.hpp"
#include "tdisc/schedule.hpp"

using namespace tdisc;

TEST_CASE("alpha_sigma examples") {
  const auto [a_ot, s_ot] = alpha_sigma(NoiseSchedule::ot(), 0.5);
  CHECK(a_ot == 0.5);
  CHECK(s_ot == 0.5);
  const auto [a_ve, s_ve] = alpha_sigma(NoiseSchedule::ve(), 80.0);
  CHECK(a_ve == 1.0);
  CHECK(s_ve == 80.0);
  // Published SNR of the VP schedule at t = 1 is 4.7e-3; accept 5%.
  const auto [a_vp, s_vp] = alpha_sigma(NoiseSchedule::vp(), 1.0);
  CHECK(a_vp * a_vp / (s_vp * s_vp) == doctest::Approx(4.7e-3).epsilon(0.05));
}

TEST_CASE("alpha_sigma rejects out-of-range time") {
  CHECK_THROWS_AS(alpha_sigma(NoiseSchedule::ot(), 0.999), std::domain_error);
  CHECK_THROWS_AS(alpha_sigma(NoiseSchedule::ve(), 0.001), std::domain_error);
  CHECK_THROWS_AS(log_snr(NoiseSchedule::vp(), 1.5), std::domain_error);
}

TEST_CASE("schedule validation") {
  NoiseSchedule bad = NoiseSchedule::ot(1.0, 0.002);
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(NoiseSchedule::ve(1.0, 2.0).validate());
  CHECK_THROWS(NoiseSchedule::ve(1.0, 0.0).validate());
}

TEST_CASE("log_snr examples") {
  CHECK(log_snr(NoiseSchedule::ot(), 0.5) == 0.0);
  CHECK(log_snr(NoiseSchedule::ve(), 80.0) == doctest::Approx(-4.382026634673881).epsilon(1e-14));
  const auto [a, s] = alpha_sigma(NoiseSchedule::ve(), 80.0);
  CHECK(a * a / (s * s) == doctest::Approx(1.5625e-4).epsilon(1e-14));
}

TEST_CASE("log_snr is strictly decreasing on a 1000-point grid") {
  for (const auto& s : {NoiseSchedule::ve(), NoiseSchedule::ot(), NoiseSchedule::vp()}) {
    CAPTURE(to_string(s.kind));
    double prev = log_snr(s, s.t_min);
    for (int i = 1; i < 1000; ++i) {
      const double t = s.t_min + (s.t_max - s.t_min) * i / 999.0;
      const double l = log_snr(s, std::min(t, s.t_max));
      CHECK(l < prev);
      prev = l;
    }
  }
}

TEST_CASE("time_from_log_snr inverts log_snr") {
  for (const auto& s : {NoiseSchedule::ve(), NoiseSchedule::ot(), NoiseSchedule::vp()}) {
    for (double frac : {0.0, 0.1, 0.5, 0.9, 1.0}) {
      const double t = s.t_min + frac * (s.t_max - s.t_min);
      CHECK(time_from_log_snr(s, log_snr(s, t)) == doctest::Approx(t).epsilon(1e-10));
    }
  }
}

TEST_CASE("ode_coefficients examples") {
  const auto [f_ve, g_ve] = ode_coefficients(NoiseSchedule::ve(), 80.0);
  CHECK(f_ve == 0.0);
  CHECK(g_ve == 160.0);
  const auto [f1, g1] = ode_coefficients(NoiseSchedule::ot(), 0.5);
  CHECK(f1 == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(g1 == doctest::Approx(2.0).epsilon(1e-15));
  const auto [f2, g2] = ode_coefficients(NoiseSchedule::ot(), 0.25);
  CHECK(f2 == doctest::Approx(-4.0 / 3.0).epsilon(1e-15));
  CHECK(g2 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("ode_coefficients at the OT pole is a domain error") {
  NoiseSchedule s = NoiseSchedule::ot();
  s.t_max = 1.0;  // bypass validate() to reach the pole
  CHECK_THROWS_AS(ode_coefficients(s, 1.0), std::domain_error);
}

TEST_CASE("ode_coefficients agree with central differences of alpha and sigma") {
  const double h = 1e-6;
  for (const auto& s : {NoiseSchedule::ve(), NoiseSchedule::ot(), NoiseSchedule::vp()}) {
    CAPTURE(to_string(s.kind));
    for (int i = 1; i < 20; ++i) {
      const double t = s.t_min + (s.t_max - s.t_min) * i / 20.0;
      const auto [a, sg] = alpha_sigma(s, t);
      const auto [ap, sp] = alpha_sigma(s, t + h);
      const auto [am, sm] = alpha_sigma(s, t - h);
      const double da = (ap - am) / (2 * h);
      const double ds = (sp - sm) / (2 * h);
      const double f = da / a;
      const double g2 = 2 * ds * sg - 2 * f * sg * sg;
      const auto [fe, ge] = ode_coefficients(s, t);
      CHECK(std::abs(fe - f) <= 1e-6 * std::max(1.0, std::abs(f)));
      CHECK(std::abs(ge - g2) <= 1e-6 * std::max(1.0, std::abs(g2)));
    }
  }
}

TEST_CASE("ve_to_ot examples") {
  const auto a = ve_to_ot(80.0, {0.0, 0.0});
  CHECK(a.t == doctest::Approx(80.0 / 81.0).epsilon(1e-15));
  CHECK(std::round(a.t * 1000.0) / 1000.0 == 0.988);
  const auto b = ve_to_ot(0.0, {0.3, -0.7});
  CHECK(b.t == 0.0);
  CHECK(b.x[0] == 0.3);
  CHECK(b.x[1] == -0.7);
  const auto c = ve_to_ot(1.0, {2.0, 2.0});
  CHECK(c.t == 0.5);
  CHECK(c.x[0] == 1.0);
  CHECK(c.x[1] == 1.0);
}

TEST_CASE("VE/OT round trip") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ut(0.0, 1000.0);
  std::normal_distribution<double> ux(0.0, 50.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double t = ut(rng);
    const Point x{ux(rng), ux(rng)};
    const auto ot = ve_to_ot(t, x);
    const auto back = ot_to_ve(ot.t, ot.x);
    worst = std::max(worst, std::abs(back.t - t) / std::max(1.0, t));
    for (int c = 0; c < 2; ++c) worst = std::max(worst, std::abs(back.x[c] - x[c]) / std::max(1.0, std::abs(x[c])));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("eps_to_velocity examples") {
  CHECK(eps_to_velocity({0.3, 0.4}, {0.3, 0.4}, 0.2) == Point{0.0, 0.0});
  CHECK(eps_to_velocity({1.0, 0.0}, {0.0, 0.0}, 0.5) == Point{2.0, 0.0});
  CHECK_THROWS_AS(eps_to_velocity({1.0, 0.0}, {0.0, 0.0}, 1.0), std::domain_error);
  // Data N(0, I) under OT at t = 0.5: eps(x) = x, so velocity vanishes at x = (1, 0).
  const GaussianMixture gmm({{1.0, {0.0, 0.0}, 1.0, 0}});
  const auto s = NoiseSchedule::ot();
  const Point eps = gmm.eps(s, {1.0, 0.0}, 0.5);
  CHECK(eps[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(eps[1] == doctest::Approx(0.0));
  const Point v = eps_to_velocity(eps, {1.0, 0.0}, 0.5);
  CHECK(std::abs(v[0]) < 1e-14);
  CHECK(std::abs(v[1]) < 1e-14);
}

TEST_CASE("OT drift from f and g^2 equals the converted velocity") {
  const auto s = NoiseSchedule::ot();
  const GaussianMixture gmm = build_tree_mixture(TreeConfig{});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-2.0, 2.0);
  std::uniform_real_distribution<double> ut(s.t_min, s.t_max);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Point x{ux(rng), ux(rng)};
    const double t = ut(rng);
    const auto [f, g2] = ode_coefficients(s, t);
    const Point score = gmm.score(s, x, t);
    const Point v = eps_to_velocity(gmm.eps(s, x, t), x, t);
    for (int c = 0; c < 2; ++c) {
      const double drift = f * x[c] - 0.5 * g2 * score[c];
      worst = std::max(worst, std::abs(drift - v[c]) / std::max(1.0, std::abs(v[c])));
    }
  }
  CHECK(worst <= 1e-10);
}
