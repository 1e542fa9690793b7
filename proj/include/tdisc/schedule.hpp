#pragma once

#include <string>
#include <utility>

#include "tdisc/math.hpp"

namespace tdisc {

enum class ScheduleKind { VE, VP, OT };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Forward-process noise schedule x_t = alpha(t) x_0 + sigma(t) eps, sampled
/// backwards from t_max (T) to t_min (t0).
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::OT;
  double t_max = 0.988;
  double t_min = 0.002;
  // VP only: beta(t) = vp_steps (sqrt(beta_start) (1 - t) + sqrt(beta_end) t)^2,
  // the DDPM linear schedule of vp_steps discrete steps squeezed into [0, 1].
  double vp_beta_start = 0.00085;
  double vp_beta_end = 0.012;
  double vp_steps = 1000.0;

  static NoiseSchedule ve(double t_max = 80.0, double t_min = 0.002);
  static NoiseSchedule ot(double t_max = 0.988, double t_min = 0.002);
  static NoiseSchedule vp(double t_max = 1.0, double t_min = 1e-3);

  /// Throws std::invalid_argument when the endpoints violate the kind's domain.
  void validate() const;
  bool contains(double t) const { return t >= t_min && t <= t_max; }
  double sigma_max() const;
};

/// alpha, sigma and their time derivatives at one instant.
template <Scalar T>
struct ScheduleState {
  T alpha;
  T sigma;
  T dalpha;
  T dsigma;
};

/// Closed-form schedule values. No range check; callers own the domain.
template <Scalar T>
ScheduleState<T> schedule_state(const NoiseSchedule& s, const T& t) {
  switch (s.kind) {
    case ScheduleKind::VE:
      return {T(1.0), t, T(0.0), T(1.0)};
    case ScheduleKind::OT:
      return {1.0 - t, t, T(-1.0), T(1.0)};
    case ScheduleKind::VP: {
      const double a = std::sqrt(s.vp_beta_start);
      const double b = std::sqrt(s.vp_beta_end);
      const T root = a + (b - a) * t;
      const T beta = s.vp_steps * (root * root);
      // int_0^t beta = vp_steps ((a + (b - a) t)^3 - a^3) / (3 (b - a))
      const T integral = s.vp_steps * ((root * root * root - a * a * a) / (3.0 * (b - a)));
      const T alpha = math::exp(-0.5 * integral);
      const T dalpha = -0.5 * beta * alpha;
      const T sigma = math::sqrt(1.0 - alpha * alpha);
      const T dsigma = -(alpha * dalpha) / sigma;
      return {alpha, sigma, dalpha, dsigma};
    }
  }
  throw std::invalid_argument("unknown schedule kind");
}

std::pair<double, double> alpha_sigma(const NoiseSchedule& s, double t);
double log_snr(const NoiseSchedule& s, double t);
/// Inverse of log_snr on [t_min, t_max]; closed form for VE/OT, bisection for VP.
double time_from_log_snr(const NoiseSchedule& s, double lambda);
/// PF-ODE coefficients (f, g^2) with f = alpha'/alpha, g^2 = 2 sigma' sigma - 2 f sigma^2.
std::pair<double, double> ode_coefficients(const NoiseSchedule& s, double t);

struct TimedPoint {
  double t;
  Point x;
};

TimedPoint ve_to_ot(double t_ve, const Point& x_ve);
TimedPoint ot_to_ve(double t_ot, const Point& x_ot);

/// Velocity of the OT flow from an epsilon prediction: (eps - x) / (1 - t).
Point eps_to_velocity(const Point& eps, const Point& x_ot, double t_ot);

}  // namespace tdisc
