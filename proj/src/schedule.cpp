#include "tdisc/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace tdisc {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::VE: return "ve";
    case ScheduleKind::VP: return "vp";
    case ScheduleKind::OT: return "ot";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "ve" || name == "VE") return ScheduleKind::VE;
  if (name == "vp" || name == "VP") return ScheduleKind::VP;
  if (name == "ot" || name == "OT") return ScheduleKind::OT;
  throw std::invalid_argument("unknown schedule kind '" + name + "'");
}

NoiseSchedule NoiseSchedule::ve(double t_max, double t_min) {
  NoiseSchedule s;
  s.kind = ScheduleKind::VE;
  s.t_max = t_max;
  s.t_min = t_min;
  return s;
}

NoiseSchedule NoiseSchedule::ot(double t_max, double t_min) {
  NoiseSchedule s;
  s.kind = ScheduleKind::OT;
  s.t_max = t_max;
  s.t_min = t_min;
  return s;
}

NoiseSchedule NoiseSchedule::vp(double t_max, double t_min) {
  NoiseSchedule s;
  s.kind = ScheduleKind::VP;
  s.t_max = t_max;
  s.t_min = t_min;
  return s;
}

void NoiseSchedule::validate() const {
  if (!(t_min > 0.0)) throw std::invalid_argument("schedule t_min must be positive");
  if (!(t_max > t_min)) throw std::invalid_argument("schedule t_max must exceed t_min");
  if (kind == ScheduleKind::OT && !(t_max < 1.0)) throw std::invalid_argument("OT schedule requires t_max < 1");
  if (kind == ScheduleKind::VP) {
    if (!(vp_beta_start > 0.0) || !(vp_beta_end > 0.0) || vp_beta_start == vp_beta_end) {
      throw std::invalid_argument("VP schedule requires distinct positive beta endpoints");
    }
    if (!(vp_steps > 0.0)) throw std::invalid_argument("VP schedule requires vp_steps > 0");
  }
}

double NoiseSchedule::sigma_max() const { return schedule_state(*this, t_max).sigma; }

namespace {

void require_in_range(const NoiseSchedule& s, double t) {
  if (!s.contains(t)) {
    throw std::domain_error("time " + std::to_string(t) + " outside [" + std::to_string(s.t_min) + ", " +
                            std::to_string(s.t_max) + "]");
  }
}

}  // namespace

std::pair<double, double> alpha_sigma(const NoiseSchedule& s, double t) {
  require_in_range(s, t);
  const auto st = schedule_state(s, t);
  return {st.alpha, st.sigma};
}

double log_snr(const NoiseSchedule& s, double t) {
  require_in_range(s, t);
  const auto st = schedule_state(s, t);
  return std::log(st.alpha / st.sigma);
}

double time_from_log_snr(const NoiseSchedule& s, double lambda) {
  switch (s.kind) {
    case ScheduleKind::VE:
      return std::exp(-lambda);
    case ScheduleKind::OT:
      // log((1 - t) / t) = lambda  =>  t = 1 / (1 + e^lambda)
      return 1.0 / (1.0 + std::exp(lambda));
    case ScheduleKind::VP: {
      double lo = s.t_min;
      double hi = s.t_max;
      const double lam_lo = log_snr(s, lo);
      const double lam_hi = log_snr(s, hi);
      if (lambda >= lam_lo) return lo;
      if (lambda <= lam_hi) return hi;
      while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        if (log_snr(s, mid) > lambda) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      return 0.5 * (lo + hi);
    }
  }
  throw std::invalid_argument("unknown schedule kind");
}

std::pair<double, double> ode_coefficients(const NoiseSchedule& s, double t) {
  require_in_range(s, t);
  const auto st = schedule_state(s, t);
  if (st.alpha == 0.0) throw std::domain_error("drift coefficient has a pole at this time");
  const double f = st.dalpha / st.alpha;
  const double g2 = 2.0 * st.dsigma * st.sigma - 2.0 * f * st.sigma * st.sigma;
  return {f, g2};
}

TimedPoint ve_to_ot(double t_ve, const Point& x_ve) {
  const double scale = 1.0 + t_ve;
  return {t_ve / scale, {x_ve[0] / scale, x_ve[1] / scale}};
}

TimedPoint ot_to_ve(double t_ot, const Point& x_ot) {
  if (!(t_ot < 1.0)) throw std::domain_error("OT time must be below 1");
  const double scale = 1.0 / (1.0 - t_ot);
  return {t_ot * scale, {x_ot[0] * scale, x_ot[1] * scale}};
}

Point eps_to_velocity(const Point& eps, const Point& x_ot, double t_ot) {
  if (!(t_ot < 1.0)) throw std::domain_error("OT time must be below 1");
  const double denom = 1.0 - t_ot;
  return {(eps[0] - x_ot[0]) / denom, (eps[1] - x_ot[1]) / denom};
}

}  // namespace tdisc
