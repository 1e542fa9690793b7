#include "tdisc/discretization.hpp"

#include <cmath>
#include <stdexcept>

#include "tdisc/errors.hpp"

namespace tdisc {

std::string to_string(HeuristicKind kind) {
  switch (kind) {
    case HeuristicKind::Uniform: return "uniform";
    case HeuristicKind::LogSNR: return "logsnr";
    case HeuristicKind::Polynomial: return "polynomial";
  }
  return "?";
}

HeuristicKind heuristic_kind_from_string(const std::string& name) {
  if (name == "uniform") return HeuristicKind::Uniform;
  if (name == "logsnr") return HeuristicKind::LogSNR;
  if (name == "polynomial") return HeuristicKind::Polynomial;
  throw std::invalid_argument("unknown heuristic '" + name + "'");
}

std::string to_string(TimestepParam p) { return p == TimestepParam::Softmax ? "softmax" : "sigmoid"; }

TimestepParam timestep_param_from_string(const std::string& name) {
  if (name == "softmax") return TimestepParam::Softmax;
  if (name == "sigmoid") return TimestepParam::Sigmoid;
  throw std::invalid_argument("unknown timestep parameterization '" + name + "'");
}

void Bounds::validate() const {
  if (!(b_dtau > 0.0) || !(b_gamma > 0.0)) throw ConfigError("bounds must be positive");
}

GeneralDiscretization heuristic(HeuristicKind kind, const NoiseSchedule& s, std::size_t n_steps, double rho) {
  if (n_steps < 1) throw std::invalid_argument("heuristic discretization needs N >= 1");
  const double n = static_cast<double>(n_steps);
  GeneralDiscretization xi;
  xi.taus.resize(n_steps + 1);
  switch (kind) {
    case HeuristicKind::Uniform:
      for (std::size_t i = 0; i <= n_steps; ++i) {
        xi.taus[i] = (static_cast<double>(i) / n) * (s.t_max - s.t_min) + s.t_min;
      }
      break;
    case HeuristicKind::LogSNR: {
      const double lam_start = log_snr(s, s.t_min);
      const double lam_end = log_snr(s, s.t_max);
      for (std::size_t i = 0; i <= n_steps; ++i) {
        const double lam = (static_cast<double>(i) / n) * (lam_end - lam_start) + lam_start;
        xi.taus[i] = time_from_log_snr(s, lam);
      }
      break;
    }
    case HeuristicKind::Polynomial: {
      if (!(rho > 0.0)) throw std::invalid_argument("polynomial schedule needs rho > 0");
      const double a = std::pow(s.t_min, 1.0 / rho);
      const double b = std::pow(s.t_max, 1.0 / rho);
      for (std::size_t i = 0; i <= n_steps; ++i) {
        xi.taus[i] = std::pow(a + (static_cast<double>(i) / n) * (b - a), rho);
      }
      break;
    }
  }
  xi.taus.front() = s.t_min;
  xi.taus.back() = s.t_max;
  xi.dtaus.assign(n_steps, 0.0);
  xi.gammas.assign(n_steps, 1.0);
  return xi;
}

}  // namespace tdisc
