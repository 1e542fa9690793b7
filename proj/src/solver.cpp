#include "tdisc/solver.hpp"

#include <array>
#include <stdexcept>

#include "tdisc/discretization.hpp"

namespace tdisc {

std::string to_string(SolverFamily family) {
  return family == SolverFamily::Euler ? "euler" : "ipndm";
}

SolverFamily solver_family_from_string(const std::string& name) {
  if (name == "euler" || name == "Euler") return SolverFamily::Euler;
  if (name == "ipndm" || name == "iPNDM" || name == "IPNDM") return SolverFamily::IPNDM;
  throw std::invalid_argument("unknown solver family '" + name + "'");
}

void SolverSpec::validate() const {
  if (family == SolverFamily::Euler && max_order != 1) throw std::invalid_argument("Euler solver has order 1");
  if (max_order < 1 || max_order > 4) throw std::invalid_argument("iPNDM order must lie in [1, 4]");
}

std::span<const double> ipndm_coefficients(int order) {
  static constexpr std::array<double, 1> c1{1.0};
  static constexpr std::array<double, 2> c2{3.0 / 2.0, -1.0 / 2.0};
  static constexpr std::array<double, 3> c3{23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0};
  static constexpr std::array<double, 4> c4{55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0};
  switch (order) {
    case 1: return c1;
    case 2: return c2;
    case 3: return c3;
    case 4: return c4;
    default: throw std::invalid_argument("iPNDM order must lie in [1, 4]");
  }
}

GeneralDiscretization to_values(const Discretization<grad::Var>& xi) {
  GeneralDiscretization out;
  for (const auto& v : xi.taus) out.taus.push_back(v.value());
  for (const auto& v : xi.dtaus) out.dtaus.push_back(v.value());
  for (const auto& v : xi.gammas) out.gammas.push_back(v.value());
  return out;
}

Discretization<grad::Var> to_constants(const GeneralDiscretization& xi) {
  Discretization<grad::Var> out;
  out.taus.assign(xi.taus.begin(), xi.taus.end());
  out.dtaus.assign(xi.dtaus.begin(), xi.dtaus.end());
  out.gammas.assign(xi.gammas.begin(), xi.gammas.end());
  return out;
}

void validate_discretization(const GeneralDiscretization& xi, const NoiseSchedule& s) {
  const std::size_t n = xi.steps();
  if (n < 1) throw std::invalid_argument("discretization needs at least one step");
  if (xi.taus.size() != n + 1 || xi.gammas.size() != n) {
    throw std::invalid_argument("discretization sizes are inconsistent");
  }
  if (xi.taus.front() != s.t_min || xi.taus.back() != s.t_max) {
    throw std::invalid_argument("discretization must be anchored at t0 and T");
  }
  for (std::size_t i = 1; i <= n; ++i) {
    if (!(xi.taus[i] > xi.taus[i - 1])) throw std::invalid_argument("discretization knots must be strictly increasing");
  }
}

EpsFunction<double> mixture_eps(const GaussianMixture& gmm, const NoiseSchedule& s) {
  return [&gmm, s](const Point& x, const double& t) { return gmm.eps(s, x, t); };
}

EpsFunction<grad::Var> mixture_eps_fused(const GaussianMixture& gmm, const NoiseSchedule& s) {
  return [&gmm, s](const Vec2<grad::Var>& x, const grad::Var& t) -> Vec2<grad::Var> {
    const auto j = gmm.eps_jacobian(s, {x[0].value(), x[1].value()}, t.value());
    grad::Tape* tape = grad::common_tape(x[0], x[1]);
    if (tape == nullptr) tape = t.tape();
    if (tape == nullptr) return {grad::Var(j.eps[0]), grad::Var(j.eps[1])};
    return {tape->record(j.eps[0], {{x[0], j.d_dx[0][0]}, {x[1], j.d_dx[0][1]}, {t, j.d_dt[0]}}),
            tape->record(j.eps[1], {{x[0], j.d_dx[1][0]}, {x[1], j.d_dx[1][1]}, {t, j.d_dt[1]}})};
  };
}

EpsFunction<grad::Var> mixture_eps_traced(const GaussianMixture& gmm, const NoiseSchedule& s) {
  return [&gmm, s](const Vec2<grad::Var>& x, const grad::Var& t) -> Vec2<grad::Var> {
    if (!s.contains(t.value())) throw std::domain_error("oracle queried outside the schedule's time range");
    return gmm.eps_traced(s, x, t);
  };
}

Point reference_solve(const EpsFunction<double>& eps, const NoiseSchedule& s, const Point& x_T, int nfe) {
  if (nfe < 1) throw std::invalid_argument("reference solve needs nfe >= 1");
  const auto xi = heuristic(HeuristicKind::Uniform, s, static_cast<std::size_t>(nfe));
  return solve(SolverSpec::euler(), eps, s, x_T, xi);
}

}  // namespace tdisc
