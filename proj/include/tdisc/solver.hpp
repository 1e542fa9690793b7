#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tdisc/math.hpp"
#include "tdisc/mixture.hpp"
#include "tdisc/schedule.hpp"

namespace tdisc {

enum class SolverFamily { Euler, IPNDM };

std::string to_string(SolverFamily family);
SolverFamily solver_family_from_string(const std::string& name);

struct SolverSpec {
  SolverFamily family = SolverFamily::Euler;
  int max_order = 1;

  static SolverSpec euler() { return {SolverFamily::Euler, 1}; }
  static SolverSpec ipndm(int order = 3) { return {SolverFamily::IPNDM, order}; }
  void validate() const;
};

/// The general discretization {tau_n, dtau_n, gamma_n}.
///
/// taus holds N + 1 strictly increasing knots with taus[0] = t0 and
/// taus[N] = T; dtaus[n - 1] and gammas[n - 1] belong to the evaluation at
/// taus[n], n = 1..N.
template <Scalar T>
struct Discretization {
  std::vector<T> taus;
  std::vector<T> dtaus;
  std::vector<T> gammas;

  std::size_t steps() const { return dtaus.size(); }
};

using GeneralDiscretization = Discretization<double>;

GeneralDiscretization to_values(const Discretization<grad::Var>& xi);
Discretization<grad::Var> to_constants(const GeneralDiscretization& xi);

/// Throws std::invalid_argument unless xi has consistent sizes and strictly
/// increasing knots anchored inside the schedule range.
void validate_discretization(const GeneralDiscretization& xi, const NoiseSchedule& s);

template <Scalar T>
using EpsFunction = std::function<Vec2<T>(const Vec2<T>& x, const T& t)>;

/// Exact eps of a mixture, eager.
EpsFunction<double> mixture_eps(const GaussianMixture& gmm, const NoiseSchedule& s);
/// Exact eps of a mixture as one fused tape node per output coordinate, with
/// the analytic Jacobian as local partials (O(1) nodes per call).
EpsFunction<grad::Var> mixture_eps_fused(const GaussianMixture& gmm, const NoiseSchedule& s);
/// Exact eps recorded primitive by primitive (O(K) nodes per call).
EpsFunction<grad::Var> mixture_eps_traced(const GaussianMixture& gmm, const NoiseSchedule& s);

/// Wraps an eps function and counts its calls.
template <Scalar T>
class CountingEps {
public:
  explicit CountingEps(EpsFunction<T> inner) : inner_(std::move(inner)) {}
  Vec2<T> operator()(const Vec2<T>& x, const T& t) {
    ++calls_;
    return inner_(x, t);
  }
  std::size_t calls() const { return calls_; }

private:
  EpsFunction<T> inner_;
  std::size_t calls_ = 0;
};

/// gamma_n * eps(x, clamp(tau_n + dtau_n, t0, T)), n in [1, N].
template <Scalar T, class Eps>
Vec2<T> transformed_eval(Eps&& eps, const NoiseSchedule& s, const Vec2<T>& x, std::size_t n,
                         const Discretization<T>& xi) {
  if (n < 1 || n > xi.steps()) throw std::out_of_range("step index outside [1, N]");
  const T shifted = math::clamp(xi.taus[n] + xi.dtaus[n - 1], s.t_min, s.t_max);
  const Vec2<T> e = eps(x, shifted);
  return {xi.gammas[n - 1] * e[0], xi.gammas[n - 1] * e[1]};
}

/// Adams-Bashforth weights for the iPNDM warm-start ladder, newest first.
std::span<const double> ipndm_coefficients(int order);

/// Endpoint of the PF-ODE solve from taus[N] = T down to taus[0] = t0.
///
/// Each step forms D_k = f(tau_k) x_k - g^2(tau_k)/2 * score with the score
/// recovered from the transformed eps as -eps_hat / sigma(tau_k). Euler steps
/// x_{k-1} = x_k + (tau_{k-1} - tau_k) D_k; iPNDM replaces D_k with the
/// Adams-Bashforth combination of up to max_order most recent derivatives.
template <Scalar T, class Eps>
Vec2<T> solve(const SolverSpec& spec, Eps&& eps, const NoiseSchedule& s, const Vec2<T>& x_T,
              const Discretization<T>& xi) {
  const std::size_t n_steps = xi.steps();
  if (n_steps < 1 || xi.taus.size() != n_steps + 1 || xi.gammas.size() != n_steps) {
    throw std::invalid_argument("discretization sizes are inconsistent");
  }
  for (std::size_t i = 1; i <= n_steps; ++i) {
    if (!(value_of(xi.taus[i]) > value_of(xi.taus[i - 1]))) {
      throw std::invalid_argument("discretization knots must be strictly increasing");
    }
  }
  const int order = spec.family == SolverFamily::Euler ? 1 : spec.max_order;

  Vec2<T> x = x_T;
  std::vector<Vec2<T>> history;  // newest last
  history.reserve(static_cast<std::size_t>(order));
  for (std::size_t k = n_steps; k >= 1; --k) {
    const T& tau = xi.taus[k];
    const auto st = schedule_state(s, tau);
    const T f = st.dalpha / st.alpha;
    const T g2 = 2.0 * st.dsigma * st.sigma - 2.0 * f * st.sigma * st.sigma;
    const Vec2<T> e = transformed_eval(eps, s, x, k, xi);
    // -g^2/2 * score with score = -eps / sigma
    const T coeff = 0.5 * g2 / st.sigma;
    const Vec2<T> deriv{f * x[0] + coeff * e[0], f * x[1] + coeff * e[1]};
    if (history.size() == static_cast<std::size_t>(order)) history.erase(history.begin());
    history.push_back(deriv);

    const auto weights = ipndm_coefficients(static_cast<int>(history.size()));
    Vec2<T> combo = {weights[0] * history.back()[0], weights[0] * history.back()[1]};
    for (std::size_t j = 1; j < weights.size(); ++j) {
      const auto& d = history[history.size() - 1 - j];
      combo[0] = combo[0] + weights[j] * d[0];
      combo[1] = combo[1] + weights[j] * d[1];
    }
    const T h = xi.taus[k - 1] - tau;
    x = {x[0] + h * combo[0], x[1] + h * combo[1]};
  }
  return x;
}

/// Euler on the uniform grid with nfe steps; the teacher/ground-truth solve.
Point reference_solve(const EpsFunction<double>& eps, const NoiseSchedule& s, const Point& x_T, int nfe);

}  // namespace tdisc
