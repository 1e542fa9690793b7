#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tdisc/math.hpp"
#include "tdisc/schedule.hpp"
#include "tdisc/solver.hpp"

namespace tdisc {

enum class HeuristicKind { Uniform, LogSNR, Polynomial };

std::string to_string(HeuristicKind kind);
HeuristicKind heuristic_kind_from_string(const std::string& name);

/// Hand-crafted knots with dtau = 0 and gamma = 1.
GeneralDiscretization heuristic(HeuristicKind kind, const NoiseSchedule& s, std::size_t n_steps, double rho = 7.0);

/// Raw network/parameter outputs O = [o_tau; o_dtau; o_gamma], each of length N.
template <Scalar T>
struct RawHeads {
  std::vector<T> o_tau;
  std::vector<T> o_dtau;
  std::vector<T> o_gamma;

  std::size_t steps() const { return o_tau.size(); }

  static RawHeads zeros(std::size_t n) { return {std::vector<T>(n, T(0.0)), std::vector<T>(n, T(0.0)), std::vector<T>(n, T(0.0))}; }

  /// Row-major 3 x N view: o_tau first, then o_dtau, then o_gamma.
  static RawHeads from_flat(std::span<const T> flat) {
    if (flat.size() % 3 != 0) throw std::invalid_argument("raw heads need 3 N entries");
    const std::size_t n = flat.size() / 3;
    RawHeads h;
    h.o_tau.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(n));
    h.o_dtau.assign(flat.begin() + static_cast<std::ptrdiff_t>(n), flat.begin() + static_cast<std::ptrdiff_t>(2 * n));
    h.o_gamma.assign(flat.begin() + static_cast<std::ptrdiff_t>(2 * n), flat.end());
    return h;
  }
  std::vector<T> flat() const {
    std::vector<T> out(o_tau);
    out.insert(out.end(), o_dtau.begin(), o_dtau.end());
    out.insert(out.end(), o_gamma.begin(), o_gamma.end());
    return out;
  }
};

struct Bounds {
  double b_dtau = 0.05;
  double b_gamma = 0.05;
  void validate() const;
};

/// How increments are normalized from o_tau: softmax (default) or the
/// sigmoid-normalized variant.
enum class TimestepParam { Softmax, Sigmoid };

std::string to_string(TimestepParam p);
TimestepParam timestep_param_from_string(const std::string& name);

struct HeadDecoding {
  Bounds bounds;
  bool dtau_head = true;
  bool gamma_head = true;
  TimestepParam timestep_param = TimestepParam::Softmax;
};

/// Decode raw heads into a discretization for the schedule's [t0, T].
///
/// Positive weights e_n = exp(o_n - max o) (or sigmoid(o_n)) become N
/// increments; knots are tau_i = (c_i / c_N)(T - t0) + t0 with c_i the
/// running sum, so tau_0 = t0 and tau_N = T exactly and zero heads reproduce
/// the uniform grid bit for bit. dtau = b_dtau tanh(o_dtau / 2) and
/// gamma = b_gamma tanh(o_gamma / 2) + 1 when their heads are enabled.
template <Scalar T>
Discretization<T> decode_heads(const RawHeads<T>& raw, const HeadDecoding& dec, const NoiseSchedule& s) {
  const std::size_t n = raw.steps();
  if (n < 1 || raw.o_dtau.size() != n || raw.o_gamma.size() != n) {
    throw std::invalid_argument("raw heads must have N >= 1 entries per head");
  }
  std::vector<T> weights;
  weights.reserve(n);
  if (dec.timestep_param == TimestepParam::Softmax) {
    // Shift by the (untracked) max: the result is invariant to the shift.
    double m = value_of(raw.o_tau[0]);
    for (const auto& o : raw.o_tau) m = std::max(m, value_of(o));
    for (const auto& o : raw.o_tau) weights.push_back(math::exp(o - m));
  } else {
    for (const auto& o : raw.o_tau) weights.push_back(math::sigmoid(o));
  }
  std::vector<T> cumulative;
  cumulative.reserve(n);
  T running = weights[0];
  cumulative.push_back(running);
  for (std::size_t i = 1; i < n; ++i) {
    running = running + weights[i];
    cumulative.push_back(running);
  }
  const double span = s.t_max - s.t_min;
  Discretization<T> xi;
  xi.taus.reserve(n + 1);
  xi.taus.push_back(T(s.t_min));
  for (std::size_t i = 0; i + 1 < n; ++i) xi.taus.push_back((cumulative[i] / cumulative[n - 1]) * span + s.t_min);
  xi.taus.push_back(T(s.t_max));
  xi.dtaus.reserve(n);
  xi.gammas.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    xi.dtaus.push_back(dec.dtau_head ? dec.bounds.b_dtau * math::tanh(raw.o_dtau[i] / 2.0) : T(0.0));
    xi.gammas.push_back(dec.gamma_head ? dec.bounds.b_gamma * math::tanh(raw.o_gamma[i] / 2.0) + 1.0 : T(1.0));
  }
  return xi;
}

}  // namespace tdisc
