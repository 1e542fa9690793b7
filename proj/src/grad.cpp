#include "tdisc/grad.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tdisc/math.hpp"

namespace tdisc::grad {

double Gradients::operator[](const Var& v) const {
  if (!v.tracked() || v.index() >= adjoints_.size()) return 0.0;
  return adjoints_[v.index()];
}

Var Tape::variable(double value) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  const auto edge = static_cast<std::uint32_t>(edges_.size());
  nodes_.push_back({value, edge, edge});
  return Var(this, index, value);
}

Var Tape::record(double value, std::span<const Partial> partials) {
  const auto begin = static_cast<std::uint32_t>(edges_.size());
  for (const auto& p : partials) {
    if (!p.operand.tracked()) continue;
    if (p.operand.tape() != this) {
      edges_.resize(begin);
      throw std::invalid_argument("operand recorded on a different tape");
    }
    edges_.push_back({p.operand.index(), p.partial});
  }
  const auto end = static_cast<std::uint32_t>(edges_.size());
  if (end == begin) return Var(value);
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({value, begin, end});
  return Var(this, index, value);
}

Gradients Tape::backward(const Var& output) const {
  std::vector<double> adjoint(nodes_.size(), 0.0);
  if (!output.tracked()) return Gradients(std::move(adjoint));
  if (output.tape() != this) throw std::invalid_argument("output recorded on a different tape");
  adjoint[output.index()] = 1.0;
  for (std::size_t i = output.index() + 1; i-- > 0;) {
    const double a = adjoint[i];
    if (a == 0.0) continue;
    const Node& node = nodes_[i];
    for (std::uint32_t e = node.edge_begin; e < node.edge_end; ++e) {
      adjoint[edges_[e].parent] += a * edges_[e].partial;
    }
  }
  return Gradients(std::move(adjoint));
}

void Tape::clear() {
  nodes_.clear();
  edges_.clear();
}

void Tape::reserve(std::size_t nodes, std::size_t edges) {
  nodes_.reserve(nodes);
  edges_.reserve(edges);
}

Tape* common_tape(const Var& a, const Var& b) {
  if (a.tracked() && b.tracked() && a.tape() != b.tape()) {
    throw std::invalid_argument("operands recorded on different tapes");
  }
  return a.tracked() ? a.tape() : b.tape();
}

namespace {

Var unary(const Var& x, double value, double partial) {
  if (!x.tracked()) return Var(value);
  return x.tape()->record(value, {{x, partial}});
}

Var binary(const Var& a, const Var& b, double value, double da, double db) {
  Tape* tape = common_tape(a, b);
  if (tape == nullptr) return Var(value);
  return tape->record(value, {{a, da}, {b, db}});
}

Tape* span_tape(std::span<const Var> xs) {
  Tape* tape = nullptr;
  for (const auto& x : xs) {
    if (!x.tracked()) continue;
    if (tape != nullptr && x.tape() != tape) throw std::invalid_argument("operands recorded on different tapes");
    tape = x.tape();
  }
  return tape;
}

}  // namespace

Var operator+(const Var& a, const Var& b) { return binary(a, b, a.value() + b.value(), 1.0, 1.0); }
Var operator-(const Var& a, const Var& b) { return binary(a, b, a.value() - b.value(), 1.0, -1.0); }
Var operator*(const Var& a, const Var& b) { return binary(a, b, a.value() * b.value(), b.value(), a.value()); }

Var operator/(const Var& a, const Var& b) {
  if (b.value() == 0.0) throw std::domain_error("division by zero");
  const double q = a.value() / b.value();
  return binary(a, b, q, 1.0 / b.value(), -q / b.value());
}

Var operator-(const Var& a) { return unary(a, -a.value(), -1.0); }

Var exp(const Var& x) {
  const double y = std::exp(x.value());
  return unary(x, y, y);
}

Var log(const Var& x) {
  if (!(x.value() > 0.0)) throw std::domain_error("log of non-positive value");
  return unary(x, std::log(x.value()), 1.0 / x.value());
}

namespace {
std::atomic<double> g_tanh_partial_scale{1.0};
}

void testing::set_tanh_partial_scale(double scale) { g_tanh_partial_scale.store(scale); }

Var tanh(const Var& x) {
  const double y = std::tanh(x.value());
  return unary(x, y, (1.0 - y * y) * g_tanh_partial_scale.load(std::memory_order_relaxed));
}

Var sqrt(const Var& x) {
  if (!(x.value() > 0.0)) throw std::domain_error("sqrt of non-positive value");
  const double y = std::sqrt(x.value());
  return unary(x, y, 0.5 / y);
}

Var relu(const Var& x) {
  // Right derivative at the kink: relu'(0) = 1.
  return x.value() >= 0.0 ? unary(x, x.value(), 1.0) : unary(x, 0.0, 0.0);
}

Var sigmoid(const Var& x) {
  const double y = math::sigmoid(x.value());
  return unary(x, y, y * (1.0 - y));
}

Var pow(const Var& x, double p) {
  const double v = x.value();
  if (v < 0.0 && std::floor(p) != p) throw std::domain_error("pow of negative base with non-integer exponent");
  if (v == 0.0 && p < 1.0) throw std::domain_error("pow derivative undefined at zero");
  return unary(x, std::pow(v, p), p * std::pow(v, p - 1.0));
}

Var max(const Var& a, const Var& b) {
  // Ties select the first operand.
  return a.value() >= b.value() ? binary(a, b, a.value(), 1.0, 0.0) : binary(a, b, b.value(), 0.0, 1.0);
}

Var min(const Var& a, const Var& b) {
  return a.value() <= b.value() ? binary(a, b, a.value(), 1.0, 0.0) : binary(a, b, b.value(), 0.0, 1.0);
}

Var sum(std::span<const Var> xs) {
  double s = 0.0;
  for (const auto& x : xs) s += x.value();
  Tape* tape = span_tape(xs);
  if (tape == nullptr) return Var(s);
  std::vector<Partial> partials;
  partials.reserve(xs.size());
  for (const auto& x : xs) partials.push_back({x, 1.0});
  return tape->record(s, partials);
}

Var log_sum_exp(std::span<const Var> xs) {
  if (xs.empty()) return Var(-std::numeric_limits<double>::infinity());
  double m = xs[0].value();
  for (const auto& x : xs) m = x.value() > m ? x.value() : m;
  double s = 0.0;
  for (const auto& x : xs) s += std::exp(x.value() - m);
  const double y = m + std::log(s);
  Tape* tape = span_tape(xs);
  if (tape == nullptr) return Var(y);
  std::vector<Partial> partials;
  partials.reserve(xs.size());
  for (const auto& x : xs) partials.push_back({x, std::exp(x.value() - y)});
  return tape->record(y, partials);
}

Var dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].value() * b[i].value();
  Tape* tape = span_tape(a);
  Tape* tape_b = span_tape(b);
  if (tape != nullptr && tape_b != nullptr && tape != tape_b) {
    throw std::invalid_argument("operands recorded on different tapes");
  }
  if (tape == nullptr) tape = tape_b;
  if (tape == nullptr) return Var(s);
  std::vector<Partial> partials;
  partials.reserve(2 * a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    partials.push_back({a[i], b[i].value()});
    partials.push_back({b[i], a[i].value()});
  }
  return tape->record(s, partials);
}

}  // namespace tdisc::grad
