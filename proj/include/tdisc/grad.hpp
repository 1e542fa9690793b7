#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace tdisc::grad {

class Tape;

/// A scalar tracked on a tape, or an untracked constant when tape() is null.
///
/// Constants behave like plain doubles inside expressions; any operation with
/// at least one tracked operand records a node on that operand's tape.
class Var {
public:
  Var() = default;
  Var(double constant) : value_(constant) {}  // NOLINT: implicit by design of templated kernels

  double value() const { return value_; }
  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return index_; }
  bool tracked() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index, double value) : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
  double value_ = 0.0;
};

/// One incoming edge of a recorded node: d(node)/d(operand) = partial.
struct Partial {
  Var operand;
  double partial;
};

class Gradients {
public:
  Gradients() = default;
  explicit Gradients(std::vector<double> adjoints) : adjoints_(std::move(adjoints)) {}

  /// Gradient of the differentiated output with respect to v. Constants and
  /// nodes not reachable from the output report 0.
  double operator[](const Var& v) const;

  std::span<const double> adjoints() const { return adjoints_; }

private:
  std::vector<double> adjoints_;
};

/// Append-only record of scalar nodes. Construction order is a topological
/// order, so backward() is a single reverse sweep.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(double value);

  /// Record a node with the given value and local partials. Untracked
  /// operands are dropped; if none are tracked the result is a constant.
  /// All tracked operands must live on this tape.
  Var record(double value, std::span<const Partial> partials);
  Var record(double value, std::initializer_list<Partial> partials) {
    return record(value, std::span<const Partial>(partials.begin(), partials.size()));
  }

  Gradients backward(const Var& output) const;

  std::size_t size() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  void clear();
  void reserve(std::size_t nodes, std::size_t edges);

private:
  struct Node {
    double value;
    std::uint32_t edge_begin;
    std::uint32_t edge_end;
  };
  struct Edge {
    std::uint32_t parent;
    double partial;
  };

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
};

/// Shared tape of two operands; throws std::invalid_argument when they live on
/// different tapes. Returns null when both are constants.
Tape* common_tape(const Var& a, const Var& b);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);
Var sqrt(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var pow(const Var& x, double p);
Var max(const Var& a, const Var& b);
Var min(const Var& a, const Var& b);
Var sum(std::span<const Var> xs);
Var log_sum_exp(std::span<const Var> xs);
Var dot(std::span<const Var> a, std::span<const Var> b);

namespace testing {
/// Fault injection for the gradient checker's negative control: scales the
/// recorded partial of tanh. 1 restores correct behaviour.
void set_tanh_partial_scale(double scale);
}  // namespace testing

}  // namespace tdisc::grad
