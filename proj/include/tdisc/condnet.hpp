#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tdisc/discretization.hpp"
#include "tdisc/math.hpp"

namespace tdisc {

struct PhiDims {
  std::size_t steps = 3;      // N
  std::size_t hidden = 64;
  std::size_t label_dim = 0;  // 0 = unconditional

  std::size_t in_dim() const { return 2 + label_dim; }
  std::size_t out_dim() const { return 3 * steps; }
  /// Flat parameter count: W1 (hidden x in), b1, W2 (3N x hidden), b2.
  std::size_t parameter_count() const { return hidden * in_dim() + hidden + out_dim() * hidden + out_dim(); }
};

/// Two-layer ReLU network phi(x_T, c) -> RawHeads.
///
/// Parameters live in one flat vector so the trainer can hand them to Adam
/// and EMA directly. Layout: W1 row-major, b1, W2 row-major, b2.
struct PhiNetwork {
  PhiDims dims;
  HeadDecoding decoding;
  /// x_T is multiplied by this before entering the network (1 / sigma_T
  /// normalizes the prior to unit variance).
  double input_scale = 1.0;
  std::uint64_t seed = 0;
  std::vector<double> params;
};

/// Glorot-uniform first layer, zero biases, all-zero output layer.
PhiNetwork init_phi(std::uint64_t seed, const PhiDims& dims, const HeadDecoding& decoding = {},
                    double input_scale = 1.0);

/// One-hot class embedding scaled by 1 / sqrt(label_dim).
std::vector<double> embed_condition(int condition, std::size_t label_dim);

/// Forward pass over an explicit parameter vector (doubles or tape leaves).
template <Scalar T>
RawHeads<T> phi_forward(const PhiDims& dims, double input_scale, std::span<const T> params, const Vec2<T>& x_T,
                        int condition) {
  if (params.size() != dims.parameter_count()) throw std::invalid_argument("phi: parameter count mismatch");
  const std::size_t in = dims.in_dim();
  std::vector<T> input;
  input.reserve(in);
  input.push_back(x_T[0] * input_scale);
  input.push_back(x_T[1] * input_scale);
  if (dims.label_dim > 0) {
    for (double e : embed_condition(condition, dims.label_dim)) input.push_back(T(e));
  }
  std::size_t offset = 0;
  const auto w1 = params.subspan(offset, dims.hidden * in);
  offset += dims.hidden * in;
  const auto b1 = params.subspan(offset, dims.hidden);
  offset += dims.hidden;
  const auto w2 = params.subspan(offset, dims.out_dim() * dims.hidden);
  offset += dims.out_dim() * dims.hidden;
  const auto b2 = params.subspan(offset, dims.out_dim());

  std::vector<T> hidden;
  hidden.reserve(dims.hidden);
  for (std::size_t h = 0; h < dims.hidden; ++h) {
    hidden.push_back(math::relu(math::dot(w1.subspan(h * in, in), std::span<const T>(input)) + b1[h]));
  }
  std::vector<T> out;
  out.reserve(dims.out_dim());
  for (std::size_t o = 0; o < dims.out_dim(); ++o) {
    out.push_back(math::dot(w2.subspan(o * dims.hidden, dims.hidden), std::span<const T>(hidden)) + b2[o]);
  }
  return RawHeads<T>::from_flat(out);
}

inline RawHeads<double> phi_forward(const PhiNetwork& phi, const Point& x_T, int condition) {
  return phi_forward<double>(phi.dims, phi.input_scale, phi.params, x_T, condition);
}

}  // namespace tdisc
