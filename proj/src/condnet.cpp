#include "tdisc/condnet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "tdisc/rng.hpp"

namespace tdisc {

PhiNetwork init_phi(std::uint64_t seed, const PhiDims& dims, const HeadDecoding& decoding, double input_scale) {
  if (dims.steps < 1 || dims.hidden < 1) throw std::invalid_argument("phi needs steps >= 1 and hidden >= 1");
  PhiNetwork phi;
  phi.dims = dims;
  phi.decoding = decoding;
  phi.input_scale = input_scale;
  phi.seed = seed;
  phi.params.assign(dims.parameter_count(), 0.0);
  std::mt19937_64 rng(derive_seed(seed, "phi-init"));
  const double limit = std::sqrt(6.0 / static_cast<double>(dims.in_dim() + dims.hidden));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  for (std::size_t i = 0; i < dims.hidden * dims.in_dim(); ++i) phi.params[i] = uniform(rng);
  return phi;
}

std::vector<double> embed_condition(int condition, std::size_t label_dim) {
  if (condition < 0 || static_cast<std::size_t>(condition) >= label_dim) {
    throw std::invalid_argument("condition outside [0, label_dim)");
  }
  std::vector<double> e(label_dim, 0.0);
  e[static_cast<std::size_t>(condition)] = 1.0 / std::sqrt(static_cast<double>(label_dim));
  return e;
}

}  // namespace tdisc
