#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tdisc/errors.hpp"

namespace tdisc {

enum class Distance { MSE };

struct TrainConfig {
  double lr_max = 1e-2;
  double lr_min = 1e-4;
  std::size_t batch = 256;
  std::size_t iterations = 4000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Per-step EMA update fraction rho: ema <- (1 - rho) ema + rho w. 0 disables.
  double ema_fraction = 0.2;
  Distance distance = Distance::MSE;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Cosine-annealed learning rate at step s of S: lr_min + (lr_max - lr_min)(1 + cos(pi s / S)) / 2.
double cosine_lr(double lr_max, double lr_min, std::size_t step, std::size_t total);
inline double cosine_lr(const TrainConfig& cfg, std::size_t step) {
  return cosine_lr(cfg.lr_max, cfg.lr_min, step, cfg.iterations);
}

class Adam {
public:
  Adam() = default;
  Adam(std::size_t n, double beta1, double beta2, double eps);
  explicit Adam(std::size_t n, const TrainConfig& cfg) : Adam(n, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) {}

  void step(std::span<double> params, std::span<const double> grad, double lr);

  std::size_t step_count() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  void restore(std::vector<double> m, std::vector<double> v, std::size_t t);

private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

void ema_update(std::span<double> ema, std::span<const double> weights, double fraction);

/// Training stopped on a non-finite loss; carries the last parameters whose
/// loss was finite.
class TrainingDiverged : public NumericalError {
public:
  TrainingDiverged(const std::string& what, std::vector<double> last_good, std::size_t iteration)
      : NumericalError(what), last_good_(std::move(last_good)), iteration_(iteration) {}
  const std::vector<double>& last_good() const { return last_good_; }
  std::size_t iteration() const { return iteration_; }

private:
  std::vector<double> last_good_;
  std::size_t iteration_;
};

/// Run fn(index, worker) for index in [0, n) on up to `jobs` threads. Each
/// worker id in [0, jobs) is used by one thread at a time. Exceptions are
/// rethrown on the caller (the one from the lowest index wins).
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t, std::size_t)>& fn);

/// Batch indices for one iteration: all of [0, n) when batch >= n, else
/// `batch` draws with replacement from a stream keyed by (seed, step).
std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch, std::uint64_t seed, std::size_t step);

}  // namespace tdisc
