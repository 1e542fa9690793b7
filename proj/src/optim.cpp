#include "tdisc/optim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <thread>

#include "tdisc/rng.hpp"

namespace tdisc {

void TrainConfig::validate() const {
  if (!(lr_max >= lr_min) || !(lr_min >= 0.0)) throw ConfigError("train: require lr_max >= lr_min >= 0");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (!(ema_fraction >= 0.0 && ema_fraction <= 1.0)) throw ConfigError("train: ema_fraction must lie in [0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
}

double cosine_lr(double lr_max, double lr_min, std::size_t step, std::size_t total) {
  if (total == 0) return lr_max;
  const double frac = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
  }
}

void Adam::restore(std::vector<double> m, std::vector<double> v, std::size_t t) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("Adam: restored state size mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

void ema_update(std::span<double> ema, std::span<const double> weights, double fraction) {
  if (ema.size() != weights.size()) throw std::invalid_argument("EMA: size mismatch");
  for (std::size_t i = 0; i < ema.size(); ++i) ema[i] = (1.0 - fraction) * ema[i] + fraction * weights[i];
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t, std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t error_index = n;
  auto worker = [&](std::size_t id) {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i, id);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(jobs);
  for (std::size_t id = 0; id < jobs; ++id) threads.emplace_back(worker, id);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch, std::uint64_t seed, std::size_t step) {
  std::vector<std::size_t> out;
  if (batch >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  std::mt19937_64 rng(derive_seed(seed, "batch", step));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(pick(rng));
  return out;
}

}  // namespace tdisc
