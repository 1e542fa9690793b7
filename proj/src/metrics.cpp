#include "tdisc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tdisc/rng.hpp"

namespace tdisc {

EndpointMse endpoint_mse(std::span<const Point> student, std::span<const Point> teacher) {
  if (student.size() != teacher.size()) throw std::invalid_argument("endpoint_mse: length mismatch");
  EndpointMse out;
  out.per_sample.reserve(student.size());
  double total = 0.0;
  for (std::size_t i = 0; i < student.size(); ++i) {
    const double d0 = student[i][0] - teacher[i][0];
    const double d1 = student[i][1] - teacher[i][1];
    const double e = 0.5 * (d0 * d0 + d1 * d1);
    out.per_sample.push_back(e);
    total += e;
  }
  out.mean = student.empty() ? 0.0 : total / static_cast<double>(student.size());
  return out;
}

namespace {

struct Grid {
  double lo[2];
  double width[2];
  std::size_t bins;

  std::size_t cell(const Point& x) const {
    std::size_t idx[2];
    for (int a = 0; a < 2; ++a) {
      const double u = (x[a] - lo[a]) / width[a] * static_cast<double>(bins);
      const auto b = static_cast<long long>(std::floor(u));
      idx[a] = static_cast<std::size_t>(std::clamp<long long>(b, 0, static_cast<long long>(bins) - 1));
    }
    return idx[0] * bins + idx[1];
  }
};

std::vector<double> histogram(std::span<const Point> pts, const Grid& grid, double smoothing) {
  const std::size_t cells = grid.bins * grid.bins;
  std::vector<double> h(cells, 0.0);
  for (const auto& x : pts) h[grid.cell(x)] += 1.0;
  const double n = static_cast<double>(pts.size());
  double total = 0.0;
  for (auto& v : h) {
    v = v / n + smoothing;
    total += v;
  }
  for (auto& v : h) v /= total;
  return h;
}

}  // namespace

double kl_divergence(std::span<const Point> p, std::span<const Point> q, const HistogramConfig& cfg) {
  if (p.empty() || q.empty()) throw std::invalid_argument("kl_divergence: empty sample set");
  if (cfg.bins < 1) throw std::invalid_argument("kl_divergence: bins must be >= 1");
  double mn[2] = {p[0][0], p[0][1]};
  double mx[2] = {p[0][0], p[0][1]};
  for (auto set : {p, q}) {
    for (const auto& x : set) {
      for (int a = 0; a < 2; ++a) {
        mn[a] = std::min(mn[a], x[a]);
        mx[a] = std::max(mx[a], x[a]);
      }
    }
  }
  Grid grid{};
  grid.bins = cfg.bins;
  for (int a = 0; a < 2; ++a) {
    double extent = mx[a] - mn[a];
    if (!(extent > 0.0)) extent = 1.0;
    grid.lo[a] = mn[a] - cfg.padding * extent;
    grid.width[a] = extent * (1.0 + 2.0 * cfg.padding);
  }
  const auto hp = histogram(p, grid, cfg.smoothing);
  const auto hq = histogram(q, grid, cfg.smoothing);
  double kl = 0.0;
  for (std::size_t i = 0; i < hp.size(); ++i) kl += hp[i] * std::log(hp[i] / hq[i]);
  return std::max(kl, 0.0);
}

namespace {

std::vector<Point> subsample(std::span<const Point> pts, std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first m slots become a uniform subset.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<Point> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(pts[idx[i]]);
  return out;
}

}  // namespace

double sliced_wasserstein(std::span<const Point> p, std::span<const Point> q, std::size_t n_projections,
                          std::uint64_t seed) {
  if (p.empty() || q.empty()) throw std::invalid_argument("sliced_wasserstein: empty sample set");
  if (n_projections < 1) throw std::invalid_argument("sliced_wasserstein: need at least one projection");
  std::vector<Point> ps(p.begin(), p.end());
  std::vector<Point> qs(q.begin(), q.end());
  if (ps.size() > qs.size()) ps = subsample(p, qs.size(), derive_seed(seed, "sw-subsample"));
  if (qs.size() > ps.size()) qs = subsample(q, ps.size(), derive_seed(seed, "sw-subsample"));
  const std::size_t n = ps.size();

  std::mt19937_64 rng(derive_seed(seed, "sw-directions"));
  const double offset = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::vector<double> a(n);
  std::vector<double> b(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n_projections; ++k) {
    const double theta = std::numbers::pi * (static_cast<double>(k) + offset) / static_cast<double>(n_projections);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = c * ps[i][0] + s * ps[i][1];
      b[i] = c * qs[i][0] + s * qs[i][1];
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) cost += (a[i] - b[i]) * (a[i] - b[i]);
    total += cost / static_cast<double>(n);
  }
  return std::sqrt(total / static_cast<double>(n_projections));
}

}  // namespace tdisc
