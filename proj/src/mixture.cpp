#include "tdisc/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tdisc/errors.hpp"
#include "tdisc/rng.hpp"

namespace tdisc {

namespace {

constexpr double kTwoPi = 6.283185307179586476925;
constexpr std::size_t kMaxComponents = 100000;

void require_in_range(const NoiseSchedule& s, double t) {
  if (!s.contains(t)) throw std::domain_error("oracle queried outside the schedule's time range");
}

}  // namespace

void TreeConfig::validate() const {
  if (depth < 1) throw ConfigError("tree depth must be >= 1");
  if (components_per_segment < 1) throw ConfigError("tree components_per_segment must be >= 1");
  if (!(root_length > 0.0)) throw ConfigError("tree root_length must be positive");
  if (!(length_decay > 0.0 && length_decay < 1.0)) throw ConfigError("tree length_decay must lie in (0, 1)");
  if (!(segment_std > 0.0)) throw ConfigError("tree segment_std must be positive");
  if (num_classes < 0) throw ConfigError("tree num_classes must be >= 0");
  if (depth > 30 || component_count() > kMaxComponents) {
    throw ConfigError("tree would produce more than 100000 components");
  }
}

std::size_t TreeConfig::component_count() const {
  if (depth > 30) return std::numeric_limits<std::size_t>::max();
  const std::size_t segments = (std::size_t{1} << (depth + 1)) - 1;
  return segments * static_cast<std::size_t>(components_per_segment);
}

GaussianMixture build_tree_mixture(const TreeConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(cfg.seed, "tree-jitter"));
  std::uniform_real_distribution<double> jitter(-cfg.angle_jitter, cfg.angle_jitter);

  int label_level = 0;
  while (cfg.num_classes > 1 && (1 << label_level) < cfg.num_classes && label_level < cfg.depth) ++label_level;

  std::vector<Component> comps;
  comps.reserve(cfg.component_count());

  struct Segment {
    Point start;
    double heading;
    double length;
    int level;
    std::uint64_t path;  // left/right choices from the root, one bit per level
  };
  // Depth-first, left child before right child.
  std::vector<Segment> stack{{{0.0, 0.0}, kTwoPi / 4.0, cfg.root_length, 0, 0}};
  while (!stack.empty()) {
    const Segment seg = stack.back();
    stack.pop_back();
    const Point dir{std::cos(seg.heading), std::sin(seg.heading)};
    int label = 0;
    if (cfg.num_classes > 1) {
      const int level = std::min(seg.level, label_level);
      const std::uint64_t ancestor = seg.path >> (seg.level - level);
      label = static_cast<int>(ancestor % static_cast<std::uint64_t>(cfg.num_classes));
    }
    for (int k = 1; k <= cfg.components_per_segment; ++k) {
      const double frac = static_cast<double>(k) / cfg.components_per_segment;
      comps.push_back({1.0,
                       {seg.start[0] + frac * seg.length * dir[0], seg.start[1] + frac * seg.length * dir[1]},
                       cfg.segment_std,
                       label});
    }
    if (seg.level == cfg.depth) continue;
    const Point end{seg.start[0] + seg.length * dir[0], seg.start[1] + seg.length * dir[1]};
    const double len = seg.length * cfg.length_decay;
    const double right = seg.heading - cfg.branch_angle * (1.0 + jitter(rng));
    const double left = seg.heading + cfg.branch_angle * (1.0 + jitter(rng));
    stack.push_back({end, right, len, seg.level + 1, (seg.path << 1) | 1});
    stack.push_back({end, left, len, seg.level + 1, seg.path << 1});
  }

  // Center the tree on the origin so it overlaps the Gaussian prior.
  Point center{0.0, 0.0};
  for (const auto& c : comps) {
    center[0] += c.mean[0];
    center[1] += c.mean[1];
  }
  center[0] /= static_cast<double>(comps.size());
  center[1] /= static_cast<double>(comps.size());
  const double w = 1.0 / static_cast<double>(comps.size());
  for (auto& c : comps) {
    c.weight = w;
    c.mean[0] -= center[0];
    c.mean[1] -= center[1];
  }
  return GaussianMixture(std::move(comps));
}

GaussianMixture::GaussianMixture(std::vector<Component> components) : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
  double total = 0.0;
  for (const auto& c : components_) {
    if (!(c.std > 0.0)) throw std::invalid_argument("mixture component std must be positive");
    if (!(c.weight > 0.0)) throw std::invalid_argument("mixture component weight must be positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    for (auto& c : components_) c.weight /= total;
  }
  log_weights_.reserve(components_.size());
  variances_.reserve(components_.size());
  for (const auto& c : components_) {
    log_weights_.push_back(std::log(c.weight));
    variances_.push_back(c.std * c.std);
  }
}

struct GaussianMixture::Evaluation {
  double log_density = 0.0;
  Point score{};
  Point eps{};
  std::array<std::array<double, 2>, 2> d_eps_dx{};
  Point d_eps_dt{};
};

void GaussianMixture::evaluate(const NoiseSchedule& s, const Point& x, double t, bool jacobian,
                               Evaluation& out) const {
  const auto st = schedule_state(s, t);
  const double a2 = st.alpha * st.alpha;
  const double s2 = st.sigma * st.sigma;
  const std::size_t k = components_.size();

  thread_local std::vector<double> logits;
  thread_local std::vector<double> vars;
  logits.resize(k);
  vars.resize(k);

  // Components usually share a std; reuse v and log(2 pi v) across runs of equal variance.
  double prev_var = -1.0;
  double v = 0.0;
  double log_norm = 0.0;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    if (variances_[i] != prev_var) {
      prev_var = variances_[i];
      v = a2 * prev_var + s2;
      log_norm = std::log(kTwoPi * v);
    }
    const double d0 = x[0] - st.alpha * components_[i].mean[0];
    const double d1 = x[1] - st.alpha * components_[i].mean[1];
    const double l = log_weights_[i] - log_norm - (d0 * d0 + d1 * d1) / (2.0 * v);
    logits[i] = l;
    vars[i] = v;
    max_logit = l > max_logit ? l : max_logit;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += std::exp(logits[i] - max_logit);
  const double lse = max_logit + std::log(total);
  out.log_density = lse;

  double sc0 = 0.0, sc1 = 0.0;
  // Jacobian accumulators.
  double sum_r_over_v = 0.0;
  double gg00 = 0.0, gg01 = 0.0, gg11 = 0.0;
  double gdot0 = 0.0, gdot1 = 0.0;   // sum r_i gdot_i
  double gl0 = 0.0, gl1 = 0.0;       // sum r_i g_i ldot_i
  double mean_ldot = 0.0;            // sum r_i ldot_i
  const double dv_common = 2.0 * st.sigma * st.dsigma;
  const double dv_scale = 2.0 * st.alpha * st.dalpha;

  for (std::size_t i = 0; i < k; ++i) {
    const double r = std::exp(logits[i] - lse);
    const double vi = vars[i];
    const double d0 = x[0] - st.alpha * components_[i].mean[0];
    const double d1 = x[1] - st.alpha * components_[i].mean[1];
    const double g0 = -d0 / vi;
    const double g1 = -d1 / vi;
    sc0 += r * g0;
    sc1 += r * g1;
    if (!jacobian) continue;
    sum_r_over_v += r / vi;
    gg00 += r * g0 * g0;
    gg01 += r * g0 * g1;
    gg11 += r * g1 * g1;
    const double dd0 = -st.dalpha * components_[i].mean[0];
    const double dd1 = -st.dalpha * components_[i].mean[1];
    const double dv = dv_scale * variances_[i] + dv_common;
    const double gd0 = -dd0 / vi + d0 * dv / (vi * vi);
    const double gd1 = -dd1 / vi + d1 * dv / (vi * vi);
    const double ld = -dv / vi - (d0 * dd0 + d1 * dd1) / vi + (d0 * d0 + d1 * d1) * dv / (2.0 * vi * vi);
    gdot0 += r * gd0;
    gdot1 += r * gd1;
    gl0 += r * g0 * ld;
    gl1 += r * g1 * ld;
    mean_ldot += r * ld;
  }
  out.score = {sc0, sc1};
  out.eps = {-st.sigma * sc0, -st.sigma * sc1};
  if (!jacobian) return;

  // d score / dx = -(sum r/v) I + sum r g g^T - s s^T
  const double j00 = -sum_r_over_v + gg00 - sc0 * sc0;
  const double j01 = gg01 - sc0 * sc1;
  const double j11 = -sum_r_over_v + gg11 - sc1 * sc1;
  out.d_eps_dx = {{{-st.sigma * j00, -st.sigma * j01}, {-st.sigma * j01, -st.sigma * j11}}};
  const double sd0 = gdot0 + gl0 - sc0 * mean_ldot;
  const double sd1 = gdot1 + gl1 - sc1 * mean_ldot;
  out.d_eps_dt = {-st.dsigma * sc0 - st.sigma * sd0, -st.dsigma * sc1 - st.sigma * sd1};
}

double GaussianMixture::log_density(const NoiseSchedule& s, const Point& x, double t) const {
  require_in_range(s, t);
  Evaluation e;
  evaluate(s, x, t, false, e);
  return e.log_density;
}

Point GaussianMixture::score(const NoiseSchedule& s, const Point& x, double t) const {
  require_in_range(s, t);
  Evaluation e;
  evaluate(s, x, t, false, e);
  return e.score;
}

Point GaussianMixture::eps(const NoiseSchedule& s, const Point& x, double t) const {
  require_in_range(s, t);
  Evaluation e;
  evaluate(s, x, t, false, e);
  return e.eps;
}

Point GaussianMixture::data_prediction(const NoiseSchedule& s, const Point& x, double t) const {
  require_in_range(s, t);
  const auto st = schedule_state(s, t);
  if (st.alpha == 0.0) throw std::domain_error("data prediction undefined where alpha = 0");
  const Point e = eps(s, x, t);
  return {(x[0] - st.sigma * e[0]) / st.alpha, (x[1] - st.sigma * e[1]) / st.alpha};
}

Point GaussianMixture::velocity(const NoiseSchedule& s, const Point& x, double t) const {
  const auto [f, g2] = ode_coefficients(s, t);
  const Point sc = score(s, x, t);
  return {f * x[0] - 0.5 * g2 * sc[0], f * x[1] - 0.5 * g2 * sc[1]};
}

EpsJacobian GaussianMixture::eps_jacobian(const NoiseSchedule& s, const Point& x, double t) const {
  require_in_range(s, t);
  Evaluation e;
  evaluate(s, x, t, true, e);
  return {e.eps, e.d_eps_dx, e.d_eps_dt};
}

GaussianMixture GaussianMixture::restrict_to_label(int label) const {
  std::vector<Component> kept;
  for (const auto& c : components_) {
    if (c.label == label) kept.push_back(c);
  }
  if (kept.empty()) throw std::invalid_argument("no mixture component carries label " + std::to_string(label));
  double total = 0.0;
  for (const auto& c : kept) total += c.weight;
  for (auto& c : kept) c.weight /= total;
  return GaussianMixture(std::move(kept));
}

int GaussianMixture::label_count() const {
  int m = 0;
  for (const auto& c : components_) m = std::max(m, c.label + 1);
  return m;
}

std::array<double, 4> GaussianMixture::bounding_box() const {
  std::array<double, 4> box{components_[0].mean[0], components_[0].mean[1], components_[0].mean[0],
                            components_[0].mean[1]};
  for (const auto& c : components_) {
    box[0] = std::min(box[0], c.mean[0]);
    box[1] = std::min(box[1], c.mean[1]);
    box[2] = std::max(box[2], c.mean[0]);
    box[3] = std::max(box[3], c.mean[1]);
  }
  return box;
}

double GaussianMixture::max_std() const {
  double m = 0.0;
  for (const auto& c : components_) m = std::max(m, c.std);
  return m;
}

namespace {

Point draw_data_point(const GaussianMixture& gmm, std::discrete_distribution<std::size_t>& pick,
                      std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& c = gmm.components()[pick(rng)];
  const double z0 = normal(rng);
  const double z1 = normal(rng);
  return {c.mean[0] + c.std * z0, c.mean[1] + c.std * z1};
}

std::discrete_distribution<std::size_t> make_picker(const GaussianMixture& gmm) {
  std::vector<double> w;
  w.reserve(gmm.size());
  for (const auto& c : gmm.components()) w.push_back(c.weight);
  return std::discrete_distribution<std::size_t>(w.begin(), w.end());
}

}  // namespace

std::vector<Point> sample_data(const GaussianMixture& gmm, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, "data"));
  auto pick = make_picker(gmm);
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_data_point(gmm, pick, rng));
  return out;
}

Point sample_prior_point(const NoiseSchedule& s, std::uint64_t seed, PriorMode mode, const GaussianMixture* gmm) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto st = schedule_state(s, s.t_max);
  const double z0 = normal(rng);
  const double z1 = normal(rng);
  if (mode == PriorMode::Gaussian) return {st.sigma * z0, st.sigma * z1};
  if (gmm == nullptr) throw std::invalid_argument("teacher-faithful prior needs a data mixture");
  auto pick = make_picker(*gmm);
  const Point x0 = draw_data_point(*gmm, pick, rng);
  return {st.alpha * x0[0] + st.sigma * z0, st.alpha * x0[1] + st.sigma * z1};
}

std::vector<Point> sample_prior(const NoiseSchedule& s, std::size_t n, std::uint64_t seed, PriorMode mode,
                                const GaussianMixture* gmm) {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_prior_point(s, derive_seed(seed, "prior", i), mode, gmm));
  return out;
}

}  // namespace tdisc
