#pragma once

#include <cstdint>
#include <vector>

#include "tdisc/math.hpp"
#include "tdisc/schedule.hpp"

namespace tdisc {

struct Component {
  double weight;
  Point mean;
  double std;
  int label = 0;
};

/// Parameters of the recursive tree-branch toy distribution.
struct TreeConfig {
  int depth = 5;
  double root_length = 1.2;
  double length_decay = 0.68;
  double branch_angle = 25.0 * 3.14159265358979323846 / 180.0;  // radians
  int components_per_segment = 6;
  double segment_std = 0.02;
  /// Relative branch-angle jitter drawn from seed; 0 keeps the tree symmetric.
  double angle_jitter = 0.0;
  std::uint64_t seed = 0;
  /// Number of class labels assigned to subtrees; 0 leaves every component in class 0.
  int num_classes = 0;

  void validate() const;
  std::size_t component_count() const;
};

/// d eps / d(x, t) alongside eps, for fused tape nodes.
struct EpsJacobian {
  Point eps;
  std::array<std::array<double, 2>, 2> d_dx;  // d_dx[i][j] = d eps_i / d x_j
  Point d_dt;
};

/// Isotropic 2-D Gaussian mixture with exact score under any noise schedule.
///
/// Under x_t = alpha x_0 + sigma eps the perturbed density stays a mixture
/// with means alpha mu_i and variances alpha^2 s_i^2 + sigma^2, so every
/// prediction below is exact.
class GaussianMixture {
public:
  GaussianMixture() = default;
  explicit GaussianMixture(std::vector<Component> components);

  const std::vector<Component>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }

  double log_density(const NoiseSchedule& s, const Point& x, double t) const;
  Point score(const NoiseSchedule& s, const Point& x, double t) const;
  Point eps(const NoiseSchedule& s, const Point& x, double t) const;
  Point data_prediction(const NoiseSchedule& s, const Point& x, double t) const;
  Point velocity(const NoiseSchedule& s, const Point& x, double t) const;
  EpsJacobian eps_jacobian(const NoiseSchedule& s, const Point& x, double t) const;

  /// eps recorded primitive by primitive (O(K) nodes per call). The fused
  /// path used for training is mixture_eps_fused() in solver.hpp; this one is an
  /// independent route for checking it.
  template <Scalar T>
  Vec2<T> eps_traced(const NoiseSchedule& s, const Vec2<T>& x, const T& t) const;

  /// Mixture restricted to one class label, renormalized.
  GaussianMixture restrict_to_label(int label) const;
  int label_count() const;

  /// Axis-aligned bounding box of component means: {min_x, min_y, max_x, max_y}.
  std::array<double, 4> bounding_box() const;
  double max_std() const;

private:
  struct Evaluation;
  void evaluate(const NoiseSchedule& s, const Point& x, double t, bool jacobian, Evaluation& out) const;

  std::vector<Component> components_;
  std::vector<double> log_weights_;
  std::vector<double> variances_;
};

GaussianMixture build_tree_mixture(const TreeConfig& cfg);

enum class PriorMode { Gaussian, TeacherFaithful };

/// Draw n points from the clean data distribution.
std::vector<Point> sample_data(const GaussianMixture& gmm, std::size_t n, std::uint64_t seed);
/// Draw one prior point at t = T from a dedicated generator seeded with seed.
Point sample_prior_point(const NoiseSchedule& s, std::uint64_t seed, PriorMode mode = PriorMode::Gaussian,
                         const GaussianMixture* gmm = nullptr);
std::vector<Point> sample_prior(const NoiseSchedule& s, std::size_t n, std::uint64_t seed,
                                PriorMode mode = PriorMode::Gaussian, const GaussianMixture* gmm = nullptr);

template <Scalar T>
Vec2<T> GaussianMixture::eps_traced(const NoiseSchedule& s, const Vec2<T>& x, const T& t) const {
  const auto st = schedule_state(s, t);
  std::vector<T> logits;
  std::vector<T> g0;
  std::vector<T> g1;
  logits.reserve(size());
  g0.reserve(size());
  g1.reserve(size());
  constexpr double two_pi = 6.283185307179586476925;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& c = components_[i];
    const T d0 = x[0] - st.alpha * c.mean[0];
    const T d1 = x[1] - st.alpha * c.mean[1];
    const T v = st.alpha * st.alpha * variances_[i] + st.sigma * st.sigma;
    logits.push_back(log_weights_[i] - math::log(two_pi * v) - (d0 * d0 + d1 * d1) / (2.0 * v));
    g0.push_back(-d0 / v);
    g1.push_back(-d1 / v);
  }
  const T lse = math::log_sum_exp(std::span<const T>(logits));
  std::vector<T> resp;
  resp.reserve(size());
  for (const auto& l : logits) resp.push_back(math::exp(l - lse));
  const T s0 = math::dot(std::span<const T>(resp), std::span<const T>(g0));
  const T s1 = math::dot(std::span<const T>(resp), std::span<const T>(g1));
  return {-st.sigma * s0, -st.sigma * s1};
}

}  // namespace tdisc
