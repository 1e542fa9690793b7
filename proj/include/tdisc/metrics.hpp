#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tdisc/math.hpp"

namespace tdisc {

struct SampleError {
  Point x_T;
  double error;
};

struct MetricsReport {
  std::string strategy;
  std::size_t nfe = 0;
  double mean_mse = 0.0;
  double kl = 0.0;
  double wasserstein = 0.0;
  std::vector<SampleError> per_sample_errors;
};

struct EndpointMse {
  double mean = 0.0;
  std::vector<double> per_sample;
};

/// Mean over samples of the squared Euclidean distance averaged over coordinates.
EndpointMse endpoint_mse(std::span<const Point> student, std::span<const Point> teacher);

struct HistogramConfig {
  std::size_t bins = 100;   // per axis
  double padding = 0.1;     // fraction of the union bounding box added on each side
  double smoothing = 1e-6;  // added to every bin's probability before renormalizing
};

/// KL(P || Q) between 2-D histograms on a shared grid over the padded union
/// bounding box of both sample sets.
double kl_divergence(std::span<const Point> p, std::span<const Point> q, const HistogramConfig& cfg = {});

/// Sliced 2-Wasserstein distance: sqrt of the mean, over n_projections
/// directions, of the exact 1-D squared W2 between sorted projections.
/// Directions are evenly spaced on the half circle with a seeded random
/// offset. The larger set is subsampled (seeded) to the smaller set's size.
double sliced_wasserstein(std::span<const Point> p, std::span<const Point> q, std::size_t n_projections = 128,
                          std::uint64_t seed = 0);

}  // namespace tdisc
