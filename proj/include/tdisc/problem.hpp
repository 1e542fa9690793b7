#pragma once

#include <cstdint>
#include <vector>

#include "tdisc/discretization.hpp"
#include "tdisc/mixture.hpp"
#include "tdisc/schedule.hpp"
#include "tdisc/solver.hpp"

namespace tdisc {

/// Everything fixed about a sampling problem: the schedule, the exact score
/// oracle (per class when conditional), the student solver and the prior.
struct Problem {
  NoiseSchedule schedule;
  GaussianMixture mixture;
  std::vector<GaussianMixture> label_mixtures;  // empty when unconditional
  SolverSpec solver;
  PriorMode prior_mode = PriorMode::Gaussian;

  /// Builds label_mixtures when conditional is set.
  static Problem make(const NoiseSchedule& schedule, GaussianMixture mixture, const SolverSpec& solver,
                      bool conditional = false, PriorMode prior_mode = PriorMode::Gaussian);

  bool conditional() const { return !label_mixtures.empty(); }
  int label_dim() const { return static_cast<int>(label_mixtures.size()); }
  /// Oracle for a condition; condition < 0 means unconditional.
  const GaussianMixture& oracle(int condition) const;
};

struct TeacherSpec {
  SolverSpec solver = SolverSpec::euler();
  int nfe = 100;
  HeuristicKind heuristic = HeuristicKind::Uniform;
};

/// One teacher pair; x_T is regenerated from seed instead of stored.
struct TeacherRecord {
  std::uint64_t seed = 0;
  int condition = -1;  // -1: unconditional
  Point endpoint{};
};

struct TeacherSet {
  NoiseSchedule schedule;
  TeacherSpec teacher;
  PriorMode prior_mode = PriorMode::Gaussian;
  std::uint64_t oracle_hash = 0;
  std::uint64_t seed = 0;
  std::vector<TeacherRecord> records;

  std::size_t size() const { return records.size(); }
};

/// Prior point of a record, re-materialized from its seed.
Point record_prior(const Problem& problem, const TeacherRecord& record);

/// Teacher endpoint for one prior point.
Point teacher_endpoint(const Problem& problem, const TeacherSpec& teacher, const Point& x_T, int condition);

TeacherSet generate_teacher(const Problem& problem, const TeacherSpec& teacher, std::size_t n, std::uint64_t seed,
                            std::uint64_t oracle_hash = 0, std::size_t jobs = 1);

}  // namespace tdisc
