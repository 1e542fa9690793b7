#include "tdisc/problem.hpp"

#include <random>
#include <stdexcept>

#include "tdisc/optim.hpp"
#include "tdisc/rng.hpp"

namespace tdisc {

Problem Problem::make(const NoiseSchedule& schedule, GaussianMixture mixture, const SolverSpec& solver,
                      bool conditional, PriorMode prior_mode) {
  schedule.validate();
  solver.validate();
  Problem p;
  p.schedule = schedule;
  p.solver = solver;
  p.prior_mode = prior_mode;
  if (conditional) {
    const int labels = mixture.label_count();
    for (int c = 0; c < labels; ++c) p.label_mixtures.push_back(mixture.restrict_to_label(c));
  }
  p.mixture = std::move(mixture);
  return p;
}

const GaussianMixture& Problem::oracle(int condition) const {
  if (condition < 0) return mixture;
  if (condition >= label_dim()) throw std::invalid_argument("condition outside the label range");
  return label_mixtures[static_cast<std::size_t>(condition)];
}

Point record_prior(const Problem& problem, const TeacherRecord& record) {
  return sample_prior_point(problem.schedule, record.seed, problem.prior_mode, &problem.oracle(record.condition));
}

Point teacher_endpoint(const Problem& problem, const TeacherSpec& teacher, const Point& x_T, int condition) {
  const auto xi = heuristic(teacher.heuristic, problem.schedule, static_cast<std::size_t>(teacher.nfe));
  return solve(teacher.solver, mixture_eps(problem.oracle(condition), problem.schedule), problem.schedule, x_T, xi);
}

TeacherSet generate_teacher(const Problem& problem, const TeacherSpec& teacher, std::size_t n, std::uint64_t seed,
                            std::uint64_t oracle_hash, std::size_t jobs) {
  if (n == 0) throw std::invalid_argument("teacher set needs n >= 1");
  if (teacher.nfe < 1) throw std::invalid_argument("teacher nfe must be >= 1");
  teacher.solver.validate();
  TeacherSet set;
  set.schedule = problem.schedule;
  set.teacher = teacher;
  set.prior_mode = problem.prior_mode;
  set.oracle_hash = oracle_hash;
  set.seed = seed;
  set.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = set.records[i];
    r.seed = derive_seed(seed, "teacher", i);
    if (problem.conditional()) {
      std::mt19937_64 rng(derive_seed(r.seed, "condition"));
      std::uniform_int_distribution<int> pick(0, problem.label_dim() - 1);
      r.condition = pick(rng);
    }
  }
  parallel_for(n, jobs, [&](std::size_t i, std::size_t) {
    auto& r = set.records[i];
    r.endpoint = teacher_endpoint(problem, teacher, record_prior(problem, r), r.condition);
  });
  return set;
}

}  // namespace tdisc
