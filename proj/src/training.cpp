#include "tdisc/training.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "tdisc/rng.hpp"

namespace tdisc {

using grad::Var;

Point student_endpoint(const Problem& problem, const GeneralDiscretization& xi, const Point& x_T, int condition) {
  return solve(problem.solver, mixture_eps(problem.oracle(condition), problem.schedule), problem.schedule, x_T, xi);
}

double sample_loss_and_grad(grad::Tape& tape, const Problem& problem, const HeadDecoding& decoding,
                            std::span<const double> params, const HeadsMap& heads, const Point& x_T, int condition,
                            const Point& target, std::span<double> grad_out) {
  if (grad_out.size() != params.size()) throw std::invalid_argument("gradient buffer size mismatch");
  tape.clear();
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (double p : params) leaves.push_back(tape.variable(p));
  const RawHeads<Var> raw = heads(leaves, x_T, condition);
  const Discretization<Var> xi = decode_heads(raw, decoding, problem.schedule);
  const Vec2<Var> start{Var(x_T[0]), Var(x_T[1])};
  const auto eps = mixture_eps_fused(problem.oracle(condition), problem.schedule);
  const Vec2<Var> end = solve(problem.solver, eps, problem.schedule, start, xi);
  const Var loss = endpoint_distance(end, target);
  const auto g = tape.backward(loss);
  for (std::size_t i = 0; i < leaves.size(); ++i) grad_out[i] = g[leaves[i]];
  return loss.value();
}

BatchGradient batch_loss_and_grad(const Problem& problem, const HeadDecoding& decoding, std::span<const double> params,
                                  const HeadsMap& heads, const TeacherSet& teacher,
                                  std::span<const std::size_t> indices, std::size_t jobs) {
  const std::size_t b = indices.size();
  if (b == 0) throw std::invalid_argument("empty batch");
  const std::size_t p = params.size();
  if (jobs <= 1 || b == 1) {
    // Sequential ascending accumulation: same sums as the buffered path.
    grad::Tape tape;
    BatchGradient out;
    out.grad.assign(p, 0.0);
    std::vector<double> g(p);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      const auto& rec = teacher.records.at(indices[i]);
      total += sample_loss_and_grad(tape, problem, decoding, params, heads, record_prior(problem, rec),
                                    rec.condition, rec.endpoint, g);
      for (std::size_t k = 0; k < p; ++k) out.grad[k] += g[k];
    }
    const double inv = 1.0 / static_cast<double>(b);
    out.mean_loss = total * inv;
    for (auto& v : out.grad) v *= inv;
    return out;
  }
  std::vector<double> losses(b);
  std::vector<double> grads(b * p);
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, b));
  std::vector<std::unique_ptr<grad::Tape>> tapes;
  for (std::size_t w = 0; w < workers; ++w) tapes.push_back(std::make_unique<grad::Tape>());
  parallel_for(b, workers, [&](std::size_t i, std::size_t worker) {
    const auto& rec = teacher.records.at(indices[i]);
    const Point x_T = record_prior(problem, rec);
    losses[i] = sample_loss_and_grad(*tapes[worker], problem, decoding, params, heads, x_T, rec.condition,
                                     rec.endpoint, std::span<double>(grads).subspan(i * p, p));
  });
  BatchGradient out;
  out.grad.assign(p, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    total += losses[i];
    const double* g = grads.data() + i * p;
    for (std::size_t k = 0; k < p; ++k) out.grad[k] += g[k];
  }
  const double inv = 1.0 / static_cast<double>(b);
  out.mean_loss = total * inv;
  for (auto& g : out.grad) g *= inv;
  return out;
}

HeadsMap shared_heads_map() {
  return [](std::span<const Var> params, const Point&, int) { return RawHeads<Var>::from_flat(params); };
}

HeadsMap phi_heads_map(const PhiDims& dims, double input_scale) {
  return [dims, input_scale](std::span<const Var> params, const Point& x_T, int condition) {
    return phi_forward<Var>(dims, input_scale, params, {Var(x_T[0]), Var(x_T[1])}, condition);
  };
}

namespace {

bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double mean_loss_shared(const Problem& problem, const HeadDecoding& decoding, const RawHeads<double>& heads,
                        const TeacherSet& teacher, std::span<const std::size_t> indices, std::size_t jobs) {
  const auto xi = decode_heads(heads, decoding, problem.schedule);
  std::vector<double> losses(indices.size());
  parallel_for(indices.size(), jobs, [&](std::size_t i, std::size_t) {
    const auto& rec = teacher.records.at(indices[i]);
    losses[i] = endpoint_distance(student_endpoint(problem, xi, record_prior(problem, rec), rec.condition),
                                  rec.endpoint);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(indices.size());
}

HeadsFit fit_heads(const Problem& problem, const TeacherSet& teacher, std::span<const std::size_t> subset,
                   std::size_t n_steps, const HeadDecoding& decoding, const TrainConfig& cfg, std::size_t jobs,
                   const std::optional<RawHeads<double>>& init, std::uint64_t stream) {
  cfg.validate();
  if (subset.empty()) throw std::invalid_argument("teacher set is empty");
  if (n_steps < 1) throw std::invalid_argument("need N >= 1");
  const RawHeads<double> start = init ? *init : RawHeads<double>::zeros(n_steps);
  if (start.steps() != n_steps) throw std::invalid_argument("initial heads have the wrong step count");

  std::vector<double> params = start.flat();
  const auto map = shared_heads_map();
  Adam adam(params.size(), cfg);
  const bool full_batch = cfg.batch >= subset.size();

  HeadsFit fit;
  fit.trace.reserve(cfg.iterations);
  std::vector<double> best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> batch(subset.begin(), subset.end());
  for (std::size_t s = 0; s < cfg.iterations; ++s) {
    if (!full_batch) {
      const auto picks = batch_indices(subset.size(), cfg.batch, stream, s);
      batch.resize(picks.size());
      for (std::size_t i = 0; i < picks.size(); ++i) batch[i] = subset[picks[i]];
    }
    const auto bg = batch_loss_and_grad(problem, decoding, params, map, teacher, batch, jobs);
    if (!std::isfinite(bg.mean_loss) || !all_finite(bg.grad)) {
      throw TrainingDiverged("non-finite loss while optimizing raw heads", best, s);
    }
    fit.trace.push_back(bg.mean_loss);
    if (full_batch && bg.mean_loss < best_loss) {
      best_loss = bg.mean_loss;
      best = params;
    } else if (!full_batch) {
      best = params;
    }
    adam.step(params, bg.grad, cosine_lr(cfg, s));
  }

  fit.initial_loss = mean_loss_shared(problem, decoding, start, teacher, subset, jobs);
  const auto end_heads = RawHeads<double>::from_flat(params);
  double final_loss = mean_loss_shared(problem, decoding, end_heads, teacher, subset, jobs);
  std::vector<double> chosen = params;
  if (full_batch && best_loss < final_loss) {
    chosen = best;
    final_loss = best_loss;
  }
  if (!std::isfinite(final_loss) || final_loss > fit.initial_loss) {
    chosen = start.flat();
    final_loss = fit.initial_loss;
  }
  fit.heads = RawHeads<double>::from_flat(chosen);
  fit.xi = decode_heads(fit.heads, decoding, problem.schedule);
  fit.final_loss = final_loss;
  return fit;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

HeadsFit optimize_global(const Problem& problem, const TeacherSet& teacher, std::size_t n_steps,
                         const HeadDecoding& decoding, const TrainConfig& cfg, std::size_t jobs,
                         const std::optional<RawHeads<double>>& init) {
  const auto subset = all_indices(teacher.size());
  return fit_heads(problem, teacher, subset, n_steps, decoding, cfg, jobs, init, derive_seed(cfg.seed, "global"));
}

HeadsFit optimize_per_instance(const Problem& problem, const TeacherSet& teacher, std::size_t record,
                               std::size_t n_steps, const HeadDecoding& decoding, const TrainConfig& cfg,
                               const std::optional<RawHeads<double>>& init) {
  if (record >= teacher.size()) throw std::out_of_range("record index outside the teacher set");
  const std::size_t subset[1] = {record};
  return fit_heads(problem, teacher, subset, n_steps, decoding, cfg, 1, init, derive_seed(cfg.seed, "global"));
}

std::vector<HeadsFit> optimize_overfit(const Problem& problem, const TeacherSet& teacher, std::size_t n_steps,
                                       const HeadDecoding& decoding, const TrainConfig& cfg, std::size_t jobs,
                                       const std::optional<RawHeads<double>>& init,
                                       const std::function<void(std::size_t)>& progress) {
  std::vector<HeadsFit> fits(teacher.size());
  parallel_for(teacher.size(), jobs, [&](std::size_t i, std::size_t) {
    fits[i] = optimize_per_instance(problem, teacher, i, n_steps, decoding, cfg, init);
    if (progress) progress(i);
  });
  return fits;
}

TrainState start_training(PhiNetwork phi, const TrainConfig& cfg) {
  TrainState state;
  state.ema = phi.params;
  state.adam = Adam(phi.params.size(), cfg);
  state.phi = std::move(phi);
  return state;
}

namespace {

double mean_loss_phi(const Problem& problem, const PhiNetwork& phi, std::span<const double> params,
                     const TeacherSet& teacher, std::span<const std::size_t> indices, std::size_t jobs) {
  std::vector<double> losses(indices.size());
  parallel_for(indices.size(), jobs, [&](std::size_t i, std::size_t) {
    const auto& rec = teacher.records.at(indices[i]);
    const Point x_T = record_prior(problem, rec);
    const auto heads = phi_forward<double>(phi.dims, phi.input_scale, params, x_T, rec.condition);
    const auto xi = decode_heads(heads, phi.decoding, problem.schedule);
    losses[i] = endpoint_distance(student_endpoint(problem, xi, x_T, rec.condition), rec.endpoint);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(indices.size());
}

}  // namespace

void train_instance(TrainState& state, const Problem& problem, const TeacherSet& teacher, const TrainConfig& cfg,
                    std::size_t jobs, std::optional<std::size_t> stop_after,
                    const std::function<void(const TraceRow&)>& on_step) {
  cfg.validate();
  if (teacher.size() == 0) throw std::invalid_argument("teacher set is empty");
  if (problem.conditional() && state.phi.dims.label_dim != static_cast<std::size_t>(problem.label_dim())) {
    throw std::invalid_argument("network label_dim does not match the problem's classes");
  }
  const auto map = phi_heads_map(state.phi.dims, state.phi.input_scale);
  const std::uint64_t stream = derive_seed(cfg.seed, "instance");
  std::size_t done = 0;
  while (state.iteration < cfg.iterations && (!stop_after || done < *stop_after)) {
    const std::size_t s = state.iteration;
    const auto batch = batch_indices(teacher.size(), cfg.batch, stream, s);
    const auto bg = batch_loss_and_grad(problem, state.phi.decoding, state.phi.params, map, teacher, batch, jobs);
    if (!std::isfinite(bg.mean_loss) || !all_finite(bg.grad)) {
      throw TrainingDiverged("non-finite loss while training the conditioning network", state.phi.params, s);
    }
    TraceRow row;
    row.iteration = s;
    row.batch_loss = bg.mean_loss;
    row.ema_loss = cfg.ema_fraction > 0.0 ? mean_loss_phi(problem, state.phi, state.ema, teacher, batch, jobs)
                                          : bg.mean_loss;
    row.lr = cosine_lr(cfg, s);
    state.adam.step(state.phi.params, bg.grad, row.lr);
    if (cfg.ema_fraction > 0.0) {
      ema_update(state.ema, state.phi.params, cfg.ema_fraction);
    } else {
      state.ema = state.phi.params;
    }
    state.trace.push_back(row);
    state.iteration = s + 1;
    ++done;
    if (on_step) on_step(row);
  }
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Uniform: return "uniform";
    case Strategy::LogSNR: return "logsnr";
    case Strategy::Polynomial: return "polynomial";
    case Strategy::Global: return "global";
    case Strategy::Overfit: return "overfit";
    case Strategy::Instance: return "instance";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& name) {
  for (auto s : {Strategy::Uniform, Strategy::LogSNR, Strategy::Polynomial, Strategy::Global, Strategy::Overfit,
                 Strategy::Instance}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

std::vector<Point> strategy_endpoints(Strategy strategy, const StrategyArtifacts& artifacts, const Problem& problem,
                                      const TeacherSet& eval_set, std::size_t nfe, std::size_t jobs) {
  std::optional<GeneralDiscretization> shared;
  switch (strategy) {
    case Strategy::Uniform: shared = heuristic(HeuristicKind::Uniform, problem.schedule, nfe, artifacts.rho); break;
    case Strategy::LogSNR: shared = heuristic(HeuristicKind::LogSNR, problem.schedule, nfe, artifacts.rho); break;
    case Strategy::Polynomial:
      shared = heuristic(HeuristicKind::Polynomial, problem.schedule, nfe, artifacts.rho);
      break;
    case Strategy::Global:
      if (!artifacts.global) throw std::invalid_argument("global strategy needs a learned discretization");
      if (artifacts.global->steps() != nfe) throw std::invalid_argument("global discretization has the wrong NFE");
      shared = artifacts.global;
      break;
    case Strategy::Overfit:
      for (const auto& [seed, xi] : artifacts.overfit) {
        if (xi.steps() != nfe) throw std::invalid_argument("overfit discretization has the wrong NFE");
      }
      break;
    case Strategy::Instance:
      if (!artifacts.phi) throw std::invalid_argument("instance strategy needs a trained network");
      if (artifacts.phi->dims.steps != nfe) throw std::invalid_argument("network was trained for a different NFE");
      break;
  }
  std::vector<Point> out(eval_set.size());
  parallel_for(eval_set.size(), jobs, [&](std::size_t i, std::size_t) {
    const auto& rec = eval_set.records[i];
    const Point x_T = record_prior(problem, rec);
    if (shared) {
      out[i] = student_endpoint(problem, *shared, x_T, rec.condition);
    } else if (strategy == Strategy::Overfit) {
      const auto it = artifacts.overfit.find(rec.seed);
      if (it == artifacts.overfit.end()) {
        throw std::invalid_argument("overfit strategy has no discretization for record seed " +
                                    std::to_string(rec.seed));
      }
      out[i] = student_endpoint(problem, it->second, x_T, rec.condition);
    } else {
      const auto& phi = *artifacts.phi;
      const auto xi = decode_heads(phi_forward(phi, x_T, rec.condition), phi.decoding, problem.schedule);
      out[i] = student_endpoint(problem, xi, x_T, rec.condition);
    }
  });
  return out;
}

MetricsReport evaluate_strategy(Strategy strategy, const StrategyArtifacts& artifacts, const Problem& problem,
                                const TeacherSet& eval_set, std::size_t nfe, const EvalOptions& options,
                                std::size_t jobs) {
  if (eval_set.size() == 0) throw std::invalid_argument("evaluation set is empty");
  const auto student = strategy_endpoints(strategy, artifacts, problem, eval_set, nfe, jobs);
  std::vector<Point> teacher;
  teacher.reserve(eval_set.size());
  for (const auto& r : eval_set.records) teacher.push_back(r.endpoint);
  const auto mse = endpoint_mse(student, teacher);

  MetricsReport report;
  report.strategy = to_string(strategy);
  report.nfe = nfe;
  report.mean_mse = mse.mean;
  report.kl = kl_divergence(student, teacher, options.histogram);
  report.wasserstein = sliced_wasserstein(student, teacher, options.projections, options.seed);
  report.per_sample_errors.reserve(eval_set.size());
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    report.per_sample_errors.push_back({record_prior(problem, eval_set.records[i]), mse.per_sample[i]});
  }
  return report;
}

}  // namespace tdisc
