#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tdisc/condnet.hpp"
#include "tdisc/discretization.hpp"
#include "tdisc/grad.hpp"
#include "tdisc/metrics.hpp"
#include "tdisc/optim.hpp"
#include "tdisc/problem.hpp"

namespace tdisc {

/// d(x, y) = mean over coordinates of the squared difference.
template <Scalar T>
T endpoint_distance(const Vec2<T>& x, const Point& target) {
  const T d0 = x[0] - target[0];
  const T d1 = x[1] - target[1];
  return 0.5 * (d0 * d0 + d1 * d1);
}

/// Endpoint of one student solve, eager.
Point student_endpoint(const Problem& problem, const GeneralDiscretization& xi, const Point& x_T, int condition);

/// Maps a tape-resident parameter vector to raw heads for one sample.
using HeadsMap = std::function<RawHeads<grad::Var>(std::span<const grad::Var> params, const Point& x_T, int condition)>;

/// Records decode -> solve -> distance for one sample on `tape` (cleared
/// first), writes d loss / d params into grad_out and returns the loss.
double sample_loss_and_grad(grad::Tape& tape, const Problem& problem, const HeadDecoding& decoding,
                            std::span<const double> params, const HeadsMap& heads, const Point& x_T, int condition,
                            const Point& target, std::span<double> grad_out);

struct BatchGradient {
  double mean_loss = 0.0;
  std::vector<double> grad;
};

/// Mean loss and gradient over the records at `indices`. Per-sample
/// gradients are reduced in ascending position order, so the result does not
/// depend on `jobs`.
BatchGradient batch_loss_and_grad(const Problem& problem, const HeadDecoding& decoding, std::span<const double> params,
                                  const HeadsMap& heads, const TeacherSet& teacher,
                                  std::span<const std::size_t> indices, std::size_t jobs);

/// Heads map that ignores x_T: the parameters are the 3 x N raw heads.
HeadsMap shared_heads_map();
/// Heads map running the network forward pass.
HeadsMap phi_heads_map(const PhiDims& dims, double input_scale);

struct HeadsFit {
  RawHeads<double> heads;
  GeneralDiscretization xi;
  std::vector<double> trace;  // batch loss before each step
  double initial_loss = 0.0;  // on the full set the fit was given
  double final_loss = 0.0;    // of the returned heads, same set
};

/// Shared raw heads minimizing the mean endpoint distance over `teacher`
/// (full set or minibatches per cfg.batch). The returned heads never have a
/// higher full-set loss than the starting heads.
HeadsFit optimize_global(const Problem& problem, const TeacherSet& teacher, std::size_t n_steps,
                         const HeadDecoding& decoding, const TrainConfig& cfg, std::size_t jobs = 1,
                         const std::optional<RawHeads<double>>& init = std::nullopt);

/// Raw heads fitted to a single record.
HeadsFit optimize_per_instance(const Problem& problem, const TeacherSet& teacher, std::size_t record,
                               std::size_t n_steps, const HeadDecoding& decoding, const TrainConfig& cfg,
                               const std::optional<RawHeads<double>>& init = std::nullopt);

/// optimize_per_instance for every record (records run concurrently on `jobs` threads).
std::vector<HeadsFit> optimize_overfit(const Problem& problem, const TeacherSet& teacher, std::size_t n_steps,
                                       const HeadDecoding& decoding, const TrainConfig& cfg, std::size_t jobs = 1,
                                       const std::optional<RawHeads<double>>& init = std::nullopt,
                                       const std::function<void(std::size_t)>& progress = {});

struct TraceRow {
  std::size_t iteration = 0;
  double lr = 0.0;
  double batch_loss = 0.0;
  double ema_loss = 0.0;
};

/// Resumable state of a network training run.
struct TrainState {
  PhiNetwork phi;
  std::vector<double> ema;
  Adam adam;
  std::size_t iteration = 0;  // completed steps
  std::vector<TraceRow> trace;
};

TrainState start_training(PhiNetwork phi, const TrainConfig& cfg);

/// Continue training until cfg.iterations steps are done (or `stop_after`
/// more steps, whichever comes first). Each step samples a batch, records
/// phi -> decode -> solve -> distance per sample, back-propagates, takes a
/// cosine-scheduled Adam step and updates the EMA weights.
void train_instance(TrainState& state, const Problem& problem, const TeacherSet& teacher, const TrainConfig& cfg,
                    std::size_t jobs = 1, std::optional<std::size_t> stop_after = std::nullopt,
                    const std::function<void(const TraceRow&)>& on_step = {});

enum class Strategy { Uniform, LogSNR, Polynomial, Global, Overfit, Instance };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

struct StrategyArtifacts {
  double rho = 7.0;
  std::optional<GeneralDiscretization> global;
  std::map<std::uint64_t, GeneralDiscretization> overfit;  // keyed by record seed
  std::optional<PhiNetwork> phi;
};

struct EvalOptions {
  HistogramConfig histogram;
  std::size_t projections = 128;
  std::uint64_t seed = 0;
};

/// Student endpoints of every record under a strategy.
std::vector<Point> strategy_endpoints(Strategy strategy, const StrategyArtifacts& artifacts, const Problem& problem,
                                      const TeacherSet& eval_set, std::size_t nfe, std::size_t jobs = 1);

/// Endpoint MSE against the teacher endpoints plus KL(student || teacher)
/// and sliced W2 between the student and teacher clouds.
MetricsReport evaluate_strategy(Strategy strategy, const StrategyArtifacts& artifacts, const Problem& problem,
                                const TeacherSet& eval_set, std::size_t nfe, const EvalOptions& options = {},
                                std::size_t jobs = 1);

}  // namespace tdisc
