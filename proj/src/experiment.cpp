#include "tdisc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "tdisc/rng.hpp"

namespace tdisc {

namespace fs = std::filesystem;
using io::json;
using io::round12;

TrainBlock::TrainBlock() {
  raw.lr_max = 0.05;
  raw.lr_min = 1e-4;
  raw.ema_fraction = 0.0;
}

TrainConfig TrainBlock::overfit() const {
  TrainConfig c = raw;
  c.iterations = overfit_iterations;
  c.batch = 1;
  return c;
}

namespace {

std::mutex g_log_mutex;

void log_line(const RunOptions& opt, const std::string& line) {
  if (opt.log == nullptr) return;
  std::lock_guard lock(g_log_mutex);
  *opt.log << line << std::endl;
}

void check_keys(const json& j, const char* block, std::initializer_list<const char*> allowed) {
  if (j.is_null()) return;
  if (!j.is_object()) throw ConfigError(std::string("config block '") + block + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(std::string("unknown key '") + key + "' in config block '" + block + "'");
    }
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

const json& block(const json& j, const char* key) {
  static const json empty = json::object();
  return j.is_object() && j.contains(key) ? j.at(key) : empty;
}

json train_to_json(const TrainConfig& c) {
  return {{"lr_max", round12(c.lr_max)},
          {"lr_min", round12(c.lr_min)},
          {"batch", c.batch},
          {"iterations", c.iterations},
          {"adam_betas", {round12(c.adam_beta1), round12(c.adam_beta2)}},
          {"adam_eps", round12(c.adam_eps)},
          {"ema_fraction", round12(c.ema_fraction)},
          {"distance", "mse"}};
}

TrainConfig train_from_json(const json& j, const TrainConfig& defaults, const char* name) {
  check_keys(j, name, {"lr_max", "lr_min", "batch", "iterations", "adam_betas", "adam_eps", "ema_fraction", "distance"});
  TrainConfig c = defaults;
  c.lr_max = get_or(j, "lr_max", c.lr_max);
  c.lr_min = get_or(j, "lr_min", c.lr_min);
  c.batch = get_or(j, "batch", c.batch);
  c.iterations = get_or(j, "iterations", c.iterations);
  if (j.is_object() && j.contains("adam_betas")) {
    const auto b = get_or(j, "adam_betas", std::vector<double>{});
    if (b.size() != 2) throw ConfigError("adam_betas needs two values");
    c.adam_beta1 = b[0];
    c.adam_beta2 = b[1];
  }
  c.adam_eps = get_or(j, "adam_eps", c.adam_eps);
  c.ema_fraction = get_or(j, "ema_fraction", c.ema_fraction);
  const auto distance = get_or<std::string>(j, "distance", "mse");
  if (distance != "mse") throw ConfigError("only the mse distance is supported");
  c.validate();
  return c;
}

std::string artifact_name(Strategy s, std::size_t nfe) { return to_string(s) + "_nfe" + std::to_string(nfe); }

bool learned(Strategy s) { return s == Strategy::Global || s == Strategy::Overfit || s == Strategy::Instance; }

}  // namespace

void ExperimentConfig::validate() const {
  try {
    schedule.validate();
    solver.student.validate();
    solver.teacher.solver.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  tree.validate();
  strategy.decoding.bounds.validate();
  train.network.validate();
  train.raw.validate();
  if (solver.teacher.nfe < 1) throw ConfigError("teacher nfe must be >= 1");
  if (solver.nfe_list.empty()) throw ConfigError("solver.nfe_list must not be empty");
  for (auto n : solver.nfe_list) {
    if (n < 1) throw ConfigError("every NFE must be >= 1");
  }
  if (strategy.strategies.empty()) throw ConfigError("strategy.strategies must not be empty");
  if (strategy.hidden < 1) throw ConfigError("strategy.hidden must be >= 1");
  if (!(strategy.rho > 0.0)) throw ConfigError("strategy.rho must be positive");
  if (strategy.conditional && tree.num_classes < 1) {
    throw ConfigError("conditional mode needs tree.num_classes >= 1");
  }
  if (train.teacher_samples < 1) throw ConfigError("train.teacher_samples must be >= 1");
  if (train.overfit_iterations < 1) throw ConfigError("train.overfit_iterations must be >= 1");
  if (metrics.histogram.bins < 1) throw ConfigError("metrics.bins must be >= 1");
  if (metrics.projections < 1) throw ConfigError("metrics.projections must be >= 1");
  if (!(metrics.histogram.smoothing >= 0.0) || !(metrics.histogram.padding >= 0.0)) {
    throw ConfigError("metrics padding and smoothing must be non-negative");
  }
}

Problem ExperimentConfig::problem() const {
  return Problem::make(schedule, build_tree_mixture(tree), solver.student, strategy.conditional, solver.prior);
}

std::uint64_t ExperimentConfig::oracle_hash() const {
  const json j = config_to_json(*this);
  json oracle;
  oracle["tree"] = j["tree"];
  oracle["conditional"] = strategy.conditional;
  return fnv1a64(oracle.dump());
}

fs::path ExperimentConfig::dataset_path() const { return base_dir / paths.dataset; }
fs::path ExperimentConfig::checkpoint_path(Strategy s, std::size_t nfe) const {
  return base_dir / paths.checkpoints / (artifact_name(s, nfe) + ".json");
}
fs::path ExperimentConfig::trace_path(Strategy s, std::size_t nfe) const {
  return base_dir / paths.checkpoints / (artifact_name(s, nfe) + "_trace.csv");
}
fs::path ExperimentConfig::report_path(Strategy s, std::size_t nfe) const {
  return base_dir / paths.reports / (artifact_name(s, nfe) + ".json");
}
fs::path ExperimentConfig::sweep_path() const { return base_dir / paths.reports / "sweep.csv"; }

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["schedule"] = io::to_json(cfg.schedule);
  const auto& t = cfg.tree;
  j["tree"] = {{"depth", t.depth},
               {"root_length", round12(t.root_length)},
               {"length_decay", round12(t.length_decay)},
               {"branch_angle_deg", round12(t.branch_angle * 180.0 / std::numbers::pi)},
               {"components_per_segment", t.components_per_segment},
               {"segment_std", round12(t.segment_std)},
               {"angle_jitter", round12(t.angle_jitter)},
               {"seed", t.seed},
               {"num_classes", t.num_classes}};
  json nfe = json::array();
  for (auto n : cfg.solver.nfe_list) nfe.push_back(n);
  j["solver"] = {{"student", io::to_json(cfg.solver.student)},
                 {"teacher", io::to_json(cfg.solver.teacher)},
                 {"nfe_list", nfe},
                 {"prior", io::to_string(cfg.solver.prior)}};
  json strategies = json::array();
  for (auto s : cfg.strategy.strategies) strategies.push_back(to_string(s));
  j["strategy"] = {{"strategies", strategies},
                   {"rho", round12(cfg.strategy.rho)},
                   {"decoding", io::to_json(cfg.strategy.decoding)},
                   {"hidden", cfg.strategy.hidden},
                   {"conditional", cfg.strategy.conditional},
                   {"eval_weights", cfg.strategy.eval_ema ? "ema" : "raw"}};
  j["train"] = {{"teacher_samples", cfg.train.teacher_samples},
                {"network", train_to_json(cfg.train.network)},
                {"raw", train_to_json(cfg.train.raw)},
                {"overfit_iterations", cfg.train.overfit_iterations},
                {"overfit_from_global", cfg.train.overfit_from_global}};
  j["metrics"] = {{"bins", cfg.metrics.histogram.bins},
                  {"padding", round12(cfg.metrics.histogram.padding)},
                  {"smoothing", round12(cfg.metrics.histogram.smoothing)},
                  {"projections", cfg.metrics.projections}};
  j["paths"] = {{"dataset", cfg.paths.dataset}, {"checkpoints", cfg.paths.checkpoints}, {"reports", cfg.paths.reports}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.is_null()) return cfg;
  try {
    check_keys(j, "<root>", {"seed", "schedule", "tree", "solver", "strategy", "train", "metrics", "paths"});
    cfg.seed = get_or(j, "seed", cfg.seed);

    const json& sch = block(j, "schedule");
    check_keys(sch, "schedule", {"kind", "T", "t0", "vp_beta", "vp_steps"});
    cfg.schedule = io::schedule_from_json(sch, cfg.schedule);

    const json& tree = block(j, "tree");
    check_keys(tree, "tree",
               {"depth", "root_length", "length_decay", "branch_angle_deg", "components_per_segment", "segment_std",
                "angle_jitter", "seed", "num_classes"});
    auto& t = cfg.tree;
    t.depth = get_or(tree, "depth", t.depth);
    t.root_length = get_or(tree, "root_length", t.root_length);
    t.length_decay = get_or(tree, "length_decay", t.length_decay);
    if (tree.contains("branch_angle_deg")) {
      t.branch_angle = get_or(tree, "branch_angle_deg", 0.0) * std::numbers::pi / 180.0;
    }
    t.components_per_segment = get_or(tree, "components_per_segment", t.components_per_segment);
    t.segment_std = get_or(tree, "segment_std", t.segment_std);
    t.angle_jitter = get_or(tree, "angle_jitter", t.angle_jitter);
    t.seed = get_or(tree, "seed", t.seed);
    t.num_classes = get_or(tree, "num_classes", t.num_classes);

    const json& sol = block(j, "solver");
    check_keys(sol, "solver", {"student", "teacher", "nfe_list", "prior"});
    check_keys(block(sol, "student"), "solver.student", {"family", "max_order"});
    check_keys(block(sol, "teacher"), "solver.teacher", {"family", "max_order", "nfe", "heuristic"});
    cfg.solver.student = io::solver_from_json(block(sol, "student"), cfg.solver.student);
    cfg.solver.teacher = io::teacher_spec_from_json(block(sol, "teacher"), cfg.solver.teacher);
    if (sol.contains("nfe_list")) {
      const json& nl = sol.at("nfe_list");
      cfg.solver.nfe_list = nl.is_string() ? parse_nfe_list(nl.get<std::string>())
                                           : nl.get<std::vector<std::size_t>>();
    }
    if (sol.contains("prior")) cfg.solver.prior = io::prior_mode_from_string(sol.at("prior").get<std::string>());

    const json& st = block(j, "strategy");
    check_keys(st, "strategy", {"strategies", "rho", "decoding", "hidden", "conditional", "eval_weights"});
    if (st.contains("strategies")) {
      cfg.strategy.strategies.clear();
      for (const auto& name : st.at("strategies")) {
        cfg.strategy.strategies.push_back(strategy_from_string(name.get<std::string>()));
      }
    }
    cfg.strategy.rho = get_or(st, "rho", cfg.strategy.rho);
    check_keys(block(st, "decoding"), "strategy.decoding",
               {"b_dtau", "b_gamma", "dtau_head", "gamma_head", "timestep_param"});
    cfg.strategy.decoding = io::decoding_from_json(block(st, "decoding"), cfg.strategy.decoding);
    cfg.strategy.hidden = get_or(st, "hidden", cfg.strategy.hidden);
    cfg.strategy.conditional = get_or(st, "conditional", cfg.strategy.conditional);
    const auto weights = get_or<std::string>(st, "eval_weights", cfg.strategy.eval_ema ? "ema" : "raw");
    if (weights != "ema" && weights != "raw") throw ConfigError("strategy.eval_weights must be 'ema' or 'raw'");
    cfg.strategy.eval_ema = weights == "ema";

    const json& tr = block(j, "train");
    check_keys(tr, "train", {"teacher_samples", "network", "raw", "overfit_iterations", "overfit_from_global"});
    cfg.train.teacher_samples = get_or(tr, "teacher_samples", cfg.train.teacher_samples);
    cfg.train.network = train_from_json(block(tr, "network"), cfg.train.network, "train.network");
    cfg.train.raw = train_from_json(block(tr, "raw"), cfg.train.raw, "train.raw");
    cfg.train.overfit_iterations = get_or(tr, "overfit_iterations", cfg.train.overfit_iterations);
    cfg.train.overfit_from_global = get_or(tr, "overfit_from_global", cfg.train.overfit_from_global);

    const json& me = block(j, "metrics");
    check_keys(me, "metrics", {"bins", "padding", "smoothing", "projections"});
    cfg.metrics.histogram.bins = get_or(me, "bins", cfg.metrics.histogram.bins);
    cfg.metrics.histogram.padding = get_or(me, "padding", cfg.metrics.histogram.padding);
    cfg.metrics.histogram.smoothing = get_or(me, "smoothing", cfg.metrics.histogram.smoothing);
    cfg.metrics.projections = get_or(me, "projections", cfg.metrics.projections);

    const json& pa = block(j, "paths");
    check_keys(pa, "paths", {"dataset", "checkpoints", "reports"});
    cfg.paths.dataset = get_or(pa, "dataset", cfg.paths.dataset);
    cfg.paths.checkpoints = get_or(pa, "checkpoints", cfg.paths.checkpoints);
    cfg.paths.reports = get_or(pa, "reports", cfg.paths.reports);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  const std::string text = io::read_text(path);
  json j;
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
  }
  ExperimentConfig cfg = config_from_json(j);
  cfg.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return cfg;
}

std::vector<std::size_t> parse_nfe_list(const std::string& text) {
  std::vector<std::size_t> out;
  auto parse_one = [&](const std::string& s) -> std::size_t {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad NFE '" + s + "'");
    }
    if (used != s.size() || v < 1) throw ConfigError("bad NFE '" + s + "'");
    return static_cast<std::size_t>(v);
  };
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const std::size_t lo = parse_one(text.substr(0, dots));
    const std::size_t hi = parse_one(text.substr(dots + 2));
    if (hi < lo) throw ConfigError("empty NFE range '" + text + "'");
    for (std::size_t n = lo; n <= hi; ++n) out.push_back(n);
    return out;
  }
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_one(item));
  if (out.empty()) throw ConfigError("empty NFE list");
  return out;
}

TeacherSet cmd_gen_teacher(const ExperimentConfig& cfg, bool force, const RunOptions& opt) {
  const fs::path path = cfg.dataset_path();
  if (fs::exists(path) && !force) {
    throw ConfigError("teacher dataset " + path.string() + " exists; pass --force to overwrite");
  }
  const Problem problem = cfg.problem();
  log_line(opt, "generating " + std::to_string(cfg.train.teacher_samples) + " teacher samples (" +
                    to_string(cfg.solver.teacher.solver.family) + ", " + std::to_string(cfg.solver.teacher.nfe) +
                    " steps)");
  TeacherSet set = generate_teacher(problem, cfg.solver.teacher, cfg.train.teacher_samples,
                                    derive_seed(cfg.seed, "teacher-set"), cfg.oracle_hash(), opt.jobs);
  io::write_teacher(path, set);
  log_line(opt, "wrote " + path.string());
  return set;
}

TeacherSet load_teacher(const ExperimentConfig& cfg) {
  const fs::path path = cfg.dataset_path();
  if (!fs::exists(path)) throw ConfigError("teacher dataset " + path.string() + " not found; run gen-teacher first");
  TeacherSet set = io::read_teacher(path, cfg.oracle_hash());
  const json want = io::to_json(cfg.schedule);
  const bool same = io::to_json(set.schedule) == want && io::to_json(set.teacher) == io::to_json(cfg.solver.teacher) &&
                    set.prior_mode == cfg.solver.prior && set.seed == derive_seed(cfg.seed, "teacher-set") &&
                    set.size() == cfg.train.teacher_samples;
  if (!same) {
    throw ConfigError("teacher dataset " + path.string() +
                      " was generated under a different schedule, teacher, prior, seed or size; rerun gen-teacher "
                      "--force");
  }
  return set;
}

namespace {

HeadDecoding decoding_of(const ExperimentConfig& cfg) { return cfg.strategy.decoding; }

json heads_json(const RawHeads<double>& h) {
  json j;
  for (auto [name, v] : {std::pair{"o_tau", &h.o_tau}, std::pair{"o_dtau", &h.o_dtau}, std::pair{"o_gamma", &h.o_gamma}}) {
    json a = json::array();
    for (double x : *v) a.push_back(round12(x));
    j[name] = a;
  }
  return j;
}

RawHeads<double> heads_from_json(const json& j) {
  RawHeads<double> h;
  try {
    h.o_tau = j.at("o_tau").get<std::vector<double>>();
    h.o_dtau = j.at("o_dtau").get<std::vector<double>>();
    h.o_gamma = j.at("o_gamma").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed raw heads: ") + e.what());
  }
  return h;
}

void check_artifact(const json& j, Strategy s, std::size_t nfe, const fs::path& path) {
  const json& meta = j.contains("meta") ? j.at("meta") : j;
  if (meta.value("strategy", std::string()) != to_string(s) || meta.value("nfe", std::size_t{0}) != nfe) {
    throw ConfigError("artifact " + path.string() + " is not a " + to_string(s) + " artifact for NFE " +
                      std::to_string(nfe));
  }
}

fs::path train_global(const ExperimentConfig& cfg, const Problem& problem, const TeacherSet& teacher,
                      std::size_t nfe, const RunOptions& opt) {
  TrainConfig tc = cfg.train.raw;
  tc.seed = derive_seed(cfg.seed, "train-global", nfe);
  log_line(opt, "global: optimizing shared heads at NFE " + std::to_string(nfe));
  const HeadsFit fit = optimize_global(problem, teacher, nfe, decoding_of(cfg), tc, opt.jobs);
  json meta = {{"strategy", "global"},
               {"nfe", nfe},
               {"heads", heads_json(fit.heads)},
               {"initial_loss", round12(fit.initial_loss)},
               {"final_loss", round12(fit.final_loss)},
               {"iterations", tc.iterations}};
  const fs::path path = cfg.checkpoint_path(Strategy::Global, nfe);
  io::write_json(path, io::to_json(fit.xi, meta));
  std::vector<TraceRow> rows;
  rows.reserve(fit.trace.size());
  for (std::size_t s = 0; s < fit.trace.size(); ++s) rows.push_back({s, cosine_lr(tc, s), fit.trace[s], fit.trace[s]});
  io::write_trace_csv(cfg.trace_path(Strategy::Global, nfe), rows);
  log_line(opt, "global: loss " + io::fmt12(fit.initial_loss) + " -> " + io::fmt12(fit.final_loss));
  return path;
}

fs::path train_overfit(const ExperimentConfig& cfg, const Problem& problem, const TeacherSet& teacher,
                       std::size_t nfe, const RunOptions& opt) {
  std::optional<RawHeads<double>> init;
  if (cfg.train.overfit_from_global) {
    const fs::path gpath = cfg.checkpoint_path(Strategy::Global, nfe);
    if (!fs::exists(gpath)) throw ConfigError("overfit_from_global needs " + gpath.string() + "; train global first");
    const json g = io::read_json(gpath);
    check_artifact(g, Strategy::Global, nfe, gpath);
    init = heads_from_json(g.at("meta").at("heads"));
  }
  TrainConfig tc = cfg.train.overfit();
  tc.seed = derive_seed(cfg.seed, "train-overfit", nfe);
  log_line(opt, "overfit: fitting " + std::to_string(teacher.size()) + " records at NFE " + std::to_string(nfe));
  std::size_t done = 0;
  const std::size_t every = std::max<std::size_t>(1, teacher.size() / 10);
  const auto fits = optimize_overfit(problem, teacher, nfe, decoding_of(cfg), tc, opt.jobs, init, [&](std::size_t) {
    std::size_t d;
    {
      std::lock_guard lock(g_log_mutex);
      d = ++done;
    }
    if (d % every == 0) log_line(opt, "overfit: " + std::to_string(d) + "/" + std::to_string(teacher.size()));
  });
  std::map<std::uint64_t, GeneralDiscretization> map;
  double initial = 0.0;
  double final = 0.0;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    if (!map.emplace(teacher.records[i].seed, fits[i].xi).second) {
      throw ConfigError("duplicate record seed in teacher dataset");
    }
    initial += fits[i].initial_loss;
    final += fits[i].final_loss;
  }
  const double n = static_cast<double>(fits.size());
  json meta = {{"strategy", "overfit"},
               {"nfe", nfe},
               {"mean_initial_loss", round12(initial / n)},
               {"mean_final_loss", round12(final / n)},
               {"iterations", tc.iterations}};
  const fs::path path = cfg.checkpoint_path(Strategy::Overfit, nfe);
  io::write_json(path, io::overfit_to_json(map, nfe, meta));
  log_line(opt, "overfit: mean loss " + io::fmt12(initial / n) + " -> " + io::fmt12(final / n));
  return path;
}

TrainConfig network_train_config(const ExperimentConfig& cfg, std::size_t nfe) {
  TrainConfig tc = cfg.train.network;
  tc.seed = derive_seed(cfg.seed, "train-instance", nfe);
  return tc;
}

fs::path train_network(const ExperimentConfig& cfg, const Problem& problem, const TeacherSet& teacher,
                       std::size_t nfe, const RunOptions& opt, const TrainOptions& topt) {
  const TrainConfig tc = network_train_config(cfg, nfe);
  const fs::path path = cfg.checkpoint_path(Strategy::Instance, nfe);
  const fs::path trace = cfg.trace_path(Strategy::Instance, nfe);
  TrainState state;
  if (topt.resume && fs::exists(path)) {
    const json j = io::read_json(path);
    if (j.value("N", std::size_t{0}) != nfe || j.value("iterations", std::size_t{0}) != tc.iterations) {
      throw ConfigError("checkpoint " + path.string() + " was written for a different NFE or iteration budget");
    }
    state = io::checkpoint_from_json(j, tc);
    state.trace = fs::exists(trace) ? io::read_trace_csv(trace) : std::vector<TraceRow>{};
    if (state.trace.size() != state.iteration) {
      throw ConfigError("loss trace " + trace.string() + " does not match the checkpoint iteration");
    }
    log_line(opt, "instance: resuming at iteration " + std::to_string(state.iteration));
  } else {
    PhiDims dims;
    dims.steps = nfe;
    dims.hidden = cfg.strategy.hidden;
    dims.label_dim = problem.conditional() ? static_cast<std::size_t>(problem.label_dim()) : 0;
    state = start_training(
        init_phi(derive_seed(cfg.seed, "phi", nfe), dims, decoding_of(cfg), 1.0 / cfg.schedule.sigma_max()), tc);
  }

  auto save = [&] {
    io::write_json(path, io::checkpoint_to_json(state, tc));
    io::write_trace_csv(trace, state.trace);
  };
  const std::size_t log_every = std::max<std::size_t>(1, tc.iterations / 20);
  auto on_step = [&](const TraceRow& r) {
    if (r.iteration % log_every == 0 || r.iteration + 1 == tc.iterations) {
      log_line(opt, "instance: iter " + std::to_string(r.iteration) + " lr " + io::fmt12(r.lr) + " loss " +
                        io::fmt12(r.batch_loss) + " ema " + io::fmt12(r.ema_loss));
    }
  };
  std::optional<std::size_t> remaining = topt.stop_after;
  try {
    while (state.iteration < tc.iterations && (!remaining || *remaining > 0)) {
      std::optional<std::size_t> chunk = remaining;
      if (topt.checkpoint_every > 0) {
        chunk = chunk ? std::min(*chunk, topt.checkpoint_every) : topt.checkpoint_every;
      }
      const std::size_t before = state.iteration;
      train_instance(state, problem, teacher, tc, opt.jobs, chunk, on_step);
      if (remaining) *remaining -= state.iteration - before;
      if (topt.checkpoint_every > 0) save();
    }
  } catch (const TrainingDiverged&) {
    save();
    throw;
  }
  save();
  if (state.iteration < tc.iterations) {
    log_line(opt, "instance: stopped at iteration " + std::to_string(state.iteration) + " of " +
                      std::to_string(tc.iterations) + "; rerun with --resume to continue");
  }
  return path;
}

}  // namespace

fs::path cmd_train(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe, const RunOptions& opt,
                   const TrainOptions& topt) {
  if (!learned(strategy)) {
    throw ConfigError("strategy '" + to_string(strategy) + "' has nothing to train; use global, overfit or instance");
  }
  if (nfe < 1) throw ConfigError("--nfe must be >= 1");
  const TeacherSet teacher = load_teacher(cfg);
  const Problem problem = cfg.problem();
  switch (strategy) {
    case Strategy::Global: return train_global(cfg, problem, teacher, nfe, opt);
    case Strategy::Overfit: return train_overfit(cfg, problem, teacher, nfe, opt);
    default: return train_network(cfg, problem, teacher, nfe, opt, topt);
  }
}

bool artifacts_present(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe) {
  if (!learned(strategy)) return true;
  if (!fs::exists(cfg.checkpoint_path(strategy, nfe))) return false;
  if (strategy == Strategy::Instance) {
    // An interrupted run is not a finished artifact.
    const json j = io::read_json(cfg.checkpoint_path(strategy, nfe));
    return j.value("iteration", std::size_t{0}) >= j.value("iterations", std::size_t{1});
  }
  return true;
}

StrategyArtifacts load_artifacts(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe) {
  StrategyArtifacts art;
  art.rho = cfg.strategy.rho;
  if (!learned(strategy)) return art;
  const fs::path path = cfg.checkpoint_path(strategy, nfe);
  if (!fs::exists(path)) {
    throw ConfigError("no " + to_string(strategy) + " artifact for NFE " + std::to_string(nfe) + " at " +
                      path.string() + "; run train first");
  }
  const json j = io::read_json(path);
  try {
    switch (strategy) {
      case Strategy::Global:
        check_artifact(j, strategy, nfe, path);
        art.global = io::discretization_from_json(j);
        break;
      case Strategy::Overfit:
        check_artifact(j, strategy, nfe, path);
        art.overfit = io::overfit_from_json(j);
        break;
      default:
        if (j.value("N", std::size_t{0}) != nfe) throw ConfigError("checkpoint " + path.string() + " has the wrong N");
        if (j.value("iteration", std::size_t{0}) < j.value("iterations", std::size_t{1})) {
          throw ConfigError("checkpoint " + path.string() + " is from an unfinished run; resume training first");
        }
        art.phi = io::network_from_checkpoint(j, cfg.strategy.eval_ema);
        break;
    }
  } catch (const json::exception& e) {
    throw ConfigError("malformed artifact " + path.string() + ": " + e.what());
  }
  return art;
}

namespace {

MetricsReport evaluate(const ExperimentConfig& cfg, const Problem& problem, const TeacherSet& teacher,
                       Strategy strategy, std::size_t nfe, std::size_t jobs) {
  const StrategyArtifacts art = load_artifacts(cfg, strategy, nfe);
  EvalOptions eo;
  eo.histogram = cfg.metrics.histogram;
  eo.projections = cfg.metrics.projections;
  eo.seed = derive_seed(cfg.seed, "eval");
  MetricsReport r = evaluate_strategy(strategy, art, problem, teacher, nfe, eo, jobs);
  io::write_json(cfg.report_path(strategy, nfe), io::report_to_json(r));
  return r;
}

}  // namespace

MetricsReport cmd_eval(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe, const RunOptions& opt) {
  if (nfe < 1) throw ConfigError("--nfe must be >= 1");
  const TeacherSet teacher = load_teacher(cfg);
  const MetricsReport r = evaluate(cfg, cfg.problem(), teacher, strategy, nfe, opt.jobs);
  log_line(opt, to_string(strategy) + " nfe " + std::to_string(nfe) + ": mse " + io::fmt12(r.mean_mse) + " kl " +
                    io::fmt12(r.kl) + " w " + io::fmt12(r.wasserstein));
  return r;
}

SweepResult cmd_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& nfe_list, bool build,
                      const RunOptions& opt) {
  if (nfe_list.empty()) throw ConfigError("empty NFE list");
  if (build && !fs::exists(cfg.dataset_path())) cmd_gen_teacher(cfg, false, opt);
  const TeacherSet teacher = load_teacher(cfg);
  const Problem problem = cfg.problem();
  const auto& strategies = cfg.strategy.strategies;

  if (build) {
    // Overfit may start from the global heads, so it trains in a second wave.
    for (int wave = 0; wave < 2; ++wave) {
      std::vector<std::pair<Strategy, std::size_t>> tasks;
      for (auto nfe : nfe_list) {
        for (auto s : strategies) {
          if (learned(s) && (s == Strategy::Overfit) == (wave == 1) && !artifacts_present(cfg, s, nfe)) {
            tasks.emplace_back(s, nfe);
          }
        }
      }
      RunOptions inner = opt;
      inner.jobs = 1;
      parallel_for(tasks.size(), opt.jobs, [&](std::size_t i, std::size_t) {
        const auto [s, nfe] = tasks[i];
        TrainOptions topt;
        topt.resume = true;
        switch (s) {
          case Strategy::Global: train_global(cfg, problem, teacher, nfe, inner); break;
          case Strategy::Overfit: train_overfit(cfg, problem, teacher, nfe, inner); break;
          default: train_network(cfg, problem, teacher, nfe, inner, topt); break;
        }
      });
    }
  }

  struct Cell {
    Strategy strategy;
    std::size_t nfe;
    std::optional<MetricsReport> report;
  };
  std::vector<Cell> cells;
  for (auto nfe : nfe_list) {
    for (auto s : strategies) cells.push_back({s, nfe, std::nullopt});
  }
  parallel_for(cells.size(), opt.jobs, [&](std::size_t i, std::size_t) {
    auto& c = cells[i];
    if (!artifacts_present(cfg, c.strategy, c.nfe)) return;
    c.report = evaluate(cfg, problem, teacher, c.strategy, c.nfe, 1);
  });

  SweepResult result;
  for (const auto& c : cells) {
    if (c.report) {
      result.rows.push_back(*c.report);
    } else {
      result.skipped.push_back(to_string(c.strategy) + "@" + std::to_string(c.nfe));
      log_line(opt, "warning: no " + to_string(c.strategy) + " artifact for NFE " + std::to_string(c.nfe) +
                        "; row skipped");
    }
  }
  io::write_sweep_csv(cfg.sweep_path(), result.rows);
  log_line(opt, "wrote " + cfg.sweep_path().string() + " (" + std::to_string(result.rows.size()) + " rows)");
  return result;
}

MetricsReport cmd_export_scatter(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe, const fs::path& out,
                                 const RunOptions& opt) {
  const MetricsReport r = cmd_eval(cfg, strategy, nfe, opt);
  io::write_scatter_csv(out, r);
  log_line(opt, "wrote " + out.string() + " (" + std::to_string(r.per_sample_errors.size()) + " rows)");
  return r;
}

bool GradCheckReport::passed() const {
  if (!(max_rel_error < tolerance)) return false;
  return std::all_of(primitives.begin(), primitives.end(),
                     [&](const PrimitiveCheck& p) { return p.max_rel_error < primitive_tolerance; });
}

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kRelFloor = 1e-6;

double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kRelFloor}); }

// f maps inputs to one output; checks every partial at one point.
using ScalarFn = std::function<grad::Var(std::span<const grad::Var>)>;

double check_point(const ScalarFn& f, const std::vector<double>& x) {
  grad::Tape tape;
  std::vector<grad::Var> leaves;
  for (double v : x) leaves.push_back(tape.variable(v));
  const grad::Var y = f(leaves);
  const auto g = tape.backward(y);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = kFdStep * std::max(1.0, std::abs(x[i]));
    auto eval = [&](double xi) {
      std::vector<grad::Var> c(x.begin(), x.end());
      c[i] = grad::Var(xi);
      return f(c).value();
    };
    const double fd = (eval(x[i] + h) - eval(x[i] - h)) / (2.0 * h);
    worst = std::max(worst, rel_error(g[leaves[i]], fd));
  }
  return worst;
}

GaussianMixture random_mixture(std::uint64_t seed, std::size_t k) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  std::uniform_real_distribution<double> sd(0.1, 0.4);
  std::uniform_real_distribution<double> w(0.5, 1.5);
  std::vector<Component> comps;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    comps.push_back({w(rng), {pos(rng), pos(rng)}, sd(rng), 0});
    total += comps.back().weight;
  }
  for (auto& c : comps) c.weight /= total;
  return GaussianMixture(std::move(comps));
}

std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed, const NoiseSchedule& schedule) {
  using grad::Var;
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  struct Case {
    std::string name;
    std::size_t arity;
    double lo, hi;
    ScalarFn f;
    std::function<bool(const std::vector<double>&)> near_kink = [](const std::vector<double>&) { return false; };
  };
  const GaussianMixture gmm = random_mixture(derive_seed(seed, "primitive-mixture"), 10);
  const auto fused = mixture_eps_fused(gmm, schedule);
  const double t_lo = schedule.t_min + 0.1 * (schedule.t_max - schedule.t_min);
  const double t_hi = schedule.t_max - 0.1 * (schedule.t_max - schedule.t_min);
  std::vector<Case> cases = {
      {"add", 2, -3, 3, [](auto x) { return x[0] + x[1]; }},
      {"sub", 2, -3, 3, [](auto x) { return x[0] - x[1]; }},
      {"mul", 2, -3, 3, [](auto x) { return x[0] * x[1]; }},
      {"div", 2, 0.5, 3, [](auto x) { return x[0] / x[1]; }},
      {"neg", 1, -3, 3, [](auto x) { return -x[0]; }},
      {"exp", 1, -3, 3, [](auto x) { return grad::exp(x[0]); }},
      {"log", 1, 0.1, 5, [](auto x) { return grad::log(x[0]); }},
      {"tanh", 1, -3, 3, [](auto x) { return grad::tanh(x[0]); }},
      {"relu", 1, -3, 3, [](auto x) { return grad::relu(x[0]); },
       [](const std::vector<double>& x) { return std::abs(x[0]) < 1e-4; }},
      {"sigmoid", 1, -4, 4, [](auto x) { return grad::sigmoid(x[0]); }},
      {"sqrt", 1, 0.1, 5, [](auto x) { return grad::sqrt(x[0]); }},
      {"pow", 1, 0.1, 5, [](auto x) { return grad::pow(x[0], 2.5); }},
      {"max", 2, -3, 3, [](auto x) { return grad::max(x[0], x[1]); },
       [](const std::vector<double>& x) { return std::abs(x[0] - x[1]) < 1e-4; }},
      {"min", 2, -3, 3, [](auto x) { return grad::min(x[0], x[1]); },
       [](const std::vector<double>& x) { return std::abs(x[0] - x[1]) < 1e-4; }},
      {"sum", 5, -3, 3, [](auto x) { return grad::sum(x); }},
      {"log_sum_exp", 5, -3, 3, [](auto x) { return grad::log_sum_exp(x); }},
      {"dot", 6, -3, 3, [](auto x) { return grad::dot(x.subspan(0, 3), x.subspan(3, 3)); }},
      {"mixture_eps[0]", 3, 0, 1,
       [&](auto x) { return fused({x[0], x[1]}, x[2])[0]; }},
      {"mixture_eps[1]", 3, 0, 1,
       [&](auto x) { return fused({x[0], x[1]}, x[2])[1]; }},
  };
  std::vector<PrimitiveCheck> out;
  for (const auto& c : cases) {
    PrimitiveCheck pc{c.name, 0.0, 0.0};
    for (int k = 0; k < 100; ++k) {
      std::vector<double> x(c.arity);
      if (c.name.rfind("mixture_eps", 0) == 0) {
        x = {uni(-1.5, 1.5), uni(-1.5, 1.5), uni(t_lo, t_hi)};
      } else {
        for (auto& v : x) v = uni(c.lo, c.hi);
      }
      if (c.near_kink(x)) continue;
      const double e = check_point(c.f, x);
      if (e > pc.max_rel_error) {
        pc.max_rel_error = e;
        pc.at = x[0];
      }
    }
    out.push_back(pc);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.max_rel_error > b.max_rel_error; });
  return out;
}

}  // namespace

GradCheckReport cmd_check_grad(const ExperimentConfig& cfg) {
  const std::uint64_t seed = derive_seed(cfg.seed, "check-grad");
  const Problem problem =
      Problem::make(cfg.schedule, random_mixture(derive_seed(seed, "mixture"), 10), SolverSpec::ipndm(3));
  const std::size_t steps = 3;

  PhiDims dims;
  dims.steps = steps;
  dims.hidden = cfg.strategy.hidden;
  PhiNetwork phi = init_phi(derive_seed(seed, "phi"), dims, cfg.strategy.decoding, 1.0 / cfg.schedule.sigma_max());
  // Non-zero output layer so that every head, and so every weight, matters.
  {
    std::mt19937_64 rng(derive_seed(seed, "phi-output"));
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    const std::size_t first = dims.hidden * dims.in_dim();
    for (std::size_t i = first; i < phi.params.size(); ++i) phi.params[i] = u(rng);
  }
  const Point x_T = sample_prior_point(problem.schedule, derive_seed(seed, "prior"));
  TeacherSpec teacher;
  const Point target = teacher_endpoint(problem, teacher, x_T, -1);

  auto loss = [&](std::span<const double> params) {
    const auto heads = phi_forward<double>(dims, phi.input_scale, params, x_T, -1);
    const auto xi = decode_heads(heads, phi.decoding, problem.schedule);
    return endpoint_distance(student_endpoint(problem, xi, x_T, -1), target);
  };

  grad::Tape tape;
  std::vector<double> g(phi.params.size());
  sample_loss_and_grad(tape, problem, phi.decoding, phi.params, phi_heads_map(dims, phi.input_scale), x_T, -1, target,
                       g);

  GradCheckReport report;
  report.weights = phi.params.size();
  std::vector<double> p = phi.params;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + kFdStep;
    const double up = loss(p);
    p[i] = orig - kFdStep;
    const double down = loss(p);
    p[i] = orig;
    const double fd = (up - down) / (2.0 * kFdStep);
    const double e = rel_error(g[i], fd);
    if (!std::isfinite(e)) throw NumericalError("non-finite gradient during check-grad");
    if (e > report.max_rel_error) {
      report.max_rel_error = e;
      report.worst_weight = i;
    }
  }
  report.primitives = check_primitives(derive_seed(seed, "primitives"), problem.schedule);
  return report;
}

}  // namespace tdisc
