#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tdisc/experiment.hpp"
#include "tdisc/rng.hpp"

using namespace tdisc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tdisc_test_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kSmall = R"({
  "seed": 5,
  "solver": {"nfe_list": [3]},
  "strategy": {"hidden": 16, "strategies": ["uniform", "global", "overfit", "instance"]},
  "train": {"teacher_samples": 60, "network": {"iterations": 24, "batch": 16},
            "raw": {"iterations": 20, "batch": 30}, "overfit_iterations": 10}
})";

ExperimentConfig small_config(const fs::path& dir) {
  std::ofstream(dir / "cfg.json") << kSmall;
  return load_config(dir / "cfg.json");
}

#ifdef TDISC_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string(TDISC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST_CASE("config round trip and defaults") {
  const auto dir = scratch("config");
  const auto cfg = small_config(dir);
  CHECK(cfg.base_dir == dir);
  CHECK(cfg.train.teacher_samples == 60);
  CHECK(cfg.strategy.strategies.size() == 4);
  const auto j1 = config_to_json(cfg);
  const auto again = config_from_json(j1);
  CHECK(config_to_json(again).dump() == j1.dump());

  std::ofstream(dir / "empty.json").close();
  const auto d = load_config(dir / "empty.json");
  CHECK(config_to_json(d).dump() == config_to_json(ExperimentConfig{}).dump());
  CHECK(d.train.teacher_samples == 20000);
  CHECK(d.solver.nfe_list == std::vector<std::size_t>{3, 4, 5, 6});

  ExperimentConfig vp;
  vp.schedule = NoiseSchedule::vp();
  CHECK(config_to_json(config_from_json(config_to_json(vp))).dump() == config_to_json(vp).dump());
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(config_from_json(io::json::parse(R"({"sede": 1})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(io::json::parse(R"({"train": {"network": {"lr": 1}}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(io::json::parse(R"({"seed": "x"})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(io::json::parse(R"({"schedule": {"kind": "ot", "T": 1.0}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(io::json::parse(R"({"solver": {"nfe_list": "5..3"}})")), ConfigError);
}

TEST_CASE("parse_nfe_list") {
  CHECK(parse_nfe_list("3..10") == std::vector<std::size_t>{3, 4, 5, 6, 7, 8, 9, 10});
  CHECK(parse_nfe_list("3,5,7") == std::vector<std::size_t>{3, 5, 7});
  CHECK(parse_nfe_list("4") == std::vector<std::size_t>{4});
  CHECK_THROWS_AS(parse_nfe_list("0..2"), ConfigError);
  CHECK_THROWS_AS(parse_nfe_list("a"), ConfigError);
  CHECK_THROWS_AS(parse_nfe_list(""), ConfigError);
}

TEST_CASE("gen-teacher: byte-identical, creates directories, refuses overwrite, checks the hash") {
  const auto a = scratch("teacher_a");
  const auto b = scratch("teacher_b");
  auto ca = small_config(a);
  auto cb = small_config(b);
  ca.train.teacher_samples = cb.train.teacher_samples = 10;
  ca.paths.dataset = cb.paths.dataset = "deep/nested/teacher.jsonl";
  cmd_gen_teacher(ca, false);
  cmd_gen_teacher(cb, false, RunOptions{4, nullptr});
  const std::string ta = io::read_text(ca.dataset_path());
  CHECK(ta == io::read_text(cb.dataset_path()));
  std::size_t lines = 0;
  for (char ch : ta) lines += ch == '\n' ? 1 : 0;
  CHECK(lines == 11);  // header + 10 records

  CHECK_THROWS_AS(cmd_gen_teacher(ca, false), ConfigError);
  cmd_gen_teacher(ca, true);
  CHECK(io::read_text(ca.dataset_path()) == ta);
  CHECK(load_teacher(ca).size() == 10);

  auto other = ca;
  other.tree.depth = 4;
  CHECK_THROWS_AS(load_teacher(other), ConfigError);
  CHECK_THROWS_AS(io::read_teacher(ca.dataset_path(), ca.oracle_hash() + 1), ConfigError);
  auto resized = ca;
  resized.train.teacher_samples = 11;
  CHECK_THROWS_AS(load_teacher(resized), ConfigError);
}

TEST_CASE("train, eval and sweep contracts") {
  const auto dir = scratch("pipeline");
  const auto cfg = small_config(dir);
  CHECK_THROWS_AS(cmd_train(cfg, Strategy::Global, 3), ConfigError);  // no dataset yet
  const auto teacher = cmd_gen_teacher(cfg, false);

  // Only uniform can be evaluated: one row, the rest skipped.
  const auto partial = cmd_sweep(cfg, {3}, false);
  CHECK(partial.rows.size() == 1);
  CHECK(partial.skipped.size() == 3);
  CHECK(fs::exists(cfg.sweep_path()));
  CHECK_THROWS_AS(cmd_eval(cfg, Strategy::Global, 3), ConfigError);
  CHECK_THROWS_AS(cmd_train(cfg, Strategy::Uniform, 3), ConfigError);

  cmd_train(cfg, Strategy::Global, 3);
  cmd_train(cfg, Strategy::Overfit, 3);
  cmd_train(cfg, Strategy::Instance, 3);

  // Overfit map: one discretization per record, keyed by seed.
  const auto map = io::overfit_from_json(io::read_json(cfg.checkpoint_path(Strategy::Overfit, 3)));
  CHECK(map.size() == teacher.size());
  for (const auto& r : teacher.records) {
    REQUIRE(map.count(r.seed) == 1);
    CHECK(map.at(r.seed).steps() == 3);
  }

  // Iteration-0 loss of the network run equals the uniform loss on that batch.
  const auto trace = io::read_trace_csv(cfg.trace_path(Strategy::Instance, 3));
  REQUIRE(trace.size() == cfg.train.network.iterations);
  const Problem p = cfg.problem();
  const auto batch = batch_indices(teacher.size(), cfg.train.network.batch,
                                   derive_seed(derive_seed(cfg.seed, "train-instance", 3), "instance"), 0);
  const auto uniform = heuristic(HeuristicKind::Uniform, p.schedule, 3);
  const auto loaded = load_teacher(cfg);
  double sum = 0.0;
  for (std::size_t i : batch) {
    const auto& r = loaded.records[i];
    sum += endpoint_distance(student_endpoint(p, uniform, record_prior(p, r), -1), r.endpoint);
  }
  CHECK(trace[0].batch_loss == doctest::Approx(sum / batch.size()).epsilon(1e-11));

  const auto full = cmd_sweep(cfg, {3}, false);
  CHECK(full.rows.size() == 4);
  CHECK(full.skipped.empty());
  const auto csv = io::read_text(cfg.sweep_path());
  CHECK(csv.rfind("nfe,strategy,mse,kl,wasserstein\n", 0) == 0);

  const auto report = cmd_export_scatter(cfg, Strategy::Instance, 3, dir / "scatter.csv");
  CHECK(io::read_scatter_csv(dir / "scatter.csv").size() == teacher.size());
  const auto ev = cmd_eval(cfg, Strategy::Instance, 3);
  CHECK(ev.mean_mse == report.mean_mse);
  CHECK(fs::exists(cfg.report_path(Strategy::Instance, 3)));
}

TEST_CASE("interrupted network training resumes without a jump") {
  const auto dir = scratch("resume");
  const auto cfg = small_config(dir);
  cmd_gen_teacher(cfg, false);
  TrainOptions stop;
  stop.stop_after = 10;
  cmd_train(cfg, Strategy::Instance, 3, {}, stop);
  CHECK_FALSE(artifacts_present(cfg, Strategy::Instance, 3));
  CHECK(io::read_trace_csv(cfg.trace_path(Strategy::Instance, 3)).size() == 10);
  TrainOptions resume;
  resume.resume = true;
  cmd_train(cfg, Strategy::Instance, 3, {}, resume);
  CHECK(artifacts_present(cfg, Strategy::Instance, 3));
  const auto resumed = io::read_trace_csv(cfg.trace_path(Strategy::Instance, 3));
  REQUIRE(resumed.size() == cfg.train.network.iterations);

  const auto ref_dir = scratch("resume_ref");
  const auto ref_cfg = small_config(ref_dir);
  cmd_gen_teacher(ref_cfg, false);
  cmd_train(ref_cfg, Strategy::Instance, 3);
  const auto straight = io::read_trace_csv(ref_cfg.trace_path(Strategy::Instance, 3));
  for (std::size_t i = 0; i < resumed.size(); ++i) {
    CHECK(resumed[i].batch_loss == doctest::Approx(straight[i].batch_loss).epsilon(1e-8));
  }
  // The first resumed step moves no more than 10x the step before the interrupt.
  const double last_change = std::abs(resumed[9].batch_loss - resumed[8].batch_loss);
  CHECK(std::abs(resumed[10].batch_loss - resumed[9].batch_loss) <= 10 * last_change + 1e-12);
}

TEST_CASE("check-grad passes and the corrupted tanh fails") {
  ExperimentConfig cfg;
  const auto ok = cmd_check_grad(cfg);
  CHECK(ok.passed());
  CHECK(ok.max_rel_error < 1e-4);
  CHECK(ok.weights == PhiDims{3, cfg.strategy.hidden, 0}.parameter_count());
  REQUIRE_FALSE(ok.primitives.empty());
  for (std::size_t i = 1; i < ok.primitives.size(); ++i) {
    CHECK(ok.primitives[i - 1].max_rel_error >= ok.primitives[i].max_rel_error);
  }
  grad::testing::set_tanh_partial_scale(1.5);
  const auto bad = cmd_check_grad(cfg);
  grad::testing::set_tanh_partial_scale(1.0);
  CHECK_FALSE(bad.passed());
}

#ifdef TDISC_CLI_PATH
TEST_CASE("CLI exit codes") {
  const auto dir = scratch("cli");
  std::ofstream(dir / "cfg.json") << kSmall;
  std::ofstream(dir / "bad.json") << R"({"bogus": 1})";
  const std::string c = "-c " + (dir / "cfg.json").string();
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("eval -c " + (dir / "bad.json").string() + " --strategy uniform --nfe 3") == 1);
  CHECK(run_cli("eval " + c + " --strategy uniform --nfe 3") == 1);  // no dataset
  CHECK(run_cli("gen-teacher " + c) == 0);
  CHECK(run_cli("gen-teacher " + c) == 1);
  CHECK(run_cli("eval " + c + " --strategy uniform --nfe 3") == 0);
  CHECK(run_cli("eval " + c + " --strategy wobbly --nfe 3") == 1);
  CHECK(run_cli("sweep " + c + " --nfe-list 3") == 1);  // learned cells missing
  CHECK(run_cli("check-grad " + c) == 0);
  CHECK(run_cli("check-grad " + c + " --corrupt-tanh 1.5") == 2);
}
#endif
