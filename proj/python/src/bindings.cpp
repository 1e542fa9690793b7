#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tdisc/experiment.hpp"

namespace py = pybind11;
using namespace tdisc;

namespace {

std::vector<Point> to_points(const std::vector<std::array<double, 2>>& xs) { return {xs.begin(), xs.end()}; }

}  // namespace

PYBIND11_MODULE(_tdisc, m) {
  m.doc() = "Learned timestep discretization on analytic Gaussian-mixture oracles";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::enum_<ScheduleKind>(m, "ScheduleKind")
      .value("VE", ScheduleKind::VE)
      .value("VP", ScheduleKind::VP)
      .value("OT", ScheduleKind::OT);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_static("ot", &NoiseSchedule::ot, py::arg("t_max") = 0.988, py::arg("t_min") = 0.002)
      .def_static("ve", &NoiseSchedule::ve, py::arg("t_max") = 80.0, py::arg("t_min") = 0.002)
      .def_static("vp", &NoiseSchedule::vp, py::arg("t_max") = 1.0, py::arg("t_min") = 1e-3)
      .def_readwrite("kind", &NoiseSchedule::kind)
      .def_readwrite("t_max", &NoiseSchedule::t_max)
      .def_readwrite("t_min", &NoiseSchedule::t_min)
      .def_readwrite("vp_steps", &NoiseSchedule::vp_steps)
      .def("validate", &NoiseSchedule::validate)
      .def("sigma_max", &NoiseSchedule::sigma_max);

  m.def("alpha_sigma", &alpha_sigma);
  m.def("log_snr", &log_snr);
  m.def("ode_coefficients", &ode_coefficients);
  m.def("ve_to_ot", [](double t, const Point& x) {
    const auto r = ve_to_ot(t, x);
    return py::make_tuple(r.t, r.x);
  });
  m.def("ot_to_ve", [](double t, const Point& x) {
    const auto r = ot_to_ve(t, x);
    return py::make_tuple(r.t, r.x);
  });

  py::class_<TreeConfig>(m, "TreeConfig")
      .def(py::init<>())
      .def_readwrite("depth", &TreeConfig::depth)
      .def_readwrite("root_length", &TreeConfig::root_length)
      .def_readwrite("length_decay", &TreeConfig::length_decay)
      .def_readwrite("branch_angle", &TreeConfig::branch_angle)
      .def_readwrite("components_per_segment", &TreeConfig::components_per_segment)
      .def_readwrite("segment_std", &TreeConfig::segment_std)
      .def_readwrite("angle_jitter", &TreeConfig::angle_jitter)
      .def_readwrite("seed", &TreeConfig::seed)
      .def_readwrite("num_classes", &TreeConfig::num_classes);

  py::class_<GaussianMixture>(m, "GaussianMixture")
      .def(py::init([](const std::vector<std::tuple<double, Point, double>>& comps) {
             std::vector<Component> cs;
             for (const auto& [w, mu, sd] : comps) cs.push_back({w, mu, sd, 0});
             return GaussianMixture(cs);
           }),
           py::arg("components"), "List of (weight, (mx, my), std).")
      .def("__len__", &GaussianMixture::size)
      .def("log_density", &GaussianMixture::log_density)
      .def("score", &GaussianMixture::score)
      .def("eps", &GaussianMixture::eps)
      .def("data_prediction", &GaussianMixture::data_prediction)
      .def("velocity", &GaussianMixture::velocity)
      .def("bounding_box", &GaussianMixture::bounding_box)
      .def("sample", [](const GaussianMixture& g, std::size_t n, std::uint64_t seed) { return sample_data(g, n, seed); });
  m.def("build_tree_mixture", &build_tree_mixture, py::arg("config") = TreeConfig{});

  py::enum_<SolverFamily>(m, "SolverFamily").value("Euler", SolverFamily::Euler).value("IPNDM", SolverFamily::IPNDM);
  py::class_<SolverSpec>(m, "SolverSpec")
      .def_static("euler", &SolverSpec::euler)
      .def_static("ipndm", &SolverSpec::ipndm, py::arg("order") = 3)
      .def_readwrite("family", &SolverSpec::family)
      .def_readwrite("max_order", &SolverSpec::max_order);

  py::class_<GeneralDiscretization>(m, "Discretization")
      .def(py::init([](std::vector<double> taus, std::vector<double> dtaus, std::vector<double> gammas) {
        return GeneralDiscretization{std::move(taus), std::move(dtaus), std::move(gammas)};
      }))
      .def_readwrite("taus", &GeneralDiscretization::taus)
      .def_readwrite("dtaus", &GeneralDiscretization::dtaus)
      .def_readwrite("gammas", &GeneralDiscretization::gammas)
      .def_property_readonly("steps", &GeneralDiscretization::steps);

  py::enum_<HeuristicKind>(m, "HeuristicKind")
      .value("Uniform", HeuristicKind::Uniform)
      .value("LogSNR", HeuristicKind::LogSNR)
      .value("Polynomial", HeuristicKind::Polynomial);
  m.def("heuristic", &heuristic, py::arg("kind"), py::arg("schedule"), py::arg("n_steps"), py::arg("rho") = 7.0);

  py::class_<HeadDecoding>(m, "HeadDecoding")
      .def(py::init<>())
      .def_property(
          "b_dtau", [](const HeadDecoding& d) { return d.bounds.b_dtau; },
          [](HeadDecoding& d, double v) { d.bounds.b_dtau = v; })
      .def_property(
          "b_gamma", [](const HeadDecoding& d) { return d.bounds.b_gamma; },
          [](HeadDecoding& d, double v) { d.bounds.b_gamma = v; })
      .def_readwrite("dtau_head", &HeadDecoding::dtau_head)
      .def_readwrite("gamma_head", &HeadDecoding::gamma_head);
  m.def(
      "decode_heads",
      [](std::vector<double> o_tau, std::vector<double> o_dtau, std::vector<double> o_gamma, const HeadDecoding& dec,
         const NoiseSchedule& s) {
        return decode_heads(RawHeads<double>{std::move(o_tau), std::move(o_dtau), std::move(o_gamma)}, dec, s);
      },
      py::arg("o_tau"), py::arg("o_dtau"), py::arg("o_gamma"), py::arg("decoding") = HeadDecoding{},
      py::arg("schedule") = NoiseSchedule::ot());

  m.def(
      "solve",
      [](const SolverSpec& spec, const GaussianMixture& gmm, const NoiseSchedule& s, const Point& x_T,
         const GeneralDiscretization& xi) { return solve(spec, mixture_eps(gmm, s), s, x_T, xi); },
      py::arg("spec"), py::arg("mixture"), py::arg("schedule"), py::arg("x_T"), py::arg("xi"));
  m.def(
      "reference_solve",
      [](const GaussianMixture& gmm, const NoiseSchedule& s, const Point& x_T, int nfe) {
        return reference_solve(mixture_eps(gmm, s), s, x_T, nfe);
      },
      py::arg("mixture"), py::arg("schedule"), py::arg("x_T"), py::arg("nfe"));

  m.def(
      "endpoint_mse",
      [](const std::vector<std::array<double, 2>>& a, const std::vector<std::array<double, 2>>& b) {
        return endpoint_mse(to_points(a), to_points(b)).mean;
      });
  m.def(
      "kl_divergence",
      [](const std::vector<std::array<double, 2>>& p, const std::vector<std::array<double, 2>>& q, std::size_t bins) {
        HistogramConfig cfg;
        cfg.bins = bins;
        return kl_divergence(to_points(p), to_points(q), cfg);
      },
      py::arg("p"), py::arg("q"), py::arg("bins") = 100);
  m.def(
      "sliced_wasserstein",
      [](const std::vector<std::array<double, 2>>& p, const std::vector<std::array<double, 2>>& q,
         std::size_t projections, std::uint64_t seed) {
        return sliced_wasserstein(to_points(p), to_points(q), projections, seed);
      },
      py::arg("p"), py::arg("q"), py::arg("projections") = 128, py::arg("seed") = 0);

  // Experiment layer: configs are passed as JSON text.
  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_static("from_json",
                  [](const std::string& text, const std::string& base_dir) {
                    auto cfg = config_from_json(text.empty() ? io::json() : io::json::parse(text));
                    cfg.base_dir = base_dir;
                    return cfg;
                  },
                  py::arg("text"), py::arg("base_dir") = ".")
      .def_static("load", [](const std::string& path) { return load_config(path); })
      .def("to_json", [](const ExperimentConfig& c) { return config_to_json(c).dump(2); })
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_property(
          "base_dir", [](const ExperimentConfig& c) { return c.base_dir.string(); },
          [](ExperimentConfig& c, const std::string& d) { c.base_dir = d; });

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("strategy", &MetricsReport::strategy)
      .def_readonly("nfe", &MetricsReport::nfe)
      .def_readonly("mean_mse", &MetricsReport::mean_mse)
      .def_readonly("kl", &MetricsReport::kl)
      .def_readonly("wasserstein", &MetricsReport::wasserstein)
      .def_property_readonly("per_sample_errors", [](const MetricsReport& r) {
        std::vector<double> e;
        for (const auto& s : r.per_sample_errors) e.push_back(s.error);
        return e;
      });

  const auto opts = [](std::size_t jobs) { return RunOptions{jobs, nullptr}; };
  m.def(
      "gen_teacher",
      [opts](const ExperimentConfig& c, bool force, std::size_t jobs) {
        py::gil_scoped_release release;
        return cmd_gen_teacher(c, force, opts(jobs)).size();
      },
      py::arg("config"), py::arg("force") = false, py::arg("jobs") = 1);
  m.def(
      "train",
      [opts](const ExperimentConfig& c, const std::string& strategy, std::size_t nfe, std::size_t jobs) {
        py::gil_scoped_release release;
        return cmd_train(c, strategy_from_string(strategy), nfe, opts(jobs)).string();
      },
      py::arg("config"), py::arg("strategy"), py::arg("nfe"), py::arg("jobs") = 1);
  m.def(
      "evaluate",
      [opts](const ExperimentConfig& c, const std::string& strategy, std::size_t nfe, std::size_t jobs) {
        py::gil_scoped_release release;
        return cmd_eval(c, strategy_from_string(strategy), nfe, opts(jobs));
      },
      py::arg("config"), py::arg("strategy"), py::arg("nfe"), py::arg("jobs") = 1);
  m.def(
      "check_grad",
      [](const ExperimentConfig& c) {
        const auto r = cmd_check_grad(c);
        return py::dict(py::arg("passed") = r.passed(), py::arg("max_rel_error") = r.max_rel_error,
                        py::arg("weights") = r.weights);
      },
      py::arg("config") = ExperimentConfig{});
}
