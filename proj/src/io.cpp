#include "tdisc/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tdisc/errors.hpp"

namespace tdisc::io {

namespace fs = std::filesystem;

double round12(double x) {
  if (!std::isfinite(x)) return x;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return std::strtod(buf, nullptr);
}

std::string fmt12(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

namespace {

json numbers(std::span<const double> xs) {
  json a = json::array();
  for (double x : xs) a.push_back(round12(x));
  return a;
}

std::vector<double> read_numbers(const json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string("expected an array for '") + what + "'");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError(std::string("non-numeric entry in '") + what + "'");
    out.push_back(v.get<double>());
  }
  return out;
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

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
  return j.at(key);
}

// W is rows x cols, row-major inside the flat vector starting at offset.
json matrix(std::span<const double> flat, std::size_t offset, std::size_t rows, std::size_t cols) {
  json m = json::array();
  for (std::size_t r = 0; r < rows; ++r) m.push_back(numbers(flat.subspan(offset + r * cols, cols)));
  return m;
}

void read_matrix(const json& m, std::size_t rows, std::size_t cols, std::vector<double>& out) {
  if (!m.is_array() || m.size() != rows) throw ConfigError("checkpoint matrix has the wrong row count");
  for (const auto& row : m) {
    const auto v = read_numbers(row, "matrix row");
    if (v.size() != cols) throw ConfigError("checkpoint matrix has the wrong column count");
    out.insert(out.end(), v.begin(), v.end());
  }
}

json layers(const PhiDims& dims, std::span<const double> p) {
  const std::size_t in = dims.in_dim();
  const std::size_t h = dims.hidden;
  const std::size_t o = dims.out_dim();
  json j;
  j["layer1"] = {{"w", matrix(p, 0, h, in)}, {"b", numbers(p.subspan(h * in, h))}};
  j["layer2"] = {{"w", matrix(p, h * in + h, o, h)}, {"b", numbers(p.subspan(h * in + h + o * h, o))}};
  return j;
}

std::vector<double> read_layers(const json& j, const PhiDims& dims) {
  std::vector<double> p;
  p.reserve(dims.parameter_count());
  read_matrix(field(field(j, "layer1"), "w"), dims.hidden, dims.in_dim(), p);
  const auto b1 = read_numbers(field(field(j, "layer1"), "b"), "layer1.b");
  if (b1.size() != dims.hidden) throw ConfigError("layer1.b has the wrong length");
  p.insert(p.end(), b1.begin(), b1.end());
  read_matrix(field(field(j, "layer2"), "w"), dims.out_dim(), dims.hidden, p);
  const auto b2 = read_numbers(field(field(j, "layer2"), "b"), "layer2.b");
  if (b2.size() != dims.out_dim()) throw ConfigError("layer2.b has the wrong length");
  p.insert(p.end(), b2.begin(), b2.end());
  return p;
}

PhiDims dims_from_json(const json& j) {
  PhiDims d;
  d.steps = field(j, "N").get<std::size_t>();
  d.hidden = field(field(j, "dims"), "hidden").get<std::size_t>();
  d.label_dim = field(field(j, "dims"), "label_dim").get<std::size_t>();
  return d;
}

PhiNetwork network_shell(const json& j) {
  PhiNetwork phi;
  phi.dims = dims_from_json(j);
  phi.seed = field(j, "seed").get<std::uint64_t>();
  phi.input_scale = field(j, "input_scale").get<double>();
  phi.decoding = decoding_from_json(field(j, "decoding"));
  phi.decoding.bounds.b_dtau = field(field(j, "bounds"), "b_dtau").get<double>();
  phi.decoding.bounds.b_gamma = field(field(j, "bounds"), "b_gamma").get<double>();
  return phi;
}

}  // namespace

json to_json(const NoiseSchedule& s) {
  json j;
  j["kind"] = tdisc::to_string(s.kind);
  j["T"] = round12(s.t_max);
  j["t0"] = round12(s.t_min);
  if (s.kind == ScheduleKind::VP) {
    j["vp_beta"] = {round12(s.vp_beta_start), round12(s.vp_beta_end)};
    j["vp_steps"] = round12(s.vp_steps);
  }
  return j;
}

NoiseSchedule schedule_from_json(const json& j, const NoiseSchedule& defaults) {
  NoiseSchedule s = defaults;
  if (j.is_object() && j.contains("kind")) {
    try {
      s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    // Endpoints default per kind unless given.
    if (s.kind != defaults.kind) {
      const NoiseSchedule d = s.kind == ScheduleKind::VE   ? NoiseSchedule::ve()
                              : s.kind == ScheduleKind::VP ? NoiseSchedule::vp()
                                                           : NoiseSchedule::ot();
      s.t_max = d.t_max;
      s.t_min = d.t_min;
    }
  }
  s.t_max = get_or(j, "T", s.t_max);
  s.t_min = get_or(j, "t0", s.t_min);
  if (j.is_object() && j.contains("vp_beta")) {
    const auto b = read_numbers(j.at("vp_beta"), "vp_beta");
    if (b.size() != 2) throw ConfigError("vp_beta needs two values");
    s.vp_beta_start = b[0];
    s.vp_beta_end = b[1];
  }
  s.vp_steps = get_or(j, "vp_steps", s.vp_steps);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

json to_json(const SolverSpec& s) { return {{"family", tdisc::to_string(s.family)}, {"max_order", s.max_order}}; }

SolverSpec solver_from_json(const json& j, const SolverSpec& defaults) {
  SolverSpec s = defaults;
  try {
    if (j.is_object() && j.contains("family")) {
      s.family = solver_family_from_string(j.at("family").get<std::string>());
      if (s.family == SolverFamily::Euler) s.max_order = 1;
      if (s.family == SolverFamily::IPNDM && defaults.family == SolverFamily::Euler) s.max_order = 3;
    }
    s.max_order = get_or(j, "max_order", s.max_order);
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

json to_json(const TeacherSpec& t) {
  json j = to_json(t.solver);
  j["nfe"] = t.nfe;
  j["heuristic"] = tdisc::to_string(t.heuristic);
  return j;
}

TeacherSpec teacher_spec_from_json(const json& j, const TeacherSpec& defaults) {
  TeacherSpec t = defaults;
  t.solver = solver_from_json(j, defaults.solver);
  t.nfe = get_or(j, "nfe", t.nfe);
  if (t.nfe < 1) throw ConfigError("teacher nfe must be >= 1");
  if (j.is_object() && j.contains("heuristic")) {
    try {
      t.heuristic = heuristic_kind_from_string(j.at("heuristic").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return t;
}

json to_json(const HeadDecoding& d) {
  return {{"b_dtau", round12(d.bounds.b_dtau)},
          {"b_gamma", round12(d.bounds.b_gamma)},
          {"dtau_head", d.dtau_head},
          {"gamma_head", d.gamma_head},
          {"timestep_param", tdisc::to_string(d.timestep_param)}};
}

HeadDecoding decoding_from_json(const json& j, const HeadDecoding& defaults) {
  HeadDecoding d = defaults;
  d.bounds.b_dtau = get_or(j, "b_dtau", d.bounds.b_dtau);
  d.bounds.b_gamma = get_or(j, "b_gamma", d.bounds.b_gamma);
  d.dtau_head = get_or(j, "dtau_head", d.dtau_head);
  d.gamma_head = get_or(j, "gamma_head", d.gamma_head);
  try {
    if (j.is_object() && j.contains("timestep_param")) {
      d.timestep_param = timestep_param_from_string(j.at("timestep_param").get<std::string>());
    }
    d.bounds.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return d;
}

std::string to_string(PriorMode mode) { return mode == PriorMode::Gaussian ? "gaussian" : "teacher-faithful"; }

PriorMode prior_mode_from_string(const std::string& name) {
  if (name == "gaussian") return PriorMode::Gaussian;
  if (name == "teacher-faithful") return PriorMode::TeacherFaithful;
  throw ConfigError("unknown prior mode '" + name + "'");
}

json to_json(const GeneralDiscretization& xi, const json& meta) {
  json j;
  j["taus"] = numbers(xi.taus);
  j["dtaus"] = numbers(xi.dtaus);
  j["gammas"] = numbers(xi.gammas);
  j["meta"] = meta;
  return j;
}

GeneralDiscretization discretization_from_json(const json& j) {
  GeneralDiscretization xi;
  xi.taus = read_numbers(field(j, "taus"), "taus");
  xi.dtaus = read_numbers(field(j, "dtaus"), "dtaus");
  xi.gammas = read_numbers(field(j, "gammas"), "gammas");
  if (xi.taus.size() != xi.dtaus.size() + 1 || xi.gammas.size() != xi.dtaus.size() || xi.dtaus.empty()) {
    throw ConfigError("discretization arrays have inconsistent lengths");
  }
  return xi;
}

json checkpoint_to_json(const TrainState& state, const TrainConfig& cfg) {
  const auto& phi = state.phi;
  json j;
  j["dims"] = {{"in_dim", phi.dims.in_dim()}, {"hidden", phi.dims.hidden}, {"label_dim", phi.dims.label_dim}};
  j["seed"] = phi.seed;
  j["N"] = phi.dims.steps;
  j["input_scale"] = round12(phi.input_scale);
  j["bounds"] = {{"b_dtau", round12(phi.decoding.bounds.b_dtau)}, {"b_gamma", round12(phi.decoding.bounds.b_gamma)}};
  j["decoding"] = to_json(phi.decoding);
  const json raw = layers(phi.dims, phi.params);
  j["layer1"] = raw["layer1"];
  j["layer2"] = raw["layer2"];
  j["ema"] = layers(phi.dims, state.ema);
  j["iteration"] = state.iteration;
  j["iterations"] = cfg.iterations;
  j["optimizer"] = {{"step", state.adam.step_count()},
                    {"m", numbers(state.adam.first_moment())},
                    {"v", numbers(state.adam.second_moment())}};
  return j;
}

TrainState checkpoint_from_json(const json& j, const TrainConfig& cfg) {
  TrainState state;
  state.phi = network_shell(j);
  state.phi.params = read_layers(j, state.phi.dims);
  state.ema = read_layers(field(j, "ema"), state.phi.dims);
  state.iteration = field(j, "iteration").get<std::size_t>();
  const auto& opt = field(j, "optimizer");
  auto m = read_numbers(field(opt, "m"), "optimizer.m");
  auto v = read_numbers(field(opt, "v"), "optimizer.v");
  if (m.size() != state.phi.params.size() || v.size() != state.phi.params.size()) {
    throw ConfigError("optimizer state does not match the network size");
  }
  state.adam = Adam(state.phi.params.size(), cfg);
  state.adam.restore(std::move(m), std::move(v), field(opt, "step").get<std::size_t>());
  return state;
}

PhiNetwork network_from_checkpoint(const json& j, bool use_ema) {
  PhiNetwork phi = network_shell(j);
  phi.params = use_ema ? read_layers(field(j, "ema"), phi.dims) : read_layers(j, phi.dims);
  return phi;
}

json overfit_to_json(const std::map<std::uint64_t, GeneralDiscretization>& map, std::size_t nfe, const json& meta) {
  json j;
  j["nfe"] = nfe;
  j["meta"] = meta;
  json entries = json::object();
  for (const auto& [seed, xi] : map) {
    json e = to_json(xi);
    e.erase("meta");
    entries[std::to_string(seed)] = std::move(e);
  }
  j["entries"] = std::move(entries);
  return j;
}

std::map<std::uint64_t, GeneralDiscretization> overfit_from_json(const json& j) {
  std::map<std::uint64_t, GeneralDiscretization> out;
  for (const auto& [key, value] : field(j, "entries").items()) {
    std::uint64_t seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw ConfigError("overfit map key '" + key + "' is not a record seed");
    }
    out.emplace(seed, discretization_from_json(value));
  }
  return out;
}

json report_to_json(const MetricsReport& r) {
  return {{"strategy", r.strategy},
          {"nfe", r.nfe},
          {"mean_mse", round12(r.mean_mse)},
          {"kl", round12(r.kl)},
          {"wasserstein", round12(r.wasserstein)}};
}

std::string format_hash(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_teacher(const fs::path& path, const TeacherSet& set) {
  std::ostringstream out;
  json header;
  header["format"] = "tdisc-teacher";
  header["schedule"] = to_json(set.schedule);
  header["teacher_spec"] = to_json(set.teacher);
  header["prior"] = to_string(set.prior_mode);
  header["oracle_hash"] = format_hash(set.oracle_hash);
  header["seed"] = set.seed;
  header["count"] = set.records.size();
  out << header.dump() << '\n';
  for (const auto& r : set.records) {
    json line;
    line["seed"] = r.seed;
    if (r.condition >= 0) line["condition"] = r.condition;
    line["endpoint"] = {round12(r.endpoint[0]), round12(r.endpoint[1])};
    out << line.dump() << '\n';
  }
  write_text(path, out.str());
}

TeacherSet read_teacher(const fs::path& path, std::uint64_t expected_hash) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open teacher dataset " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("teacher dataset " + path.string() + " is empty");
  TeacherSet set;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "tdisc-teacher") throw ConfigError("not a teacher dataset: " + path.string());
    const std::string hash = field(header, "oracle_hash").get<std::string>();
    if (hash != format_hash(expected_hash)) {
      throw ConfigError("teacher dataset oracle hash " + hash + " does not match the configured oracle (" +
                        format_hash(expected_hash) + ")");
    }
    set.oracle_hash = expected_hash;
    set.schedule = schedule_from_json(field(header, "schedule"));
    set.teacher = teacher_spec_from_json(field(header, "teacher_spec"));
    set.prior_mode = prior_mode_from_string(field(header, "prior").get<std::string>());
    set.seed = field(header, "seed").get<std::uint64_t>();
    const auto count = field(header, "count").get<std::size_t>();
    set.records.reserve(count);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json r = json::parse(line);
      TeacherRecord rec;
      rec.seed = field(r, "seed").get<std::uint64_t>();
      rec.condition = r.value("condition", -1);
      const auto e = read_numbers(field(r, "endpoint"), "endpoint");
      if (e.size() != 2) throw ConfigError("teacher endpoint must have two coordinates");
      rec.endpoint = {e[0], e[1]};
      set.records.push_back(rec);
    }
    if (set.records.size() != count) throw ConfigError("teacher dataset is truncated: " + path.string());
  } catch (const json::exception& e) {
    throw ConfigError("malformed teacher dataset " + path.string() + ": " + e.what());
  }
  return set;
}

void write_trace_csv(const fs::path& path, const std::vector<TraceRow>& rows) {
  std::ostringstream out;
  out << "iteration,lr,batch_loss,ema_loss\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << fmt12(r.lr) << ',' << fmt12(r.batch_loss) << ',' << fmt12(r.ema_loss) << '\n';
  }
  write_text(path, out.str());
}

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::size_t columns) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) throw ConfigError("malformed CSV row in " + path.string());
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw ConfigError("bad number '" + s + "'");
  return v;
}

}  // namespace

std::vector<TraceRow> read_trace_csv(const fs::path& path) {
  std::vector<TraceRow> out;
  for (const auto& c : read_csv(path, 4)) {
    out.push_back({static_cast<std::size_t>(std::stoull(c[0])), to_double(c[1]), to_double(c[2]), to_double(c[3])});
  }
  return out;
}

void write_scatter_csv(const fs::path& path, const MetricsReport& report) {
  std::ostringstream out;
  out << "x_T_0,x_T_1,error\n";
  for (const auto& e : report.per_sample_errors) {
    out << fmt12(e.x_T[0]) << ',' << fmt12(e.x_T[1]) << ',' << fmt12(e.error) << '\n';
  }
  write_text(path, out.str());
}

std::vector<SampleError> read_scatter_csv(const fs::path& path) {
  std::vector<SampleError> out;
  for (const auto& c : read_csv(path, 3)) out.push_back({{to_double(c[0]), to_double(c[1])}, to_double(c[2])});
  return out;
}

void write_sweep_csv(const fs::path& path, const std::vector<MetricsReport>& rows) {
  std::ostringstream out;
  out << "nfe,strategy,mse,kl,wasserstein\n";
  for (const auto& r : rows) {
    out << r.nfe << ',' << r.strategy << ',' << fmt12(r.mean_mse) << ',' << fmt12(r.kl) << ','
        << fmt12(r.wasserstein) << '\n';
  }
  write_text(path, out.str());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace tdisc::io
