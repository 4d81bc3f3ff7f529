#include "phaseforge/eval.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <utility>

#include "phaseforge/io.hpp"
#include "phaseforge/parallel.hpp"

namespace phaseforge::eval {

namespace {

constexpr const char* kColumns[] = {"psnr_mag", "psnr_phase", "ssim_mag", "ssim_phase", "mae_mag", "mae_phase"};

std::array<double*, 6> columns(metrics::FieldScores& s) {
  return {&s.psnr_mag, &s.psnr_phase, &s.ssim_mag, &s.ssim_phase, &s.mae_mag, &s.mae_phase};
}

std::array<double, 6> columns(const metrics::FieldScores& s) {
  return {s.psnr_mag, s.psnr_phase, s.ssim_mag, s.ssim_phase, s.mae_mag, s.mae_phase};
}

nlohmann::json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double parse_number(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw IoError("eval report: bad number '" + s + "'");
}

nlohmann::json scores_json(const metrics::FieldScores& s) {
  nlohmann::json j = nlohmann::json::object();
  const auto v = columns(s);
  for (std::size_t k = 0; k < 6; ++k) j[kColumns[k]] = number(v[k]);
  return j;
}

metrics::FieldScores scores_from(const nlohmann::json& j) {
  metrics::FieldScores s;
  auto cols = columns(s);
  for (std::size_t k = 0; k < 6; ++k) *cols[k] = parse_number(j.at(kColumns[k]));
  return s;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

}  // namespace

metrics::FieldScores EvalReport::mean(const std::vector<Row>& rows) {
  metrics::FieldScores out;
  if (rows.empty()) return out;
  auto acc = columns(out);
  for (const auto& r : rows) {
    const auto v = columns(r.scores);
    for (std::size_t k = 0; k < 6; ++k) *acc[k] += v[k];
  }
  for (auto* p : acc) *p /= double(rows.size());
  return out;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json e = scores_json(row.scores);
    e["id"] = row.id;
    rows.push_back(e);
  }
  j = nlohmann::json{{"method", r.method},
                     {"model_hash", r.model_hash},
                     {"dataset_hash", r.dataset_hash},
                     {"metrics",
                      {{"ssim", {{"window", 7}, {"k1", 0.01}, {"k2", 0.03}, {"weights", "uniform"}}},
                       {"psnr_peak_magnitude", "max(gt) per image"},
                       {"psnr_peak_phase", "2*pi after +pi shift"}}},
                     {"rows", rows},
                     {"aggregate", scores_json(r.aggregate)}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.method = j.at("method").get<std::string>();
  r.model_hash = j.value("model_hash", std::string());
  r.dataset_hash = j.value("dataset_hash", std::string());
  r.rows.clear();
  for (const auto& e : j.at("rows")) r.rows.push_back({e.at("id").get<std::string>(), scores_from(e)});
  r.aggregate = EvalReport::mean(r.rows);
  const auto stored = columns(scores_from(j.at("aggregate")));
  const auto fresh = columns(std::as_const(r.aggregate));
  for (std::size_t k = 0; k < 6; ++k)
    if (!same(stored[k], fresh[k]))
      throw IoError(std::string("eval report: stored aggregate ") + kColumns[k] + " = " + csv_number(stored[k]) +
                    " disagrees with the mean of its rows (" + csv_number(fresh[k]) + ")");
}

std::string report_csv(const EvalReport& r) {
  std::string out = "id";
  for (const char* c : kColumns) out += std::string(",") + c;
  out += "\n";
  auto line = [&](const std::string& id, const metrics::FieldScores& s) {
    out += id;
    for (double v : columns(s)) out += "," + csv_number(v);
    out += "\n";
  };
  for (const auto& row : r.rows) line(row.id, row.scores);
  line("mean", r.aggregate);
  return out;
}

void save_report(const std::filesystem::path& dir, const EvalReport& r) {
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "report.json", nlohmann::json(r).dump(2) + "\n");
  io::write_file_atomic(dir / "report.csv", report_csv(r));
}

EvalReport load_report(const std::filesystem::path& json_path) {
  try {
    return nlohmann::json::parse(io::read_file(json_path)).get<EvalReport>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed eval report '" + json_path.string() + "': " + e.what());
  }
}

std::string model_hash(const net::ModelConfig& cfg, const net::ModelState& state) {
  std::string bytes = nlohmann::json(cfg).dump();
  for (const auto& [name, t] : state) {
    bytes += name;
    bytes.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(Real));
  }
  return io::fnv1a_hex(bytes);
}

std::string dataset_hash(const data::Dataset& ds) { return io::fnv1a_hex(nlohmann::json(ds.manifest()).dump()); }

namespace {

std::size_t split_count(const data::Dataset& ds, data::Split split, std::size_t limit) {
  std::size_t n = ds.size(split);
  if (limit > 0) n = std::min(n, limit);
  if (n == 0) throw ConfigError("evaluate: the dataset split is empty");
  return n;
}

}  // namespace

EvalReport evaluate_model(const net::ModelConfig& cfg, const net::ModelState& state, const data::Dataset& ds,
                          data::Split split, int threads, std::size_t limit) {
  const std::size_t n = split_count(ds, split, limit);
  EvalReport report;
  report.method = "network";
  report.model_hash = model_hash(cfg, state);
  report.dataset_hash = dataset_hash(ds);
  report.rows.resize(n);
  parallel_for(n, resolve_threads(threads), [&](std::size_t i) {
    const data::Sample s = ds.load(split, i);
    report.rows[i] = {s.id, metrics::score(net::predict(cfg, state, s.meas), s.gt)};
  });
  report.aggregate = EvalReport::mean(report.rows);
  return report;
}

EvalReport evaluate_solver(const solvers::SolverConfig& cfg, const data::Dataset& ds, data::Split split,
                           int threads, std::size_t limit) {
  cfg.validate();
  const std::size_t n = split_count(ds, split, limit);
  EvalReport report;
  report.method = solvers::to_string(cfg.method);
  report.model_hash = io::fnv1a_hex(nlohmann::json(cfg).dump());
  report.dataset_hash = dataset_hash(ds);
  report.rows.resize(n);
  solvers::SolverConfig serial = cfg;
  serial.threads = 1;
  const bool defocused = ds.manifest().defocus;
  parallel_for(n, resolve_threads(threads), [&](std::size_t i) {
    const data::Sample s = ds.load(split, i);
    const auto problem = solvers::Problem::from_measurement(s.meas, defocused);
    const auto result = solvers::solve(problem, serial, nullptr,
                                       serial.selection == solvers::Selection::Psnr ? &s.gt : nullptr);
    report.rows[i] = {s.id, metrics::score(solvers::align_trivial(result.estimate, s.gt), s.gt)};
  });
  report.aggregate = EvalReport::mean(report.rows);
  return report;
}

std::vector<InspectImage> inspect(const net::ModelConfig& cfg, const net::ModelState& state,
                                  const optics::IntensityMeasurement& meas, const std::filesystem::path& out_dir) {
  net::Probe probe;
  net::predict(cfg, state, meas, &probe);
  std::filesystem::create_directories(out_dir);
  std::vector<InspectImage> out;
  for (const auto& a : probe.attention) {
    if (a.block.rfind("hub", 0) != 0) continue;  // the init HUB is not on the expanding path
    std::size_t best = 0;
    for (std::size_t c = 1; c < a.weights.size(); ++c)
      if (a.weights[c] > a.weights[best]) best = c;
    const std::size_t h = a.gated.dim(0), w = a.gated.dim(1), ctot = a.gated.dim(2);
    Tensor img({h, w});
    for (std::size_t i = 0; i < h * w; ++i) img[i] = a.gated[i * ctot + best];
    Real lo = img[0], hi = img[0];
    for (Real v : img.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (auto& v : img.data()) v = hi > lo ? Real(255) * (v - lo) / (hi - lo) : Real(0);

    InspectImage info{a.scale, best, h, w, out_dir / ("scale" + std::to_string(a.scale) + ".pgm")};
    io::write_file_atomic(info.image, io::encode_pgm(img));
    nlohmann::json side{{"block", a.block},
                        {"scale", a.scale},
                        {"channel", best},
                        {"height", h},
                        {"width", w},
                        {"range", {lo, hi}},
                        {"attention", std::vector<double>(a.weights.data().begin(), a.weights.data().end())}};
    io::write_file_atomic(out_dir / ("scale" + std::to_string(a.scale) + ".json"), side.dump(2) + "\n");
    out.push_back(info);
  }
  return out;
}

}  // namespace phaseforge::eval
