#include "phaseforge/cli.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "phaseforge/data.hpp"
#include "phaseforge/eval.hpp"
#include "phaseforge/io.hpp"
#include "phaseforge/network.hpp"
#include "phaseforge/parallel.hpp"
#include "phaseforge/selftest.hpp"
#include "phaseforge/solvers.hpp"
#include "phaseforge/training.hpp"

namespace phaseforge::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Binds flags to JSON pointers so a --config file can be overridden by flags.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON config file; explicit flags override it");
  }

  template <typename T>
  CLI::Option* option(const std::string& names, const std::string& pointer, T def, const std::string& help) {
    auto value = std::make_shared<T>(std::move(def));
    CLI::Option* o = app_->add_option(names, *value, help)->capture_default_str();
    patches_.push_back([o, value, pointer](json& j) {
      if (o->count() > 0) j[json::json_pointer(pointer)] = *value;
    });
    return o;
  }

  CLI::Option* flag(const std::string& names, const std::string& pointer, bool when_set, const std::string& help) {
    CLI::Option* o = app_->add_flag(names, help);
    patches_.push_back([o, pointer, when_set](json& j) {
      if (o->count() > 0) j[json::json_pointer(pointer)] = when_set;
    });
    return o;
  }

  /// defaults <- config file <- explicit flags.
  json resolve(json defaults) const {
    if (!config_path_.empty()) {
      json file;
      try {
        file = json::parse(io::read_file(config_path_));
      } catch (const json::exception& e) {
        throw IoError("malformed config '" + config_path_ + "': " + e.what());
      }
      defaults.merge_patch(file);
    }
    for (const auto& p : patches_) p(defaults);
    return defaults;
  }

  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::string config_path_;
  std::vector<std::function<void(json&)>> patches_;
};

std::string require_path(const json& cfg, const std::string& key, const std::string& flag) {
  const std::string p = cfg.at("paths").value(key, std::string());
  if (p.empty()) throw UsageError(flag + " is required");
  return p;
}

int threads_of(const json& cfg) { return resolve_threads(cfg.value("threads", 0)); }

void write_run_config(const fs::path& dir, const json& cfg) {
  fs::create_directories(dir);
  io::write_file_atomic(dir / "run_config.json", cfg.dump(2) + "\n");
}

std::string fixed(double v, int digits = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Optics -------------------------------------------------------------------------

json optics_defaults() {
  json j = optics::OpticsConfig::desk_scale();
  j.erase("pixel_pitch");  // derived from n unless given
  return j;
}

void optics_flags(Flags& f) {
  const auto d = optics::OpticsConfig::desk_scale();
  f.option("--n", "/optics/n", d.n, "object size N");
  f.option("--m", "/optics/m", d.m, "measurement size M");
  f.option("--wavelength", "/optics/wavelength", d.wavelength, "wavelength in meters");
  f.option("--defocus-distance", "/optics/defocus_distance", d.defocus_distance, "defocus distance L in meters");
  f.option("--pitch", "/optics/pixel_pitch", 0.0, "pixel pitch in meters (0: scaled for N like the 128-pixel geometry)");
  f.option("--bit-depth", "/optics/bit_depth", d.bit_depth, "sensor bit depth");
  f.option("--gain", "/optics/gain", d.gain, "exposure gain");
}

optics::OpticsConfig resolve_optics(json& cfg) {
  json& o = cfg["optics"];
  if (!o.contains("pixel_pitch") || !(o["pixel_pitch"].get<double>() > 0))
    o["pixel_pitch"] = optics::OpticsConfig::desk_pitch(o.value("n", std::size_t(16)));
  optics::OpticsConfig c = o.get<optics::OpticsConfig>();
  c.validate();
  o = c;
  return c;
}

// Solver -------------------------------------------------------------------------

json solver_defaults() {
  json j = solvers::SolverConfig{};
  j["beta"] = -1.0;  // method default unless given
  return j;
}

void solver_flags(Flags& f, bool with_method) {
  const solvers::SolverConfig d;
  if (with_method) f.option("--method", "/solver/method", std::string("hio"), "gs, hio, raar or wf");
  f.option("--iters", "/solver/iterations", d.iterations, "iterations per restart");
  f.option("--restarts", "/solver/restarts", d.restarts, "random restarts");
  f.option("--beta", "/solver/beta", -1.0, "relaxation (negative: method default, HIO 0.9, RAAR 0.87)");
  f.option("--constraint", "/solver/constraint", std::string("none"), "none, real-nonnegative or phase-only");
  f.option("--selection", "/solver/selection", std::string("residual"),
           "restart selection: residual, or psnr (needs a reference)");
  f.option("--solver-seed", "/solver/seed", d.seed, "solver seed");
  f.option("--wf-mu-max", "/solver/wf_mu_max", d.wf_mu_max, "Wirtinger flow step ceiling");
  f.option("--wf-t0", "/solver/wf_t0", d.wf_t0, "Wirtinger flow warm-up constant");
}

solvers::SolverConfig resolve_solver(json& cfg, int threads) {
  solvers::SolverConfig s = cfg.at("solver").get<solvers::SolverConfig>();
  s.threads = threads;
  s.validate();
  cfg["solver"] = s;
  return s;
}

// Model --------------------------------------------------------------------------

void model_flags(Flags& f) {
  const auto d = net::ModelConfig::desk();
  f.option("--channels", "/model/channels", d.channels, "base channels C");
  f.option("--scales", "/model/scales", d.scales, "number of scales");
  f.option("--k", "/model/k", d.k, "unwinding layers per PUB");
  f.option("--g-depth", "/model/g_depth", d.g_depth, "convolutions per g_k");
  f.option("--g-width", "/model/g_width", d.g_width, "hidden width of g_k");
  f.option("--leaky-slope", "/model/leaky_slope", d.leaky_slope, "LeakyReLU slope");
  f.option("--scale-mode", "/model/scale_mode", std::string("box-filter-decimate"),
           "intensity down-scaling: box-filter-decimate or decimate");
  f.option("--model-seed", "/model/seed", d.seed, "parameter init and evaluation noise seed");
}

// Subcommands --------------------------------------------------------------------

struct Command {
  CLI::App* app;
  std::unique_ptr<Flags> flags;
  json defaults;
  std::function<int(json&, std::ostream&)> run;
};

int run_synth(json& cfg, std::ostream& out) {
  const fs::path dir = require_path(cfg, "out", "--out");
  data::GenerateOptions o;
  o.optics = resolve_optics(cfg);
  const json& d = cfg.at("data");
  o.mode = data::parse_mode(d.at("mode"));
  o.source = data::parse_source(d.at("source"));
  o.image_dir = d.value("image_dir", std::string());
  if (o.source == data::Source::ImageDirectory && o.image_dir.empty())
    throw UsageError("--image-dir is required with --source image-directory");
  o.defocus = d.at("defocus");
  o.count = d.at("count");
  o.test_count = d.at("test_count");
  o.seed = d.at("seed");
  o.threads = threads_of(cfg);
  const auto manifest = data::generate_dataset(o, dir);
  write_run_config(dir, cfg);
  out << "wrote " << manifest.train_ids.size() << " train and " << manifest.test_ids.size() << " test samples to "
      << dir.string() << "\n";
  if (!manifest.skipped.empty()) out << "skipped " << manifest.skipped.size() << " unreadable files\n";
  return 0;
}

int run_simulate(json& cfg, std::ostream& out) {
  const fs::path input = require_path(cfg, "input", "--input");
  const fs::path dir = require_path(cfg, "out", "--out");
  const optics::OpticsConfig oc = resolve_optics(cfg);
  const data::Mode mode = data::parse_mode(cfg.at("data").at("mode"));
  const Tensor a = data::min_max_scale(data::resize_bilinear(io::load_netpbm(input), oc.n));
  std::optional<Tensor> b;
  const std::string phase = cfg.at("paths").value("phase_input", std::string());
  if (!phase.empty()) b = data::min_max_scale(data::resize_bilinear(io::load_netpbm(phase), oc.n));
  if (mode == data::Mode::Uncorrelated && !b) throw UsageError("--phase-input is required in uncorrelated mode");
  const ComplexField x = data::synth_complex(a, b ? &*b : nullptr, mode);
  const bool defocus = cfg.at("data").at("defocus");
  const auto meas = optics::forward_measure(x, oc, defocus);

  fs::create_directories(dir);
  io::save_npy(dir / "gt.npy", x.to_channels());
  io::save_npy_u16(dir / "meas.npy", {oc.m, oc.m}, meas.data);
  // Log-scaled 8-bit preview of the capture.
  Tensor preview({oc.m, oc.m});
  const double top = std::log1p(double(oc.max_count()));
  std::size_t saturated = 0;
  for (std::size_t i = 0; i < meas.data.size(); ++i) {
    preview[i] = Real(255 * std::log1p(double(meas.data[i])) / top);
    saturated += meas.data[i] == oc.max_count();
  }
  io::write_file_atomic(dir / "meas.pgm", io::encode_pgm(preview));
  write_run_config(dir, cfg);
  out << "simulated " << oc.m << "x" << oc.m << " capture of " << input.string() << " (" << saturated
      << " saturated bins) into " << dir.string() << "\n";
  return 0;
}

int run_train(json& cfg, std::ostream& out) {
  const fs::path data_dir = require_path(cfg, "data", "--data");
  const fs::path dir = require_path(cfg, "out", "--out");
  const data::Dataset ds = data::load_dataset(data_dir);
  cfg["model"]["n"] = ds.manifest().optics.n;
  cfg["model"]["m"] = ds.manifest().optics.m;
  const net::ModelConfig model = cfg.at("model").get<net::ModelConfig>();
  model.validate();
  train::TrainConfig tc = cfg.at("train").get<train::TrainConfig>();
  tc.threads = threads_of(cfg);
  tc.validate();
  cfg["model"] = model;
  cfg["train"] = tc;
  train::TrainOptions opt;
  opt.out_dir = dir;
  opt.max_train = cfg.at("train").value("max_train", std::size_t(0));
  opt.skip_validation = cfg.at("train").value("skip_validation", false);
  opt.on_epoch = [&out, &tc](const train::EpochStats& e) {
    out << "epoch " << e.epoch << "/" << tc.epochs << " loss " << fixed(e.train_loss, 6) << " pixel "
        << fixed(e.pixel, 6) << " tv " << fixed(e.tv, 6) << " val_psnr " << fixed(e.val_psnr) << std::endl;
  };
  write_run_config(dir, cfg);
  const auto result = train::train(ds, model, tc, opt);
  out << "checkpoint written to " << (dir / "checkpoint").string() << " after " << result.steps << " steps\n";
  return 0;
}

void print_aggregate(std::ostream& out, const eval::EvalReport& r) {
  const auto& a = r.aggregate;
  out << r.method << " over " << r.rows.size() << " samples: psnr_mag " << fixed(a.psnr_mag) << " psnr_phase "
      << fixed(a.psnr_phase) << " ssim_mag " << fixed(a.ssim_mag) << " ssim_phase " << fixed(a.ssim_phase)
      << " mae_mag " << fixed(a.mae_mag) << " mae_phase " << fixed(a.mae_phase) << "\n";
}

int run_eval(json& cfg, std::ostream& out) {
  const fs::path data_dir = require_path(cfg, "data", "--data");
  const std::string ckpt = cfg.at("paths").value("checkpoint", std::string());
  const std::string method = cfg.at("solver").value("method", std::string());
  if (ckpt.empty() == method.empty()) throw UsageError("give exactly one of --checkpoint and --method");
  const data::Dataset ds = data::load_dataset(data_dir);
  const std::string split_name = cfg.value("split", std::string("test"));
  if (split_name != "test" && split_name != "train") throw UsageError("--split must be test or train");
  const data::Split split = split_name == "test" ? data::Split::Test : data::Split::Train;
  const std::size_t limit = cfg.value("limit", std::size_t(0));
  const int threads = threads_of(cfg);
  eval::EvalReport report;
  if (!ckpt.empty()) {
    cfg.erase("solver");
    const net::Checkpoint ck = net::load_checkpoint(ckpt);
    report = eval::evaluate_model(ck.config, ck.state, ds, split, threads, limit);
  } else {
    report = eval::evaluate_solver(resolve_solver(cfg, 1), ds, split, threads, limit);
  }
  const std::string dir = cfg.at("paths").value("out", std::string());
  if (!dir.empty()) {
    eval::save_report(dir, report);
    write_run_config(dir, cfg);
  }
  print_aggregate(out, report);
  return 0;
}

optics::IntensityMeasurement load_measurement(const fs::path& input, json& cfg) {
  // A measurement inside a dataset directory takes that dataset's optics.
  const fs::path manifest = input.parent_path() / "manifest.json";
  optics::OpticsConfig oc;
  if (fs::exists(manifest)) {
    const auto m = json::parse(io::read_file(manifest)).get<data::DatasetManifest>();
    oc = m.optics;
    cfg["optics"] = oc;
    cfg["data"]["defocus"] = m.defocus;
  } else {
    oc = resolve_optics(cfg);
  }
  const io::NpyArray arr = io::load_npy(input);
  if (arr.shape != Shape{oc.m, oc.m})
    throw ConfigError("measurement '" + input.string() + "' has shape " + shape_string(arr.shape) + ", expected " +
                      std::to_string(oc.m) + "x" + std::to_string(oc.m));
  optics::IntensityMeasurement meas;
  meas.config = oc;
  if (arr.descr == "<u2") {
    meas.data = arr.to_u16();
  } else {
    meas.data.resize(arr.values.size());
    for (std::size_t i = 0; i < arr.values.size(); ++i) {
      const double v = arr.values[i];
      if (!(v >= 0) || v > oc.max_count() || v != std::floor(v))
        throw DomainError("measurement '" + input.string() + "' holds a value outside the sensor range");
      meas.data[i] = std::uint16_t(v);
    }
  }
  return meas;
}

int run_reconstruct(json& cfg, std::ostream& out) {
  const fs::path input = require_path(cfg, "input", "--input");
  const fs::path dir = require_path(cfg, "out", "--out");
  if (!fs::exists(input)) throw IoError("input measurement '" + input.string() + "' does not exist");
  const auto meas = load_measurement(input, cfg);
  const solvers::SolverConfig sc = resolve_solver(cfg, threads_of(cfg));
  const bool defocus = cfg.at("data").at("defocus");
  const auto problem = solvers::Problem::from_measurement(meas, defocus);

  std::optional<ComplexField> reference;
  const std::string ref_path = cfg.at("paths").value("reference", std::string());
  if (!ref_path.empty()) reference = ComplexField::from_channels(io::load_npy(ref_path).to_tensor());
  if (sc.selection == solvers::Selection::Psnr && !reference)
    throw UsageError("--selection psnr needs --reference");
  const auto result = solvers::solve(problem, sc, nullptr, reference ? &*reference : nullptr);

  fs::create_directories(dir);
  io::save_npy(dir / "estimate.npy", result.estimate.to_channels());
  io::write_file_atomic(dir / "trace.csv", solvers::trace_csv(result.trace));
  write_run_config(dir, cfg);
  out << solvers::to_string(sc.method) << ": final residual " << std::setprecision(6) << result.trace.back()
      << " (restart " << result.best_restart << ")\n";
  if (reference) {
    const ComplexField aligned = solvers::align_trivial(result.estimate, *reference);
    io::save_npy(dir / "estimate_aligned.npy", aligned.to_channels());
    const auto s = metrics::score(aligned, *reference);
    out << "aligned: psnr_mag " << fixed(s.psnr_mag) << " psnr_phase " << fixed(s.psnr_phase) << " ssim_phase "
        << fixed(s.ssim_phase) << "\n";
  }
  return 0;
}

int run_inspect(json& cfg, std::ostream& out) {
  const fs::path ckpt = require_path(cfg, "checkpoint", "--checkpoint");
  const fs::path dir = require_path(cfg, "out", "--out");
  const net::Checkpoint ck = net::load_checkpoint(ckpt);
  const std::string input = cfg.at("paths").value("input", std::string());
  const std::string data_dir = cfg.at("paths").value("data", std::string());
  optics::IntensityMeasurement meas;
  if (!data_dir.empty()) {
    const data::Dataset ds = data::load_dataset(data_dir);
    const std::string id = cfg.value("sample", std::string());
    meas = id.empty() ? ds.load(data::Split::Test, 0).meas : ds.load(id).meas;
  } else if (!input.empty()) {
    meas = load_measurement(input, cfg);
  } else {
    throw UsageError("give --data (with optional --sample) or --input");
  }
  const auto images = eval::inspect(ck.config, ck.state, meas, dir);
  write_run_config(dir, cfg);
  for (const auto& im : images)
    out << "scale " << im.scale << ": channel " << im.channel << " (" << im.height << "x" << im.width << ") -> "
        << im.image.string() << "\n";
  return 0;
}

int run_selftest(json& cfg, std::ostream& out) {
  const std::uint64_t seed = cfg.value("seed", std::uint64_t(1));
  bool ok = true;
  for (const auto& c : selftest::run_all(seed)) {
    ok = ok && c.passed();
    std::ostringstream v;
    v << std::scientific << std::setprecision(3) << c.value << " < " << c.tolerance;
    out << (c.passed() ? "PASS " : "FAIL ") << c.name << ": " << v.str() << "\n";
  }
  out << (ok ? "selftest passed\n" : "selftest FAILED\n");
  return ok ? 0 : 2;
}

void build(CLI::App& app, std::vector<Command>& cmds) {
  auto add = [&](const std::string& name, const std::string& help, json defaults,
                 std::function<int(json&, std::ostream&)> run) -> Command& {
    CLI::App* sub = app.add_subcommand(name, help);
    cmds.push_back({sub, std::make_unique<Flags>(sub), std::move(defaults), std::move(run)});
    Flags& f = *cmds.back().flags;
    f.option("--threads", "/threads", 0, "worker threads (0: PHASEFORGE_THREADS, else all cores)");
    return cmds.back();
  };
  const data::GenerateOptions gd;
  const json data_defaults{{"mode", "phase-only"}, {"source", "builtin-shapes"}, {"image_dir", ""},
                           {"count", gd.count},    {"test_count", gd.test_count},  {"seed", gd.seed},
                           {"defocus", true}};
  {
    Command& c = add("synth", "generate a synthetic dataset",
                     {{"command", "synth"}, {"optics", optics_defaults()}, {"data", data_defaults}, {"paths", json::object()}},
                     run_synth);
    Flags& f = *c.flags;
    f.option("--out", "/paths/out", std::string(), "output dataset directory (required)");
    f.option("--mode", "/data/mode", std::string("phase-only"), "correlated, uncorrelated or phase-only");
    f.option("--source", "/data/source", std::string("builtin-shapes"), "builtin-shapes or image-directory");
    f.option("--image-dir", "/data/image_dir", std::string(), "directory of PGM/PPM images");
    f.option("--count", "/data/count", gd.count, "total samples (train + test)");
    f.option("--test-count", "/data/test_count", gd.test_count, "test samples (0: max(1, count/8))");
    f.option("--seed", "/data/seed", gd.seed, "dataset seed");
    f.flag("--no-defocus", "/data/defocus", false, "capture at the Fourier plane without the defocus kernel");
    optics_flags(f);
  }
  {
    Command& c = add("simulate", "measure one image file with the forward model",
                     {{"command", "simulate"},
                      {"optics", optics_defaults()},
                      {"data", {{"mode", "phase-only"}, {"defocus", true}}},
                      {"paths", json::object()}},
                     run_simulate);
    Flags& f = *c.flags;
    f.option("--input", "/paths/input", std::string(), "PGM/PPM image (required)");
    f.option("--phase-input", "/paths/phase_input", std::string(), "second image for the phase (uncorrelated mode)");
    f.option("--out", "/paths/out", std::string(), "output directory (required)");
    f.option("--mode", "/data/mode", std::string("phase-only"), "correlated, uncorrelated or phase-only");
    f.flag("--no-defocus", "/data/defocus", false, "capture without the defocus kernel");
    optics_flags(f);
  }
  {
    json model = net::ModelConfig::desk();
    Command& c = add("train", "train PPRNet on a dataset",
                     {{"command", "train"}, {"model", model}, {"train", train::TrainConfig::desk()}, {"paths", json::object()}},
                     run_train);
    Flags& f = *c.flags;
    const auto td = train::TrainConfig::desk();
    f.option("--data", "/paths/data", std::string(), "dataset directory (required)");
    f.option("--out", "/paths/out", std::string(), "run directory for loss.csv and checkpoints (required)");
    model_flags(f);
    f.option("--lr", "/train/lr", td.lr, "Adam learning rate");
    f.option("--batch", "/train/batch", td.batch, "batch size");
    f.option("--epochs", "/train/epochs", td.epochs, "epochs");
    f.option("--gamma", "/train/gamma", td.gamma, "TV loss weight");
    f.option("--seed", "/train/seed", td.seed, "shuffle and noise seed");
    f.option("--checkpoint-every", "/train/checkpoint_every", td.checkpoint_every,
             "epochs between checkpoints (0: final only)");
    f.option("--clip-norm", "/train/clip_norm", td.clip_norm, "global gradient-norm clip (0 disables)");
    f.flag("--fixed-noise", "/train/fixed_noise", true, "reuse the evaluation noise in every training forward");
    f.option("--max-train", "/train/max_train", std::size_t(0), "use at most this many training samples (0: all)");
    f.flag("--no-validation", "/train/skip_validation", true, "skip held-out evaluation each epoch");
  }
  {
    Command& c = add("eval", "score a checkpoint or a classical solver on a dataset split",
                     {{"command", "eval"},
                      {"solver", solver_defaults()},
                      {"paths", json::object()},
                      {"split", "test"},
                      {"limit", 0}},
                     run_eval);
    Flags& f = *c.flags;
    f.option("--data", "/paths/data", std::string(), "dataset directory (required)");
    f.option("--checkpoint", "/paths/checkpoint", std::string(), "checkpoint directory (network evaluation)");
    f.option("--method", "/solver/method", std::string(), "classical solver: gs, hio, raar or wf");
    f.option("--split", "/split", std::string("test"), "test or train");
    f.option("--limit", "/limit", std::size_t(0), "evaluate at most this many samples (0: all)");
    f.option("--out", "/paths/out", std::string(), "directory for report.json and report.csv");
    solver_flags(f, false);
    c.defaults["solver"]["method"] = "";
  }
  {
    Command& c = add("reconstruct", "run a classical solver on one measurement",
                     {{"command", "reconstruct"},
                      {"optics", optics_defaults()},
                      {"solver", solver_defaults()},
                      {"data", {{"defocus", true}}},
                      {"paths", json::object()}},
                     run_reconstruct);
    Flags& f = *c.flags;
    f.option("--input", "/paths/input", std::string(), "measurement NPY, M x M (required)");
    f.option("--out", "/paths/out", std::string(), "output directory (required)");
    f.option("--reference", "/paths/reference", std::string(), "ground-truth NPY (N x N x 2) for alignment and scores");
    f.flag("--no-defocus", "/data/defocus", false, "the capture has no defocus kernel");
    solver_flags(f, true);
    optics_flags(f);
  }
  {
    Command& c = add("inspect", "dump the strongest attention channel after each HUB",
                     {{"command", "inspect"}, {"paths", json::object()}, {"optics", optics_defaults()}, {"data", json::object()}},
                     run_inspect);
    Flags& f = *c.flags;
    f.option("--checkpoint", "/paths/checkpoint", std::string(), "checkpoint directory (required)");
    f.option("--data", "/paths/data", std::string(), "dataset directory");
    f.option("--sample", "/sample", std::string(), "sample id (default: first test sample)");
    f.option("--input", "/paths/input", std::string(), "measurement NPY instead of a dataset sample");
    f.option("--out", "/paths/out", std::string(), "output directory (required)");
  }
  {
    Command& c = add("selftest", "run the gradient-check and projection-exactness suites",
                     {{"command", "selftest"}, {"seed", 1}}, run_selftest);
    c.flags->option("--seed", "/seed", std::uint64_t(1), "seed for random shapes and values");
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"phaseforge: single-shot Fourier phase retrieval workbench", "phaseforge"};
  app.require_subcommand(1, 1);
  std::vector<Command> cmds;
  build(app, cmds);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const auto& c : cmds)
      if (c.app->parsed()) target = c.app;
    out << target->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* target = &app;
    for (const auto& c : cmds)
      if (c.app->parsed()) target = c.app;
    err << target->help();
    return 1;
  }
  for (auto& c : cmds) {
    if (!c.app->parsed()) continue;
    try {
      json cfg = c.flags->resolve(c.defaults);
      if (cfg.contains("threads")) cfg["threads"] = cfg["threads"].get<int>();
      return c.run(cfg, out);
    } catch (const UsageError& e) {
      err << "error: " << e.what() << "\n\n" << c.app->help();
      return 1;
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    } catch (const json::exception& e) {
      err << "error: bad configuration value: " << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}

int dispatch(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace phaseforge::cli
