// ftnode: command-line front end for data generation, training, FTLE fields,
// diagnostics and figure reproduction.
//
// Exit codes: 0 ok, 2 usage or invalid input, 3 numerical divergence,
// 4 FTLE request incompatible with the checkpoint.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ftnode/analysis.hpp"
#include "ftnode/config.hpp"
#include "ftnode/data.hpp"
#include "ftnode/ftle.hpp"
#include "ftnode/io.hpp"
#include "ftnode/model.hpp"
#include "ftnode/training.hpp"

namespace fs = std::filesystem;
using namespace ftnode;

namespace {

struct ModeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitMismatch = 4;

// ---------------------------------------------------------------------------
// Option tables. Every option is a string setting; the effective value of a
// key is the flag if given, else the config-file entry, else the default.
// ---------------------------------------------------------------------------

struct OptSpec {
  std::string key;
  std::string def;  // empty: no default (optional setting)
  std::string help;
  bool is_flag = false;
};

const std::vector<OptSpec> kDataOpts = {
    {"n", "4000", "number of points (rounded down to even)"},
    {"noise", "0.1", "standard deviation of the Gaussian jitter"},
    {"seed", "7", "dataset seed"},
    {"out", "moons.csv", "output CSV path"},
};

const std::vector<OptSpec> kSourceOpts = {
    {"data", "", "dataset CSV (default: generate moons from the options below)"},
    {"n", "4000", "number of generated points"},
    {"noise", "0.1", "jitter of generated points"},
    {"data-seed", "7", "seed of the generated dataset and of the split"},
    {"test-fraction", "0.25", "held-out fraction"},
};

const std::vector<OptSpec> kTrainOpts = {
    {"arch", "ex1", "architecture preset: ex1 or ex2"},
    {"gamma", "0", "weight of the FTLE regularizer (0 = standard training)"},
    {"delta", "0.05", "regularizer threshold"},
    {"t1", "", "regularizer horizon (preset default: 2 for ex1, 6 for ex2)"},
    {"lr", "0.01", "Adam learning rate"},
    {"epochs", "200", "training epochs"},
    {"batch", "64", "minibatch size"},
    {"seed", "1", "initialization and shuffling seed"},
    {"reg-dt", "", "step size of the regularizer's tangent flow (default: flow dt)"},
    {"schedule", "cosine", "learning-rate schedule: cosine or constant"},
    {"grad-clip", "1", "global gradient-norm clip (0 disables)"},
    {"out", "model.ckpt", "checkpoint path"},
    {"log", "", "training log CSV (default: train_log.csv next to the checkpoint)"},
    {"deterministic-log", "false", "write 0 in the seconds column", true},
};

const std::vector<OptSpec> kGridOpts = {
    {"res", "200", "grid resolution per axis"},
    {"bounds", "-2:2:-2:2", "grid bounds x0:x1:y0:y1"},
};

const std::vector<OptSpec> kFtleOpts = {
    {"ckpt", "model.ckpt", "checkpoint"},
    {"mode", "full", "full, growing, shrinking or subinterval"},
    {"exponent", "1", "exponent index, 1 = largest"},
    {"stride", "5", "frame spacing in steps for growing/shrinking"},
    {"out", "ftle_out", "output directory"},
};

const std::vector<OptSpec> kAnalyzeOpts = {
    {"ckpt", "model.ckpt", "checkpoint"},
    {"compare", "", "second checkpoint (typically the regularized model) to compare against"},
    {"coherence", "false", "estimate coherence of the predicted-class regions", true},
    {"epsilon", "0.1", "margin half-width around pred = 0.5"},
    {"tolerance", "3", "ridge/margin overlap tolerance in cells"},
    {"ridge-quantile", "0.9", "ridge threshold as a quantile of the FTLE field"},
    {"adv-budget", "0.1", "adversarial budget (Euclidean radius)"},
    {"adv-points", "500", "number of test points probed"},
    {"adv-steps", "20", "projected gradient steps per probe"},
    {"samples", "10000", "coherence Monte Carlo samples"},
    {"coherence-seed", "11", "coherence sampling seed"},
    {"coherence-t0", "0", "start time of the coherence interval (end is T)"},
    {"out", "analysis_out", "output directory"},
};

const std::vector<OptSpec> kEvolveOpts = {
    {"ckpt", "model.ckpt", "checkpoint"},
    {"points", "", "initial points 'x,y;x,y;...' (default: a grid)"},
    {"grid", "5", "grid points per axis over the bounds when --points is absent"},
    {"out", "evolve_out", "output directory"},
};

const std::vector<OptSpec> kReproOpts = {
    {"out", "repro_out", "output directory (a subdirectory per figure is created)"},
};

const std::vector<OptSpec> kCommonOpts = {
    {"threads", "1", "worker threads (results do not depend on it)"},
};

std::vector<OptSpec> without(std::vector<OptSpec> specs, const std::set<std::string>& drop) {
  std::erase_if(specs, [&](const OptSpec& o) { return drop.count(o.key) != 0; });
  return specs;
}

class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description) {
    app_ = parent.add_subcommand(name, description);
    app_->add_option("--config", config_path_, "config file of 'key = value' lines");
  }

  Command& add(const std::vector<OptSpec>& specs) {
    for (const auto& s : specs) {
      if (known_.count(s.key)) continue;
      known_.insert(s.key);
      if (!s.def.empty()) defaults_.set(s.key, s.def);
      if (s.is_flag) {
        flags_[s.key] = false;
        app_->add_flag("--" + s.key, flags_[s.key], s.help);
      } else {
        values_[s.key];
        app_->add_option("--" + s.key, values_[s.key], s.help + (s.def.empty() ? "" : " [" + s.def + "]"));
      }
    }
    return *this;
  }

  CLI::App* app() { return app_; }
  bool parsed() const { return app_->parsed(); }

  /// defaults < config file < flags
  Settings settings() const {
    Settings s = defaults_;
    if (!config_path_.empty()) {
      const Settings file = Settings::load(config_path_);
      for (const auto& [k, v] : file.entries())
        if (!known_.count(k)) throw InvalidInput("unknown key '" + k + "' in config '" + config_path_ + "'");
      s.merge(file);
    }
    for (const auto& [k, v] : values_)
      if (app_->count("--" + k)) s.set(k, v);
    for (const auto& [k, v] : flags_)
      if (app_->count("--" + k)) s.set(k, v ? "true" : "false");
    return s;
  }

 private:
  CLI::App* app_ = nullptr;
  std::string config_path_;
  Settings defaults_;
  std::set<std::string> known_;
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> flags_;
};

// ---------------------------------------------------------------------------
// Settings -> library configs
// ---------------------------------------------------------------------------

std::vector<double> parse_numbers(const std::string& text, char sep, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos)
      throw InvalidInput(what + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::size_t threads_of(const Settings& s) {
  const auto t = s.count("threads");
  if (t == 0) throw InvalidInput("--threads must be at least 1");
  return t;
}

GridSpec grid_of(const Settings& s) {
  GridSpec g;
  g.resolution = s.count("res");
  const auto parts = parse_numbers(s.str("bounds"), ':', "--bounds");
  if (parts.size() != 4) throw InvalidInput("--bounds expects x0:x1:y0:y1");
  g.x_min = parts[0];
  g.x_max = parts[1];
  g.y_min = parts[2];
  g.y_max = parts[3];
  g.validate();
  return g;
}

std::pair<Dataset, Dataset> load_split(const Settings& s) {
  Dataset all;
  if (auto path = s.maybe("data")) {
    if (!fs::exists(*path)) throw InvalidInput("dataset '" + *path + "' not found");
    all = read_dataset_csv(*path);
  } else {
    const auto n = s.count("n");
    all = make_moons(n, s.num("noise"), s.count("data-seed"));
  }
  return split(all, s.num("test-fraction"), s.count("data-seed"));
}

/// Fills preset-dependent defaults that the option table cannot express.
void apply_preset_defaults(Settings& s) {
  const Arch arch = parse_arch(s.str("arch"));
  s.set_default("t1", arch == Arch::ex1 ? "2" : "6");
}

TrainConfig train_config_of(const Settings& s) {
  TrainConfig c;
  c.gamma = s.num("gamma");
  c.delta = s.num("delta");
  c.t1_reg = s.num("t1");
  c.learning_rate = s.num("lr");
  c.epochs = s.count("epochs");
  c.batch_size = s.count("batch");
  c.seed = s.count("seed");
  if (auto r = s.maybe("reg-dt")) c.reg_dt = s.num("reg-dt");
  c.threads = threads_of(s);
  c.record_seconds = !s.flag("deterministic-log");
  c.schedule = parse_lr_schedule(s.str("schedule"));
  c.grad_clip = s.num("grad-clip");
  if (!(c.grad_clip >= 0.0)) throw InvalidInput("--grad-clip must be nonnegative");
  return c;
}

Classifier load_model(const std::string& path) {
  if (!fs::exists(path)) throw InvalidInput("checkpoint '" + path + "' not found");
  return read_checkpoint(path);
}

fs::path ensure_dir(const fs::path& dir) {
  if (!dir.empty()) fs::create_directories(dir);
  return dir;
}

void echo_config(const Settings& s, const fs::path& dir) {
  std::ofstream os(dir / "run.cfg");
  if (!os) throw InvalidInput("cannot write run.cfg in '" + dir.string() + "'");
  s.write(os);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

using Report = std::vector<std::pair<std::string, std::string>>;

void write_report(const Report& r, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot write '" + path.string() + "'");
  for (const auto& [k, v] : r) os << k << '=' << v << '\n';
}

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the subcommands and repro
// ---------------------------------------------------------------------------

TrainResult run_training(const Settings& s, const Dataset& train_set, const Dataset& test_set) {
  const TrainConfig cfg = train_config_of(s);
  Classifier m = make_preset(parse_arch(s.str("arch")));
  he_init(m, cfg.seed);
  return train(m, train_set, test_set, cfg);
}

void save_training(const TrainResult& r, const fs::path& ckpt, const fs::path& log) {
  write_checkpoint(r.model, ckpt.string());
  write_train_log(r.log, log.string());
}

void check_exponent(const Classifier& m, std::size_t exponent) {
  if (exponent < 1 || exponent > m.field.dim())
    throw ModeMismatch("exponent " + std::to_string(exponent) + " requested but the checkpoint's state dimension is " +
                       std::to_string(m.field.dim()));
}

void write_field_images(const ScalarGrid& g, const fs::path& stem) {
  write_pgm(g, stem.string() + ".pgm");
  write_ppm(g, stem.string() + ".ppm");
}

FtleField compute_and_write_ftle(const Classifier& m, const GridSpec& g, FtleMode mode, std::size_t exponent,
                                 std::size_t stride, std::size_t threads, const fs::path& dir,
                                 const std::string& prefix) {
  check_exponent(m, exponent);
  FtleFieldOptions opts;
  opts.stride = stride;
  opts.threads = threads;
  FtleField f = ftle_field(m.field, g, mode, exponent, m.flow, opts);
  for (std::size_t k = 0; k < f.frames.size(); ++k) {
    char idx[16];
    std::snprintf(idx, sizeof idx, "%03zu", k);
    const fs::path stem = dir / (prefix + "_" + idx);
    write_frame_csv(f, k, stem.string() + ".csv");
    write_field_images(f.frames[k].field, stem);
  }
  return f;
}

struct AnalysisOptions {
  GridSpec grid;
  double epsilon = 0.1;
  std::size_t tolerance = 3;
  double ridge_quantile = kDefaultRidgeQuantile;
  double adv_budget = 0.1;
  std::size_t adv_points = 500;
  std::size_t adv_steps = 20;
  bool coherence = false;
  std::size_t samples = 10000;
  std::uint64_t coherence_seed = 11;
  double coherence_t0 = 0.0;
  std::size_t threads = 1;
};

AnalysisOptions analysis_options_of(const Settings& s) {
  AnalysisOptions o;
  o.grid = grid_of(s);
  o.epsilon = s.num("epsilon");
  o.tolerance = s.count("tolerance");
  o.ridge_quantile = s.num("ridge-quantile");
  if (!(o.ridge_quantile >= 0.0 && o.ridge_quantile <= 1.0)) throw InvalidInput("--ridge-quantile must lie in [0, 1]");
  o.adv_budget = s.num("adv-budget");
  o.adv_points = s.count("adv-points");
  o.adv_steps = s.count("adv-steps");
  o.coherence = s.has("coherence") && s.flag("coherence");
  o.samples = s.count("samples");
  o.coherence_seed = s.count("coherence-seed");
  o.coherence_t0 = s.num("coherence-t0");
  o.threads = threads_of(s);
  return o;
}

/// Diagnostics of one model; artifacts go to dir/<prefix>*.
Report analyze_model(const Classifier& m, const Dataset& test_set, const AnalysisOptions& o, const fs::path& dir,
                     const std::string& prefix) {
  Report r;
  const GridSpec& g = o.grid;
  r.emplace_back("test_acc", fmt(accuracy(m, test_set, o.threads)));

  const ScalarGrid pred = pred_grid(m, g, o.threads);
  {
    std::ofstream os(dir / (prefix + "pred.csv"));
    if (!os) throw InvalidInput("cannot write pred.csv");
    write_field_csv(pred, "pred bounds=" + g.bounds_string() + " res=" + std::to_string(g.resolution), os);
  }
  const Margin margin = decision_margin(pred, o.epsilon);
  write_mask_pgm(g, margin.mask, (dir / (prefix + "margin.pgm")).string());

  FtleFieldOptions fo;
  fo.threads = o.threads;
  const FtleField ftle = ftle_field(m.field, g, FtleMode::full, 1, m.flow, fo);
  const ScalarGrid& lam = ftle.frames[0].field;
  write_frame_csv(ftle, 0, (dir / (prefix + "ftle_max.csv")).string());
  write_field_images(lam, dir / (prefix + "ftle_max"));
  const double threshold = finite_quantile(lam.values, o.ridge_quantile);
  const RidgeSet ridges = extract_ridges(lam, threshold);
  write_ridges_csv(ridges, (dir / (prefix + "ridges.csv")).string());
  const auto overlap = ridge_boundary_overlap(ridges, margin.mask, o.tolerance);

  r.emplace_back("mean_lambda_max", fmt(finite_mean(lam.values)));
  r.emplace_back("ftle_failed_points", std::to_string(ftle.failed_points));
  r.emplace_back("margin_epsilon", fmt(o.epsilon));
  r.emplace_back("margin_nodes", std::to_string(margin.count));
  r.emplace_back("margin_area", fmt(margin.area));
  r.emplace_back("ridge_threshold", fmt(threshold));
  r.emplace_back("ridge_nodes", std::to_string(ridges.size()));
  r.emplace_back("overlap_tolerance", std::to_string(o.tolerance));
  r.emplace_back("overlap", overlap ? fmt(*overlap) : "undefined");

  const std::size_t np = std::min(o.adv_points, test_set.size());
  const std::vector<std::array<double, 2>> probes(test_set.inputs.begin(),
                                                  test_set.inputs.begin() + static_cast<std::ptrdiff_t>(np));
  r.emplace_back("adv_budget", fmt(o.adv_budget));
  r.emplace_back("adv_points", std::to_string(np));
  r.emplace_back("adv_success_rate",
                 np ? fmt(adversarial_success_rate(m, probes, o.adv_budget, o.adv_steps, o.threads)) : "undefined");

  if (o.coherence) {
    const Interval iv{o.coherence_t0, m.flow.t_end};
    const ScalarGrid pred_end = pred_grid(m, g, o.threads, m.flow.t_end);
    const ScalarGrid pred_start = o.coherence_t0 == 0.0 ? pred : pred_grid(m, g, o.threads, o.coherence_t0);
    for (ClassId c : {ClassId::blue, ClassId::orange}) {
      const std::string name = "coherence_" + to_string(c);
      const NodeMask s0 = class_mask(pred_start, c);
      const NodeMask s1 = class_mask(pred_end, c);
      if (std::none_of(s0.begin(), s0.end(), [](unsigned char v) { return v != 0; })) {
        r.emplace_back(name + "_ratio", "undefined");
        continue;
      }
      const CoherenceReport cr = coherence_ratio(m.field, m.flow, g, s0, s1, iv, o.samples, o.coherence_seed, o.threads);
      r.emplace_back(name + "_ratio", fmt(cr.ratio));
      r.emplace_back(name + "_samples", std::to_string(cr.sample_count));
      r.emplace_back(name + "_diverged", std::to_string(cr.diverged));
    }
  }
  return r;
}

std::optional<double> report_number(const Report& r, const std::string& key) {
  for (const auto& [k, v] : r)
    if (k == key) {
      try {
        return std::stod(v);
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
  return std::nullopt;
}

/// Primary model's report, the compared model's keys prefixed "compare.", and
/// ratios/differences compared / primary.
Report compare_reports(const Report& a, const Report& b) {
  Report r = a;
  for (const auto& [k, v] : b) r.emplace_back("compare." + k, v);
  auto ratio = [&](const std::string& key, const std::string& name) {
    const auto x = report_number(a, key), y = report_number(b, key);
    r.emplace_back(name, x && y && *x != 0.0 ? fmt(*y / *x) : "undefined");
  };
  auto diff = [&](const std::string& key, const std::string& name) {
    const auto x = report_number(a, key), y = report_number(b, key);
    r.emplace_back(name, x && y ? fmt(*y - *x) : "undefined");
  };
  ratio("margin_area", "margin_area_ratio");
  ratio("adv_success_rate", "adv_success_ratio");
  diff("mean_lambda_max", "mean_lambda_max_change");
  diff("test_acc", "test_acc_change");
  return r;
}

std::vector<std::array<double, 2>> parse_points(const std::string& text) {
  std::vector<std::array<double, 2>> pts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    const auto v = parse_numbers(item, ',', "--points");
    if (v.size() != 2) throw InvalidInput("point '" + item + "' is not 'x,y'");
    pts.push_back({v[0], v[1]});
  }
  if (pts.empty()) throw InvalidInput("no points given");
  return pts;
}

std::vector<std::array<double, 2>> grid_points(const GridSpec& g) {
  std::vector<std::array<double, 2>> pts;
  for (std::size_t j = 0; j < g.resolution; ++j)
    for (std::size_t i = 0; i < g.resolution; ++i) pts.push_back({g.x(i), g.y(j)});
  return pts;
}

/// One trajectory CSV per point plus an index of start points and final classes.
void write_trajectories(const Classifier& m, const std::vector<std::array<double, 2>>& pts, const fs::path& dir) {
  std::ofstream index(dir / "points.csv");
  if (!index) throw InvalidInput("cannot write points.csv");
  index.precision(17);
  index << "id,x1,x2,pred,class\n";
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const Trajectory tr = flow(m.field, pts[k], Interval{0.0, m.flow.t_end}, m.flow);
    char name[32];
    std::snprintf(name, sizeof name, "traj_%04zu.csv", k);
    std::ofstream os(dir / name);
    if (!os) throw InvalidInput(std::string("cannot write ") + name);
    write_trajectory_csv(tr, os);
    const double p = pred_from_output(m.output.apply(tr.final_state()));
    index << k << ',' << pts[k][0] << ',' << pts[k][1] << ',' << p << ',' << to_string(predicted_class(p)) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_data(const Settings& s) {
  const Dataset ds = make_moons(s.count("n"), s.num("noise"), s.count("seed"));
  const fs::path out = s.str("out");
  ensure_dir(out.parent_path());
  write_dataset_csv(ds, out.string());
  echo_config(s, out.parent_path().empty() ? fs::path(".") : out.parent_path());
  std::cout << "wrote " << ds.size() << " points to " << out.string() << '\n';
  if (ds.odd_count_rounded) std::cerr << "note: odd point count rounded down to " << ds.size() << '\n';
  return kExitOk;
}

int cmd_train(Settings s) {
  apply_preset_defaults(s);
  const fs::path ckpt = s.str("out");
  const fs::path dir = ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path();
  ensure_dir(dir);
  const fs::path log = s.maybe("log") ? fs::path(s.str("log")) : dir / "train_log.csv";
  const auto [train_set, test_set] = load_split(s);
  train_config_of(s).validate(make_preset(parse_arch(s.str("arch"))).flow);
  echo_config(s, dir);
  const TrainResult r = run_training(s, train_set, test_set);
  save_training(r, ckpt, log);
  if (r.diverged) {
    std::cerr << "training diverged: " << r.divergence_message << '\n';
    return kExitDivergence;
  }
  if (!r.log.epochs.empty()) {
    const auto& e = r.log.epochs.back();
    std::cout << "epochs=" << e.epoch << " mse=" << fmt(e.mse) << " train_acc=" << fmt(e.train_acc)
              << " test_acc=" << fmt(e.test_acc) << " mean_lmax_T1=" << fmt(e.mean_lmax_t1) << '\n';
  }
  if (r.log.near_degenerate_warnings)
    std::cerr << "note: " << r.log.near_degenerate_warnings << " near-degenerate regularizer samples\n";
  return kExitOk;
}

int cmd_ftle(const Settings& s) {
  const Classifier m = load_model(s.str("ckpt"));
  const FtleMode mode = parse_ftle_mode(s.str("mode"));
  const auto exponent = s.count("exponent");
  check_exponent(m, exponent);
  const fs::path dir = ensure_dir(s.str("out"));
  echo_config(s, dir);
  const FtleField f = compute_and_write_ftle(m, grid_of(s), mode, exponent, s.count("stride"), threads_of(s), dir,
                                             "ftle_" + to_string(mode) + "_e" + std::to_string(exponent));
  std::cout << "frames=" << f.frames.size() << " failed_points=" << f.failed_points << '\n';
  return kExitOk;
}

int cmd_analyze(const Settings& s) {
  const Classifier m = load_model(s.str("ckpt"));
  std::optional<Classifier> other;
  if (auto c = s.maybe("compare")) other = load_model(*c);
  const auto opts = analysis_options_of(s);
  const auto [train_set, test_set] = load_split(s);
  (void)train_set;
  const fs::path dir = ensure_dir(s.str("out"));
  echo_config(s, dir);
  Report r = analyze_model(m, test_set, opts, dir, "");
  if (other) r = compare_reports(r, analyze_model(*other, test_set, opts, dir, "compare_"));
  write_report(r, dir / "report.txt");
  for (const auto& [k, v] : r) std::cout << k << '=' << v << '\n';
  return kExitOk;
}

int cmd_evolve(const Settings& s) {
  const Classifier m = load_model(s.str("ckpt"));
  std::vector<std::array<double, 2>> pts;
  if (auto p = s.maybe("points")) {
    pts = parse_points(*p);
  } else {
    GridSpec g = grid_of(s);
    g.resolution = s.count("grid");
    g.validate();
    pts = grid_points(g);
  }
  const fs::path dir = ensure_dir(s.str("out"));
  echo_config(s, dir);
  write_trajectories(m, pts, dir);
  std::cout << "trajectories=" << pts.size() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// repro
// ---------------------------------------------------------------------------

const std::vector<std::pair<std::string, std::string>> kFigures = {
    {"fig1", "training data; ex1 standard vs FTLE-suppressed training, max FTLE on [0,T]"},
    {"fig2", "ex1 standard: trajectories, prediction level sets, max and min FTLE on [0,T], ridges"},
    {"fig3", "ex1 standard: FTLE on growing intervals [0,t] with trajectories"},
    {"fig4", "ex2 standard: level sets, max/min FTLE on [0,T], FTLE per parameter block"},
    {"fig5", "ex2 standard: FTLE on shrinking intervals [t,T] and class coherence"},
    {"fig6", "ex1 standard: adversarial witnesses near the boundary and their trajectories"},
    {"fig7", "ex1 paired standard vs regularized (gamma 2, T1 2) from one initialization"},
    {"fig8", "ex2 paired standard vs regularized (gamma 20, T1 6), including per-block FTLE"},
};

std::string figure_list() {
  std::string s;
  for (const auto& [id, what] : kFigures) s += "  " + id + "  " + what + "\n";
  return s;
}

struct Repro {
  Settings base;  // repro flags: train, data, grid and analysis options
  fs::path dir;
  Dataset train_set, test_set;

  Settings with(std::initializer_list<std::pair<std::string, std::string>> kv) const {
    Settings s = base;
    for (const auto& [k, v] : kv) s.set(k, v);
    apply_preset_defaults(s);
    return s;
  }

  Classifier trained(const Settings& s, const std::string& name) const {
    const TrainResult r = run_training(s, train_set, test_set);
    if (r.diverged) throw Divergence(0, name + ": " + r.divergence_message);
    save_training(r, dir / (name + ".ckpt"), dir / (name + "_log.csv"));
    std::ofstream cfg(dir / (name + ".cfg"));
    s.write(cfg);
    return r.model;
  }

  FtleField ftle(const Classifier& m, FtleMode mode, std::size_t exponent, const std::string& prefix) const {
    return compute_and_write_ftle(m, grid_of(base), mode, exponent, base.count("stride"), threads_of(base), dir,
                                  prefix);
  }

  void analysis(const Classifier& m, const std::string& prefix, bool coherence,
                const Classifier* compare = nullptr) const {
    auto o = analysis_options_of(base);
    o.coherence = coherence;
    Report r = analyze_model(m, test_set, o, dir, prefix);
    if (compare) r = compare_reports(r, analyze_model(*compare, test_set, o, dir, prefix + "compare_"));
    write_report(r, dir / (prefix + "report.txt"));
  }

  void trajectories(const Classifier& m, const std::string& sub) const {
    GridSpec g = grid_of(base);
    g.resolution = base.count("grid");
    const fs::path d = ensure_dir(dir / sub);
    write_trajectories(m, grid_points(g), d);
  }
};

void repro_figure(const std::string& id, Repro& R) {
  const std::string arch1 = "ex1", arch2 = "ex2";
  if (id == "fig1" || id == "fig7") {
    const Classifier base = R.trained(R.with({{"arch", arch1}, {"gamma", "0"}}), "ex1_standard");
    const Classifier reg =
        R.trained(R.with({{"arch", arch1}, {"gamma", "2"}, {"delta", "0.05"}, {"t1", "2"}}), "ex1_regularized");
    R.ftle(base, FtleMode::full, 1, "ex1_standard_max");
    R.ftle(reg, FtleMode::full, 1, "ex1_regularized_max");
    if (id == "fig7") {
      R.analysis(base, "ex1_", false, &reg);
      R.trajectories(base, "ex1_standard_traj");
      R.trajectories(reg, "ex1_regularized_traj");
    }
  } else if (id == "fig2") {
    const Classifier m = R.trained(R.with({{"arch", arch1}, {"gamma", "0"}}), "ex1_standard");
    R.ftle(m, FtleMode::full, 1, "ex1_max");
    R.ftle(m, FtleMode::full, 2, "ex1_min");
    R.analysis(m, "ex1_", false);
    R.trajectories(m, "ex1_traj");
  } else if (id == "fig3") {
    const Classifier m = R.trained(R.with({{"arch", arch1}, {"gamma", "0"}}), "ex1_standard");
    R.ftle(m, FtleMode::growing, 1, "ex1_growing");
    R.trajectories(m, "ex1_traj");
  } else if (id == "fig4") {
    const Classifier m = R.trained(R.with({{"arch", arch2}, {"gamma", "0"}}), "ex2_standard");
    R.ftle(m, FtleMode::full, 1, "ex2_max");
    R.ftle(m, FtleMode::full, 2, "ex2_min");
    R.ftle(m, FtleMode::subinterval, 1, "ex2_subinterval");
    R.analysis(m, "ex2_", false);
    R.trajectories(m, "ex2_traj");
  } else if (id == "fig5") {
    const Classifier m = R.trained(R.with({{"arch", arch2}, {"gamma", "0"}}), "ex2_standard");
    R.ftle(m, FtleMode::shrinking, 1, "ex2_shrinking");
    R.analysis(m, "ex2_", true);
    R.trajectories(m, "ex2_traj");
  } else if (id == "fig6") {
    const Classifier m = R.trained(R.with({{"arch", arch1}, {"gamma", "0"}}), "ex1_standard");
    const double budget = R.base.num("adv-budget");
    std::vector<std::array<double, 2>> starts;
    std::ofstream os(R.dir / "adversarial.csv");
    os.precision(17);
    os << "x1,x2,pred,success,w1,w2,witness_pred\n";
    const std::size_t np = std::min<std::size_t>(R.base.count("adv-points"), R.test_set.size());
    for (std::size_t i = 0; i < np; ++i) {
      const auto& x = R.test_set.inputs[i];
      const double p = predict(m, x);
      if (p == 0.5) continue;
      const auto a = adversarial_probe(m, x, budget, R.base.count("adv-steps"));
      os << x[0] << ',' << x[1] << ',' << p << ',' << (a.success ? 1 : 0);
      if (a.witness) {
        os << ',' << (*a.witness)[0] << ',' << (*a.witness)[1] << ',' << predict(m, *a.witness) << '\n';
        starts.push_back(x);
        starts.push_back(*a.witness);
      } else {
        os << ",,,\n";
      }
    }
    const fs::path d = ensure_dir(R.dir / "adversarial_traj");
    write_trajectories(m, starts, d);
    R.ftle(m, FtleMode::full, 1, "ex1_max");
  } else if (id == "fig8") {
    const Classifier base = R.trained(R.with({{"arch", arch2}, {"gamma", "0"}}), "ex2_standard");
    const Classifier reg =
        R.trained(R.with({{"arch", arch2}, {"gamma", "20"}, {"delta", "0.05"}, {"t1", "6"}}), "ex2_regularized");
    R.ftle(base, FtleMode::subinterval, 1, "ex2_standard_subinterval");
    R.ftle(reg, FtleMode::subinterval, 1, "ex2_regularized_subinterval");
    R.analysis(base, "ex2_", false, &reg);
    R.trajectories(base, "ex2_standard_traj");
    R.trajectories(reg, "ex2_regularized_traj");
  } else {
    throw InvalidInput("unknown figure id '" + id + "'; valid ids:\n" + figure_list());
  }
}

int cmd_repro(Settings s, const std::string& id) {
  // seconds are machine-dependent; keep repro outputs byte-identical
  s.set("deterministic-log", "true");
  if (std::none_of(kFigures.begin(), kFigures.end(), [&](const auto& f) { return f.first == id; }))
    throw InvalidInput("unknown figure id '" + id + "'; valid ids:\n" + figure_list());
  Repro R;
  R.base = s;
  R.dir = ensure_dir(fs::path(s.str("out")) / id);
  s.set("figure", id);
  echo_config(s, R.dir);
  std::tie(R.train_set, R.test_set) = load_split(s);
  {
    std::ofstream os(R.dir / "train_data.csv");
    write_dataset_csv(R.train_set, os);
    std::ofstream ot(R.dir / "test_data.csv");
    write_dataset_csv(R.test_set, ot);
  }
  repro_figure(id, R);
  std::cout << "wrote " << id << " artifacts to " << R.dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural ODE classifiers on two moons: training with FTLE suppression and FTLE diagnostics"};
  app.require_subcommand(1);

  Command data(app, "data", "generate a two-moons dataset CSV");
  data.add(kDataOpts).add(kCommonOpts);

  Command train_cmd(app, "train", "train a classifier and write a checkpoint and log");
  train_cmd.add(kTrainOpts).add(kSourceOpts).add(kCommonOpts);

  Command ftle(app, "ftle", "FTLE fields of a checkpoint over a grid of inputs");
  ftle.add(kFtleOpts).add(kGridOpts).add(kCommonOpts);

  Command analyze(app, "analyze", "margins, ridges, overlap, adversarial and coherence diagnostics");
  analyze.add(kAnalyzeOpts).add(kGridOpts).add(kSourceOpts).add(kCommonOpts);

  Command evolve(app, "evolve", "dump trajectories of the flow");
  evolve.add(kEvolveOpts).add(kGridOpts).add(kCommonOpts);

  Command repro(app, "repro", "run the full pipeline for one figure");
  std::string figure;
  repro.app()->add_option("figure", figure, "figure id")->required();
  repro.add(kReproOpts)
      .add(without(kTrainOpts, {"arch", "gamma", "t1", "out", "log", "deterministic-log"}))
      .add(kSourceOpts)
      .add(kGridOpts)
      .add(without(kAnalyzeOpts, {"ckpt", "compare", "coherence", "out"}))
      .add({{"stride", "5", "frame spacing in steps for growing/shrinking"},
            {"grid", "15", "trajectory start points per axis"}})
      .add(kCommonOpts);
  repro.app()->footer("figure ids:\n" + figure_list());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (data.parsed()) return cmd_data(data.settings());
    if (train_cmd.parsed()) return cmd_train(train_cmd.settings());
    if (ftle.parsed()) return cmd_ftle(ftle.settings());
    if (analyze.parsed()) return cmd_analyze(analyze.settings());
    if (evolve.parsed()) return cmd_evolve(evolve.settings());
    if (repro.parsed()) return cmd_repro(repro.settings(), figure);
  } catch (const ModeMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMismatch;
  } catch (const Divergence& e) {
    std::cerr << "error: numerical divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const DegenerateTangent& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const AlignmentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const OutOfDomain& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
