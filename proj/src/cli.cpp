// Copyright 2026 The CLMorph Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "clmorph/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "clmorph/binary_io.hpp"
#include "clmorph/errors.hpp"
#include "clmorph/inference.hpp"
#include "clmorph/warp.hpp"

namespace clmorph {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const DomainError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e)) return kExitConfig;
  return kExitData;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

Extent3 parse_extent(const std::string& key, const std::string& v) {
  std::string s = v;
  std::replace(s.begin(), s.end(), 'x', ',');
  const auto parts = parse_size_list(key, s);
  if (parts.size() == 1) return {parts[0], parts[0], parts[0]};
  if (parts.size() == 3) return {parts[0], parts[1], parts[2]};
  bad_value(key, v, "N or DxHxW");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const Extent3& e) {
  return std::to_string(e.d) + "x" + std::to_string(e.h) + "x" + std::to_string(e.w);
}
std::string fmt(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CLM_DOUBLE(name, member)                                                                  \
  Field {                                                                                         \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<double>(c.member)); }                    \
  }
#define CLM_SIZE(name, member)                                                                    \
  Field {                                                                                         \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_u64(k, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.member)); }            \
  }
#define CLM_BOOL(name, member)                                                                    \
  Field {                                                                                         \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<bool>(c.member)); }                      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      // synthetic data
      Field{"shape", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.shape = parse_extent(k, v); },
            [](const RunConfig& c) { return fmt(c.synth.shape); }},
      CLM_SIZE("count", count),
      CLM_SIZE("seed", synth.seed),
      CLM_SIZE("structures", synth.structures),
      CLM_DOUBLE("radius_min", synth.radius_min),
      CLM_DOUBLE("radius_max", synth.radius_max),
      CLM_DOUBLE("body_intensity", synth.body_intensity),
      CLM_DOUBLE("intensity_min", synth.intensity_min),
      CLM_DOUBLE("edge_blur", synth.edge_blur),
      CLM_DOUBLE("noise", synth.noise),
      CLM_DOUBLE("amplitude", synth.amplitude),
      CLM_DOUBLE("smooth_radius", synth.smooth_radius),
      CLM_DOUBLE("min_jacobian", synth.min_jacobian),
      CLM_SIZE("max_retries", synth.max_retries),
      // optimisation
      CLM_SIZE("train_seed", train.seed),
      CLM_DOUBLE("lr0", train.lr0),
      CLM_DOUBLE("lr_decay", train.lr_decay),
      CLM_SIZE("lr_decay_every", train.lr_decay_every),
      CLM_SIZE("epochs", train.epochs),
      CLM_SIZE("batch_size", train.batch_size),
      CLM_DOUBLE("adam_beta1", train.adam_beta1),
      CLM_DOUBLE("adam_beta2", train.adam_beta2),
      CLM_DOUBLE("adam_eps", train.adam_eps),
      CLM_DOUBLE("grad_clip", train.grad_clip),
      CLM_SIZE("train_count", train.train_count),
      Field{"pair_mode",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "atlas") c.train.pair_mode = PairMode::kAtlas;
              else if (v == "random") c.train.pair_mode = PairMode::kRandom;
              else bad_value(k, v, "'atlas' or 'random'");
            },
            [](const RunConfig& c) { return std::string(c.train.pair_mode == PairMode::kAtlas ? "atlas" : "random"); }},
      CLM_BOOL("augment", train.augment),
      CLM_BOOL("augment_flip", train.augment_config.flip),
      CLM_DOUBLE("augment_max_rotation_deg", train.augment_config.max_rotation_deg),
      // loss
      CLM_BOOL("use_recon", train.toggles.recon),
      CLM_BOOL("use_smooth", train.toggles.smooth),
      CLM_BOOL("use_contrast", train.toggles.contrast),
      CLM_DOUBLE("alpha", train.loss.alpha),
      CLM_DOUBLE("beta", train.loss.beta),
      CLM_DOUBLE("sigma2", train.loss.sigma2),
      CLM_DOUBLE("tau", train.loss.tau),
      CLM_BOOL("symmetric", train.loss.symmetric),
      CLM_DOUBLE("gradient_weight", train.loss.gradient_weight),
      // network
      Field{"enc_channels",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.network.enc_channels = parse_size_list(k, v); },
            [](const RunConfig& c) { return fmt(c.train.network.enc_channels); }},
      Field{"dec_channels",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.network.dec_channels = parse_size_list(k, v); },
            [](const RunConfig& c) { return fmt(c.train.network.dec_channels); }},
      CLM_SIZE("proj_dim", train.network.proj_dim),
      CLM_DOUBLE("leaky_slope", train.network.leaky_slope),
  };
  return table;
}

#undef CLM_DOUBLE
#undef CLM_SIZE
#undef CLM_BOOL

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing", 0);
  f << text;
  if (!f) throw FormatError("write failed for " + path, 0);
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create directory " + dir + ": " + ec.message(), 0);
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(*this, key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  apply_text(ss.str(), path);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  synth.validate();
  train.validate();
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

RunConfig resolve_config(const ConfigSources& sources) {
  RunConfig cfg;
  if (sources.file) cfg.load_file(*sources.file);
  for (const std::string& o : sources.overrides) cfg.apply_override(o);
  cfg.validate();
  return cfg;
}

void echo_config(const RunConfig& config, const std::string& dir) {
  make_dir(dir);
  write_text(join_path(dir, "config.txt"), config.to_text());
}

// ---------------------------------------------------------------------------

TrainOutcome run_training(const Dataset& dataset, const TrainConfig& config, const std::string& run_dir,
                          std::ostream* progress, const std::optional<std::string>& resume) {
  config.validate();
  const TrainingData data = make_training_data(dataset, config.train_count);
  std::optional<TrainOutcome> outcome;
  if (resume) {
    LoadedCheckpoint ck = load_checkpoint(*resume);
    if (!ck.state) throw FormatError("checkpoint " + *resume + " has no trainer state", 0);
    outcome.emplace(TrainOutcome{std::move(ck.network), std::move(*ck.state)});
  } else {
    Network net(config.network);
    init_parameters(net, config.seed);
    TrainState state = make_train_state(net, config);
    outcome.emplace(TrainOutcome{std::move(net), std::move(state)});
  }
  Network& net = outcome->network;
  TrainState& state = outcome->state;

  std::ofstream log, csv;
  if (!run_dir.empty()) {
    make_dir(run_dir);
    log.open(join_path(run_dir, "train.log"), std::ios::binary);
    csv.open(join_path(run_dir, "train_log.csv"), std::ios::binary);
    if (!log || !csv) throw FormatError("cannot open training logs in " + run_dir, 0);
    log << "# epoch step lr L_total L_recon L_smooth L_contrast grad_norm\n";
    csv << kTrainLogCsvHeader << "\n";
    for (const StepRecord& r : state.history) {
      log << format_step_record(r) << "\n";
      csv << format_step_csv(r) << "\n";
    }
  }
  const StepLogger logger = [&](const StepRecord& r) {
    if (log.is_open()) {
      log << format_step_record(r) << "\n";
      csv << format_step_csv(r) << "\n";
    }
  };
  try {
    while (state.epoch < config.epochs) {
      const auto records = train_epoch(data, net, state, config, logger);
      if (progress && !records.empty()) *progress << format_step_record(records.back()) << "\n" << std::flush;
    }
  } catch (const NumericalError& e) {
    if (!run_dir.empty()) write_text(join_path(run_dir, "failure.txt"), std::string(e.what()) + "\n");
    throw;
  }
  if (!run_dir.empty()) save_checkpoint(join_path(run_dir, "checkpoint.clmp"), net, state);
  return std::move(*outcome);
}

Evaluation evaluate_model(const Network& net, const Dataset& dataset, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > dataset.samples.size()) {
    throw ConfigError("evaluation range [" + std::to_string(first) + ", " + std::to_string(first + count) +
                      ") is empty or exceeds the " + std::to_string(dataset.samples.size()) + " samples");
  }
  Evaluation ev;
  std::vector<SampleScore> scores, base;
  ev.jacobian_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = first; i < first + count; ++i) {
    const LabeledImage& s = dataset.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04zu", i);
    const Registration reg = register_volume(net, s.image, dataset.atlas.image);
    const LabelVolume pred = transfer_labels(dataset.atlas.labels, reg.field);
    scores.push_back(score_sample(name, pred, s.labels));
    base.push_back(score_sample(name, dataset.atlas.labels, s.labels));
    ev.mse_before += reg.mse_before / static_cast<double>(count);
    ev.mse_after += reg.mse_after / static_cast<double>(count);
    ev.jacobian_min = std::min(ev.jacobian_min, reg.jacobian.min);
    ev.non_positive_jacobians += reg.jacobian.non_positive;
  }
  ev.report = build_report(std::move(scores));
  ev.baseline = build_report(std::move(base));
  return ev;
}

double macro_dice(const RegionReport& report) {
  for (const auto& row : report.rows) {
    if (row.label == "macro") return row.dice.mean;
  }
  throw UsageError("report has no macro row");
}

namespace {

const RegionReport::Row& macro_row(const RegionReport& report) {
  for (const auto& row : report.rows) {
    if (row.label == "macro") return row;
  }
  throw UsageError("report has no macro row");
}

void write_report(const RegionReport& report, const std::string& dir, const std::string& stem) {
  write_text(join_path(dir, stem + ".txt"), format_report_text(report));
  write_text(join_path(dir, stem + ".csv"), format_report_csv(report));
  write_text(join_path(dir, stem + "_samples.csv"), format_samples_csv(report));
}

Dataset load_checked(const std::string& root) {
  if (!fs::is_directory(root)) throw FormatError("dataset directory " + root + " does not exist", 0);
  return load_dataset(root);
}

std::size_t held_out_start(const TrainConfig& cfg, const Dataset& ds) {
  const std::size_t start = cfg.train_count == 0 ? ds.samples.size() : cfg.train_count;
  if (start >= ds.samples.size()) {
    throw ConfigError("train_count " + std::to_string(cfg.train_count) + " leaves no held-out samples out of " +
                      std::to_string(ds.samples.size()));
  }
  return start;
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_gen(const GenOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt.config);
  echo_config(cfg, opt.out);
  generate_dataset(cfg.synth, cfg.count, opt.out);
  out << "wrote atlas and " << cfg.count << " samples to " << opt.out << "\n";
  return kExitOk;
}

int cmd_train(const TrainOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt.config);
  echo_config(cfg, opt.out);
  const Dataset ds = load_checked(opt.data);
  const TrainOutcome r = run_training(ds, cfg.train, opt.out, &out, opt.resume);
  out << "checkpoint " << join_path(opt.out, "checkpoint.clmp") << " after " << r.state.step << " steps\n";
  return kExitOk;
}

int cmd_segment(const SegmentOptions& opt, std::ostream& out) {
  const ImageVolume unaligned = read_image(opt.unaligned);
  const ImageVolume atlas = read_image(opt.atlas);
  const LabelVolume atlas_labels = read_labels(opt.atlas_labels);
  LabelVolume pred;
  if (opt.zero_field) {
    require_same_extent(unaligned, atlas, "segment");
    require_same_extent(atlas_labels, atlas, "segment");
    pred = atlas_labels;
  } else {
    const Network net = load_checkpoint(opt.checkpoint).network;
    pred = segment_volume(net, unaligned, atlas, atlas_labels);
  }
  pred.spacing = unaligned.spacing;
  const fs::path parent = fs::path(opt.out).parent_path();
  if (!parent.empty()) make_dir(parent.string());
  write_volume(opt.out, pred);
  out << "wrote " << opt.out << "\n";
  return kExitOk;
}

int cmd_register(const RegisterOptions& opt, std::ostream& out) {
  const ImageVolume unaligned = read_image(opt.unaligned);
  const ImageVolume atlas = read_image(opt.atlas);
  const Network net = load_checkpoint(opt.checkpoint).network;
  const Registration r = register_volume(net, unaligned, atlas);
  make_dir(opt.out);
  write_volume(join_path(opt.out, "warped.clmv"), r.warped);
  write_volume(join_path(opt.out, "field.clmv"), r.field);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "jacobian_min %.6f\njacobian_max %.6f\njacobian_mean %.6f\njacobian_non_positive %zu\n"
                "mse_before %.8g\nmse_after %.8g\n",
                r.jacobian.min, r.jacobian.max, r.jacobian.mean, r.jacobian.non_positive, r.mse_before, r.mse_after);
  write_text(join_path(opt.out, "registration.txt"), buf);
  out << buf;
  return kExitOk;
}

int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  if (!fs::is_directory(opt.pred)) throw FormatError("prediction directory " + opt.pred + " does not exist", 0);
  if (!fs::is_directory(opt.gt)) throw FormatError("ground-truth directory " + opt.gt + " does not exist", 0);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(opt.pred)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".clmv") continue;
    if (peek_dtype(entry.path().string()) != VolumeDType::kLabels) continue;
    names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw FormatError("no label volumes in " + opt.pred, 0);
  std::vector<SampleScore> scores;
  for (const std::string& name : names) {
    const LabelVolume pred = read_labels(join_path(opt.pred, name));
    const LabelVolume gt = read_labels(join_path(opt.gt, name));
    scores.push_back(score_sample(fs::path(name).stem().string(), pred, gt));
  }
  const RegionReport report = build_report(std::move(scores));
  make_dir(opt.out);
  write_report(report, opt.out, "report");
  out << format_report_text(report);
  return kExitOk;
}

std::vector<AblationRow> ablation_rows() {
  return {
      {"recon", {true, false, false}, {}, {}, {}},
      {"recon+smooth", {true, true, false}, {}, {}, {}},
      {"recon+contrast", {true, false, true}, {}, {}, {}},
      {"recon+smooth+contrast", {true, true, true}, {}, {}, {}},
  };
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "config,seeds,dice_mean,dice_std,hd_mean,hd_std,assd_mean,assd_std\n";
  char buf[256];
  for (const AblationRow& r : rows) {
    const Stat d = summarize(r.dice), h = summarize(r.hd), a = summarize(r.assd);
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.name.c_str(), r.dice.size(), d.mean,
                  d.std, h.mean, h.std, a.mean, a.std);
    out += buf;
  }
  return out;
}

int cmd_ablate(const AblateOptions& opt, std::ostream& out) {
  if (opt.seeds.empty()) throw ConfigError("ablate needs at least one seed");
  const RunConfig base = resolve_config(opt.config);
  echo_config(base, opt.out);
  const Dataset ds = load_checked(opt.data);
  const std::size_t first = held_out_start(base.train, ds);
  std::vector<AblationRow> rows = ablation_rows();
  std::string runs = "config,seed,dice,hd,assd,mse_before,mse_after\n";
  for (AblationRow& row : rows) {
    for (std::uint64_t seed : opt.seeds) {
      RunConfig cfg = base;
      cfg.train.toggles = row.toggles;
      cfg.train.seed = seed;
      const std::string dir = join_path(opt.out, row.name + "_seed" + std::to_string(seed));
      echo_config(cfg, dir);
      out << "training " << row.name << " seed " << seed << "\n" << std::flush;
      const TrainOutcome t = run_training(ds, cfg.train, dir, nullptr);
      const Evaluation ev = evaluate_model(t.network, ds, first, ds.samples.size() - first);
      write_report(ev.report, dir, "report");
      const auto& m = macro_row(ev.report);
      row.dice.push_back(m.dice.mean);
      row.hd.push_back(m.hd.mean);
      row.assd.push_back(m.assd.mean);
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f,%.6f,%.8g,%.8g\n", row.name.c_str(),
                    static_cast<unsigned long long>(seed), m.dice.mean, m.hd.mean, m.assd.mean, ev.mse_before,
                    ev.mse_after);
      runs += buf;
    }
  }
  const std::string table = format_ablation_csv(rows);
  write_text(join_path(opt.out, "ablation.csv"), table);
  write_text(join_path(opt.out, "ablation_runs.csv"), runs);
  out << table;
  return kExitOk;
}

int cmd_sweep(const SweepOptions& opt, std::ostream& out) {
  if (opt.alphas.empty() || opt.betas.empty()) throw ConfigError("sweep needs non-empty alpha and beta lists");
  const RunConfig base = resolve_config(opt.config);
  echo_config(base, opt.out);
  const Dataset ds = load_checked(opt.data);
  const std::size_t first = held_out_start(base.train, ds);
  std::string grid = "alpha,beta,dice,hd,assd\n";
  double best = -1.0, best_alpha = 0.0, best_beta = 0.0;
  for (double alpha : opt.alphas) {
    for (double beta : opt.betas) {
      RunConfig cfg = base;
      cfg.train.loss.alpha = alpha;
      cfg.train.loss.beta = beta;
      cfg.validate();
      const std::string dir = join_path(opt.out, "alpha_" + fmt(alpha) + "_beta_" + fmt(beta));
      echo_config(cfg, dir);
      out << "training alpha " << fmt(alpha) << " beta " << fmt(beta) << "\n" << std::flush;
      const TrainOutcome t = run_training(ds, cfg.train, dir, nullptr);
      const Evaluation ev = evaluate_model(t.network, ds, first, ds.samples.size() - first);
      write_report(ev.report, dir, "report");
      const auto& m = macro_row(ev.report);
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f\n", fmt(alpha).c_str(), fmt(beta).c_str(), m.dice.mean,
                    m.hd.mean, m.assd.mean);
      grid += buf;
      if (m.dice.mean > best) {
        best = m.dice.mean;
        best_alpha = alpha;
        best_beta = beta;
      }
    }
  }
  write_text(join_path(opt.out, "sweep.csv"), grid);
  const std::string summary = "best alpha " + fmt(best_alpha) + " beta " + fmt(best_beta) + " dice " + fmt(best) + "\n";
  write_text(join_path(opt.out, "best.txt"), summary);
  out << grid << summary;
  return kExitOk;
}

}  // namespace clmorph
