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


#pragma once

// Command implementations behind the `clmorph` executable. Each command takes
// a parsed option struct, writes its artifacts under a run directory and
// returns a process exit code.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "clmorph/metrics.hpp"
#include "clmorph/network.hpp"
#include "clmorph/synthdata.hpp"
#include "clmorph/trainer.hpp"

namespace clmorph {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

// Every tunable in one flat `key = value` namespace.
struct RunConfig {
  SyntheticSpec synth;
  TrainConfig train;
  std::size_t count = 20;  // samples written by `gen`

  // Throws ConfigError naming the key when it is unknown or the value is bad.
  void set(const std::string& key, const std::string& value);
  // Lines of `key = value`; '#' starts a comment.
  void apply_text(const std::string& text, const std::string& origin);
  void load_file(const std::string& path);
  // `key=value` override as given on the command line.
  void apply_override(const std::string& assignment);
  std::string to_text() const;
  void validate() const;

  static std::vector<std::string> keys();
};

struct ConfigSources {
  std::optional<std::string> file;
  std::vector<std::string> overrides;
};
RunConfig resolve_config(const ConfigSources& sources);

// Writes the resolved config as <dir>/config.txt (creating dir).
void echo_config(const RunConfig& config, const std::string& dir);

// ---- shared experiment helpers ----

struct TrainOutcome {
  Network network;
  TrainState state;
};

// Trains from scratch (or from `resume`) and, when run_dir is non-empty,
// writes train.log, train_log.csv and checkpoint.clmp there.
TrainOutcome run_training(const Dataset& dataset, const TrainConfig& config, const std::string& run_dir,
                          std::ostream* progress, const std::optional<std::string>& resume = std::nullopt);

struct Evaluation {
  RegionReport report;           // registration-based segmentation
  RegionReport baseline;         // atlas labels used unchanged
  double mse_before = 0.0;       // mean over samples
  double mse_after = 0.0;
  double jacobian_min = 0.0;     // over all evaluated fields
  std::size_t non_positive_jacobians = 0;
};

// Segments and registers samples [first, first + count) against the atlas.
Evaluation evaluate_model(const Network& net, const Dataset& dataset, std::size_t first, std::size_t count);

double macro_dice(const RegionReport& report);

// ---- commands ----

struct GenOptions {
  ConfigSources config;
  std::string out;
};
int cmd_gen(const GenOptions& opt, std::ostream& out);

struct TrainOptions {
  ConfigSources config;
  std::string data;
  std::string out;
  std::optional<std::string> resume;
};
int cmd_train(const TrainOptions& opt, std::ostream& out);

struct SegmentOptions {
  std::string checkpoint;
  std::string unaligned;
  std::string atlas;
  std::string atlas_labels;
  std::string out;
  bool zero_field = false;
};
int cmd_segment(const SegmentOptions& opt, std::ostream& out);

struct RegisterOptions {
  std::string checkpoint;
  std::string unaligned;
  std::string atlas;
  std::string out;
};
int cmd_register(const RegisterOptions& opt, std::ostream& out);

struct EvalOptions {
  std::string pred;
  std::string gt;
  std::string out;
};
int cmd_eval(const EvalOptions& opt, std::ostream& out);

struct AblationRow {
  std::string name;
  LossToggles toggles;
  std::vector<double> dice;  // per seed
  std::vector<double> hd;
  std::vector<double> assd;
};
// The four loss combinations, in table order.
std::vector<AblationRow> ablation_rows();

struct AblateOptions {
  ConfigSources config;
  std::string data;
  std::string out;
  std::vector<std::uint64_t> seeds{7};
};
int cmd_ablate(const AblateOptions& opt, std::ostream& out);
std::string format_ablation_csv(const std::vector<AblationRow>& rows);

struct SweepOptions {
  ConfigSources config;
  std::string data;
  std::string out;
  std::vector<double> alphas;
  std::vector<double> betas;
};
int cmd_sweep(const SweepOptions& opt, std::ostream& out);

}  // namespace clmorph
