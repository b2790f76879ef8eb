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


#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "clmorph/cli.hpp"

namespace {

void add_config_options(CLI::App* cmd, clmorph::ConfigSources& sources) {
  cmd->add_option("--config", sources.file, "key = value config file");
  cmd->add_option("--set", sources.overrides, "override as key=value (repeatable)");
}

// Named flag that becomes a `key=value` override.
void add_override(CLI::App* cmd, const std::string& flag, const std::string& key,
                  clmorph::ConfigSources& sources, const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&sources, key](const std::string& v) { sources.overrides.push_back(key + "=" + v); }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CLMorph: contrastive registration-based segmentation"};
  app.require_subcommand(1);

  clmorph::GenOptions gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
  add_config_options(g, gen.config);
  add_override(g, "--shape", "shape", gen.config, "volume extent, N or DxHxW");
  add_override(g, "--n", "count", gen.config, "number of deformed samples");
  add_override(g, "--seed", "seed", gen.config, "generation seed");
  g->add_option("--out", gen.out, "output directory")->required();

  clmorph::TrainOptions train;
  bool no_contrast = false, no_smooth = false;
  auto* t = app.add_subcommand("train", "train a model");
  add_config_options(t, train.config);
  t->add_option("--data", train.data, "dataset directory")->required();
  t->add_option("--out", train.out, "run directory")->required();
  t->add_option("--resume", train.resume, "checkpoint with trainer state to continue from");
  add_override(t, "--epochs", "epochs", train.config, "training epochs");
  add_override(t, "--seed", "train_seed", train.config, "training seed");
  t->add_flag("--no-contrast", no_contrast, "disable the contrastive term");
  t->add_flag("--no-smooth", no_smooth, "disable the smooth term");

  clmorph::SegmentOptions seg;
  auto* s = app.add_subcommand("segment", "segment an unaligned image through the atlas");
  s->add_option("--checkpoint", seg.checkpoint, "trained model");
  s->add_option("--unaligned", seg.unaligned, "image to segment")->required();
  s->add_option("--atlas", seg.atlas, "atlas image")->required();
  s->add_option("--atlas-labels", seg.atlas_labels, "atlas label map")->required();
  s->add_option("--out", seg.out, "output label volume")->required();
  s->add_flag("--zero-field", seg.zero_field, "use a zero displacement (copies the atlas labels)");

  clmorph::RegisterOptions reg;
  auto* r = app.add_subcommand("register", "register an unaligned image to the atlas");
  r->add_option("--checkpoint", reg.checkpoint, "trained model")->required();
  r->add_option("--unaligned", reg.unaligned, "moving image")->required();
  r->add_option("--atlas", reg.atlas, "atlas image")->required();
  r->add_option("--out", reg.out, "output directory")->required();

  clmorph::EvalOptions ev;
  auto* e = app.add_subcommand("eval", "score predicted label maps against ground truth");
  e->add_option("--pred", ev.pred, "directory of predicted label volumes")->required();
  e->add_option("--gt", ev.gt, "directory of ground-truth label volumes with the same names")->required();
  e->add_option("--out", ev.out, "report directory")->required();

  clmorph::AblateOptions abl;
  auto* a = app.add_subcommand("ablate", "train and score the four loss combinations");
  add_config_options(a, abl.config);
  a->add_option("--data", abl.data, "dataset directory")->required();
  a->add_option("--out", abl.out, "output directory")->required();
  a->add_option("--seeds", abl.seeds, "training seeds")->delimiter(',');

  clmorph::SweepOptions sw;
  auto* w = app.add_subcommand("sweep", "grid over alpha and beta");
  add_config_options(w, sw.config);
  w->add_option("--data", sw.data, "dataset directory")->required();
  w->add_option("--out", sw.out, "output directory")->required();
  w->add_option("--alpha", sw.alphas, "alpha values")->delimiter(',')->required();
  w->add_option("--beta", sw.betas, "beta values")->delimiter(',')->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : clmorph::kExitConfig;
  }

  try {
    if (*g) return clmorph::cmd_gen(gen, std::cout);
    if (*t) {
      if (no_contrast) train.config.overrides.push_back("use_contrast=false");
      if (no_smooth) train.config.overrides.push_back("use_smooth=false");
      return clmorph::cmd_train(train, std::cout);
    }
    if (*s) {
      if (!seg.zero_field && seg.checkpoint.empty()) {
        std::cerr << "segment: --checkpoint is required unless --zero-field is given\n";
        return clmorph::kExitConfig;
      }
      return clmorph::cmd_segment(seg, std::cout);
    }
    if (*r) return clmorph::cmd_register(reg, std::cout);
    if (*e) return clmorph::cmd_eval(ev, std::cout);
    if (*a) return clmorph::cmd_ablate(abl, std::cout);
    if (*w) return clmorph::cmd_sweep(sw, std::cout);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return clmorph::exit_code_for(ex);
  }
  return clmorph::kExitConfig;
}
