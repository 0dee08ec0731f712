// cliffm: stage runner for the CLIF foundation-model workflow.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cliffm/clif.hpp"
#include "cliffm/pipeline.hpp"
#include "cliffm/synth.hpp"

namespace {

int exit_code(const std::exception& e) {
  if (dynamic_cast<const cliffm::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const cliffm::ArtifactError*>(&e)) return 3;
  if (dynamic_cast<const cliffm::NumericError*>(&e)) return 4;
  return 1;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

cliffm::RunConfig resolve(const Common& c) {
  if (c.config.empty()) throw cliffm::ConfigError("--config is required");
  cliffm::RunConfig rc = cliffm::load_run_config(c.config);
  if (c.seed) rc.seed = *c.seed;
  if (!c.out.empty()) rc.out_dir = c.out;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cliffm: tokenize CLIF cohorts, train a sequence model, and evaluate transfer"};
  app.require_subcommand(1);
  Common common;
  std::string stage;
  std::string profile = "A";
  std::size_t patients = 1000;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "run configuration (JSON)");
    sub->add_option("--seed", common.seed, "override the configured seed");
    sub->add_option("--out", common.out, "override the output directory");
    sub->add_flag("--force", common.force, "run even if upstream artifacts are stale");
  };

  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  for (const auto& name : cliffm::stage_names()) {
    auto* sub = app.add_subcommand(name, "run the '" + name + "' stage");
    add_common(sub);
    stage_cmds.emplace_back(sub, name);
  }
  auto* all = app.add_subcommand("run-all", "run every stage in order");
  add_common(all);
  all->add_option("--stage", stage, "start from this stage");

  auto* synth = app.add_subcommand("synth", "write a synthetic CLIF bundle");
  synth->add_option("--profile", profile, "site profile (A or B)");
  synth->add_option("--patients", patients, "number of patients");
  synth->add_option("--seed", common.seed, "random seed");
  synth->add_option("--out", common.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    cliffm::StageOptions opts{common.force, &std::cerr};
    if (synth->parsed()) {
      cliffm::SynthConfig sc{cliffm::site_profile(profile), patients};
      cliffm::write_bundle(cliffm::synth_cohort(sc, common.seed.value_or(0)), common.out);
      return 0;
    }
    if (all->parsed()) {
      cliffm::run_experiment(resolve(common), opts, stage);
      return 0;
    }
    for (const auto& [sub, name] : stage_cmds)
      if (sub->parsed()) cliffm::run_stage(resolve(common), name, opts);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "cliffm: " << e.what() << '\n';
    return exit_code(e);
  }
}
