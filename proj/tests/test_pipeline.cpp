#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "cliffm/pipeline.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace cliffm;
using namespace cliffm::testing;
using nlohmann::json;

namespace {

json tiny_config_json(const std::filesystem::path& out) {
  json j = json::parse(R"({
    "seed": 5,
    "source": {"name": "A", "synth_profile": "A", "patients": 120, "ratios": [0.7, 0.1, 0.2]},
    "target": {"name": "B", "synth_profile": "B", "patients": 150, "ratios": [0.2, 0.2, 0.6]},
    "tokenizer": {"max_len": 256},
    "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16, "max_context": 256,
              "positions": "alibi"},
    "pretrain": {"steps": 6, "block_len": 64, "rows_per_batch": 4, "lr": 0.003, "warmup_steps": 2,
                 "eval_every": 3, "val_max_batches": 2},
    "finetune": {"lr": 0.001, "epochs": 1, "batch_size": 16},
    "finetune_urt": {"lr": 0.001, "epochs": 1, "batch_size": 16},
    "local_finetune": {"lr": 0.001, "epochs": 1, "batch_size": 16},
    "local_search": [{"lr": 0.0, "epochs": 0}, {"lr": 0.001, "epochs": 1}],
    "forest": {"n_trees": 20, "psi": 32, "threshold": 0.5},
    "curves": {"n_per_class": 5}
  })");
  j["out_dir"] = out.string();
  return j;
}

RunConfig tiny_config(const std::filesystem::path& out) {
  return run_config_from_json(tiny_config_json(out).dump());
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(CLIFFM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfig, RejectsBadValues) {
  TempDir dir;
  auto bad = [&](const std::function<void(json&)>& edit) {
    json j = tiny_config_json(dir.path());
    edit(j);
    EXPECT_THROW(run_config_from_json(j.dump()).validate(), ConfigError) << j.dump();
  };
  bad([](json& j) { j["source"]["ratios"] = {0.7, 0.1, 0.3}; });
  bad([](json& j) { j["source"]["synth_profile"] = "Q"; });
  bad([](json& j) { j["outcomes"] = {"long_length_of_stay"}; });
  bad([](json& j) { j["outcomes"] = {"sepsis"}; });
  bad([](json& j) { j["local_search"] = json::array(); });
  bad([](json& j) { j["model"]["n_heads"] = 3; });
  bad([](json& j) { j["tokenizer"]["max_len"] = 1024; });  // above max_context
  bad([](json& j) { j["forest"]["contamination"] = 1.5; });
  EXPECT_THROW(run_config_from_json("{not json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "absent.json"), ConfigError);
}

TEST(RunConfig, JsonRoundTripAndRelativePaths) {
  TempDir dir;
  RunConfig c = tiny_config(dir.path());
  c.validate();
  std::string text = run_config_to_json(c);
  EXPECT_EQ(run_config_to_json(run_config_from_json(text)), text);
  json j = tiny_config_json("out");
  spit(dir / "cfg" / "c.json", j.dump());
  EXPECT_EQ(load_run_config(dir / "cfg" / "c.json").out_dir, dir / "cfg" / "out");
}

TEST(Stages, UnknownStageAndMissingInputs) {
  TempDir dir;
  RunConfig c = tiny_config(dir.path());
  EXPECT_THROW(run_stage(c, "bake"), ConfigError);
  try {
    run_stage(c, "tokenize");
    FAIL() << "expected ArtifactError";
  } catch (const StaleArtifactError&) {
    FAIL() << "missing input reported as stale";
  } catch (const ArtifactError& e) {
    EXPECT_NE(std::string(e.what()).find("first"), std::string::npos) << e.what();
  }
  auto m = StageManifest::load(c.out_dir / "manifest.json");
  ASSERT_TRUE(m.failed_stage);
  EXPECT_EQ(*m.failed_stage, "tokenize");
}

TEST(Stages, StaleInputDetectedAndForceWarns) {
  TempDir dir;
  RunConfig c = tiny_config(dir.path());
  for (const char* s : {"ingest", "split", "vocab"}) run_stage(c, s);
  auto m = StageManifest::load(c.out_dir / "manifest.json");
  EXPECT_TRUE(m.stages.count("split"));
  EXPECT_FALSE(m.stages.at("vocab").inputs.empty());

  const auto splits = c.out_dir / "splits" / "A.csv";
  std::string text = slurp(splits);
  spit(splits, "# edited by hand" + text.substr(text.find('\n')));
  EXPECT_THROW(run_stage(c, "vocab"), StaleArtifactError);
  StageRecord r = run_stage(c, "vocab", {.force = true});
  EXPECT_TRUE(r.forced);
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings[0].find("stale"), std::string::npos);
  // Re-running the producer makes the inputs current again.
  run_stage(c, "split");
  EXPECT_TRUE(run_stage(c, "vocab").warnings.empty());
}

TEST(Experiment, DeterministicAndLeakFree) {
  TempDir d1, d2;
  run_experiment(tiny_config(d1.path()));
  run_experiment(tiny_config(d2.path()));
  EXPECT_EQ(slurp(d1 / "reports" / "report_hashes.json"), slurp(d2 / "reports" / "report_hashes.json"));
  json leak = json::parse(slurp(d1 / "reports" / "leakage.json"));
  EXPECT_TRUE(leak["clean"].get<bool>());
  for (const auto& [name, f] : leak["fits"].items()) EXPECT_EQ(f["test_overlap"], 0) << name;
  auto m = StageManifest::load(d1 / "manifest.json");
  EXPECT_EQ(m.stages.size(), stage_names().size());
  EXPECT_FALSE(m.failed_stage);
  for (const char* f : {"auc_representation.csv", "auc_finetune.csv", "auc_local.csv", "curves.csv",
                        "summary_A.json", "summary_B.json", "local_search.csv"})
    EXPECT_TRUE(std::filesystem::exists(d1 / "reports" / f)) << f;
}

TEST(LinearClassifier, CsvRoundTrip) {
  Eigen::MatrixXd X(40, 2);
  std::vector<std::uint8_t> y(40);
  Rng rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 40; ++i) {
    X(i, 0) = n(rng) * 10 + 3;
    X(i, 1) = n(rng);
    y[i] = X(i, 0) + 5 * n(rng) > 3;
  }
  LinearClassifier c = fit_linear_classifier(X, y);
  TempDir dir;
  spit(dir / "lr.csv", linear_classifier_csv(c, "prov"));
  LinearClassifier back = read_linear_classifier(dir / "lr.csv");
  for (int i = 0; i < 40; ++i) EXPECT_NEAR(back.predict(X.row(i)), c.predict(X.row(i)), 1e-12);
}

TEST(LinearClassifier, FoldedIntoHeadMatchesProbe) {
  ModelConfig mc;
  mc.vocab_size = 20;
  mc.d_model = 8;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.max_context = 32;
  mc.positions = "alibi";
  auto params = init_model<float>(mc);
  Rng rng(4);
  std::uniform_int_distribution<TokenId> tok(3, 19);
  std::vector<std::vector<TokenId>> seqs;
  Eigen::MatrixXd X(60, 8);
  std::vector<std::uint8_t> y;
  for (int i = 0; i < 60; ++i) {
    std::vector<TokenId> s{1};
    for (int k = 0; k < 6; ++k) s.push_back(tok(rng));
    TokenTimeline t;
    t.tokens = s;
    t.event_time.assign(s.size(), 0);
    X.row(i) = extract_representation(params, t).cast<double>();
    y.push_back(s.back() > 11);
    seqs.push_back(s);
  }
  LinearClassifier c = fit_linear_classifier(X, y);
  set_head_from_linear(params, c);
  for (int i = 0; i < 60; ++i)
    EXPECT_NEAR(predict_outcome(params, std::span<const TokenId>(seqs[i])), c.predict(X.row(i)), 1e-5);
  mc.d_model = 4;
  mc.n_heads = 1;
  auto narrow = init_model<float>(mc);
  EXPECT_THROW(set_head_from_linear(narrow, c), IntegrityError);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  json j = tiny_config_json(dir / "run");
  spit(dir / "good.json", j.dump());
  j["source"]["ratios"] = {0.5, 0.5, 0.5};
  spit(dir / "bad.json", j.dump());
  const std::string good = (dir / "good.json").string(), bad = (dir / "bad.json").string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("bake"), 2);
  EXPECT_EQ(run_cli("ingest --config " + bad), 2);
  EXPECT_EQ(run_cli("pretrain --config " + good), 3);
  EXPECT_EQ(run_cli("synth --profile A --patients 20 --seed 1 --out " + (dir / "synth").string()), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "synth" / "vitals.csv"));
  EXPECT_EQ(run_cli("ingest --config " + good + " --seed 3"), 0);
  auto m = StageManifest::load(dir / "run" / "manifest.json");
  EXPECT_EQ(m.stages.at("ingest").seed, derive_seed(3, 0));
}
