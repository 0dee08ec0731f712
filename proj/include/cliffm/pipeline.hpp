#ifndef CLIFFM_PIPELINE_HPP
#define CLIFFM_PIPELINE_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "cliffm/anomaly.hpp"
#include "cliffm/analytics.hpp"
#include "cliffm/clif.hpp"
#include "cliffm/seqmodel.hpp"
#include "cliffm/training.hpp"

namespace cliffm {

// A site is either a directory of CLIF tables or a synthetic profile.
struct SiteSpec {
  std::string name;
  std::string synth_profile;
  std::size_t patients = 1000;
  std::filesystem::path directory;
  SplitRatios ratios;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "run";
  SiteSpec source;
  SiteSpec target;
  std::size_t max_len = 1024;
  std::size_t pad_gap_max = 4;
  ModelConfig model;  // vocab_size is taken from the learned vocabulary
  PretrainOptions pretrain;
  FinetuneOptions finetune;
  FinetuneOptions finetune_urt;
  FinetuneOptions local_base;
  std::vector<LocalCandidate> local_search;
  ForestOptions forest;
  double outlier_threshold = 0.5;
  std::optional<double> contamination;  // when set, overrides the threshold
  std::vector<Outcome> outcomes{kAllOutcomes.begin(), kAllOutcomes.end()};
  std::size_t curves_per_class = 100;

  void validate() const;  // throws ConfigError
};

// Relative directories in the JSON are resolved against `base_dir`.
RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
std::string run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

const std::vector<std::string>& stage_names();

struct StageRecord {
  std::string name;
  std::map<std::string, std::string> inputs;   // relative path -> sha256
  std::map<std::string, std::string> outputs;  // relative path -> sha256
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  bool forced = false;
  std::vector<std::string> warnings;
};

struct StageManifest {
  std::map<std::string, StageRecord> stages;
  std::optional<std::string> failed_stage;
  std::string failure;

  static StageManifest load(const std::filesystem::path& path);  // empty if absent
  void save(const std::filesystem::path& path) const;
};

struct StageOptions {
  bool force = false;
  std::ostream* log = nullptr;
};

// Runs one stage. Throws ArtifactError when an input is missing and
// StaleArtifactError when an input no longer matches the hash recorded by the
// stage that produced it (unless forced; the warning is then recorded).
StageRecord run_stage(const RunConfig& config, const std::string& stage,
                      const StageOptions& options = {});

// Every stage in order, optionally starting at `from_stage`.
void run_experiment(const RunConfig& config, const StageOptions& options = {},
                    const std::string& from_stage = "");

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// Logistic classifier on z-scored features.
struct LinearClassifier {
  std::vector<double> mean;
  std::vector<double> scale;
  LogitFit fit;

  double predict(const Eigen::RowVectorXd& x) const;
};

LinearClassifier fit_linear_classifier(const Eigen::MatrixXd& X, const std::vector<std::uint8_t>& y);
// Folds the z-scoring into a model head so the head reproduces `c` on hidden states.
void set_head_from_linear(ModelParams<float>& params, const LinearClassifier& c);
std::string linear_classifier_csv(const LinearClassifier& c, const std::string& provenance = "");
LinearClassifier read_linear_classifier(const std::filesystem::path& path);

// One representation per stay from a uniformly random prefix, paired with the
// mortality label.
LinearClassifier lr_urt_train(const ModelParams<float>& params,
                              const std::vector<TokenTimeline>& timelines, std::uint64_t seed);

}  // namespace cliffm

#endif  // CLIFFM_PIPELINE_HPP
