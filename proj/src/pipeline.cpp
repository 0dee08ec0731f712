#include "cliffm/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>

#include "cliffm/checkpoint.hpp"
#include "cliffm/csv.hpp"
#include "cliffm/synth.hpp"
#include "cliffm/tokenizer.hpp"
#include "json.hpp"

namespace cliffm {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------- hashing

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing artifact " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(data);
}

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  auto site = [](const SiteSpec& s, const char* role) {
    if (s.name.empty()) throw ConfigError(std::string(role) + ": site name is empty");
    if (s.directory.empty()) {
      site_profile(s.synth_profile);
      if (s.patients == 0) throw ConfigError(std::string(role) + ": patients must be positive");
    } else if (!fs::is_directory(s.directory)) {
      throw ConfigError(std::string(role) + ": directory " + s.directory.string() + " does not exist");
    }
    const double sum = s.ratios.train + s.ratios.val + s.ratios.test;
    if (s.ratios.train < 0 || s.ratios.val < 0 || s.ratios.test < 0 || std::abs(sum - 1.0) > 1e-9)
      throw ConfigError(std::string(role) + ": split ratios must be non-negative and sum to 1");
  };
  site(source, "source");
  site(target, "target");
  if (source.name == target.name) throw ConfigError("source and target need distinct names");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  ModelConfig m = model;
  m.vocab_size = std::max(m.vocab_size, 1);
  m.validate();
  if (static_cast<std::size_t>(model.max_context) < max_len)
    throw ConfigError("model.max_context (" + std::to_string(model.max_context) +
                      ") is below max_len (" + std::to_string(max_len) + ")");
  if (pretrain.block_len < 2 || pretrain.block_len > static_cast<std::size_t>(model.max_context))
    throw ConfigError("pretrain.block_len must be in [2, max_context]");
  if (local_search.empty()) throw ConfigError("local_search is empty");
  if (std::find(outcomes.begin(), outcomes.end(), Outcome::kMortality) == outcomes.end())
    throw ConfigError("outcomes must include same_admission_death (needed for curves)");
  if (contamination && !(*contamination >= 0.0 && *contamination <= 1.0))
    throw ConfigError("contamination must be in [0, 1]");
}

namespace {

json site_to_json(const SiteSpec& s) {
  json j;
  j["name"] = s.name;
  if (s.directory.empty()) {
    j["synth_profile"] = s.synth_profile;
    j["patients"] = s.patients;
  } else {
    j["directory"] = s.directory.string();
  }
  j["ratios"] = {s.ratios.train, s.ratios.val, s.ratios.test};
  return j;
}

SiteSpec site_from_json(const nlohmann::json& j, const fs::path& base) {
  SiteSpec s;
  s.name = j.at("name").get<std::string>();
  s.synth_profile = j.value("synth_profile", s.name);
  s.patients = j.value("patients", s.patients);
  if (j.contains("directory")) {
    fs::path d = j.at("directory").get<std::string>();
    s.directory = d.is_relative() && !base.empty() ? base / d : d;
  }
  if (j.contains("ratios")) {
    auto r = j.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw ConfigError("site " + s.name + ": ratios must have 3 entries");
    s.ratios = {r[0], r[1], r[2]};
  }
  return s;
}

json finetune_to_json(const FinetuneOptions& o) {
  return {{"lr", o.lr}, {"epochs", o.epochs}, {"batch_size", o.batch_size}, {"clip_norm", o.clip_norm}};
}

FinetuneOptions finetune_from_json(const nlohmann::json& j, FinetuneOptions o) {
  o.lr = j.value("lr", o.lr);
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.clip_norm = j.value("clip_norm", o.clip_norm);
  return o;
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  j["source"] = site_to_json(c.source);
  j["target"] = site_to_json(c.target);
  j["tokenizer"] = {{"max_len", c.max_len}, {"pad_gap_max", c.pad_gap_max}};
  json m = json::parse(model_config_to_json(c.model));
  m.erase("vocab_size");
  m.erase("seed");
  j["model"] = m;
  const auto& p = c.pretrain;
  j["pretrain"] = {{"steps", p.steps},
                   {"block_len", p.block_len},
                   {"rows_per_batch", p.rows_per_batch},
                   {"lr", p.lr},
                   {"warmup_steps", p.warmup_steps},
                   {"min_lr_ratio", p.min_lr_ratio},
                   {"clip_norm", p.clip_norm},
                   {"eval_every", p.eval_every},
                   {"val_max_batches", p.val_max_batches},
                   {"checkpoint_every", p.checkpoint_every}};
  j["finetune"] = finetune_to_json(c.finetune);
  j["finetune_urt"] = finetune_to_json(c.finetune_urt);
  j["local_finetune"] = finetune_to_json(c.local_base);
  j["local_search"] = json::array();
  for (const auto& s : c.local_search) j["local_search"].push_back({{"lr", s.lr}, {"epochs", s.epochs}});
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"psi", c.forest.psi},
                 {"threshold", c.outlier_threshold},
                 {"contamination", c.contamination ? json(*c.contamination) : json(nullptr)}};
  j["outcomes"] = json::array();
  for (Outcome o : c.outcomes) j["outcomes"].push_back(outcome_key(o));
  j["curves"] = {{"n_per_class", c.curves_per_class}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text, const fs::path& base_dir) {
  RunConfig c;
  // Desk-scale fine-tuning defaults; the API default stays at 2e-5.
  c.finetune.lr = 1e-3;
  c.finetune.epochs = 3;
  c.finetune_urt = c.finetune;
  c.finetune_urt.mode = FinetuneMode::kUrt;
  c.local_base = c.finetune;
  c.local_search = {{0.0, 0, {}}, {1e-3, 5, {}}, {1e-3, 10, {}}, {3e-3, 5, {}}, {3e-3, 10, {}}};
  try {
    auto j = nlohmann::json::parse(text);
    c.seed = j.value("seed", c.seed);
    if (j.contains("out_dir")) {
      fs::path o = j.at("out_dir").get<std::string>();
      c.out_dir = o.is_relative() && !base_dir.empty() ? base_dir / o : o;
    }
    if (!j.contains("source") || !j.contains("target"))
      throw ConfigError("config needs both \"source\" and \"target\" sites");
    c.source = site_from_json(j.at("source"), base_dir);
    c.target = site_from_json(j.at("target"), base_dir);
    if (j.contains("tokenizer")) {
      c.max_len = j["tokenizer"].value("max_len", c.max_len);
      c.pad_gap_max = j["tokenizer"].value("pad_gap_max", c.pad_gap_max);
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model").dump());
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      auto& o = c.pretrain;
      o.steps = p.value("steps", o.steps);
      o.block_len = p.value("block_len", o.block_len);
      o.rows_per_batch = p.value("rows_per_batch", o.rows_per_batch);
      o.lr = p.value("lr", o.lr);
      o.warmup_steps = p.value("warmup_steps", o.warmup_steps);
      o.min_lr_ratio = p.value("min_lr_ratio", o.min_lr_ratio);
      o.clip_norm = p.value("clip_norm", o.clip_norm);
      o.eval_every = p.value("eval_every", o.eval_every);
      o.val_max_batches = p.value("val_max_batches", o.val_max_batches);
      o.checkpoint_every = p.value("checkpoint_every", o.checkpoint_every);
    }
    if (j.contains("finetune")) c.finetune = finetune_from_json(j.at("finetune"), c.finetune);
    c.finetune_urt = c.finetune;
    if (j.contains("finetune_urt")) c.finetune_urt = finetune_from_json(j.at("finetune_urt"), c.finetune_urt);
    c.finetune.mode = FinetuneMode::kPlain;
    c.finetune_urt.mode = FinetuneMode::kUrt;
    c.local_base = c.finetune;
    if (j.contains("local_finetune")) c.local_base = finetune_from_json(j.at("local_finetune"), c.local_base);
    if (j.contains("local_search")) {
      c.local_search.clear();
      for (const auto& s : j.at("local_search"))
        c.local_search.push_back({s.at("lr").get<double>(), s.at("epochs").get<std::size_t>(), {}});
    }
    if (j.contains("forest")) {
      const auto& f = j.at("forest");
      c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
      c.forest.psi = f.value("psi", c.forest.psi);
      c.outlier_threshold = f.value("threshold", c.outlier_threshold);
      if (f.contains("contamination") && !f.at("contamination").is_null())
        c.contamination = f.at("contamination").get<double>();
    }
    if (j.contains("outcomes")) {
      c.outcomes.clear();
      for (const auto& o : j.at("outcomes")) c.outcomes.push_back(parse_outcome(o.get<std::string>()));
    }
    if (j.contains("curves")) c.curves_per_class = j["curves"].value("n_per_class", c.curves_per_class);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return run_config_from_json(text, path.parent_path());
}

// ---------------------------------------------------------------- manifest

StageManifest StageManifest::load(const fs::path& path) {
  StageManifest m;
  if (!fs::exists(path)) return m;
  std::ifstream in(path, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    auto j = nlohmann::json::parse(text);
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.name = name;
      r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
      r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      r.wall_seconds = s.value("wall_seconds", 0.0);
      r.seed = s.value("seed", std::uint64_t{0});
      r.forced = s.value("forced", false);
      r.warnings = s.value("warnings", std::vector<std::string>{});
      m.stages[name] = std::move(r);
    }
    if (j.contains("failed_stage") && !j["failed_stage"].is_null()) {
      m.failed_stage = j["failed_stage"].get<std::string>();
      m.failure = j.value("failure", "");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void StageManifest::save(const fs::path& path) const {
  json j;
  j["stages"] = json::object();
  for (const auto& name : stage_names()) {
    auto it = stages.find(name);
    if (it == stages.end()) continue;
    const StageRecord& r = it->second;
    j["stages"][name] = {{"inputs", r.inputs},     {"outputs", r.outputs},
                         {"wall_seconds", r.wall_seconds}, {"seed", r.seed},
                         {"forced", r.forced},     {"warnings", r.warnings}};
  }
  j["failed_stage"] = failed_stage ? json(*failed_stage) : json(nullptr);
  if (failed_stage) j["failure"] = failure;
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "ingest",      "split",    "vocab",          "tokenize", "pretrain", "extract",
      "forest",      "classify-rep", "finetune",   "finetune-urt", "finetune-local",
      "dynamics",    "curves",   "pca",            "summarize", "report"};
  return names;
}

// ---------------------------------------------------------------- classifiers

double LinearClassifier::predict(const Eigen::RowVectorXd& x) const {
  Eigen::VectorXd z(static_cast<Eigen::Index>(mean.size()) + 1);
  z(0) = 1.0;
  for (std::size_t i = 0; i < mean.size(); ++i)
    z(static_cast<Eigen::Index>(i) + 1) = (x(static_cast<Eigen::Index>(i)) - mean[i]) / scale[i];
  return fit.predict(z);
}

LinearClassifier fit_linear_classifier(const Eigen::MatrixXd& X, const std::vector<std::uint8_t>& y) {
  if (static_cast<std::size_t>(X.rows()) != y.size())
    throw IntegrityError("linear classifier: row/label count mismatch");
  LinearClassifier c;
  const Eigen::Index n = X.rows(), d = X.cols();
  Eigen::MatrixXd Z(n, d + 1);
  Z.col(0).setOnes();
  std::vector<std::string> names = {"const"};
  for (Eigen::Index j = 0; j < d; ++j) {
    const double m = X.col(j).mean();
    const double var = (X.col(j).array() - m).square().mean();
    const double s = var > 0 ? std::sqrt(var) : 1.0;
    c.mean.push_back(m);
    c.scale.push_back(s);
    Z.col(j + 1) = (X.col(j).array() - m) / s;
    names.push_back("h" + std::to_string(j));
  }
  Eigen::VectorXd yy(n);
  for (Eigen::Index i = 0; i < n; ++i) yy(i) = y[static_cast<std::size_t>(i)];
  LogitOptions opts;
  opts.l2 = 1.0;
  c.fit = fit_logit_mle(Z, yy, names, opts);
  return c;
}

void set_head_from_linear(ModelParams<float>& params, const LinearClassifier& c) {
  if (c.mean.size() != static_cast<std::size_t>(params.config.d_model))
    throw IntegrityError("linear classifier width differs from d_model");
  add_classification_head(params);
  auto& w = params.tensors[params.head_w_index()];
  double bias = c.fit.coef(0);
  for (std::size_t j = 0; j < c.mean.size(); ++j) {
    const double a = c.fit.coef(static_cast<Eigen::Index>(j) + 1) / c.scale[j];
    w(0, static_cast<Eigen::Index>(j)) = static_cast<float>(a);
    bias -= a * c.mean[j];
  }
  params.tensors[params.head_w_index() + 1](0, 0) = static_cast<float>(bias);
}

std::string linear_classifier_csv(const LinearClassifier& c, const std::string& provenance) {
  std::ostringstream o;
  if (!provenance.empty()) o << "# " << provenance << '\n';
  write_csv_row(o, {"term", "mean", "scale", "coef"});
  for (Eigen::Index j = 0; j < c.fit.coef.size(); ++j) {
    const bool intercept = j == 0;
    const auto k = static_cast<std::size_t>(j) - (intercept ? 0 : 1);
    write_csv_row(o, {c.fit.names[static_cast<std::size_t>(j)],
                      format_double(intercept ? 0.0 : c.mean[k]),
                      format_double(intercept ? 1.0 : c.scale[k]), format_double(c.fit.coef(j))});
  }
  return o.str();
}

LinearClassifier read_linear_classifier(const fs::path& path) {
  CsvTable t = read_csv(path);
  const std::string ctx = path.string();
  auto term = t.column("term", ctx), mean = t.column("mean", ctx), scale = t.column("scale", ctx),
       coef = t.column("coef", ctx);
  if (t.rows.empty()) throw ParseError(ctx + ": empty classifier");
  LinearClassifier c;
  c.fit.coef.resize(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    c.fit.names.push_back(t.rows[i][term]);
    c.fit.coef(static_cast<Eigen::Index>(i)) = parse_double(t.rows[i][coef]);
    if (i > 0) {
      c.mean.push_back(parse_double(t.rows[i][mean]));
      c.scale.push_back(parse_double(t.rows[i][scale]));
    }
  }
  return c;
}

LinearClassifier lr_urt_train(const ModelParams<float>& params,
                              const std::vector<TokenTimeline>& timelines, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<std::uint8_t> y;
  for (const auto& t : timelines) {
    if (t.tokens.empty()) continue;
    TokenTimeline prefix = uniform_random_truncate(t, rng);
    rows.push_back(extract_representation(params, prefix).cast<double>());
    y.push_back(t.labels.same_admission_death ? 1 : 0);
  }
  if (rows.empty()) throw IntegrityError("lr_urt_train: no timelines");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = rows[i];
  return fit_linear_classifier(X, y);
}

// ---------------------------------------------------------------- stages

namespace {

constexpr std::array<const char*, 8> kBundleFiles = {
    "patient.csv",  "hospitalization.csv", "adt.csv", "vitals.csv", "labs.csv",
    "medication_admin_continuous.csv", "patient_assessments.csv", "respiratory_support.csv"};
constexpr std::array<Split, 3> kSplits = {Split::kTrain, Split::kVal, Split::kTest};

struct Layout {
  fs::path root;

  fs::path cohort(const std::string& site) const { return root / "cohort" / site; }
  std::vector<fs::path> cohort_files(const std::string& site) const {
    std::vector<fs::path> out;
    for (const char* f : kBundleFiles) out.push_back(cohort(site) / f);
    return out;
  }
  fs::path outcomes(const std::string& site) const { return root / "cohort" / (site + "_outcomes.csv"); }
  fs::path splits(const std::string& site) const { return root / "splits" / (site + ".csv"); }
  fs::path vocab() const { return root / "vocab" / "vocab.json"; }
  fs::path deciles() const { return root / "vocab" / "deciles.json"; }
  fs::path timelines(const std::string& site, Split s, bool h24) const {
    return root / "timelines" / (site + "_" + split_name(s) + (h24 ? "_24h" : "") + ".jsonl");
  }
  fs::path pretrained() const { return root / "model" / "pretrained.ckpt"; }
  fs::path pretrain_log() const { return root / "model" / "pretrain_log.csv"; }
  fs::path reps(const std::string& site, Split s) const {
    return root / "reps" / (site + "_" + split_name(s) + ".csv");
  }
  fs::path forest() const { return root / "forest" / "forest.json"; }
  fs::path threshold() const { return root / "forest" / "threshold.json"; }
  fs::path scores(const std::string& site, Split s) const {
    return root / "forest" / (site + "_" + split_name(s) + "_scores.csv");
  }
  fs::path rep_lr(Outcome o) const { return root / "model" / (std::string("rep_lr_") + outcome_key(o) + ".csv"); }
  fs::path sft(Outcome o) const { return root / "model" / (std::string("sft_") + outcome_key(o) + ".ckpt"); }
  fs::path sft_urt() const { return root / "model" / "sft_urt_same_admission_death.ckpt"; }
  fs::path lr_urt() const { return root / "model" / "lr_urt_same_admission_death.csv"; }
  fs::path local(Outcome o) const { return root / "model" / (std::string("local_") + outcome_key(o) + ".ckpt"); }
  fs::path report(const std::string& name) const { return root / "reports" / name; }
  fs::path manifest() const { return root / "manifest.json"; }

  std::string rel(const fs::path& p) const { return p.lexically_relative(root).generic_string(); }
};

struct StageIo {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
};

struct Ctx {
  const RunConfig& config;
  Layout layout;
  std::string stage;
  std::uint64_t seed = 0;
  std::string provenance;
  std::vector<std::string> warnings;
  std::ostream* log = nullptr;

  std::vector<const SiteSpec*> sites() const { return {&config.source, &config.target}; }
  void note(const std::string& msg) const {
    if (log) *log << "[" << stage << "] " << msg << '\n';
  }
  void warn(const std::string& msg) {
    warnings.push_back(msg);
    note("warning: " + msg);
  }
};

std::string config_digest(const RunConfig& c) {
  auto j = nlohmann::json::parse(run_config_to_json(c));
  j.erase("out_dir");
  if (j["source"].contains("directory")) j["source"]["directory"] = fs::path(c.source.directory).filename().string();
  if (j["target"].contains("directory")) j["target"]["directory"] = fs::path(c.target.directory).filename().string();
  return sha256_hex(j.dump()).substr(0, 16);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << text;
  if (!out) throw ArtifactError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing artifact " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<Outcome> configured(const RunConfig& c) { return c.outcomes; }

StageIo stage_io(const RunConfig& c, const Layout& L, const std::string& stage) {
  StageIo io;
  auto in = [&](const fs::path& p) { io.inputs.push_back(p); };
  auto out = [&](const fs::path& p) { io.outputs.push_back(p); };
  const std::string src = c.source.name, tgt = c.target.name;
  const std::array<std::string, 2> sites = {src, tgt};
  if (stage == "ingest") {
    for (const SiteSpec* s : {&c.source, &c.target}) {
      if (!s->directory.empty())
        for (const char* f : kBundleFiles) in(s->directory / f);
      for (const auto& p : L.cohort_files(s->name)) out(p);
      out(L.outcomes(s->name));
    }
  } else if (stage == "split") {
    for (const auto& s : sites) {
      in(L.cohort(s) / "patient.csv");
      in(L.cohort(s) / "hospitalization.csv");
      out(L.splits(s));
    }
  } else if (stage == "vocab") {
    for (const auto& p : L.cohort_files(src)) in(p);
    in(L.splits(src));
    out(L.vocab());
    out(L.deciles());
  } else if (stage == "tokenize") {
    for (const auto& s : sites) {
      for (const auto& p : L.cohort_files(s)) in(p);
      in(L.splits(s));
    }
    in(L.vocab());
    in(L.deciles());
    for (Split sp : kSplits) out(L.timelines(src, sp, false));
    for (const auto& s : sites)
      for (Split sp : kSplits) out(L.timelines(s, sp, true));
  } else if (stage == "pretrain") {
    in(L.timelines(src, Split::kTrain, false));
    in(L.timelines(src, Split::kVal, false));
    in(L.vocab());
    out(L.pretrained());
    out(L.pretrain_log());
  } else if (stage == "extract") {
    in(L.pretrained());
    for (const auto& s : sites)
      for (Split sp : kSplits) {
        in(L.timelines(s, sp, true));
        out(L.reps(s, sp));
      }
  } else if (stage == "forest") {
    for (const auto& s : sites)
      for (Split sp : kSplits) {
        in(L.reps(s, sp));
        out(L.scores(s, sp));
      }
    out(L.forest());
    out(L.threshold());
  } else if (stage == "classify-rep") {
    for (Split sp : {Split::kTrain, Split::kVal}) {
      in(L.reps(src, sp));
      in(L.timelines(src, sp, true));
    }
    for (const auto& s : sites) {
      in(L.reps(s, Split::kTest));
      in(L.timelines(s, Split::kTest, true));
      in(L.scores(s, Split::kTest));
    }
    for (Outcome o : configured(c)) out(L.rep_lr(o));
    out(L.report("auc_representation.csv"));
  } else if (stage == "finetune") {
    in(L.pretrained());
    in(L.timelines(src, Split::kTrain, true));
    in(L.reps(src, Split::kTrain));
    for (const auto& s : sites) {
      in(L.timelines(s, Split::kTest, true));
      in(L.scores(s, Split::kTest));
    }
    for (Outcome o : configured(c)) out(L.sft(o));
    out(L.report("auc_finetune.csv"));
  } else if (stage == "finetune-urt") {
    in(L.pretrained());
    in(L.timelines(src, Split::kTrain, true));
    out(L.sft_urt());
    out(L.lr_urt());
  } else if (stage == "finetune-local") {
    for (Outcome o : configured(c)) in(L.sft(o));
    for (Split sp : kSplits) in(L.timelines(tgt, sp, true));
    in(L.scores(tgt, Split::kTest));
    for (Outcome o : configured(c)) out(L.local(o));
    out(L.report("auc_local.csv"));
    out(L.report("local_search.csv"));
  } else if (stage == "dynamics") {
    in(L.pretrained());
    in(L.timelines(src, Split::kTest, true));
    in(L.scores(src, Split::kTest));
    out(L.report("trajectory_features.csv"));
    out(L.report("dynamics.csv"));
    for (Outcome o : configured(c)) out(L.report(std::string("dynamics_") + outcome_key(o) + ".txt"));
  } else if (stage == "curves") {
    in(L.pretrained());
    in(L.sft(Outcome::kMortality));
    in(L.sft_urt());
    in(L.lr_urt());
    in(L.timelines(src, Split::kTest, true));
    out(L.report("curves.csv"));
  } else if (stage == "pca") {
    in(L.pretrained());
    in(L.vocab());
    out(L.report("pca_tokens.csv"));
    out(L.report("pca_deciles.csv"));
    out(L.report("pca_explained.json"));
  } else if (stage == "summarize") {
    for (const auto& s : sites) {
      for (const auto& p : L.cohort_files(s)) in(p);
      in(L.outcomes(s));
      in(L.splits(s));
      for (Split sp : kSplits) {
        in(L.scores(s, sp));
        in(L.timelines(s, sp, true));
      }
      out(L.report("summary_" + s + ".json"));
    }
  } else if (stage == "report") {
    for (const char* r : {"auc_representation.csv", "auc_finetune.csv", "auc_local.csv", "local_search.csv",
                          "dynamics.csv", "curves.csv", "pca_tokens.csv", "pca_deciles.csv"})
      in(L.report(r));
    for (const auto& s : sites) in(L.report("summary_" + s + ".json"));
    for (const auto& s : sites)
      for (Split sp : kSplits) in(L.timelines(s, sp, true));
    in(L.timelines(src, Split::kTrain, false));
    in(L.timelines(src, Split::kVal, false));
    out(L.report("leakage.json"));
    out(L.report("report_hashes.json"));
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  return io;
}

// ---- artifact helpers

std::vector<TokenTimeline> load_timelines(const Ctx& x, const std::string& site, Split s, bool h24) {
  return read_timelines(x.layout.timelines(site, s, h24));
}

void write_reps(const fs::path& path, const std::vector<std::string>& ids, const Eigen::MatrixXd& R,
                const std::string& provenance) {
  std::ostringstream o;
  o << "# " << provenance << '\n';
  std::vector<std::string> header = {"hospitalization_id"};
  for (Eigen::Index j = 0; j < R.cols(); ++j) header.push_back("h" + std::to_string(j));
  write_csv_row(o, header);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<std::string> row = {ids[i]};
    for (Eigen::Index j = 0; j < R.cols(); ++j)
      row.push_back(format_double(R(static_cast<Eigen::Index>(i), j)));
    write_csv_row(o, row);
  }
  write_text(path, o.str());
}

struct Reps {
  std::vector<std::string> ids;
  Eigen::MatrixXd values;
};

Reps read_reps(const fs::path& path) {
  CsvTable t = read_csv(path);
  Reps r;
  const auto d = static_cast<Eigen::Index>(t.header.size()) - 1;
  if (d < 1) throw ParseError(path.string() + ": no representation columns");
  r.values.resize(static_cast<Eigen::Index>(t.rows.size()), d);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    r.ids.push_back(t.rows[i][0]);
    for (Eigen::Index j = 0; j < d; ++j)
      r.values(static_cast<Eigen::Index>(i), j) = parse_double(t.rows[i][static_cast<std::size_t>(j) + 1]);
  }
  return r;
}

std::map<std::string, ScoreRow> load_scores(const fs::path& path) {
  std::map<std::string, ScoreRow> out;
  for (auto& r : read_scores_csv(path)) out[r.hospitalization_id] = r;
  return out;
}

std::vector<bool> outlier_flags(const std::vector<TokenTimeline>& tl,
                                const std::map<std::string, ScoreRow>& scores) {
  std::vector<bool> flags;
  for (const auto& t : tl) {
    auto it = scores.find(t.hospitalization_id);
    if (it == scores.end()) throw IntegrityError("no anomaly score for " + t.hospitalization_id);
    flags.push_back(it->second.outlier);
  }
  return flags;
}

std::vector<std::optional<bool>> labels_for(const std::vector<TokenTimeline>& tl, Outcome o) {
  std::vector<std::optional<bool>> out;
  for (const auto& t : tl) out.push_back(outcome_label(t.labels, o));
  return out;
}

void fill_column(AucGrid& g, Outcome o, const std::vector<double>& pred,
                 const std::vector<TokenTimeline>& tl, const std::vector<bool>& flags) {
  auto labels = labels_for(tl, o);
  auto cells = subgroup_report(pred, labels, flags);
  for (Subset s : kAllSubsets)
    g.cells[static_cast<std::size_t>(s)][static_cast<std::size_t>(o)] = cells[static_cast<std::size_t>(s)];
}

ModelParams<float> load_model(const fs::path& p) { return load_checkpoint(p).params; }

std::string ckpt_meta(const Ctx& x, const std::string& extra = "") {
  std::ostringstream o;
  o << "{\"stage\":\"" << x.stage << "\",\"seed\":" << x.seed << ",\"config\":\""
    << config_digest(x.config) << "\"" << extra << "}";
  return o.str();
}

std::vector<std::uint8_t> binary_labels(const std::vector<TokenTimeline>& tl, Outcome o,
                                        std::vector<std::size_t>* kept) {
  std::vector<std::uint8_t> y;
  for (std::size_t i = 0; i < tl.size(); ++i)
    if (auto l = outcome_label(tl[i].labels, o)) {
      y.push_back(*l ? 1 : 0);
      if (kept) kept->push_back(i);
    }
  return y;
}

void check_ids(const std::vector<std::string>& fit_ids, const std::set<std::string>& test_ids,
               const std::string& what) {
  for (const auto& id : fit_ids)
    if (test_ids.count(id))
      throw IntegrityError("leakage: test stay " + id + " appears in " + what);
}

std::set<std::string> test_ids(const Ctx& x) {
  std::set<std::string> out;
  for (const SiteSpec* s : x.sites())
    for (const auto& t : load_timelines(x, s->name, Split::kTest, true)) out.insert(t.hospitalization_id);
  return out;
}

std::vector<std::string> ids_of(const std::vector<TokenTimeline>& tl) {
  std::vector<std::string> out;
  for (const auto& t : tl) out.push_back(t.hospitalization_id);
  return out;
}

// ---- stage bodies

void stage_ingest(Ctx& x) {
  std::uint64_t index = 0;
  for (const SiteSpec* s : x.sites()) {
    ClifBundle raw;
    if (s->directory.empty()) {
      SynthConfig sc{site_profile(s->synth_profile), s->patients};
      raw = synth_cohort(sc, derive_seed(x.seed, index));
    } else {
      raw = parse_bundle(s->directory);
    }
    ++index;
    ClifBundle cohort = filter_cohort(raw);
    if (cohort.hospitalizations.empty())
      throw IntegrityError("site " + s->name + ": no stays left after cohort filtering");
    x.note(s->name + ": " + std::to_string(cohort.hospitalizations.size()) + " stays of " +
           std::to_string(raw.hospitalizations.size()) + " kept");
    write_bundle(cohort, x.layout.cohort(s->name));
    write_outcomes_csv(derive_outcomes(cohort), x.layout.outcomes(s->name), x.provenance);
  }
}

// Only the tables a stage needs are parsed.
ClifBundle load_cohort(const Ctx& x, const std::string& site) { return parse_bundle(x.layout.cohort(site)); }

void stage_split(Ctx& x) {
  for (const SiteSpec* s : x.sites()) {
    ClifBundle b = load_cohort(x, s->name);
    SplitAssignment a = assign_splits(b, s->ratios);
    fs::create_directories(x.layout.splits(s->name).parent_path());
    write_splits_csv(a, x.layout.splits(s->name), x.provenance);
    x.note(s->name + ": train/val/test patients " + std::to_string(a.count(Split::kTrain)) + "/" +
           std::to_string(a.count(Split::kVal)) + "/" + std::to_string(a.count(Split::kTest)));
  }
}

void stage_vocab(Ctx& x) {
  const std::string& src = x.config.source.name;
  ClifBundle b = load_cohort(x, src);
  SplitAssignment a = read_splits_csv(x.layout.splits(src));
  ClifBundle train = restrict_to_split(b, a, Split::kTrain);
  if (train.hospitalizations.empty()) throw IntegrityError("vocab: source training split is empty");
  Vocabulary v = learn_vocab(train);
  DecileBinner d = fit_deciles(train);
  write_text(x.layout.vocab(), v.to_json());
  write_text(x.layout.deciles(), d.to_json());
  x.note("vocabulary of " + std::to_string(v.size()) + " tokens");
}

void stage_tokenize(Ctx& x) {
  Vocabulary v = Vocabulary::from_json(read_text(x.layout.vocab()));
  DecileBinner d = DecileBinner::from_json(read_text(x.layout.deciles()));
  for (const SiteSpec* s : x.sites()) {
    ClifBundle b = load_cohort(x, s->name);
    SplitAssignment a = read_splits_csv(x.layout.splits(s->name));
    BundleIndex index(b);
    std::array<std::vector<TokenTimeline>, 3> full, h24;
    for (const auto& h : b.hospitalizations) {
      TokenTimeline t = tokenize_hospitalization(index, v, d, h.hospitalization_id);
      GrammarReport g = validate_grammar(t, v);
      if (!g.ok)
        throw IntegrityError("tokenize: " + h.hospitalization_id + " violates the grammar: " + g.message);
      const auto sp = static_cast<std::size_t>(a.of_patient(h.patient_id));
      h24[sp].push_back(truncate_24h(t, v, x.config.max_len));
      if (s == &x.config.source) full[sp].push_back(std::move(t));
    }
    for (Split sp : kSplits) {
      const auto k = static_cast<std::size_t>(sp);
      if (s == &x.config.source) write_timelines(full[k], x.layout.timelines(s->name, sp, false), x.provenance);
      write_timelines(h24[k], x.layout.timelines(s->name, sp, true), x.provenance);
    }
  }
}

void stage_pretrain(Ctx& x) {
  const std::string& src = x.config.source.name;
  auto train = load_timelines(x, src, Split::kTrain, false);
  auto val = load_timelines(x, src, Split::kVal, false);
  check_ids(ids_of(train), test_ids(x), "the pretraining corpus");
  Vocabulary v = Vocabulary::from_json(read_text(x.layout.vocab()));
  ModelConfig mc = x.config.model;
  mc.vocab_size = static_cast<int>(v.size());
  mc.seed = x.seed;
  PretrainOptions po = x.config.pretrain;
  po.pad_gap_max = x.config.pad_gap_max;
  po.seed = x.seed;
  if (po.checkpoint_every > 0) po.checkpoint_dir = x.layout.root / "model" / "checkpoints";
  auto res = pretrain(init_model<float>(mc), train, val, po);
  save_checkpoint(res.params, x.layout.pretrained(), ckpt_meta(x, ",\"steps\":" + std::to_string(po.steps)));
  write_text(x.layout.pretrain_log(), train_log_csv(res.log, x.provenance));
  if (res.final_val_nll) x.note("final validation NLL " + format_double(*res.final_val_nll));
}

void stage_extract(Ctx& x) {
  auto params = load_model(x.layout.pretrained());
  for (const SiteSpec* s : x.sites())
    for (Split sp : kSplits) {
      auto tl = load_timelines(x, s->name, sp, true);
      Eigen::MatrixXd R(static_cast<Eigen::Index>(tl.size()), params.config.d_model);
      for (std::size_t i = 0; i < tl.size(); ++i)
        R.row(static_cast<Eigen::Index>(i)) = extract_representation(params, tl[i]).cast<double>();
      write_reps(x.layout.reps(s->name, sp), ids_of(tl), R, x.provenance);
    }
}

void stage_forest(Ctx& x) {
  const std::string& src = x.config.source.name;
  Reps train = read_reps(x.layout.reps(src, Split::kTrain));
  std::set<std::string> tests;
  for (const SiteSpec* s : x.sites())
    for (const auto& id : read_reps(x.layout.reps(s->name, Split::kTest)).ids) tests.insert(id);
  check_ids(train.ids, tests, "the isolation forest fit");
  ForestOptions fo = x.config.forest;
  fo.seed = x.seed;
  AnomalyForest forest = fit_forest(train.values, fo);
  write_text(x.layout.forest(), forest_to_json(forest));
  auto train_scores = anomaly_scores(forest, train.values);
  const double threshold = x.config.contamination
                               ? contamination_threshold(train_scores, *x.config.contamination)
                               : x.config.outlier_threshold;
  json tj;
  tj["threshold"] = threshold;
  tj["mode"] = x.config.contamination ? "contamination" : "fixed";
  if (x.config.contamination) tj["contamination"] = *x.config.contamination;
  tj["seed"] = x.seed;
  write_text(x.layout.threshold(), tj.dump(2) + "\n");
  for (const SiteSpec* s : x.sites())
    for (Split sp : kSplits) {
      Reps r = read_reps(x.layout.reps(s->name, sp));
      auto sc = anomaly_scores(forest, r.values);
      std::vector<ScoreRow> rows;
      std::size_t flagged = 0;
      for (std::size_t i = 0; i < sc.size(); ++i) {
        rows.push_back({r.ids[i], sc[i], sc[i] > threshold});
        flagged += rows.back().outlier;
      }
      write_scores_csv(rows, x.layout.scores(s->name, sp), x.provenance);
      x.note(s->name + "/" + split_name(sp) + ": " + std::to_string(flagged) + " of " +
             std::to_string(rows.size()) + " flagged");
    }
}

void stage_classify_rep(Ctx& x) {
  const std::string& src = x.config.source.name;
  Reps tr = read_reps(x.layout.reps(src, Split::kTrain));
  Reps va = read_reps(x.layout.reps(src, Split::kVal));
  auto tl_tr = load_timelines(x, src, Split::kTrain, true);
  auto tl_va = load_timelines(x, src, Split::kVal, true);
  std::vector<TokenTimeline> fit_tl = tl_tr;
  fit_tl.insert(fit_tl.end(), tl_va.begin(), tl_va.end());
  Eigen::MatrixXd fit_X(tr.values.rows() + va.values.rows(), tr.values.cols());
  fit_X << tr.values, va.values;
  std::vector<std::string> fit_ids = tr.ids;
  fit_ids.insert(fit_ids.end(), va.ids.begin(), va.ids.end());
  if (fit_ids != ids_of(fit_tl)) throw IntegrityError("classify-rep: representations and timelines disagree");
  check_ids(fit_ids, test_ids(x), "the representation classifier fit");

  std::vector<AucGrid> grids;
  std::vector<Reps> test_reps;
  std::vector<std::vector<TokenTimeline>> test_tl;
  std::vector<std::vector<bool>> test_flags;
  for (const SiteSpec* s : x.sites()) {
    grids.push_back({s->name, {}});
    test_reps.push_back(read_reps(x.layout.reps(s->name, Split::kTest)));
    test_tl.push_back(load_timelines(x, s->name, Split::kTest, true));
    test_flags.push_back(outlier_flags(test_tl.back(), load_scores(x.layout.scores(s->name, Split::kTest))));
  }
  for (Outcome o : x.config.outcomes) {
    std::vector<std::size_t> kept;
    auto y = binary_labels(fit_tl, o, &kept);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(kept.size()), fit_X.cols());
    for (std::size_t i = 0; i < kept.size(); ++i)
      X.row(static_cast<Eigen::Index>(i)) = fit_X.row(static_cast<Eigen::Index>(kept[i]));
    LinearClassifier clf = fit_linear_classifier(X, y);
    write_text(x.layout.rep_lr(o), linear_classifier_csv(clf, x.provenance));
    for (std::size_t k = 0; k < grids.size(); ++k) {
      std::vector<double> pred;
      for (Eigen::Index i = 0; i < test_reps[k].values.rows(); ++i)
        pred.push_back(clf.predict(test_reps[k].values.row(i)));
      fill_column(grids[k], o, pred, test_tl[k], test_flags[k]);
    }
  }
  write_text(x.layout.report("auc_representation.csv"), auc_grids_csv(grids, x.provenance));
}

void stage_finetune(Ctx& x) {
  const std::string& src = x.config.source.name;
  auto base = load_model(x.layout.pretrained());
  auto train = load_timelines(x, src, Split::kTrain, true);
  check_ids(ids_of(train), test_ids(x), "the fine-tuning set");
  std::vector<AucGrid> grids;
  std::vector<std::vector<TokenTimeline>> test_tl;
  std::vector<std::vector<bool>> test_flags;
  for (const SiteSpec* s : x.sites()) {
    grids.push_back({s->name, {}});
    test_tl.push_back(load_timelines(x, s->name, Split::kTest, true));
    test_flags.push_back(outlier_flags(test_tl.back(), load_scores(x.layout.scores(s->name, Split::kTest))));
  }
  // The head starts from a ridge probe on the frozen training representations.
  const Reps train_reps = read_reps(x.layout.reps(src, Split::kTrain));
  std::map<std::string, Eigen::Index> rep_row;
  for (std::size_t i = 0; i < train_reps.ids.size(); ++i)
    rep_row[train_reps.ids[i]] = static_cast<Eigen::Index>(i);
  for (Outcome o : x.config.outcomes) {
    std::vector<std::size_t> kept;
    auto y = binary_labels(train, o, &kept);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(kept.size()), train_reps.values.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      auto it = rep_row.find(train[kept[i]].hospitalization_id);
      if (it == rep_row.end())
        throw IntegrityError("finetune: no representation for " + train[kept[i]].hospitalization_id);
      X.row(static_cast<Eigen::Index>(i)) = train_reps.values.row(it->second);
    }
    ModelParams<float> start = base;
    set_head_from_linear(start, fit_linear_classifier(X, y));
    FinetuneOptions fo = x.config.finetune;
    fo.seed = derive_seed(x.seed, static_cast<std::uint64_t>(o));
    auto res = finetune_classifier(start, train, o, fo);
    for (auto& w : res.warnings) x.warn(w);
    save_checkpoint(res.params, x.layout.sft(o), ckpt_meta(x, std::string(",\"outcome\":\"") + outcome_key(o) + "\""));
    for (std::size_t k = 0; k < grids.size(); ++k)
      fill_column(grids[k], o, predict_timelines(res.params, test_tl[k]), test_tl[k], test_flags[k]);
    x.note(std::string(outcome_key(o)) + " done");
  }
  write_text(x.layout.report("auc_finetune.csv"), auc_grids_csv(grids, x.provenance));
}

void stage_finetune_urt(Ctx& x) {
  const std::string& src = x.config.source.name;
  auto base = load_model(x.layout.pretrained());
  auto train = load_timelines(x, src, Split::kTrain, true);
  check_ids(ids_of(train), test_ids(x), "the URT fine-tuning set");
  FinetuneOptions fo = x.config.finetune_urt;
  fo.mode = FinetuneMode::kUrt;
  fo.seed = derive_seed(x.seed, 1);
  auto res = finetune_classifier(base, train, Outcome::kMortality, fo);
  for (auto& w : res.warnings) x.warn(w);
  save_checkpoint(res.params, x.layout.sft_urt(), ckpt_meta(x, ",\"outcome\":\"same_admission_death\""));
  LinearClassifier lr = lr_urt_train(base, train, derive_seed(x.seed, 2));
  write_text(x.layout.lr_urt(), linear_classifier_csv(lr, x.provenance));
}

void stage_finetune_local(Ctx& x) {
  const std::string& tgt = x.config.target.name;
  auto train = load_timelines(x, tgt, Split::kTrain, true);
  auto val = load_timelines(x, tgt, Split::kVal, true);
  auto test = load_timelines(x, tgt, Split::kTest, true);
  std::set<std::string> tests;
  for (const auto& t : test) tests.insert(t.hospitalization_id);
  check_ids(ids_of(train), tests, "the local fine-tuning set");
  check_ids(ids_of(val), tests, "the local validation set");
  auto flags = outlier_flags(test, load_scores(x.layout.scores(tgt, Split::kTest)));
  AucGrid grid{tgt, {}};
  std::ostringstream search;
  search << "# " << x.provenance << '\n';
  write_csv_row(search, {"outcome", "lr", "epochs", "val_auc", "chosen"});
  for (Outcome o : x.config.outcomes) {
    auto start = load_model(x.layout.sft(o));
    FinetuneOptions fo = x.config.local_base;
    fo.mode = FinetuneMode::kPlain;
    fo.seed = derive_seed(x.seed, static_cast<std::uint64_t>(o));
    auto res = local_finetune(start, train, val, o, x.config.local_search, fo);
    for (auto& w : res.warnings) x.warn(std::string(outcome_key(o)) + ": " + w);
    for (const auto& c : res.candidates) {
      const bool chosen = c.lr == res.chosen.lr && c.epochs == res.chosen.epochs;
      write_csv_row(search, {outcome_key(o), format_double(c.lr), std::to_string(c.epochs),
                             c.val_auc ? format_double(*c.val_auc) : "undefined", chosen ? "1" : "0"});
    }
    save_checkpoint(res.params, x.layout.local(o),
                    ckpt_meta(x, std::string(",\"outcome\":\"") + outcome_key(o) + "\",\"lr\":" +
                                     format_double(res.chosen.lr) + ",\"epochs\":" +
                                     std::to_string(res.chosen.epochs)));
    fill_column(grid, o, predict_timelines(res.params, test), test, flags);
    x.note(std::string(outcome_key(o)) + ": chose lr=" + format_double(res.chosen.lr) +
           " epochs=" + std::to_string(res.chosen.epochs));
  }
  write_text(x.layout.report("auc_local.csv"), auc_grids_csv({grid}, x.provenance));
  write_text(x.layout.report("local_search.csv"), search.str());
}

void stage_dynamics(Ctx& x) {
  const std::string& src = x.config.source.name;
  auto params = load_model(x.layout.pretrained());
  auto test = load_timelines(x, src, Split::kTest, true);
  auto scores = load_scores(x.layout.scores(src, Split::kTest));
  std::vector<TrajectoryFeatures> feats;
  std::map<std::string, OutcomeLabels> outcomes;
  std::ostringstream fcsv;
  fcsv << "# " << x.provenance << '\n';
  write_csv_row(fcsv, {"hospitalization_id", "path_length", "max_jump", "anomaly_score"});
  for (const auto& t : test) {
    TrajectoryStats st = trajectory_stats(extract_trajectory(params, t).cast<double>());
    auto it = scores.find(t.hospitalization_id);
    if (it == scores.end()) throw IntegrityError("dynamics: no anomaly score for " + t.hospitalization_id);
    feats.push_back({t.hospitalization_id, st.path_length, st.max_jump, it->second.score});
    outcomes[t.hospitalization_id] = t.labels;
    write_csv_row(fcsv, {t.hospitalization_id, format_double(st.path_length), format_double(st.max_jump),
                         format_double(it->second.score)});
  }
  write_text(x.layout.report("trajectory_features.csv"), fcsv.str());
  std::ostringstream all;
  all << "# " << x.provenance << '\n';
  write_csv_row(all, {"outcome", "term", "coef", "std_err", "z", "p_value", "ci_low", "ci_high",
                      "n_obs", "pseudo_r2", "llr_p_value"});
  for (Outcome o : x.config.outcomes) {
    const fs::path table = x.layout.report(std::string("dynamics_") + outcome_key(o) + ".txt");
    LogitFit f;
    try {
      f = dynamics_regression(feats, outcomes, o);
    } catch (const Error& e) {
      // Small or one-sided test sets; the other outcomes are still reported.
      if (!dynamic_cast<const NumericError*>(&e) && !dynamic_cast<const IntegrityError*>(&e)) throw;
      x.warn(std::string(outcome_key(o)) + ": regression not estimable: " + e.what());
      write_text(table, std::string("Dep. Variable: ") + outcome_display_name(o) +
                            "\nnot estimable: " + e.what() + "\n");
      continue;
    }
    write_text(table, render_logit_table(f, outcome_display_name(o)));
    for (Eigen::Index j = 0; j < f.coef.size(); ++j)
      write_csv_row(all, {outcome_key(o), f.names[static_cast<std::size_t>(j)], format_double(f.coef(j)),
                          format_double(f.se(j)), format_double(f.z(j)), format_double(f.p_value(j)),
                          format_double(f.ci_low(j)), format_double(f.ci_high(j)), std::to_string(f.n_obs),
                          format_double(f.pseudo_r2), format_double(f.llr_p_value)});
  }
  write_text(x.layout.report("dynamics.csv"), all.str());
}

void stage_curves(Ctx& x) {
  const std::string& src = x.config.source.name;
  auto test = load_timelines(x, src, Split::kTest, true);
  auto sft = load_model(x.layout.sft(Outcome::kMortality));
  auto sft_urt = load_model(x.layout.sft_urt());
  auto base = load_model(x.layout.pretrained());
  LinearClassifier lr = read_linear_classifier(x.layout.lr_urt());
  const std::uint64_t sample_seed = derive_seed(x.seed, 0);
  std::vector<CurveTable> tables;
  auto run = [&](const std::string& name, const PrefixPredictor& p) {
    CurveTable t = realtime_curves(p, test, x.config.curves_per_class, sample_seed);
    t.model = name;
    for (auto& w : t.warnings) x.warn(name + ": " + w);
    tables.push_back(std::move(t));
  };
  run("SFT", [&](const TokenTimeline& t) { return predict_prefixes(sft, std::span<const TokenId>(t.tokens)); });
  run("SFT+URT",
      [&](const TokenTimeline& t) { return predict_prefixes(sft_urt, std::span<const TokenId>(t.tokens)); });
  run("LR+URT", [&](const TokenTimeline& t) {
    Eigen::MatrixXd H = extract_trajectory(base, t).cast<double>();
    std::vector<double> out;
    for (Eigen::Index i = 0; i < H.rows(); ++i) out.push_back(lr.predict(H.row(i)));
    return out;
  });
  write_text(x.layout.report("curves.csv"), curves_csv(tables, x.provenance));
}

void stage_pca(Ctx& x) {
  auto params = load_model(x.layout.pretrained());
  Vocabulary v = Vocabulary::from_json(read_text(x.layout.vocab()));
  Eigen::MatrixXd E = params.token_embedding().cast<double>();
  Pca2d all = pca_2d(E);
  Eigen::MatrixXd D(kNumDeciles, E.cols());
  for (int d = 0; d < kNumDeciles; ++d) D.row(d) = E.row(v.decile(d));
  Pca2d dec = pca_2d(D);
  auto write = [&](const std::string& name, const Pca2d& p, const std::vector<TokenId>& ids) {
    std::ostringstream o;
    o << "# " << x.provenance << '\n';
    write_csv_row(o, {"token_id", "token", "pc1", "pc2"});
    for (std::size_t i = 0; i < ids.size(); ++i)
      write_csv_row(o, {std::to_string(ids[i]), v.string_of(ids[i]),
                        format_double(p.projections(static_cast<Eigen::Index>(i), 0)),
                        format_double(p.projections(static_cast<Eigen::Index>(i), 1))});
    write_text(x.layout.report(name), o.str());
  };
  std::vector<TokenId> all_ids(v.size()), dec_ids;
  for (std::size_t i = 0; i < v.size(); ++i) all_ids[i] = static_cast<TokenId>(i);
  for (int d = 0; d < kNumDeciles; ++d) dec_ids.push_back(v.decile(d));
  write("pca_tokens.csv", all, all_ids);
  write("pca_deciles.csv", dec, dec_ids);
  json j;
  j["seed"] = x.seed;
  j["tokens"] = {{"explained_variance", {all.explained_variance(0), all.explained_variance(1)}},
                 {"explained_ratio", {all.explained_ratio(0), all.explained_ratio(1)}}};
  j["deciles"] = {{"explained_variance", {dec.explained_variance(0), dec.explained_variance(1)}},
                  {"explained_ratio", {dec.explained_ratio(0), dec.explained_ratio(1)}}};
  write_text(x.layout.report("pca_explained.json"), j.dump(2) + "\n");
}

void stage_summarize(Ctx& x) {
  for (const SiteSpec* s : x.sites()) {
    ClifBundle b = load_cohort(x, s->name);
    SplitAssignment a = read_splits_csv(x.layout.splits(s->name));
    auto outcomes = read_outcomes_csv(x.layout.outcomes(s->name));
    std::map<std::string, bool> flags;
    std::map<std::string, std::size_t> len24;
    for (Split sp : kSplits) {
      for (const auto& r : read_scores_csv(x.layout.scores(s->name, sp))) flags[r.hospitalization_id] = r.outlier;
      for (const auto& t : load_timelines(x, s->name, sp, true)) len24[t.hospitalization_id] = t.size();
    }
    CohortSummary sum = summarize_cohort(b, a, outcomes, &flags, &len24);
    auto j = nlohmann::ordered_json::parse(summary_to_json(sum));
    json out;
    out["site"] = s->name;
    out["provenance"] = x.provenance;
    out["summary"] = j;
    write_text(x.layout.report("summary_" + s->name + ".json"), out.dump(2) + "\n");
  }
}

void stage_report(Ctx& x) {
  const std::string& src = x.config.source.name;
  std::set<std::string> tests = test_ids(x);
  // Every fitting input, by the ids it contains.
  std::vector<std::pair<std::string, std::vector<std::string>>> fits = {
      {"pretraining corpus", ids_of(load_timelines(x, src, Split::kTrain, false))},
      {"pretraining validation", ids_of(load_timelines(x, src, Split::kVal, false))},
      {"isolation forest", ids_of(load_timelines(x, src, Split::kTrain, true))},
      {"fine-tuning", ids_of(load_timelines(x, src, Split::kTrain, true))},
      {"local fine-tuning", ids_of(load_timelines(x, x.config.target.name, Split::kTrain, true))},
      {"local validation", ids_of(load_timelines(x, x.config.target.name, Split::kVal, true))}};
  auto rep = ids_of(load_timelines(x, src, Split::kTrain, true));
  for (const auto& id : ids_of(load_timelines(x, src, Split::kVal, true))) rep.push_back(id);
  fits.push_back({"representation classifier", rep});
  json leak;
  leak["test_stays"] = tests.size();
  bool clean = true;
  for (const auto& [name, ids] : fits) {
    std::size_t hits = 0;
    for (const auto& id : ids) hits += tests.count(id);
    leak["fits"][name] = {{"stays", ids.size()}, {"test_overlap", hits}};
    clean &= hits == 0;
  }
  leak["clean"] = clean;
  write_text(x.layout.report("leakage.json"), leak.dump(2) + "\n");
  if (!clean) throw IntegrityError("report: a fitting input overlaps a test set (see leakage.json)");

  json hashes = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(x.layout.root / "reports"))
    if (e.is_regular_file() && e.path().filename() != "report_hashes.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) hashes[x.layout.rel(f)] = sha256_file(f);
  json out;
  out["config"] = config_digest(x.config);
  out["files"] = hashes;
  write_text(x.layout.report("report_hashes.json"), out.dump(2) + "\n");
}

const std::map<std::string, std::function<void(Ctx&)>>& stage_table() {
  static const std::map<std::string, std::function<void(Ctx&)>> t = {
      {"ingest", stage_ingest},       {"split", stage_split},
      {"vocab", stage_vocab},         {"tokenize", stage_tokenize},
      {"pretrain", stage_pretrain},   {"extract", stage_extract},
      {"forest", stage_forest},       {"classify-rep", stage_classify_rep},
      {"finetune", stage_finetune},   {"finetune-urt", stage_finetune_urt},
      {"finetune-local", stage_finetune_local}, {"dynamics", stage_dynamics},
      {"curves", stage_curves},       {"pca", stage_pca},
      {"summarize", stage_summarize}, {"report", stage_report}};
  return t;
}

}  // namespace

StageRecord run_stage(const RunConfig& config, const std::string& stage, const StageOptions& options) {
  const auto& table = stage_table();
  auto body = table.find(stage);
  if (body == table.end()) throw ConfigError("unknown stage '" + stage + "'");
  const auto& names = stage_names();
  const auto index = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), stage) - names.begin());

  Ctx x{config, Layout{config.out_dir}, stage, 0, {}, {}, nullptr};
  x.seed = derive_seed(config.seed, index);
  x.provenance = "cliffm stage=" + stage + " seed=" + std::to_string(x.seed) + " config=" + config_digest(config);
  x.log = options.log;

  StageIo io = stage_io(config, x.layout, stage);
  StageManifest manifest = StageManifest::load(x.layout.manifest());
  StageRecord rec;
  rec.name = stage;
  rec.seed = x.seed;
  rec.forced = options.force;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    for (const auto& in : io.inputs) {
      if (!fs::exists(in)) {
        std::string producer;
        for (const auto& n : names) {
          if (n == stage) continue;
          for (const auto& p : stage_io(config, x.layout, n).outputs)
            if (p == in) producer = n;
        }
        throw ArtifactError("missing artifact " + in.string() +
                            (producer.empty() ? "" : " (run stage '" + producer + "' first)"));
      }
      const std::string h = sha256_file(in);
      const std::string key = x.layout.rel(in).rfind("..", 0) == 0 ? in.string() : x.layout.rel(in);
      rec.inputs[key] = h;
      for (const auto& [name, r] : manifest.stages) {
        auto it = r.outputs.find(key);
        if (it == r.outputs.end() || it->second == h) continue;
        const std::string msg = "input " + key + " changed since stage '" + name + "' produced it";
        if (!options.force) throw StaleArtifactError(msg + "; re-run '" + name + "' or pass --force");
        x.warn("forced run with stale input: " + msg);
      }
    }
    for (const auto& out : io.outputs) fs::create_directories(out.parent_path());
    body->second(x);
  } catch (const std::exception& e) {
    manifest.failed_stage = stage;
    manifest.failure = e.what();
    manifest.save(x.layout.manifest());
    throw;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& out : io.outputs) rec.outputs[x.layout.rel(out)] = sha256_file(out);
  rec.warnings = x.warnings;
  manifest.stages[stage] = rec;
  manifest.failed_stage.reset();
  manifest.failure.clear();
  manifest.save(x.layout.manifest());
  x.note("done in " + format_double(std::round(rec.wall_seconds * 100) / 100) + " s");
  return rec;
}

void run_experiment(const RunConfig& config, const StageOptions& options, const std::string& from_stage) {
  const auto& names = stage_names();
  auto it = names.begin();
  if (!from_stage.empty()) {
    it = std::find(names.begin(), names.end(), from_stage);
    if (it == names.end()) throw ConfigError("unknown stage '" + from_stage + "'");
  }
  for (; it != names.end(); ++it) run_stage(config, *it, options);
}

}  // namespace cliffm
