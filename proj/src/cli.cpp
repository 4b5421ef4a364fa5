// Copyright 2026 The Semindex Authors.
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

#include "semindex/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "semindex/checkpoint.hpp"
#include "semindex/corpus.hpp"
#include "semindex/errors.hpp"
#include "semindex/idspace.hpp"
#include "semindex/metrics.hpp"
#include "semindex/model.hpp"
#include "semindex/retrieval.hpp"
#include "semindex/seed.hpp"
#include "semindex/trainer.hpp"

namespace semindex {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kSeedEnv = "SEMINDEX_SEED";

// ---------------------------------------------------------------------------
// Hashing and small file helpers.

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: digest initialization failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void Update(const void* data, size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("sha256: update failed");
  }
  void UpdateFile(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    char buf[1 << 16];
    while (in) {
      in.read(buf, sizeof(buf));
      if (in.gcount() > 0) Update(buf, static_cast<size_t>(in.gcount()));
    }
    if (in.bad()) throw IoError("error while reading " + path.string());
  }
  std::string HexDigest() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw Error("sha256: final failed");
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(byte, sizeof(byte), "%02x", md[i]);
      hex += byte;
    }
    return hex;
  }

 private:
  EVP_MD_CTX* ctx_;
};

void WriteJsonFile(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("error while writing " + path.string());
}

json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void EnsureDirectory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  }
  // create_directories succeeds on an existing read-only directory.
  const fs::path probe = dir / ".semindex_write_probe";
  {
    std::ofstream p(probe);
    if (!p) throw IoError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

void EnsureParent(const fs::path& file) {
  if (file.has_parent_path()) EnsureDirectory(file.parent_path());
}

void RequireFile(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) {
    throw ValidationError(what + " " + path.string() + " does not exist");
  }
}

uint64_t ParseSeedText(const std::string& text, const std::string& source) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size() || text.find('-') != std::string::npos) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(source + ": not an unsigned integer seed: '" + text + "'");
  }
}

// --seed, then the config file value, then SEMINDEX_SEED, then 0.
uint64_t ResolveSeed(const CLI::Option* flag, const std::string& flag_text,
                     const json* cfg) {
  if (flag->count() > 0) return ParseSeedText(flag_text, "--seed");
  if (cfg && cfg->contains("seed")) {
    const json& s = cfg->at("seed");
    if (!s.is_number_unsigned()) throw ValidationError("config: 'seed' must be an unsigned integer");
    return s.get<uint64_t>();
  }
  if (const char* env = std::getenv(kSeedEnv); env && *env) {
    return ParseSeedText(env, kSeedEnv);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Training configuration: defaults <- JSON config file <- command-line flags.

const std::set<std::string>& TrainConfigKeys() {
  static const std::set<std::string> keys = {
      "id_len",        "codebook_size",   "hint_ratios",  "dim",
      "enc_layers",    "dec_layers",      "heads",        "recon_layers",
      "max_len",       "min_count",       "dropout",      "epochs_recon",
      "epochs_warmup", "epochs_main",     "batch_size",   "lr",
      "weight_decay",  "kmeans_iters",    "kmeans_restarts",
      "contrastive",   "commitment",      "warmup",       "recon_warmup",
      "seed"};
  return keys;
}

json ReadTrainConfigFile(const fs::path& path) {
  RequireFile(path, "config file");
  json cfg = ReadJsonFile(path);
  if (!cfg.is_object()) throw ValidationError("config " + path.string() + ": expected a JSON object");
  for (const auto& [k, v] : cfg.items()) {
    if (!TrainConfigKeys().count(k)) {
      throw ValidationError("config " + path.string() + ": unknown key '" + k + "'");
    }
  }
  return cfg;
}

template <typename T>
T ConfigValue(const json& cfg, const std::string& key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: key '" + key + "' has the wrong type");
  }
}

struct TrainSetup {
  ModelConfig model;  // vocab_size filled in once the corpus is loaded
  TrainConfig train;
  int min_count = kDefaultMinCount;
  json resolved;  // every key with its effective value
};

TrainSetup SetupFromConfig(const json& cfg, uint64_t seed) {
  TrainSetup s;
  std::vector<int> sizes = {512};
  if (cfg.contains("codebook_size")) {
    const json& c = cfg.at("codebook_size");
    if (c.is_number_integer()) {
      sizes = {c.get<int>()};
    } else {
      sizes = ConfigValue<std::vector<int>>(cfg, "codebook_size", {});
      if (sizes.empty()) throw ValidationError("config: 'codebook_size' is empty");
    }
  }
  int id_len = ConfigValue<int>(cfg, "id_len", 0);
  if (sizes.size() > 1) {
    if (id_len != 0 && id_len != static_cast<int>(sizes.size())) {
      throw ValidationError("id_len " + std::to_string(id_len) + " does not match " +
                            std::to_string(sizes.size()) + " codebook sizes");
    }
    id_len = static_cast<int>(sizes.size());
  } else {
    if (id_len == 0) id_len = 3;
    if (id_len < 1) throw ValidationError("id_len must be >= 1");
    sizes.assign(static_cast<size_t>(id_len), sizes[0]);
  }
  std::vector<double> default_ratios(static_cast<size_t>(id_len), 0.3);
  default_ratios[0] = 0.5;

  ModelConfig& m = s.model;
  m.codebook_sizes = sizes;
  m.dim = ConfigValue(cfg, "dim", m.dim);
  m.enc_layers = ConfigValue(cfg, "enc_layers", m.enc_layers);
  m.dec_layers = ConfigValue(cfg, "dec_layers", m.dec_layers);
  m.heads = ConfigValue(cfg, "heads", m.heads);
  m.recon_layers = ConfigValue(cfg, "recon_layers", m.recon_layers);
  m.max_doc_len = ConfigValue(cfg, "max_len", m.max_doc_len);
  m.dropout = ConfigValue(cfg, "dropout", m.dropout);
  m.init_seed = seed;
  s.min_count = ConfigValue(cfg, "min_count", s.min_count);
  if (s.min_count < 1) throw ValidationError("min_count must be >= 1");

  TrainConfig& t = s.train;
  t.hint_ratios = ConfigValue(cfg, "hint_ratios", default_ratios);
  t.warmup_recon_epochs = ConfigValue(cfg, "epochs_recon", t.warmup_recon_epochs);
  t.warmup_enc_epochs = ConfigValue(cfg, "epochs_warmup", t.warmup_enc_epochs);
  t.main_epochs = ConfigValue(cfg, "epochs_main", t.main_epochs);
  t.batch_size = ConfigValue(cfg, "batch_size", t.batch_size);
  t.step_size = ConfigValue(cfg, "lr", t.step_size);
  t.weight_decay = ConfigValue(cfg, "weight_decay", t.weight_decay);
  t.kmeans_iters = ConfigValue(cfg, "kmeans_iters", t.kmeans_iters);
  t.kmeans_restarts = ConfigValue(cfg, "kmeans_restarts", t.kmeans_restarts);
  t.use_contrastive = ConfigValue(cfg, "contrastive", t.use_contrastive);
  t.use_commitment = ConfigValue(cfg, "commitment", t.use_commitment);
  t.use_enc_warmup = ConfigValue(cfg, "warmup", t.use_enc_warmup);
  t.use_recon_warmup = ConfigValue(cfg, "recon_warmup", t.use_recon_warmup);
  t.seed = seed;

  // Everything except the vocabulary size can be checked now.
  ModelConfig probe = m;
  probe.vocab_size = 2;
  probe.Validate();
  t.Validate(id_len);

  s.resolved = {{"id_len", id_len},
                {"codebook_size", sizes},
                {"hint_ratios", t.hint_ratios},
                {"dim", m.dim},
                {"enc_layers", m.enc_layers},
                {"dec_layers", m.dec_layers},
                {"heads", m.heads},
                {"recon_layers", m.recon_layers},
                {"max_len", m.max_doc_len},
                {"min_count", s.min_count},
                {"dropout", m.dropout},
                {"epochs_recon", t.warmup_recon_epochs},
                {"epochs_warmup", t.warmup_enc_epochs},
                {"epochs_main", t.main_epochs},
                {"batch_size", t.batch_size},
                {"lr", t.step_size},
                {"weight_decay", t.weight_decay},
                {"kmeans_iters", t.kmeans_iters},
                {"kmeans_restarts", t.kmeans_restarts},
                {"contrastive", t.use_contrastive},
                {"commitment", t.use_commitment},
                {"warmup", t.use_enc_warmup},
                {"recon_warmup", t.use_recon_warmup},
                {"seed", seed}};
  return s;
}

// Flag values are copied into the config object only when given.
class Overrides {
 public:
  template <typename T>
  CLI::Option* Add(CLI::App* app, const std::string& flag, const std::string& key,
                   const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    apply_.push_back([opt, value, key](json& cfg) {
      if (opt->count() > 0) cfg[key] = *value;
    });
    options_.push_back(opt);
    return opt;
  }
  // A switch that stores `value` under key when present.
  CLI::Option* AddSwitch(CLI::App* app, const std::string& flag, const std::string& key,
                         bool value, const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, help);
    apply_.push_back([opt, key, value](json& cfg) {
      if (opt->count() > 0) cfg[key] = value;
    });
    options_.push_back(opt);
    return opt;
  }
  void Apply(json& cfg) const {
    for (const auto& f : apply_) f(cfg);
  }
  bool AnyGiven() const {
    return std::any_of(options_.begin(), options_.end(),
                       [](const CLI::Option* o) { return o->count() > 0; });
  }

 private:
  std::vector<std::function<void(json&)>> apply_;
  std::vector<CLI::Option*> options_;
};

// ---------------------------------------------------------------------------
// Shared pieces of the reports.

json PositionStats(const std::vector<SemanticId>& codes, int positions) {
  json out = json::array();
  for (int p = 1; p <= positions; ++p) {
    std::vector<int> at;
    at.reserve(codes.size());
    for (const auto& id : codes) at.push_back(id[static_cast<size_t>(p - 1)]);
    json j = {{"position", p}, {"perplexity", IdPerplexity(at)}};
    j["diff_ratio"] = nullptr;
    if (p >= 2) {
      if (auto r = DiffRatio(codes, p)) j["diff_ratio"] = *r;
    }
    out.push_back(j);
  }
  return out;
}

json DuplicationJson(const IdTable& table) {
  json j = json::object();
  for (const auto& [size, count] : DuplicationStats(table)) j[std::to_string(size)] = count;
  return j;
}

std::vector<std::string> DocIds(const Corpus& corpus) {
  std::vector<std::string> ids;
  ids.reserve(corpus.size());
  for (const auto& d : corpus.documents()) ids.push_back(d.doc_id);
  return ids;
}

std::vector<std::vector<int>> TokenLists(const Corpus& corpus) {
  std::vector<std::vector<int>> t;
  t.reserve(corpus.size());
  for (const auto& d : corpus.documents()) t.push_back(d.tokens);
  return t;
}

}  // namespace

std::string Sha256Hex(const fs::path& path) {
  Sha256 h;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), path));
    }
    std::sort(files.begin(), files.end());
    for (const auto& rel : files) {
      const std::string name = rel.generic_string();
      h.Update(name.data(), name.size() + 1);  // include the terminator as a separator
      h.UpdateFile(path / rel);
    }
  } else {
    h.UpdateFile(path);
  }
  return h.HexDigest();
}

fs::path CheckpointDir(const fs::path& path) {
  if (fs::is_regular_file(path / "manifest.json")) return path;
  if (fs::is_regular_file(path / "checkpoint" / "manifest.json")) return path / "checkpoint";
  throw ValidationError("no checkpoint found at " + path.string());
}

namespace {

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  fs::path out;
  SynthOptions opts;
  std::string seed_text;
  CLI::Option* seed_opt = nullptr;
  fs::path queries_out;
  size_t num_queries = 200;
  int query_words = 3;
};

void CmdSynth(SynthArgs& a, std::ostream& out) {
  a.opts.seed = ResolveSeed(a.seed_opt, a.seed_text, nullptr);
  if (a.opts.top < 1 || a.opts.sub_per_top < 1 || a.opts.docs_per_leaf < 1 || a.opts.doc_len < 2) {
    throw ValidationError("synth: --top, --sub and --per-leaf must be >= 1 and --doc-len >= 2");
  }
  if (a.query_words < 1) throw ValidationError("synth: --query-words must be >= 1");
  EnsureParent(a.out);
  const Corpus corpus = SynthCorpus(a.opts);
  WriteCorpusJsonl(corpus, a.out);
  out << "wrote " << corpus.size() << " documents to " << a.out.string() << "\n";
  if (!a.queries_out.empty()) {
    EnsureParent(a.queries_out);
    SynthQueryOptions qo;
    qo.count = a.num_queries;
    qo.words = a.query_words;
    qo.seed = MixSeed(a.opts.seed, {17});
    const auto queries = SynthQueries(corpus, qo);
    WriteQueriesJsonl(queries, a.queries_out);
    out << "wrote " << queries.size() << " queries to " << a.queries_out.string() << "\n";
  }
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  fs::path corpus;
  fs::path out;
  fs::path config;
  bool resume = false;
  int stop_after = -1;
  std::string seed_text;
  CLI::Option* seed_opt = nullptr;
  Overrides overrides;
};

void CmdTrain(TrainArgs& a, std::ostream& out) {
  RequireFile(a.corpus, "corpus");
  const fs::path run_dir = a.out;
  const fs::path ckpt_dir = run_dir / "checkpoint";
  const fs::path report_path = run_dir / "train_report.json";
  const std::string corpus_hash = Sha256Hex(a.corpus);

  json run_config;
  TrainSetup setup;
  std::unique_ptr<SemanticIndexer> model;
  std::unique_ptr<Reconstructor> recon;
  TrainState state;
  json prior_epochs = json::array();
  std::optional<Corpus> corpus;

  if (a.resume) {
    if (a.overrides.AnyGiven() || !a.config.empty() || a.seed_opt->count() > 0) {
      throw ValidationError("--resume takes its configuration from the checkpoint; "
                            "drop the configuration flags");
    }
    LoadedCheckpoint ck = LoadCheckpoint(CheckpointDir(run_dir));
    run_config = ck.run_config;
    if (run_config.value("command", "") != "train" ||
        run_config.at("inputs").value("corpus", "") != corpus_hash) {
      throw ValidationError("--resume: " + a.corpus.string() +
                            " is not the corpus this checkpoint was trained on");
    }
    const uint64_t seed = run_config.at("seed").get<uint64_t>();
    setup = SetupFromConfig(run_config.at("config"), seed);
    corpus = LoadCorpus(a.corpus, setup.model.max_doc_len, setup.min_count);
    if (corpus->vocabulary().tokens() != ck.vocabulary.tokens()) {
      throw ValidationError("--resume: corpus vocabulary differs from the checkpoint");
    }
    setup.model = ck.model->config();
    setup.train = ck.train_config;
    model = std::move(ck.model);
    recon = std::move(ck.recon);
    state = ck.state;
    if (state.codes.empty()) state.codes.assign(corpus->size(), {});
    if (fs::is_regular_file(report_path)) {
      const json prev = ReadJsonFile(report_path);
      if (prev.contains("epochs")) prior_epochs = prev.at("epochs");
    }
    if (ck.full_ids) {
      out << "checkpoint is already complete\n";
      return;
    }
  } else {
    json cfg = a.config.empty() ? json::object() : ReadTrainConfigFile(a.config);
    const uint64_t seed = ResolveSeed(a.seed_opt, a.seed_text, &cfg);
    a.overrides.Apply(cfg);
    setup = SetupFromConfig(cfg, seed);
    run_config = {{"command", "train"},
                  {"seed", seed},
                  {"corpus", a.corpus.string()},
                  {"out", a.out.string()},
                  {"config_file", a.config.empty() ? json(nullptr) : json(a.config.string())},
                  {"config", setup.resolved},
                  {"inputs", {{"corpus", corpus_hash}}}};
    if (!a.config.empty()) run_config["inputs"]["config_file"] = Sha256Hex(a.config);
    corpus = LoadCorpus(a.corpus, setup.model.max_doc_len, setup.min_count);
    setup.model.vocab_size = corpus->vocabulary().size();
    setup.model.Validate();
    model = std::make_unique<SemanticIndexer>(setup.model);
    recon = std::make_unique<Reconstructor>(setup.model);
  }
  EnsureDirectory(run_dir);

  const std::vector<std::string> doc_ids = DocIds(*corpus);
  TrainLog log;
  auto write_report = [&](const TrainState& s, const IdTable* full) {
    json epochs = prior_epochs;
    const json current = ToJson(log);
    for (const auto& e : current.at("epochs")) epochs.push_back(e);
    json report = {{"command", "train"},
                   {"run_config", run_config},
                   {"status", full ? "complete" : "partial"},
                   {"completed_positions", s.completed_positions},
                   {"epochs", epochs},
                   {"positions", PositionStats(s.codes, s.completed_positions)}};
    if (full) {
      report["full_id_length"] = full->id_length();
      report["max_group_size"] = MaxGroupSize(TruncateIds(*full, 1));
      report["duplication"] = DuplicationJson(TruncateIds(*full, 1));
    }
    WriteJsonFile(report_path, report);
  };
  auto save = [&](const TrainState& s, const IdTable* full) {
    CheckpointInput in;
    in.model = model.get();
    in.recon = recon.get();
    in.vocabulary = &corpus->vocabulary();
    in.train_config = &setup.train;
    in.state = &s;
    in.full_ids = full;
    in.doc_ids = doc_ids;
    in.run_config = run_config;
    SaveCheckpoint(ckpt_dir, in);
    write_report(s, full);
  };

  ProgressOptions progress;
  progress.stop_after_positions = a.stop_after;
  progress.on_stage = [&](const TrainState& s) {
    save(s, nullptr);
    if (s.completed_positions == 0) {
      out << "reconstructor warm-up done\n";
    } else {
      out << "position " << s.completed_positions << " of " << model->id_length() << " done\n";
    }
  };
  state = TrainProgressive(*model, *recon, *corpus, setup.train, std::move(state), &log, progress);
  if (state.completed_positions < model->id_length()) {
    out << "stopped after " << state.completed_positions << " positions; resume with --resume\n";
    return;
  }
  const IdTable full = FinalizeIds(*model, *corpus, state, setup.train.seed);
  save(state, &full);
  WriteIdsTsv(full, run_dir / "ids.tsv");
  out << "wrote " << full.size() << " IDs of length " << full.id_length() << " to "
      << (run_dir / "ids.tsv").string() << "\n";
}

// ---------------------------------------------------------------------------
// assign

struct AssignArgs {
  fs::path checkpoint;
  fs::path corpus;
  fs::path out;
  fs::path report;
};

void CmdAssign(const AssignArgs& a, std::ostream& out) {
  RequireFile(a.corpus, "corpus");
  const fs::path ckpt_dir = CheckpointDir(a.checkpoint);
  const json run_config = {{"command", "assign"},
                           {"checkpoint", a.checkpoint.string()},
                           {"corpus", a.corpus.string()},
                           {"out", a.out.string()},
                           {"inputs", {{"checkpoint", Sha256Hex(ckpt_dir)},
                                       {"corpus", Sha256Hex(a.corpus)}}}};
  LoadedCheckpoint ck = LoadCheckpoint(ckpt_dir);
  const SemanticIndexer& model = *ck.model;
  const int upto = ck.state.completed_positions;
  if (upto < 1) throw ValidationError("checkpoint has no trained ID positions");
  const Corpus corpus = BuildCorpusWithVocabulary(ReadCorpusJsonl(a.corpus), ck.vocabulary,
                                                  model.config().max_doc_len);
  const auto codes = AssignSemanticIds(model, TokenLists(corpus), upto);
  const IdTable assigned(DocIds(corpus), codes);

  std::map<SemanticId, std::vector<std::string>> existing;
  long compared = 0, agreed = 0;
  if (ck.learned_ids) {
    for (size_t r = 0; r < ck.learned_ids->size(); ++r) {
      existing[ck.learned_ids->id(r)].push_back(ck.learned_ids->doc_ids()[r]);
    }
  }
  json collisions = json::array();
  for (size_t r = 0; r < assigned.size(); ++r) {
    const std::string& doc = assigned.doc_ids()[r];
    auto it = existing.find(assigned.id(r));
    if (it != existing.end()) {
      std::vector<std::string> others;
      for (const auto& d : it->second)
        if (d != doc) others.push_back(d);
      if (!others.empty()) {
        collisions.push_back({{"doc_id", doc}, {"id", assigned.id(r)}, {"collides_with", others}});
      }
    }
    if (ck.learned_ids) {
      if (auto row = ck.learned_ids->RowOf(doc)) {
        ++compared;
        agreed += ck.learned_ids->id(*row) == assigned.id(r);
      }
    }
  }
  EnsureParent(a.out);
  WriteIdsTsv(assigned, a.out);
  json report = {{"command", "assign"},
                 {"run_config", run_config},
                 {"num_docs", assigned.size()},
                 {"id_length", upto},
                 {"num_colliding", collisions.size()},
                 {"collisions", collisions},
                 {"training_docs_compared", compared},
                 {"training_docs_agreeing", agreed}};
  const fs::path report_path = a.report.empty() ? fs::path(a.out.string() + ".report.json") : a.report;
  EnsureParent(report_path);
  WriteJsonFile(report_path, report);
  out << "assigned " << assigned.size() << " documents; " << collisions.size()
      << " collide with training IDs\n";
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneArgs {
  fs::path checkpoint;
  fs::path queries;
  fs::path out;
  FinetuneOptions opts;
  std::string seed_text;
  CLI::Option* seed_opt = nullptr;
};

void CmdFinetune(FinetuneArgs& a, std::ostream& out) {
  RequireFile(a.queries, "queries");
  a.opts.seed = ResolveSeed(a.seed_opt, a.seed_text, nullptr);
  if (a.opts.epochs < 0) throw ValidationError("--epochs must be >= 0");
  if (a.opts.batch_size < 1) throw ValidationError("--batch-size must be >= 1");
  if (!(a.opts.step_size > 0.0)) throw ValidationError("--lr must be > 0");
  const fs::path ckpt_dir = CheckpointDir(a.checkpoint);
  const json run_config = {{"command", "finetune"},
                           {"seed", a.opts.seed},
                           {"checkpoint", a.checkpoint.string()},
                           {"queries", a.queries.string()},
                           {"out", a.out.string()},
                           {"epochs", a.opts.epochs},
                           {"lr", a.opts.step_size},
                           {"weight_decay", a.opts.weight_decay},
                           {"batch_size", a.opts.batch_size},
                           {"freeze_codebooks", a.opts.freeze_codebooks},
                           {"inputs", {{"checkpoint", Sha256Hex(ckpt_dir)},
                                       {"queries", Sha256Hex(a.queries)}}}};
  LoadedCheckpoint ck = LoadCheckpoint(ckpt_dir);
  if (!ck.full_ids) throw ValidationError("checkpoint has no final IDs; finish training first");
  const auto records = ReadQueriesJsonl(a.queries);
  const auto pairs = MakePairs(records, ck.vocabulary, *ck.full_ids, ck.model->config().max_doc_len);
  EnsureDirectory(a.out);
  const std::vector<double> curve = Finetune(*ck.model, pairs, *ck.full_ids, a.opts);

  json saved_config = run_config;
  saved_config["parent"] = ck.run_config;
  CheckpointInput in;
  in.model = ck.model.get();
  in.recon = ck.recon.get();
  in.vocabulary = &ck.vocabulary;
  in.train_config = &ck.train_config;
  in.state = &ck.state;
  in.full_ids = &*ck.full_ids;
  in.doc_ids = ck.full_ids->doc_ids();
  in.run_config = saved_config;
  SaveCheckpoint(a.out / "checkpoint", in);
  WriteIdsTsv(*ck.full_ids, a.out / "ids.tsv");
  WriteJsonFile(a.out / "finetune_report.json", {{"command", "finetune"},
                                                 {"run_config", saved_config},
                                                 {"num_pairs", pairs.size()},
                                                 {"epoch_loss", curve}});
  out << "fine-tuned on " << pairs.size() << " pairs for " << curve.size() << " epochs\n";
}

// ---------------------------------------------------------------------------
// search

struct SearchArgs {
  fs::path checkpoint;
  fs::path queries;
  fs::path out;
  int beam = kDefaultBeam;
  int k = 10;
};

void CmdSearch(const SearchArgs& a, std::ostream& out) {
  RequireFile(a.queries, "queries");
  if (a.beam < 1) throw ValidationError("--beam must be >= 1");
  if (a.k < 1 || a.k > a.beam) throw ValidationError("--k must be in [1, --beam]");
  const fs::path ckpt_dir = CheckpointDir(a.checkpoint);
  const json run_config = {{"command", "search"},
                           {"checkpoint", a.checkpoint.string()},
                           {"queries", a.queries.string()},
                           {"out", a.out.string()},
                           {"beam", a.beam},
                           {"k", a.k},
                           {"inputs", {{"checkpoint", Sha256Hex(ckpt_dir)},
                                       {"queries", Sha256Hex(a.queries)}}}};
  LoadedCheckpoint ck = LoadCheckpoint(ckpt_dir);
  if (!ck.full_ids) throw ValidationError("checkpoint has no final IDs; finish training first");
  const PrefixTree trie(*ck.full_ids);
  const auto records = ReadQueriesJsonl(a.queries);
  std::vector<SearchRow> rows;
  for (const auto& q : records) {
    const auto hits = Search(*ck.model, trie, ck.vocabulary, q.text, a.beam, a.k,
                             ck.model->config().max_doc_len);
    for (size_t i = 0; i < hits.size(); ++i) {
      rows.push_back({q.query_id, static_cast<int>(i) + 1, hits[i].doc_id, hits[i].score});
    }
  }
  EnsureParent(a.out);
  WriteSearchTsv(rows, a.out);
  WriteJsonFile(a.out.string() + ".report.json", {{"command", "search"},
                                                  {"run_config", run_config},
                                                  {"num_queries", records.size()},
                                                  {"num_rows", rows.size()}});
  out << "searched " << records.size() << " queries\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  fs::path run;
  fs::path queries;
  std::vector<int> ks = {1, 5, 10};
  fs::path ids;
  fs::path baseline_ids;
  fs::path corpus;
  std::vector<int> hc_branching;
  int level = 0;
  int prefix_len = 1;
  int max_len = 128;
  int min_count = kDefaultMinCount;
  fs::path out;
  std::string seed_text;
  CLI::Option* seed_opt = nullptr;
};

// AMI between ID prefixes of length prefix_len and category labels at level.
double IdCategoryAmi(const IdTable& table, const std::vector<RawDocument>& docs,
                     int prefix_len, int level, const std::string& what) {
  if (prefix_len < 1 || prefix_len > table.id_length()) {
    throw ValidationError(what + ": --prefix-len must be in [1, " +
                          std::to_string(table.id_length()) + "]");
  }
  std::vector<std::string> id_labels, cat_labels;
  for (const auto& d : docs) {
    if (!d.category) throw ValidationError("document '" + d.doc_id + "' has no category");
    const auto row = table.RowOf(d.doc_id);
    if (!row) throw ValidationError(what + ": no ID for document '" + d.doc_id + "'");
    const SemanticId& id = table.id(*row);
    std::string label;
    for (int p = 0; p < prefix_len; ++p) label += std::to_string(id[static_cast<size_t>(p)]) + ",";
    id_labels.push_back(label);
    cat_labels.push_back(CategoryLevel(*d.category, level));
  }
  return AdjustedMutualInfo(id_labels, cat_labels);
}

void CmdEval(EvalArgs& a, std::ostream& out) {
  const bool ranking = !a.run.empty() || !a.queries.empty();
  const bool clustering = !a.ids.empty() || !a.baseline_ids.empty() || !a.hc_branching.empty();
  if (!ranking && !clustering) {
    throw ValidationError("eval: give --run with --queries, or --ids/--baseline-ids/--hc-branching with --corpus");
  }
  if (ranking && (a.run.empty() || a.queries.empty())) {
    throw ValidationError("eval: --run and --queries go together");
  }
  if (clustering && a.corpus.empty()) throw ValidationError("eval: AMI needs --corpus");
  if (a.level < 0) throw ValidationError("--level must be >= 0");
  for (int k : a.ks)
    if (k < 1) throw ValidationError("--k values must be >= 1");
  const uint64_t seed = ResolveSeed(a.seed_opt, a.seed_text, nullptr);

  json inputs = json::object();
  json run_config = {{"command", "eval"}, {"seed", seed}, {"level", a.level},
                     {"prefix_len", a.prefix_len}, {"k", a.ks}};
  auto add_input = [&](const char* name, const fs::path& p) {
    if (p.empty()) return;
    RequireFile(p, name);
    run_config[name] = p.string();
    inputs[name] = Sha256Hex(p);
  };
  add_input("run", a.run);
  add_input("queries", a.queries);
  add_input("ids", a.ids);
  add_input("baseline_ids", a.baseline_ids);
  add_input("corpus", a.corpus);
  if (!a.hc_branching.empty()) run_config["hc_branching"] = a.hc_branching;
  run_config["inputs"] = inputs;

  json report = {{"run_config", run_config}};
  json counts = json::object();
  if (ranking) {
    const auto lists = JoinRuns(ReadSearchTsv(a.run), ReadQueriesJsonl(a.queries));
    RankingMetric last;
    for (int k : a.ks) {
      report["recall@" + std::to_string(k)] = RecallAtK(lists, k).value;
      report["ndcg@" + std::to_string(k)] = NdcgAtK(lists, k).value;
      last = MrrAtK(lists, k);
      report["mrr@" + std::to_string(k)] = last.value;
    }
    counts["queries_evaluated"] = last.evaluated;
    counts["queries_skipped"] = last.skipped;
  }
  if (clustering) {
    const auto docs = ReadCorpusJsonl(a.corpus);
    counts["documents"] = docs.size();
    if (!a.ids.empty()) {
      const IdTable t = ReadIdsTsv(a.ids);
      report["ami"] = IdCategoryAmi(t, docs, a.prefix_len, a.level, "--ids");
    }
    if (!a.baseline_ids.empty()) {
      const IdTable t = ReadIdsTsv(a.baseline_ids);
      report["baseline_ami"] = IdCategoryAmi(t, docs, a.prefix_len, a.level, "--baseline-ids");
    }
    if (!a.hc_branching.empty()) {
      HcOptions ho;
      ho.branching = a.hc_branching;
      ho.seed = seed;
      const Corpus corpus = BuildCorpus(docs, a.max_len, a.min_count);
      const IdTable t = HcBaselineIds(corpus, ho);
      report["hc_ami"] = IdCategoryAmi(t, docs, a.prefix_len, a.level, "--hc-branching");
    }
  }
  report["counts"] = counts;
  if (a.out.empty()) {
    out << report.dump(2) << "\n";
  } else {
    EnsureParent(a.out);
    WriteJsonFile(a.out, report);
  }
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"Learned semantic document IDs: training, assignment and generative retrieval",
               "semindex"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "Write a synthetic corpus with a two-level category tree");
  s->add_option("--out", synth.out, "Output JSONL path")->required();
  s->add_option("--top", synth.opts.top, "Top-level categories")->capture_default_str();
  s->add_option("--sub", synth.opts.sub_per_top, "Sub-categories per top category")->capture_default_str();
  s->add_option("--per-leaf", synth.opts.docs_per_leaf, "Documents per leaf")->capture_default_str();
  s->add_option("--doc-len", synth.opts.doc_len, "Tokens per document")->capture_default_str();
  synth.seed_opt = s->add_option("--seed", synth.seed_text, "Seed (default: $SEMINDEX_SEED or 0)");
  s->add_option("--queries-out", synth.queries_out, "Also write keyword queries (JSONL) here");
  s->add_option("--num-queries", synth.num_queries, "Number of queries")->capture_default_str();
  s->add_option("--query-words", synth.query_words, "Words per query")->capture_default_str();

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "Learn semantic IDs for a corpus");
  t->add_option("--corpus", train.corpus, "Corpus JSONL")->required();
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--config", train.config, "Flat JSON config; flags override its values");
  t->add_flag("--resume", train.resume, "Continue the run in --out from its last stage");
  t->add_option("--stop-after-positions", train.stop_after,
                "Stop once this many ID positions are trained");
  train.seed_opt = t->add_option("--seed", train.seed_text,
                                 "Seed (default: config, then $SEMINDEX_SEED, then 0)");
  Overrides& ov = train.overrides;
  ov.Add<int>(t, "--id-len", "id_len", "Learned ID positions (default 3)");
  ov.Add<std::vector<int>>(t, "--codebook-size", "codebook_size",
                           "Codes per position: one value or a comma list (default 512)")
      ->delimiter(',');
  ov.Add<std::vector<double>>(t, "--hint-ratios", "hint_ratios",
                              "Hint ratio per position, comma list (default 0.5,0.3,0.3)")
      ->delimiter(',');
  ov.Add<int>(t, "--dim", "dim", "Model width (default 64)");
  ov.Add<int>(t, "--enc-layers", "enc_layers", "Encoder layers (default 2)");
  ov.Add<int>(t, "--dec-layers", "dec_layers", "Decoder layers (default 1)");
  ov.Add<int>(t, "--heads", "heads", "Attention heads (default 4)");
  ov.Add<int>(t, "--recon-layers", "recon_layers", "Reconstructor layers (default 1)");
  ov.Add<int>(t, "--max-len", "max_len", "Document truncation length (default 128)");
  ov.Add<int>(t, "--min-count", "min_count", "Vocabulary count cutoff (default 2)");
  ov.Add<double>(t, "--dropout", "dropout", "Dropout probability (default 0)");
  ov.Add<int>(t, "--epochs-recon", "epochs_recon", "Reconstructor warm-up epochs (default 3)");
  ov.Add<int>(t, "--epochs-warmup", "epochs_warmup", "Encoder warm-up epochs per position (default 3)");
  ov.Add<int>(t, "--epochs-main", "epochs_main", "Main epochs per position (default 10)");
  ov.Add<int>(t, "--batch-size", "batch_size", "Documents per step (default 32)");
  ov.Add<double>(t, "--lr", "lr", "AdamW step size (default 1e-3)");
  ov.Add<double>(t, "--weight-decay", "weight_decay", "AdamW weight decay (default 0.01)");
  ov.Add<int>(t, "--kmeans-iters", "kmeans_iters", "K-means iterations (default 50)");
  ov.Add<int>(t, "--kmeans-restarts", "kmeans_restarts", "K-means restarts (default 3)");
  ov.AddSwitch(t, "--no-contrastive", "contrastive", false, "Drop the contrastive loss");
  ov.AddSwitch(t, "--no-commitment", "commitment", false, "Drop the commitment loss");
  ov.AddSwitch(t, "--no-warmup", "warmup", false, "Skip encoder warm-up and K-means init");
  ov.AddSwitch(t, "--no-recon-warmup", "recon_warmup", false, "Skip the reconstructor warm-up");

  AssignArgs assign;
  CLI::App* as = app.add_subcommand("assign", "Assign IDs to documents with a trained model");
  as->add_option("--checkpoint", assign.checkpoint, "Run or checkpoint directory")->required();
  as->add_option("--corpus", assign.corpus, "Corpus JSONL")->required();
  as->add_option("--out", assign.out, "Output ids.tsv")->required();
  as->add_option("--report", assign.report, "Report JSON (default: <out>.report.json)");

  FinetuneArgs ft;
  CLI::App* f = app.add_subcommand("finetune", "Train query -> document ID generation");
  f->add_option("--checkpoint", ft.checkpoint, "Run or checkpoint directory")->required();
  f->add_option("--queries", ft.queries, "Training queries JSONL")->required();
  f->add_option("--out", ft.out, "Output run directory")->required();
  f->add_option("--epochs", ft.opts.epochs, "Epochs")->capture_default_str();
  f->add_option("--lr", ft.opts.step_size, "AdamW step size")->capture_default_str();
  f->add_option("--weight-decay", ft.opts.weight_decay, "AdamW weight decay")->capture_default_str();
  f->add_option("--batch-size", ft.opts.batch_size, "Pairs per step")->capture_default_str();
  f->add_flag("--freeze-codebooks", ft.opts.freeze_codebooks, "Keep codebooks fixed");
  ft.seed_opt = f->add_option("--seed", ft.seed_text, "Seed (default: $SEMINDEX_SEED or 0)");

  SearchArgs search;
  CLI::App* se = app.add_subcommand("search", "Constrained beam search over the corpus IDs");
  se->add_option("--checkpoint", search.checkpoint, "Run or checkpoint directory")->required();
  se->add_option("--queries", search.queries, "Queries JSONL")->required();
  se->add_option("--out", search.out, "Output run TSV")->required();
  se->add_option("--beam", search.beam, "Beam width")->capture_default_str();
  se->add_option("--k", search.k, "Results per query")->capture_default_str();

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "Ranking metrics and ID/category agreement");
  e->add_option("--run", ev.run, "Run TSV from search");
  e->add_option("--queries", ev.queries, "Judged queries JSONL");
  e->add_option("--k", ev.ks, "Cutoffs, comma list")->delimiter(',')->capture_default_str();
  e->add_option("--ids", ev.ids, "ids.tsv to score against categories");
  e->add_option("--baseline-ids", ev.baseline_ids, "Second ids.tsv, reported as baseline_ami");
  e->add_option("--hc-branching", ev.hc_branching,
                "Build TF-IDF hierarchical-clustering IDs with this branching (comma list)")
      ->delimiter(',');
  e->add_option("--corpus", ev.corpus, "Category-bearing corpus JSONL");
  e->add_option("--level", ev.level, "Category level (0 = top)")->capture_default_str();
  e->add_option("--prefix-len", ev.prefix_len, "ID positions compared")->capture_default_str();
  e->add_option("--max-len", ev.max_len, "Truncation length for --hc-branching")->capture_default_str();
  e->add_option("--min-count", ev.min_count, "Vocabulary cutoff for --hc-branching")->capture_default_str();
  e->add_option("--out", ev.out, "Metrics JSON (default: stdout)");
  ev.seed_opt = e->add_option("--seed", ev.seed_text, "Seed (default: $SEMINDEX_SEED or 0)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    if (s->parsed()) CmdSynth(synth, out);
    if (t->parsed()) CmdTrain(train, out);
    if (as->parsed()) CmdAssign(assign, out);
    if (f->parsed()) CmdFinetune(ft, out);
    if (se->parsed()) CmdSearch(search, out);
    if (e->parsed()) CmdEval(ev, out);
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  } catch (const ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace semindex
