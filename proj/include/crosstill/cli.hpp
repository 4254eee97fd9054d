#pragma once

// Command-line front end: one subcommand per process.
//
// Exit codes: 0 success, 1 contract/configuration/numeric errors and failed
// checks, 2 I/O and format errors.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crosstill/crosstill.hpp"
#include "crosstill/loss_checks.hpp"

namespace crosstill::cli {

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io:
    case ErrorKind::format: return 2;
    default: return 1;
  }
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// Seed default: CROSSTILL_SEED when set, otherwise `fallback`.
inline std::uint64_t default_seed(std::uint64_t fallback) {
  if (const char* env = std::getenv("CROSSTILL_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("CROSSTILL_SEED is not an unsigned integer: ") + env);
    }
  }
  return fallback;
}

/// Leaf paths of a JSON object in dotted form ("stage1.optimizer.learning_rate").
inline void flatten_keys(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) flatten_keys(*it, key, out);
    else out[key] = *it;
  }
}

/// Dotted overrides of every PipelineConfig field except the seed, which has
/// its own flag.
class ConfigOverrides {
 public:
  void attach(CLI::App& app) {
    std::map<std::string, nlohmann::json> leaves;
    flatten_keys(to_json(PipelineConfig::toy()), "", leaves);
    for (const auto& [key, def] : leaves) {
      if (key == "seed") continue;
      auto& slot = values_[key];
      defaults_[key] = def;
      app.add_option("--" + key, slot, "override config field " + key + " (default " + def.dump() + ")");
    }
  }

  void apply(CLI::App& app, nlohmann::json& config) const {
    for (const auto& [key, value] : values_) {
      if (app.count("--" + key) == 0) continue;
      const auto& def = defaults_.at(key);
      nlohmann::json parsed;
      if (def.is_string()) {
        parsed = value;
      } else if (def.is_boolean()) {
        if (value == "true" || value == "1") parsed = true;
        else if (value == "false" || value == "0") parsed = false;
        else throw ConfigError("--" + key + " expects true or false, got '" + value + "'");
      } else {
        try {
          parsed = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
          throw ConfigError("--" + key + " expects a number, got '" + value + "'");
        }
        if (!parsed.is_number() || (def.is_number_unsigned() && !(parsed.is_number_unsigned())))
          throw ConfigError("--" + key + " expects " + (def.is_number_unsigned() ? "a non-negative integer" : "a number") +
                            ", got '" + value + "'");
      }
      config[nlohmann::json::json_pointer("/" + replace_dots(key))] = parsed;
    }
  }

 private:
  static std::string replace_dots(std::string s) {
    for (auto& c : s)
      if (c == '.') c = '/';
    return s;
  }
  std::map<std::string, std::string> values_;
  std::map<std::string, nlohmann::json> defaults_;
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
}

struct PipelineArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  ConfigOverrides overrides;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "pipeline config JSON (defaults to the built-in toy config)");
    app.add_option("--seed", seed, "master seed (default: CROSSTILL_SEED, else the config's seed)");
    overrides.attach(app);
  }

  PipelineConfig resolve(CLI::App& app) const {
    nlohmann::json j = config_path.empty() ? to_json(PipelineConfig::toy()) : read_json_file(config_path);
    overrides.apply(app, j);
    PipelineConfig cfg = pipeline_config_from_json(j);
    if (app.count("--seed")) cfg.seed = seed;
    else cfg.seed = default_seed(cfg.seed);
    cfg.validate();
    return cfg;
  }
};

/// Builds the command tree; `run` executes whichever subcommand was parsed.
class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {
    app_.description("Multi-stage cross-lingual sentence-embedding distillation toolkit");
    app_.require_subcommand(1);
    app_.set_help_all_flag("--help-all", "help for every subcommand");
    add_gen_corpus();
    add_gen_sts();
    add_train();
    add_eval();
    add_count_params();
    add_grad_check();
    add_sweep_depth();
  }

  CLI::App& app() { return app_; }

  int main(int argc, const char* const* argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e, out_, err_);
      return code == 0 ? 0 : 1;
    }
    try {
      for (auto& [sub, fn] : handlers_)
        if (sub->parsed()) return fn();
      return 1;
    } catch (const Error& e) {
      err_ << "error: " << e.what() << '\n';
      return exit_code(e.kind());
    } catch (const nlohmann::json::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return 1;
    }
  }

 private:
  void add_gen_corpus() {
    auto* sub = app_.add_subcommand("gen-corpus", "generate a synthetic parallel corpus and vocab manifest");
    sub->add_option("--out", gc_.out, "output directory")->required();
    sub->add_option("--seed", gc_.seed, "generation seed (default: CROSSTILL_SEED, else 42)");
    sub->add_option("--pairs", gc_.pairs, "number of distinct sentence pairs")->capture_default_str();
    sub->add_option("--tokens-per-language", gc_.tokens, "content tokens per language")->capture_default_str();
    sub->add_option("--min-len", gc_.min_len, "minimum content tokens per sentence")->capture_default_str();
    sub->add_option("--max-len", gc_.max_len, "maximum content tokens per sentence")->capture_default_str();
    sub->add_option("--max-seq-len", gc_.max_seq_len, "framed sequence length limit")->capture_default_str();
    sub->add_option("--dev-fraction", gc_.dev, "fraction of pairs held out for dev")->capture_default_str();
    sub->add_option("--test-fraction", gc_.test, "fraction of pairs held out for test")->capture_default_str();
    handlers_.emplace_back(sub, [this, sub] {
      const auto seed = sub->count("--seed") ? gc_.seed : default_seed(42);
      Lexicon lex(VocabSpec{gc_.tokens}, seed);
      const auto files = gen_parallel_corpus(seed, gc_.pairs, lex, {gc_.min_len, gc_.max_len}, gc_.out,
                                             gc_.max_seq_len, {gc_.dev, gc_.test});
      out_ << "train\t" << files.train.string() << '\t' << files.train_pairs << '\n'
           << "dev\t" << files.dev.string() << '\t' << files.dev_pairs << '\n'
           << "test\t" << files.test.string() << '\t' << files.test_pairs << '\n'
           << "vocab\t" << files.vocab.string() << '\n';
      return 0;
    });
  }

  void add_gen_sts() {
    auto* sub = app_.add_subcommand("gen-sts", "generate an oracle-scored STS set");
    sub->add_option("--vocab", gs_.vocab, "vocab manifest written by gen-corpus")->required();
    sub->add_option("--out", gs_.out, "output TSV path")->required();
    sub->add_option("--n", gs_.n, "number of sentence pairs")->capture_default_str();
    sub->add_option("--seed", gs_.seed, "generation seed (default: CROSSTILL_SEED, else 42)");
    sub->add_option("--teacher-dim", gs_.dim, "oracle concept dimension")->capture_default_str();
    sub->add_flag("--cross-lingual", gs_.cross, "emit the second sentence in language 2");
    handlers_.emplace_back(sub, [this, sub] {
      const auto seed = sub->count("--seed") ? gs_.seed : default_seed(42);
      const Lexicon lex = load_lexicon(gs_.vocab);
      const OracleSemantics oracle(lex, gs_.dim);
      const auto examples = gen_sts_set(seed, gs_.n, oracle, gs_.out, gs_.cross);
      out_ << "sts\t" << gs_.out << '\t' << examples.size() << '\n';
      return 0;
    });
  }

  void add_train() {
    auto* sub = app_.add_subcommand("train", "run distillation stages and write checkpoints");
    train_.pipeline.attach(*sub);
    sub->add_option("--stage", train_.stage, "stage to run: 1, 2, 3, 4 or all")
        ->check(CLI::IsMember({"1", "2", "3", "4", "all"}))
        ->capture_default_str();
    sub->add_option("--single-stage", train_.single, "single-stage baseline instead: random_init or pre_distill")
        ->check(CLI::IsMember({"random_init", "pre_distill"}));
    sub->add_flag("--quiet", train_.quiet, "suppress per-epoch progress");
    handlers_.emplace_back(sub, [this, sub] {
      const PipelineConfig cfg = train_.pipeline.resolve(*sub);
      const PipelineData data = load_pipeline_data(cfg);
      std::ostream* progress = train_.quiet ? nullptr : &err_;
      PipelineResult result;
      if (!train_.single.empty()) {
        if (sub->count("--stage")) throw ConfigError("--stage and --single-stage are exclusive");
        const auto mode = train_.single == "random_init" ? SingleStageMode::random_init : SingleStageMode::pre_distill;
        result = run_single_stage(mode, cfg, data, progress);
      } else if (train_.stage == "all") {
        result = run_pipeline(cfg, data, 1, 4, progress);
      } else {
        const int k = std::stoi(train_.stage);
        result = run_pipeline(cfg, data, k, k, progress);
      }
      for (const auto& path : result.checkpoints)
        out_ << path.string() << '\t' << hex64(fnv1a64(read_file_bytes(path))) << '\n';
      return 0;
    });
  }

  void add_eval() {
    auto* sub = app_.add_subcommand("eval", "evaluate a checkpoint on STS and/or parallel retrieval");
    sub->add_option("--checkpoint", ev_.checkpoint, "checkpoint to evaluate")->required();
    sub->add_option("--vocab", ev_.vocab, "vocab manifest used to read the data files")->required();
    sub->add_option("--sts", ev_.sts, "STS TSV");
    sub->add_option("--parallel", ev_.parallel, "parallel TSV for block retrieval");
    sub->add_option("--report", ev_.report, "write the JSON report here");
    sub->add_option("--block-size", ev_.block, "retrieval block size")->capture_default_str();
    sub->add_option("--max-seq-len", ev_.max_seq_len, "framed sequence length limit")->capture_default_str();
    handlers_.emplace_back(sub, [this] {
      if (ev_.sts.empty() && ev_.parallel.empty()) throw ConfigError("eval needs --sts and/or --parallel");
      const auto encoder = load_checkpoint<float>(ev_.checkpoint);
      const Lexicon lex = load_lexicon(ev_.vocab);
      EncoderEmbedder<float> embed{encoder, ev_.max_seq_len};
      EvalReport report;
      report.task = ev_.sts.empty() ? "retrieval" : ev_.parallel.empty() ? "sts" : "sts+retrieval";
      report.config = nlohmann::json(encoder.config());
      if (!ev_.sts.empty()) {
        const auto examples = load_sts_tsv(ev_.sts, lex);
        report.spearman_x100 = 100.0 * sts_spearman(embed, examples);
        report.n_examples = examples.size();
        out_ << "sts_rho_x100\t" << format_rho(report.spearman_x100) << '\n';
      }
      if (!ev_.parallel.empty()) {
        const auto pairs = read_parallel_tsv(ev_.parallel, lex).pairs;
        report.retrieval_accuracy = retrieval_accuracy(embed, pairs, ev_.block);
        if (ev_.sts.empty()) report.n_examples = pairs.size();
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", report.retrieval_accuracy);
        out_ << "retrieval_accuracy\t" << buf << '\n';
      }
      if (!ev_.report.empty()) {
        std::ofstream f(ev_.report);
        if (!f) throw IoError("cannot write report " + ev_.report);
        f << report.to_json().dump(2) << '\n';
      }
      return 0;
    });
  }

  void add_count_params() {
    auto* sub = app_.add_subcommand("count-params", "print embedding/encoder sizes for size presets");
    sub->add_option("--preset", cp_.presets, "preset name (repeatable; default: every built-in preset)");
    sub->add_option("--config", cp_.config, "count a pipeline config's student instead");
    sub->add_flag("--header", cp_.header, "print a column header row");
    handlers_.emplace_back(sub, [this] {
      std::vector<SizePreset> presets;
      if (!cp_.config.empty()) {
        const auto cfg = pipeline_config_from_json(read_json_file(cp_.config));
        presets.push_back(preset_for(cfg.assistant, "assistant"));
        presets.push_back(preset_for(cfg.student, "student"));
      }
      for (const auto& name : cp_.presets) {
        auto p = find_preset(name);
        if (!p) {
          std::string known;
          for (const auto& b : builtin_presets()) known += " " + b.name;
          throw ConfigError("unknown preset '" + name + "'; known:" + known);
        }
        presets.push_back(*p);
      }
      if (presets.empty()) presets = builtin_presets();
      if (cp_.header) out_ << "preset\tembedding\tencoder\tembedding_M\tencoder_M\n";
      for (const auto& p : presets) out_ << to_tsv(model_report(p)) << '\n';
      return 0;
    });
  }

  void add_grad_check() {
    auto* sub = app_.add_subcommand("grad-check", "finite-difference check of loss gradients");
    std::vector<std::string> losses = checked_losses();
    losses.push_back("all");
    sub->add_option("--loss", gk_.loss, "loss to check: stage1, stage2, stage3, mcl, kd, stage4, bool, ce or all")
        ->check(CLI::IsMember(losses))
        ->capture_default_str();
    sub->add_option("--width", gk_.width, "floating-point width: 64bit or 32bit")
        ->check(CLI::IsMember({"64bit", "32bit"}))
        ->capture_default_str();
    sub->add_option("--seed", gk_.seed, "seed for the random instances (default: CROSSTILL_SEED, else 0)");
    sub->add_option("--step", gk_.step, "finite-difference step (default: 1e-4 at 64bit, 1e-2 at 32bit)");
    sub->add_option("--tolerance", gk_.tolerance, "max relative error accepted (default: 1e-6 at 64bit, 5e-2 at 32bit)");
    handlers_.emplace_back(sub, [this, sub] {
      const bool wide = gk_.width == "64bit";
      const auto seed = sub->count("--seed") ? gk_.seed : default_seed(0);
      const double h = sub->count("--step") ? gk_.step : wide ? default_fd_step<double>() : default_fd_step<float>();
      const double tol = sub->count("--tolerance") ? gk_.tolerance : wide ? 1e-6 : 5e-2;
      const auto cases = wide ? check_loss_gradients<double>(gk_.loss, seed, h) : check_loss_gradients<float>(gk_.loss, seed, h);
      double worst = 0.0;
      for (const auto& c : cases) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s\tN=%zu\tD=%zu\t%.3e\n", c.loss.c_str(), c.n, c.d, c.max_relative_error);
        out_ << buf;
        worst = std::max(worst, c.max_relative_error);
      }
      char buf[96];
      std::snprintf(buf, sizeof(buf), "max_relative_error\t%.3e\t%s\n", worst, worst <= tol ? "PASS" : "FAIL");
      out_ << buf;
      return worst <= tol ? 0 : 1;
    });
  }

  void add_sweep_depth() {
    auto* sub = app_.add_subcommand("sweep-depth", "train single-stage students at several depths");
    sd_.pipeline.attach(*sub);
    sub->add_option("--depths", sd_.depths, "comma-separated layer counts")->delimiter(',')->capture_default_str();
    sub->add_option("--report", sd_.report, "write the per-depth JSON reports here");
    sub->add_flag("--quiet", sd_.quiet, "suppress per-epoch progress");
    handlers_.emplace_back(sub, [this, sub] {
      const PipelineConfig cfg = sd_.pipeline.resolve(*sub);
      const PipelineData data = load_pipeline_data(cfg);
      const auto reports = depth_sweep(cfg, data, sd_.depths, sd_.quiet ? nullptr : &err_);
      out_ << "depth\tsts_rho_x100\tretrieval_accuracy\n";
      nlohmann::json all = nlohmann::json::array();
      for (const auto& r : reports) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f", r.cross_lingual.retrieval_accuracy);
        out_ << r.depth << '\t' << format_rho(r.monolingual.spearman_x100) << '\t' << buf << '\n';
        all.push_back({{"depth", r.depth}, {"monolingual", r.monolingual.to_json()},
                       {"cross_lingual", r.cross_lingual.to_json()}});
      }
      if (!sd_.report.empty()) {
        std::ofstream f(sd_.report);
        if (!f) throw IoError("cannot write report " + sd_.report);
        f << all.dump(2) << '\n';
      }
      return 0;
    });
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"crosstill"};
  std::vector<std::pair<CLI::App*, std::function<int()>>> handlers_;

  struct {
    std::string out;
    std::uint64_t seed = 42;
    std::size_t pairs = 4000, tokens = 512, min_len = 3, max_len = 12, max_seq_len = 16;
    double dev = 0.05, test = 0.05;
  } gc_;
  struct {
    std::string vocab, out;
    std::size_t n = 500, dim = 64;
    std::uint64_t seed = 42;
    bool cross = false;
  } gs_;
  struct {
    PipelineArgs pipeline;
    std::string stage = "all", single;
    bool quiet = false;
  } train_;
  struct {
    std::string checkpoint, vocab, sts, parallel, report;
    std::size_t block = 64, max_seq_len = 16;
  } ev_;
  struct {
    std::vector<std::string> presets;
    std::string config;
    bool header = false;
  } cp_;
  struct {
    std::string loss = "all", width = "64bit";
    std::uint64_t seed = 0;
    double step = 0.0, tolerance = 0.0;
  } gk_;
  struct {
    PipelineArgs pipeline;
    std::vector<std::size_t> depths{1, 2, 3, 4};
    std::string report;
    bool quiet = false;
  } sd_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    Cli cli(out, err);
    return cli.main(argc, argv);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  }
}

}  // namespace crosstill::cli
