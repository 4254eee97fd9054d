#pragma once

// Four-stage distillation driver:
//   1. teacher -> assistant        sentence outputs, both languages
//   2. assistant -> student        embedding-layer outputs (embedding path only)
//   3. assistant -> student        sentence outputs
//   4. teacher -> student          contrastive term + distillation term
// plus the single-stage baselines and the per-epoch metrics log.

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crosstill/checkpoint.hpp"
#include "crosstill/corpus.hpp"
#include "crosstill/encoder.hpp"
#include "crosstill/eval.hpp"
#include "crosstill/losses.hpp"
#include "crosstill/optim.hpp"

namespace crosstill {

enum class ContrastiveVariant { mcl, hard_label, ce, none };

inline std::string to_string(ContrastiveVariant v) {
  switch (v) {
    case ContrastiveVariant::mcl: return "mcl";
    case ContrastiveVariant::hard_label: return "bool";
    case ContrastiveVariant::ce: return "ce";
    case ContrastiveVariant::none: return "none";
  }
  return "mcl";
}

inline ContrastiveVariant parse_contrastive(const std::string& s) {
  if (s == "mcl") return ContrastiveVariant::mcl;
  if (s == "bool") return ContrastiveVariant::hard_label;
  if (s == "ce") return ContrastiveVariant::ce;
  if (s == "none") return ContrastiveVariant::none;
  throw ConfigError("unknown contrastive variant '" + s + "' (expected mcl, bool, ce or none)");
}

/// How the embedding-alignment stage compares assistant and student.
enum class EmbeddingTap { pooled, per_token };

struct StageSettings {
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
};

struct CorpusPaths {
  std::filesystem::path train, dev, test, vocab, sts;
};

struct PipelineConfig {
  CorpusPaths corpus;
  EncoderConfig assistant;
  EncoderConfig student;
  std::size_t teacher_dim = 64;
  bool teacher_adapter = false;
  std::size_t max_seq_len = 16;
  std::array<StageSettings, 4> stages;
  std::uint64_t seed = 42;
  std::filesystem::path output_dir = "runs/toy";
  ContrastiveVariant contrastive = ContrastiveVariant::mcl;
  CeLossConfig ce;
  EmbeddingTap stage2_tap = EmbeddingTap::pooled;
  std::size_t eval_block = 64;
  bool eval_every_epoch = true;

  /// Desk-scale defaults: a 4-layer assistant and a bottlenecked (B=16) student
  /// with a 2-layer recurrent unit applied twice.
  static PipelineConfig toy() {
    PipelineConfig c;
    c.assistant.distinct_layers = 4;
    c.student.bottleneck = true;
    c.student.bottleneck_size = 16;
    c.student.distinct_layers = 2;
    c.student.recurrence = 2;
    for (auto& s : c.stages) {
      s.epochs = 5;
      s.optimizer.learning_rate = 1e-3;
    }
    c.stages[3].epochs = 15;
    return c;
  }

  StageSettings& stage(int k) { return stages.at(static_cast<std::size_t>(k - 1)); }
  const StageSettings& stage(int k) const { return stages.at(static_cast<std::size_t>(k - 1)); }

  void validate() const {
    assistant.validate();
    student.validate();
    if (assistant.hidden != student.hidden) throw ConfigError("assistant and student hidden sizes differ");
    if (teacher_dim != student.hidden && !teacher_adapter)
      throw ConfigError("teacher_dim " + std::to_string(teacher_dim) + " differs from hidden " +
                        std::to_string(student.hidden) + "; enable teacher_adapter to project");
    if (max_seq_len > assistant.max_positions || max_seq_len > student.max_positions)
      throw ConfigError("max_seq_len exceeds the encoders' positional tables");
    for (const auto& s : stages)
      if (s.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(ce.temperature > 0.0)) throw ConfigError("ce.temperature must be positive");
  }
};

inline void to_json(nlohmann::json& j, const OptimizerConfig& o) {
  j = {{"learning_rate", o.learning_rate}, {"warmup_fraction", o.warmup_fraction}, {"weight_decay", o.weight_decay},
       {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}
inline void from_json(const nlohmann::json& j, OptimizerConfig& o) {
  OptimizerConfig d;
  o.learning_rate = j.value("learning_rate", d.learning_rate);
  o.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  o.weight_decay = j.value("weight_decay", d.weight_decay);
  o.beta1 = j.value("beta1", d.beta1);
  o.beta2 = j.value("beta2", d.beta2);
  o.eps = j.value("eps", d.eps);
}
inline void to_json(nlohmann::json& j, const StageSettings& s) {
  j = {{"epochs", s.epochs}, {"batch_size", s.batch_size}, {"optimizer", s.optimizer}};
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["corpus"] = {{"train", c.corpus.train.string()}, {"dev", c.corpus.dev.string()}, {"test", c.corpus.test.string()},
                 {"vocab", c.corpus.vocab.string()}, {"sts", c.corpus.sts.string()}};
  j["assistant"] = c.assistant;
  j["student"] = c.student;
  j["teacher_dim"] = c.teacher_dim;
  j["teacher_adapter"] = c.teacher_adapter;
  j["max_seq_len"] = c.max_seq_len;
  for (int k = 1; k <= 4; ++k) j["stage" + std::to_string(k)] = c.stage(k);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["contrastive"] = to_string(c.contrastive);
  j["ce"] = {{"temperature", c.ce.temperature},
             {"teacher_weight_mode",
              c.ce.teacher_weight_mode == TeacherWeightMode::literal ? "literal" : "softmax"}};
  j["stage2_tap"] = c.stage2_tap == EmbeddingTap::pooled ? "pooled" : "per_token";
  j["eval"] = {{"block_size", c.eval_block}, {"every_epoch", c.eval_every_epoch}};
  return j;
}

/// Parse a config object; keys absent from `j` keep the toy defaults.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  try {
    PipelineConfig c = PipelineConfig::toy();
    // Merge over the defaults so partial configs are accepted.
    nlohmann::json merged = to_json(c);
    merged.merge_patch(j);
    const auto& corpus = merged.at("corpus");
    c.corpus = {corpus.at("train").get<std::string>(), corpus.at("dev").get<std::string>(),
                corpus.at("test").get<std::string>(), corpus.at("vocab").get<std::string>(),
                corpus.at("sts").get<std::string>()};
    c.assistant = merged.at("assistant").get<EncoderConfig>();
    c.student = merged.at("student").get<EncoderConfig>();
    c.teacher_dim = merged.at("teacher_dim").get<std::size_t>();
    c.teacher_adapter = merged.at("teacher_adapter").get<bool>();
    c.max_seq_len = merged.at("max_seq_len").get<std::size_t>();
    for (int k = 1; k <= 4; ++k) {
      const auto& s = merged.at("stage" + std::to_string(k));
      c.stage(k).epochs = s.at("epochs").get<std::size_t>();
      c.stage(k).batch_size = s.at("batch_size").get<std::size_t>();
      c.stage(k).optimizer = s.at("optimizer").get<OptimizerConfig>();
    }
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.output_dir = merged.at("output_dir").get<std::string>();
    c.contrastive = parse_contrastive(merged.at("contrastive").get<std::string>());
    c.ce.temperature = merged.at("ce").at("temperature").get<double>();
    const auto mode = merged.at("ce").at("teacher_weight_mode").get<std::string>();
    if (mode == "literal") c.ce.teacher_weight_mode = TeacherWeightMode::literal;
    else if (mode == "softmax") c.ce.teacher_weight_mode = TeacherWeightMode::softmax_normalized;
    else throw ConfigError("ce.teacher_weight_mode must be literal or softmax");
    const auto tap = merged.at("stage2_tap").get<std::string>();
    if (tap == "pooled") c.stage2_tap = EmbeddingTap::pooled;
    else if (tap == "per_token") c.stage2_tap = EmbeddingTap::per_token;
    else throw ConfigError("stage2_tap must be pooled or per_token");
    c.eval_block = merged.at("eval").at("block_size").get<std::size_t>();
    c.eval_every_epoch = merged.at("eval").at("every_epoch").get<bool>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
}

// ---------------------------------------------------------------- metrics

struct MetricsRecord {
  int stage = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::map<std::string, double> loss_components;
  std::optional<double> retrieval_acc;
  std::optional<double> spearman;

  nlohmann::json to_json() const {
    nlohmann::json eval = nlohmann::json::object();
    eval["retrieval_acc"] = retrieval_acc ? nlohmann::json(*retrieval_acc) : nlohmann::json(nullptr);
    eval["spearman"] = spearman ? nlohmann::json(*spearman) : nlohmann::json(nullptr);
    return {{"stage", stage}, {"epoch", epoch}, {"loss", loss}, {"loss_components", loss_components}, {"eval", eval}};
  }
};

/// Append-only per-epoch records, mirrored to a JSON-lines file when a path is set.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::filesystem::path path) : path_(std::move(path)) {
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw IoError("cannot write metrics log " + path_.string());
  }

  void append(const MetricsRecord& r) {
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (it->stage == r.stage) {
        CROSSTILL_EXPECT(r.epoch > it->epoch, "metrics log: epochs must increase within a stage");
        break;
      }
    records_.push_back(r);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      if (!out) throw IoError("cannot append to metrics log " + path_.string());
      out << r.to_json().dump() << '\n';
    }
  }

  const std::vector<MetricsRecord>& records() const { return records_; }
  std::vector<MetricsRecord> stage_records(int stage) const {
    std::vector<MetricsRecord> out;
    for (const auto& r : records_)
      if (r.stage == stage) out.push_back(r);
    return out;
  }

 private:
  std::filesystem::path path_;
  std::vector<MetricsRecord> records_;
};

// ---------------------------------------------------------------- stage plans

enum class StageKind {
  teacher_to_assistant,  // stage 1
  embedding_align,       // stage 2
  assistant_to_student,  // stage 3
  teacher_to_student,    // stage 4 (contrastive variant + distillation)
  teacher_align_student  // single-stage baselines: distillation term only
};

enum class Role { teacher, assistant, student };

struct StagePlan {
  int stage = 1;
  StageKind kind = StageKind::teacher_to_assistant;
  Role trainable = Role::assistant;
  std::vector<Role> frozen;
  StageSettings settings;
  ContrastiveVariant contrastive = ContrastiveVariant::mcl;
};

inline StagePlan make_stage_plan(const PipelineConfig& cfg, int stage) {
  StagePlan p;
  p.stage = stage;
  p.contrastive = cfg.contrastive;
  switch (stage) {
    case 1: p.kind = StageKind::teacher_to_assistant; p.trainable = Role::assistant; p.frozen = {Role::teacher}; break;
    case 2: p.kind = StageKind::embedding_align; p.trainable = Role::student; p.frozen = {Role::assistant}; break;
    case 3: p.kind = StageKind::assistant_to_student; p.trainable = Role::student; p.frozen = {Role::assistant}; break;
    case 4: p.kind = StageKind::teacher_to_student; p.trainable = Role::student; p.frozen = {Role::teacher, Role::assistant}; break;
    default: throw ConfigError("stage must be 1..4, got " + std::to_string(stage));
  }
  p.settings = cfg.stage(stage);
  return p;
}

// ---------------------------------------------------------------- stage runner

template <class T>
struct StageModels {
  SentenceEncoder<T>* assistant = nullptr;
  SentenceEncoder<T>* student = nullptr;
  Tensor<T> adapter;  // H x D_T projection into teacher space; undefined when unused
};

/// Data shared by every stage: the oracle teacher, training pairs and optional
/// evaluation sets.
struct StageData {
  const OracleSemantics* oracle = nullptr;
  const std::vector<ParallelPair>* train = nullptr;
  const std::vector<ParallelPair>* dev = nullptr;
  const std::vector<StsExample>* sts = nullptr;
};

struct RunOptions {
  std::size_t max_seq_len = 16;
  std::uint64_t seed = 42;
  CeLossConfig ce;
  EmbeddingTap stage2_tap = EmbeddingTap::pooled;
  std::size_t eval_block = 64;
  bool eval_every_epoch = true;
  std::ostream* progress = nullptr;
  bool teacher_adapter = false;
};

inline RunOptions run_options(const PipelineConfig& cfg, std::ostream* progress = nullptr) {
  return {cfg.max_seq_len, cfg.seed,     cfg.ce,  cfg.stage2_tap, cfg.eval_block, cfg.eval_every_epoch,
          progress,        cfg.teacher_adapter};
}

namespace detail {

template <class T>
Tensor<T> teacher_batch(const OracleSemantics& oracle, const std::vector<Sentence>& sentences) {
  const std::size_t d = oracle.dim();
  std::vector<T> values;
  values.reserve(sentences.size() * d);
  for (const auto& s : sentences)
    for (double x : oracle.embed(s)) values.push_back(static_cast<T>(x));
  return Tensor<T>::from(Shape{sentences.size(), d}, std::move(values));
}

template <class T>
Tensor<T> token_mask(const TokenBatch& batch, std::size_t hidden) {
  std::vector<T> m(batch.rows * batch.cols * hidden);
  for (std::size_t i = 0; i < batch.mask.size(); ++i)
    std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(i * hidden), hidden, static_cast<T>(batch.mask[i]));
  return Tensor<T>::from(Shape{batch.rows * batch.cols, hidden}, std::move(m));
}

// Masked per-token squared error, averaged over real tokens and coordinates.
template <class T>
Tensor<T> per_token_mse(const Tensor<T>& a, const Tensor<T>& b, const TokenBatch& batch) {
  std::size_t tokens = 0;
  for (auto m : batch.mask) tokens += m;
  const std::size_t h = a.dim(1);
  return scale(sum(square(mul(sub(a, b), token_mask<T>(batch, h)))), T(1) / static_cast<T>(tokens * h));
}

template <class T>
Tensor<T> to_teacher_space(const StageModels<T>& models, const Tensor<T>& x) {
  return models.adapter.defined() ? matmul(x, models.adapter) : x;
}

inline bool teacher_facing(StageKind k) {
  return k == StageKind::teacher_to_assistant || k == StageKind::teacher_to_student ||
         k == StageKind::teacher_align_student;
}

template <class T>
LossValue<T> stage_loss(const StagePlan& plan, const StageModels<T>& models, const ParallelBatch& batch,
                        const StageData& data, const RunOptions& opt) {
  switch (plan.kind) {
    case StageKind::teacher_to_assistant: {
      auto teacher = teacher_batch<T>(*data.oracle, batch.source_sentences);
      return loss_anchor_align(teacher, to_teacher_space(models, models.assistant->encode(batch.source)),
                               to_teacher_space(models, models.assistant->encode(batch.target)));
    }
    case StageKind::embedding_align: {
      if (opt.stage2_tap == EmbeddingTap::per_token) {
        auto src = per_token_mse(models.assistant->embed_tokens(batch.source), models.student->embed_tokens(batch.source), batch.source);
        auto tgt = per_token_mse(models.student->embed_tokens(batch.target), models.assistant->embed_tokens(batch.target), batch.target);
        LossValue<T> out{add(src, tgt), {}};
        out.components["align"] = out.value();
        return out;
      }
      return loss_pairwise_align(models.assistant->embed_pooled(batch.source), models.student->embed_pooled(batch.source),
                                 models.assistant->embed_pooled(batch.target), models.student->embed_pooled(batch.target));
    }
    case StageKind::assistant_to_student:
      return loss_pairwise_align(models.assistant->encode(batch.source), models.student->encode(batch.source),
                                 models.assistant->encode(batch.target), models.student->encode(batch.target));
    case StageKind::teacher_align_student: {
      auto teacher = teacher_batch<T>(*data.oracle, batch.source_sentences);
      return loss_anchor_align(teacher, to_teacher_space(models, models.student->encode(batch.source)),
                               to_teacher_space(models, models.student->encode(batch.target)));
    }
    case StageKind::teacher_to_student: {
      auto teacher = teacher_batch<T>(*data.oracle, batch.source_sentences);
      auto src = to_teacher_space(models, models.student->encode(batch.source));
      auto tgt = to_teacher_space(models, models.student->encode(batch.target));
      auto l2 = loss_anchor_align(teacher, src, tgt);
      std::optional<LossValue<T>> l1;
      switch (plan.contrastive) {
        case ContrastiveVariant::mcl: l1 = loss_mcl(teacher, src, tgt); break;
        case ContrastiveVariant::hard_label: l1 = loss_bool(src, tgt); break;
        case ContrastiveVariant::ce: l1 = loss_ce(teacher, src, tgt, opt.ce); break;
        case ContrastiveVariant::none: break;
      }
      LossValue<T> out{l1 ? add(l1->total, l2.total) : l2.total, {}};
      out.components["l1"] = l1 ? l1->value() : T(0);
      out.components["l2"] = l2.value();
      return out;
    }
  }
  throw ConfigError("unknown stage kind");
}

}  // namespace detail

/// Held-out evaluation of an encoder: block retrieval accuracy and STS rho.
template <class T>
EvalReport evaluate_encoder(const SentenceEncoder<T>& encoder, const std::vector<ParallelPair>* pairs,
                            const std::vector<StsExample>* sts, std::size_t max_seq_len, std::size_t block = 64) {
  EvalReport r;
  r.task = "heldout";
  EncoderEmbedder<T> embed{encoder, max_seq_len};
  if (pairs && pairs->size() >= block) {
    r.retrieval_accuracy = retrieval_accuracy(embed, *pairs, block);
    r.n_examples = pairs->size();
  }
  if (sts && sts->size() >= 2) r.spearman_x100 = 100.0 * sts_spearman(embed, *sts);
  r.config = nlohmann::json(encoder.config());
  return r;
}

/// Train the plan's trainable role for plan.settings.epochs epochs. Only the
/// designated parameters are updated; frozen roles never enter the optimizer.
template <class T>
void run_stage(const StagePlan& plan, StageModels<T> models, const StageData& data, MetricsLog& log,
               const RunOptions& opt) {
  SentenceEncoder<T>* trained = plan.trainable == Role::assistant ? models.assistant : models.student;
  if (!trained) throw ConfigError("stage " + std::to_string(plan.stage) + ": trainable model is missing");
  if (plan.kind != StageKind::teacher_to_assistant && plan.kind != StageKind::teacher_align_student &&
      !models.assistant)
    throw ConfigError("stage " + std::to_string(plan.stage) + " needs the assistant");
  if (plan.kind != StageKind::teacher_to_assistant && !models.student)
    throw ConfigError("stage " + std::to_string(plan.stage) + " needs an initialized student");
  if (!data.train || !data.oracle) throw ConfigError("stage data is incomplete");
  if (plan.settings.epochs == 0) return;

  if (models.assistant) models.assistant->set_requires_grad(false);
  if (models.student) models.student->set_requires_grad(false);
  std::vector<TrainableParam<T>> params =
      plan.kind == StageKind::embedding_align ? trained->embedding_path_parameters() : trained->parameters();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  const std::size_t hidden = trained->config().hidden;
  if (detail::teacher_facing(plan.kind) && data.oracle->dim() != hidden) {
    if (!opt.teacher_adapter)
      throw ConfigError("teacher dimension " + std::to_string(data.oracle->dim()) + " differs from hidden " +
                        std::to_string(hidden) + "; enable teacher_adapter");
    Rng adapter_rng = Rng(opt.seed).split(0xada0 + static_cast<std::uint64_t>(plan.stage));
    std::vector<T> w(hidden * data.oracle->dim());
    for (auto& x : w) x = static_cast<T>(adapter_rng.normal() / std::sqrt(static_cast<double>(hidden)));
    models.adapter = Tensor<T>::from(Shape{hidden, data.oracle->dim()}, std::move(w), true);
    params.push_back({"adapter", models.adapter, true});
  } else {
    models.adapter = Tensor<T>();
  }

  BatchStream stream(*data.train, opt.max_seq_len, plan.settings.batch_size,
                     mix64(opt.seed ^ (0x5157ULL + static_cast<std::uint64_t>(plan.stage))));
  OptimizerState<T> state(plan.settings.optimizer, plan.settings.epochs * stream.batches_per_epoch(), params);

  for (std::size_t epoch = 1; epoch <= plan.settings.epochs; ++epoch) {
    stream.start_epoch(epoch);
    ParallelBatch batch;
    double loss_sum = 0.0;
    std::map<std::string, double> component_sum;
    std::size_t batches = 0;
    while (stream.next(batch)) {
      for (auto& p : params) p.tensor.zero_grad();
      auto loss = detail::stage_loss(plan, models, batch, data, opt);
      backward(loss.total);
      adamw_step(params, state);
      loss_sum += loss.value();
      for (const auto& [k, v] : loss.components) component_sum[k] += v;
      ++batches;
    }
    MetricsRecord rec;
    rec.stage = plan.stage;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(batches);
    for (const auto& [k, v] : component_sum) rec.loss_components[k] = v / static_cast<double>(batches);
    if (opt.eval_every_epoch || epoch == plan.settings.epochs) {
      const auto report = evaluate_encoder(*trained, data.dev, data.sts, opt.max_seq_len, opt.eval_block);
      if (data.dev && data.dev->size() >= opt.eval_block) rec.retrieval_acc = report.retrieval_accuracy;
      if (data.sts && data.sts->size() >= 2) rec.spearman = report.spearman_x100 / 100.0;
    }
    log.append(rec);
    if (opt.progress) {
      *opt.progress << "stage " << plan.stage << " epoch " << epoch << "/" << plan.settings.epochs
                    << " loss " << rec.loss;
      if (rec.retrieval_acc) *opt.progress << " dev_retrieval " << *rec.retrieval_acc;
      if (rec.spearman) *opt.progress << " sts_rho " << *rec.spearman;
      *opt.progress << '\n';
    }
  }
  trained->set_requires_grad(false);
}

// ---------------------------------------------------------------- drivers

struct PipelineData {
  Lexicon lexicon;
  std::optional<OracleSemantics> oracle;
  std::vector<ParallelPair> train, dev, test;
  std::vector<StsExample> sts;

  StageData stage_data() const { return {&*oracle, &train, &dev, sts.empty() ? nullptr : &sts}; }
};

inline PipelineData load_pipeline_data(const PipelineConfig& cfg) {
  PipelineData d;
  d.lexicon = load_lexicon(cfg.corpus.vocab);
  d.oracle.emplace(d.lexicon, cfg.teacher_dim);
  d.train = read_parallel_tsv(cfg.corpus.train, d.lexicon).pairs;
  if (d.train.empty()) throw ConfigError("training corpus " + cfg.corpus.train.string() + " is empty");
  if (!cfg.corpus.dev.empty()) d.dev = read_parallel_tsv(cfg.corpus.dev, d.lexicon).pairs;
  if (!cfg.corpus.test.empty()) d.test = read_parallel_tsv(cfg.corpus.test, d.lexicon).pairs;
  if (!cfg.corpus.sts.empty()) d.sts = load_sts_tsv(cfg.corpus.sts, d.lexicon);
  return d;
}

inline std::filesystem::path stage_checkpoint_path(const PipelineConfig& cfg, int stage) {
  return cfg.output_dir / ("stage" + std::to_string(stage) + ".xdst");
}

struct PipelineResult {
  std::optional<SentenceEncoder<float>> assistant;
  std::optional<SentenceEncoder<float>> student;
  MetricsLog log;
  std::vector<std::filesystem::path> checkpoints;
};

namespace detail {

inline void ensure_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

inline SentenceEncoder<float> load_prerequisite(const PipelineConfig& cfg, int stage) {
  const auto path = stage_checkpoint_path(cfg, stage);
  if (!std::filesystem::exists(path))
    throw ConfigError("missing prerequisite checkpoint " + path.string() + " (run stage " + std::to_string(stage) + " first)");
  return load_checkpoint<float>(path);
}

}  // namespace detail

/// Run stages first..last (1 <= first <= last <= 4). Stages after the first
/// resume from the checkpoints of earlier stages in cfg.output_dir.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const PipelineData& data, int first = 1, int last = 4,
                                   std::ostream* progress = nullptr) {
  cfg.validate();
  if (first < 1 || last > 4 || first > last) throw ConfigError("invalid stage range");
  detail::ensure_output_dir(cfg.output_dir);
  PipelineResult result;
  result.log = MetricsLog(cfg.output_dir / "metrics.jsonl");
  const RunOptions opt = run_options(cfg, progress);
  const StageData sd = data.stage_data();
  Rng rng(cfg.seed);

  if (first == 1) {
    Rng init = rng.split(10);
    result.assistant.emplace(cfg.assistant, init);
  } else {
    result.assistant.emplace(detail::load_prerequisite(cfg, 1));
  }
  if (first >= 3) result.student.emplace(detail::load_prerequisite(cfg, first - 1));

  for (int stage = first; stage <= last; ++stage) {
    if (stage == 2) {
      Rng init = rng.split(20);
      result.student.emplace(init_student_from_assistant(*result.assistant, cfg.student, init));
    }
    const StagePlan plan = make_stage_plan(cfg, stage);
    StageModels<float> models{&*result.assistant, result.student ? &*result.student : nullptr, {}};
    run_stage(plan, models, sd, result.log, opt);
    const auto path = stage_checkpoint_path(cfg, stage);
    save_checkpoint(stage == 1 ? *result.assistant : *result.student, path);
    result.checkpoints.push_back(path);
  }
  return result;
}

enum class SingleStageMode { random_init, pre_distill };

/// Table-6 style single-stage baselines.
///   random_init: fresh student trained directly against the teacher
///                (distillation term, stage-4 settings).
///   pre_distill: assistant from stage 1, student initialized from it and
///                distilled on the assistant (stage-3 settings), then aligned
///                to the teacher (stage-4 settings).
inline PipelineResult run_single_stage(SingleStageMode mode, const PipelineConfig& cfg, const PipelineData& data,
                                       std::ostream* progress = nullptr) {
  cfg.validate();
  detail::ensure_output_dir(cfg.output_dir);
  PipelineResult result;
  const std::string tag = mode == SingleStageMode::random_init ? "random_init" : "pre_distill";
  result.log = MetricsLog(cfg.output_dir / ("metrics_" + tag + ".jsonl"));
  const RunOptions opt = run_options(cfg, progress);
  const StageData sd = data.stage_data();
  Rng rng(cfg.seed);

  StagePlan align;
  align.stage = 4;
  align.kind = StageKind::teacher_align_student;
  align.trainable = Role::student;
  align.frozen = {Role::teacher};
  align.settings = cfg.stage(4);

  if (mode == SingleStageMode::random_init) {
    Rng init = rng.split(30);
    result.student.emplace(cfg.student, init);
    run_stage(align, StageModels<float>{nullptr, &*result.student, {}}, sd, result.log, opt);
  } else {
    Rng init = rng.split(10);
    result.assistant.emplace(cfg.assistant, init);
    run_stage(make_stage_plan(cfg, 1), StageModels<float>{&*result.assistant, nullptr, {}}, sd, result.log, opt);
    Rng student_init = rng.split(20);
    result.student.emplace(init_student_from_assistant(*result.assistant, cfg.student, student_init));
    StagePlan distill = make_stage_plan(cfg, 3);
    run_stage(distill, StageModels<float>{&*result.assistant, &*result.student, {}}, sd, result.log, opt);
    run_stage(align, StageModels<float>{&*result.assistant, &*result.student, {}}, sd, result.log, opt);
  }
  const auto path = cfg.output_dir / ("single_" + tag + ".xdst");
  save_checkpoint(*result.student, path);
  result.checkpoints.push_back(path);
  return result;
}

// ---------------------------------------------------------------- depth sweep

struct DepthReport {
  std::size_t depth = 0;
  EvalReport monolingual;    // STS rho
  EvalReport cross_lingual;  // held-out retrieval
};

/// Train the single-stage baseline (no bottleneck, no recurrence) at each
/// depth and report monolingual STS and cross-lingual retrieval.
inline std::vector<DepthReport> depth_sweep(const PipelineConfig& base, const PipelineData& data,
                                            const std::vector<std::size_t>& depths, std::ostream* progress = nullptr) {
  std::vector<DepthReport> out;
  for (std::size_t d : depths) {
    if (d == 0) throw ConfigError("depth must be positive");
    PipelineConfig cfg = base;
    cfg.student.bottleneck = false;
    cfg.student.distinct_layers = d;
    cfg.student.recurrence = 1;
    cfg.output_dir = base.output_dir / ("depth" + std::to_string(d));
    cfg.eval_every_epoch = false;
    auto result = run_single_stage(SingleStageMode::random_init, cfg, data, progress);
    const auto eval = evaluate_encoder(*result.student, &data.test, &data.sts, cfg.max_seq_len, cfg.eval_block);
    DepthReport rep;
    rep.depth = d;
    rep.monolingual.task = "sts-monolingual";
    rep.monolingual.spearman_x100 = eval.spearman_x100;
    rep.monolingual.n_examples = data.sts.size();
    rep.monolingual.config = nlohmann::json(cfg.student);
    rep.cross_lingual.task = "retrieval-cross-lingual";
    rep.cross_lingual.retrieval_accuracy = eval.retrieval_accuracy;
    rep.cross_lingual.n_examples = data.test.size();
    rep.cross_lingual.config = nlohmann::json(cfg.student);
    out.push_back(rep);
  }
  return out;
}

}  // namespace crosstill
