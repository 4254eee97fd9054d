#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "crosstill/pipeline.hpp"
#include "temp_dir.hpp"

using namespace crosstill;
using testing_util::read_file;
using testing_util::TempDir;

namespace {

constexpr std::size_t kTokens = 64;

// Small world: 64 tokens per language, hidden 16, 300 pairs.
class PipelineFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    VocabSpec vocab;
    vocab.tokens_per_language = kTokens;
    Lexicon lex(vocab, 3);
    auto files = gen_parallel_corpus(3, 300, lex, {3, 8}, dir_.path() / "data", 12, {0.1, 0.1});
    OracleSemantics oracle(lex, 16);
    gen_sts_set(4, 60, oracle, dir_.path() / "data" / "sts.tsv");

    cfg_ = PipelineConfig::toy();
    cfg_.corpus = {files.train, files.dev, files.test, files.vocab, dir_.path() / "data" / "sts.tsv"};
    for (auto* e : {&cfg_.assistant, &cfg_.student}) {
      e->vocab_size = vocab.size();
      e->hidden = 16;
      e->ffn = 32;
      e->heads = 2;
      e->max_positions = 12;
    }
    cfg_.assistant.distinct_layers = 2;
    cfg_.student.bottleneck_size = 8;
    cfg_.student.distinct_layers = 1;
    cfg_.student.recurrence = 2;
    cfg_.teacher_dim = 16;
    cfg_.max_seq_len = 12;
    cfg_.eval_block = 16;
    for (auto& s : cfg_.stages) {
      s.epochs = 2;
      s.batch_size = 32;
      s.optimizer.learning_rate = 3e-3;
    }
    cfg_.output_dir = dir_.path() / "run";
    data_ = load_pipeline_data(cfg_);
  }

  using Snapshot = std::map<std::string, std::vector<float>>;
  static Snapshot snapshot(const SentenceEncoder<float>& e) {
    Snapshot s;
    for (const auto& p : e.parameters()) s[p.name] = p.tensor.values();
    return s;
  }
  static std::vector<std::string> changed(const Snapshot& before, const SentenceEncoder<float>& e) {
    std::vector<std::string> out;
    for (const auto& p : e.parameters())
      if (before.at(p.name) != p.tensor.values()) out.push_back(p.name);
    return out;
  }

  TempDir dir_;
  PipelineConfig cfg_;
  PipelineData data_;
};

}  // namespace

TEST_F(PipelineFixture, StagePlansAssignRoles) {
  EXPECT_EQ(make_stage_plan(cfg_, 1).trainable, Role::assistant);
  EXPECT_EQ(make_stage_plan(cfg_, 2).kind, StageKind::embedding_align);
  EXPECT_EQ(make_stage_plan(cfg_, 3).trainable, Role::student);
  EXPECT_EQ(make_stage_plan(cfg_, 4).frozen, (std::vector<Role>{Role::teacher, Role::assistant}));
  EXPECT_THROW(make_stage_plan(cfg_, 5), ConfigError);
}

TEST_F(PipelineFixture, ZeroEpochStageLeavesModelAndLogUntouched) {
  Rng rng(1);
  SentenceEncoder<float> assistant(cfg_.assistant, rng);
  const auto before = snapshot(assistant);
  auto plan = make_stage_plan(cfg_, 1);
  plan.settings.epochs = 0;
  MetricsLog log;
  run_stage(plan, StageModels<float>{&assistant, nullptr, {}}, data_.stage_data(), log, run_options(cfg_));
  EXPECT_TRUE(changed(before, assistant).empty());
  EXPECT_TRUE(log.records().empty());
}

TEST_F(PipelineFixture, StageThreeFixedPointHasZeroLoss) {
  Rng rng(2);
  SentenceEncoder<float> assistant(cfg_.assistant, rng);
  auto copy_cfg = cfg_.assistant;
  auto student = init_student_from_assistant(assistant, copy_cfg, rng);
  auto plan = make_stage_plan(cfg_, 3);
  plan.settings.epochs = 1;
  plan.settings.optimizer.learning_rate = 0.0;
  MetricsLog log;
  auto sd = data_.stage_data();
  run_stage(plan, StageModels<float>{&assistant, &student, {}}, sd, log, run_options(cfg_));
  ASSERT_EQ(log.records().size(), 1u);
  EXPECT_EQ(log.records()[0].loss, 0.0);
}

TEST_F(PipelineFixture, FreezeDisciplineAcrossStages) {
  Rng rng(3);
  SentenceEncoder<float> assistant(cfg_.assistant, rng);
  auto student = init_student_from_assistant(assistant, cfg_.student, rng);
  auto sd = data_.stage_data();
  auto opt = run_options(cfg_);
  MetricsLog log;

  auto a0 = snapshot(assistant), s0 = snapshot(student);
  run_stage(make_stage_plan(cfg_, 1), StageModels<float>{&assistant, &student, {}}, sd, log, opt);
  EXPECT_EQ(changed(a0, assistant).size(), assistant.parameters().size());
  EXPECT_TRUE(changed(s0, student).empty());

  for (int stage : {2, 3, 4}) {
    auto a = snapshot(assistant), s = snapshot(student);
    run_stage(make_stage_plan(cfg_, stage), StageModels<float>{&assistant, &student, {}}, sd, log, opt);
    EXPECT_TRUE(changed(a, assistant).empty()) << "assistant moved in stage " << stage;
    auto moved = changed(s, student);
    EXPECT_FALSE(moved.empty());
    if (stage != 2) continue;
    for (const auto& name : moved)
      EXPECT_TRUE(name == "embeddings.word" || name == "embeddings.projection" ||
                  name.rfind("embeddings.norm", 0) == 0)
          << name;
  }
}

TEST_F(PipelineFixture, PerTokenTapTouchesOnlyEmbeddingPath) {
  Rng rng(4);
  SentenceEncoder<float> assistant(cfg_.assistant, rng);
  auto student = init_student_from_assistant(assistant, cfg_.student, rng);
  auto opt = run_options(cfg_);
  opt.stage2_tap = EmbeddingTap::per_token;
  MetricsLog log;
  auto a = snapshot(assistant), s = snapshot(student);
  run_stage(make_stage_plan(cfg_, 2), StageModels<float>{&assistant, &student, {}}, data_.stage_data(), log, opt);
  EXPECT_TRUE(changed(a, assistant).empty());
  for (const auto& name : changed(s, student)) EXPECT_EQ(name.rfind("embeddings.", 0), 0u) << name;
  EXPECT_GT(log.records().front().loss, log.records().back().loss);
}

TEST_F(PipelineFixture, VariantNoneLogsDistillationTermOnly) {
  cfg_.contrastive = ContrastiveVariant::none;
  auto result = run_pipeline(cfg_, data_);
  auto stage4 = result.log.stage_records(4);
  ASSERT_EQ(stage4.size(), 2u);
  for (const auto& r : stage4) {
    EXPECT_EQ(r.loss_components.at("l1"), 0.0);
    EXPECT_NEAR(r.loss, r.loss_components.at("l2"), 1e-6 * r.loss);
  }
}

TEST_F(PipelineFixture, Stage4BreakdownSumsForEveryVariant) {
  for (auto v : {ContrastiveVariant::mcl, ContrastiveVariant::hard_label, ContrastiveVariant::ce}) {
    Rng rng(5);
    SentenceEncoder<float> student(cfg_.student, rng);
    auto plan = make_stage_plan(cfg_, 4);
    plan.contrastive = v;
    plan.settings.epochs = 1;
    MetricsLog log;
    SentenceEncoder<float> assistant(cfg_.assistant, rng);
    run_stage(plan, StageModels<float>{&assistant, &student, {}}, data_.stage_data(), log, run_options(cfg_));
    const auto& r = log.records().front();
    EXPECT_GT(r.loss_components.at("l1"), 0.0) << to_string(v);
    EXPECT_NEAR(r.loss, r.loss_components.at("l1") + r.loss_components.at("l2"), 1e-5 * std::abs(r.loss));
  }
}

TEST_F(PipelineFixture, FullRunWritesCheckpointsAndMetrics) {
  auto result = run_pipeline(cfg_, data_);
  ASSERT_EQ(result.checkpoints.size(), 4u);
  for (int k = 1; k <= 4; ++k) EXPECT_TRUE(std::filesystem::exists(stage_checkpoint_path(cfg_, k)));
  EXPECT_EQ(result.log.records().size(), 8u);
  const auto text = read_file(cfg_.output_dir / "metrics.jsonl");
  std::size_t lines = 0;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line); ++lines) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("stage") && j.contains("epoch") && j.contains("loss") && j.contains("loss_components"));
    EXPECT_TRUE(j["eval"].contains("retrieval_acc"));
    EXPECT_TRUE(j["eval"]["spearman"].is_number());
  }
  EXPECT_EQ(lines, 8u);
  for (int k = 1; k <= 4; ++k) {
    auto rs = result.log.stage_records(k);
    EXPECT_GT(rs.front().loss, rs.back().loss) << "stage " << k;
  }
  auto reloaded = load_checkpoint<float>(stage_checkpoint_path(cfg_, 4));
  EXPECT_EQ(serialize_checkpoint(reloaded), serialize_checkpoint(*result.student));
}

TEST_F(PipelineFixture, ResumesFromEarlierCheckpoints) {
  auto full = run_pipeline(cfg_, data_);
  const auto stage4 = read_file_bytes(stage_checkpoint_path(cfg_, 4));
  auto resumed = run_pipeline(cfg_, data_, 4, 4);
  EXPECT_EQ(read_file_bytes(stage_checkpoint_path(cfg_, 4)), stage4);
  EXPECT_EQ(resumed.log.records().size(), 2u);
}

TEST_F(PipelineFixture, IdenticalSeedsGiveIdenticalCheckpoints) {
  auto first = run_pipeline(cfg_, data_);
  const auto a = read_file_bytes(first.checkpoints.back());
  cfg_.output_dir = dir_.path() / "run2";
  auto second = run_pipeline(cfg_, data_);
  EXPECT_EQ(fnv1a64(read_file_bytes(second.checkpoints.back())), fnv1a64(a));
  cfg_.output_dir = dir_.path() / "run3";
  cfg_.seed = 43;
  auto third = run_pipeline(cfg_, data_);
  EXPECT_NE(fnv1a64(read_file_bytes(third.checkpoints.back())), fnv1a64(a));
}

TEST_F(PipelineFixture, MissingPrerequisiteIsConfigError) {
  EXPECT_THROW(run_pipeline(cfg_, data_, 3, 4), ConfigError);
  EXPECT_THROW(run_pipeline(cfg_, data_, 3, 2), ConfigError);
}

TEST_F(PipelineFixture, NumericFailureKeepsEarlierCheckpoints) {
  cfg_.stage(2).optimizer.learning_rate = 1e300;
  cfg_.stage(2).optimizer.warmup_fraction = 0.0;
  EXPECT_THROW(run_pipeline(cfg_, data_), NumericError);
  EXPECT_TRUE(std::filesystem::exists(stage_checkpoint_path(cfg_, 1)));
  EXPECT_FALSE(std::filesystem::exists(stage_checkpoint_path(cfg_, 2)));
}

TEST_F(PipelineFixture, PreDistillWithZeroEpochsEqualsInitialization) {
  for (auto& s : cfg_.stages) s.epochs = 0;
  auto result = run_single_stage(SingleStageMode::pre_distill, cfg_, data_);
  Rng rng(cfg_.seed);
  Rng a_init = rng.split(10);
  SentenceEncoder<float> assistant(cfg_.assistant, a_init);
  Rng s_init = rng.split(20);
  auto expected = init_student_from_assistant(assistant, cfg_.student, s_init);
  EXPECT_EQ(serialize_checkpoint(*result.student), serialize_checkpoint(expected));
  EXPECT_TRUE(result.log.records().empty());
}

TEST_F(PipelineFixture, RandomInitBaselineTrainsAgainstTeacher) {
  auto result = run_single_stage(SingleStageMode::random_init, cfg_, data_);
  ASSERT_EQ(result.log.records().size(), 2u);
  EXPECT_GT(result.log.records().front().loss, result.log.records().back().loss);
  EXPECT_TRUE(std::filesystem::exists(cfg_.output_dir / "single_random_init.xdst"));
  EXPECT_TRUE(std::filesystem::exists(cfg_.output_dir / "metrics_random_init.jsonl"));
}

TEST_F(PipelineFixture, DepthSweepReturnsOneReportPerDepth) {
  for (auto& s : cfg_.stages) s.epochs = 1;
  auto reports = depth_sweep(cfg_, data_, {1});
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].depth, 1u);
  EXPECT_GE(reports[0].cross_lingual.retrieval_accuracy, 0.0);
  EXPECT_LE(reports[0].cross_lingual.retrieval_accuracy, 1.0);
  auto again = depth_sweep(cfg_, data_, {1});
  EXPECT_EQ(again[0].monolingual.spearman_x100, reports[0].monolingual.spearman_x100);
}

TEST_F(PipelineFixture, TeacherAdapterBridgesWidths) {
  data_.oracle.emplace(data_.lexicon, 24);
  cfg_.teacher_dim = 24;
  EXPECT_THROW(cfg_.validate(), ConfigError);
  cfg_.teacher_adapter = true;
  auto result = run_pipeline(cfg_, data_);
  EXPECT_EQ(result.log.records().size(), 8u);
  for (const auto& r : result.log.records()) EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(PipelineConfigJson, RoundTripAndPartialMerge) {
  auto cfg = PipelineConfig::toy();
  cfg.contrastive = ContrastiveVariant::hard_label;
  cfg.ce.teacher_weight_mode = TeacherWeightMode::softmax_normalized;
  cfg.stage2_tap = EmbeddingTap::per_token;
  cfg.stage(3).optimizer.learning_rate = 5e-4;
  const auto j = to_json(cfg);
  EXPECT_EQ(to_json(pipeline_config_from_json(j)), j);

  auto partial = pipeline_config_from_json(nlohmann::json::parse(R"({"seed": 7, "stage4": {"epochs": 3}})"));
  EXPECT_EQ(partial.seed, 7u);
  EXPECT_EQ(partial.stage(4).epochs, 3u);
  EXPECT_EQ(partial.stage(4).batch_size, 64u);
  EXPECT_EQ(partial.student.bottleneck_size, 16u);
}

TEST(PipelineConfigJson, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse(R"({"contrastive": "triplet"})")), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse(R"({"seed": "abc"})")), ConfigError);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse(R"({"stage2_tap": "cls"})")), ConfigError);
  auto cfg = PipelineConfig::toy();
  cfg.student.hidden = 32;
  cfg.student.heads = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = PipelineConfig::toy();
  cfg.ce.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(PipelineConfigJson, ToyDefaults) {
  auto cfg = PipelineConfig::toy();
  EXPECT_EQ(cfg.stage(1).epochs, 5u);
  EXPECT_EQ(cfg.stage(4).epochs, 15u);
  EXPECT_EQ(cfg.stage(2).batch_size, 64u);
  EXPECT_EQ(cfg.student.depth(), 4u);
  EXPECT_EQ(cfg.assistant.depth(), 4u);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(MetricsLogTest, EpochsMustIncreaseWithinStage) {
  TempDir dir;
  MetricsLog log(dir / "m.jsonl");
  log.append({1, 1, 0.5, {}, std::nullopt, std::nullopt});
  log.append({1, 2, 0.4, {}, std::nullopt, std::nullopt});
  log.append({2, 1, 0.3, {}, std::nullopt, std::nullopt});
  EXPECT_THROW(log.append({2, 1, 0.2, {}, std::nullopt, std::nullopt}), ContractViolation);
  EXPECT_EQ(log.stage_records(1).size(), 2u);
  auto first_line = read_file(dir / "m.jsonl").substr(0, read_file(dir / "m.jsonl").find('\n'));
  auto j = nlohmann::json::parse(first_line);
  EXPECT_TRUE(j["eval"]["retrieval_acc"].is_null());
}
