#include "bagknot/harness/pipeline.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace bagknot::harness {
namespace {

using bagsim::Family;

encoder::EncoderConfig small_encoder() {
  auto c = encoder::EncoderConfig::desk();
  c.d = 16;
  c.sa_levels = {{32, 0.3, 8, {8, 8}}, {8, 0.6, 8, {16}}};
  c.fp_widths = {{16}, {16}};
  c.head_widths = {16};
  c.epochs = 1;
  return c;
}

policy::PolicyConfig small_policy() {
  policy::PolicyConfig c;
  c.D = 16;
  c.layers = 1;
  c.heads = 2;
  c.H = 8;
  c.h_exec = 4;
  c.K = 10;
  c.epochs = 1;
  c.batch_size = 32;
  return c;
}

ExperimentConfig small_experiment(std::uint64_t seed = 5) {
  ExperimentConfig c;
  c.seed = seed;
  c.seen_templates = {0, 1};
  c.unseen_templates = {6};
  c.eval_templates = 1;
  c.eval_families = {Family::VC, Family::TF};
  c.corpus_per_cell = 1;
  c.corpus_length = 3;
  c.corpus_n_pc = 256;
  c.p_m = 0.05;
  c.demos = 2;
  c.n_pc = 256;
  c.n_enc = 128;
  c.eval_episodes = 2;
  c.encoder = small_encoder();
  c.policy = small_policy();
  c.validate();
  return c;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bagknot_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(ExperimentConfig, DefaultsFollowTheProtocol) {
  const ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.demo_families, (std::vector<Family>{Family::VC, Family::HC}));
  EXPECT_EQ(c.eval_families.size(), 5u);
  EXPECT_EQ(c.seen_templates.size(), 6u);
  EXPECT_EQ(c.unseen_templates.size(), 3u);
  EXPECT_EQ(c.demos, 54);
  EXPECT_EQ(c.eval_episodes, 9);
}

TEST(ExperimentConfig, RejectsOverlappingSplitsAndEmptyFamilies) {
  auto c = ExperimentConfig{};
  c.unseen_templates = {5, 6};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_kv(KeyValueConfig::parse("demo.families =\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_kv(KeyValueConfig::parse("templates.unseen = 0\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_kv(KeyValueConfig::parse("policy.epoch = 3\n")), ConfigError);
}

TEST(ExperimentConfig, ParsesKeyValueFile) {
  const auto c = ExperimentConfig::from_kv(KeyValueConfig::parse(
      "seed = 17\ntemplates.seen = 1, 2\ntemplates.unseen = 9\neval.families = DC, IF\n"
      "demo.count = 4\npolicy.D = 48\nencoder.epochs = 3\n"));
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.seen_templates, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.unseen_templates, (std::vector<int>{9}));
  EXPECT_EQ(c.eval_families, (std::vector<Family>{Family::DC, Family::IF}));
  EXPECT_EQ(c.demos, 4);
  EXPECT_EQ(c.policy.D, 48);
  EXPECT_EQ(c.encoder.epochs, 3);
  EXPECT_EQ(c.eval_split(false), (std::vector<int>{1, 2}));
}

TEST(SuccessTable, BookkeepingAndLayout) {
  SuccessTable t{"demo", {}};
  t.record("ours", Family::VC, true);
  t.record("ours", Family::HC, false);
  t.record("ours", Family::IF, true);
  const auto& r = t.row("ours");
  ASSERT_EQ(r.cells.size(), 4u);
  EXPECT_EQ(r.cells[0], (Cell{1, 2}));
  EXPECT_EQ(r.cells[1], (Cell{0, 0}));
  EXPECT_EQ(r.cells[3], (Cell{1, 1}));
  EXPECT_DOUBLE_EQ(r.cells[0].rate(), 0.5);
  EXPECT_EQ(SuccessTable::from_json(t.to_json()), t);
  EXPECT_NE(t.to_text().find("VC&HC"), std::string::npos);
  EXPECT_NE(t.to_text().find("1/2"), std::string::npos);
  EXPECT_THROW(static_cast<const SuccessTable&>(t).row("other"), NotFoundError);

  auto j = t.to_json();
  j["rows"][0]["cells"]["IF"]["successes"] = 3;
  EXPECT_THROW(SuccessTable::from_json(j), IntegrityError);
}

TEST(Ablation, FamilyFilterAndPairRate) {
  std::vector<bagsim::Sequence> seqs(5);
  const Family fams[] = {Family::VC, Family::TF, Family::IF, Family::DC, Family::TF};
  for (int i = 0; i < 5; ++i) {
    seqs[static_cast<std::size_t>(i)].id = i;
    seqs[static_cast<std::size_t>(i)].family = fams[i];
    seqs[static_cast<std::size_t>(i)].frames.resize(3);
  }
  const auto kept = filter_families(seqs, {Family::VC, Family::HC, Family::DC});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].family, Family::VC);
  EXPECT_EQ(kept[1].family, Family::DC);
  EXPECT_EQ(kept[1].id, 1);
  // expected pair count is preserved: p' * n'(n'-1) = p * n(n-1)
  const double p = matched_pair_rate(0.001, 15, 6);
  EXPECT_NEAR(p * 6 * 5, 0.001 * 15 * 14, 1e-15);
  EXPECT_EQ(matched_pair_rate(0.5, 100, 3), 1.0);
  EXPECT_THROW(matched_pair_rate(0.1, 10, 1), InputError);
}

TEST(EvalMatrix, ExpertRowSucceedsAndZeroRowFails) {
  auto cfg = small_experiment();
  cfg.eval_families = {Family::VC, Family::HC, Family::DC, Family::TF, Family::IF};
  cfg.eval_episodes = 1;
  const auto enc = encoder::EncoderWeights::initial(small_encoder());
  const auto ref = matcher::make_reference(reference_spec(cfg).frame(), enc);
  const auto zero = policy::zero_policy(small_policy());

  EvalOptions expert;
  expert.method = "expert";
  expert.rollout.controller = policy::Controller::ExpertReplay;
  expert.rollout.n_enc = cfg.n_enc;
  const auto e = eval_matrix(zero, enc, ref, cfg, expert);
  for (const auto* t : {&e.seen, &e.unseen}) {
    const auto& row = t->row("expert");
    EXPECT_EQ(row.cells[0], (Cell{2, 2}));  // VC and HC share a column
    for (std::size_t c = 1; c < 4; ++c) EXPECT_EQ(row.cells[c], (Cell{1, 1}));
  }

  EvalOptions ours;
  ours.rollout.n_enc = cfg.n_enc;
  const auto z = eval_matrix(zero, enc, ref, cfg, ours);
  for (const auto* t : {&z.seen, &z.unseen})
    for (const auto& cell : t->row("ours").cells) {
      EXPECT_EQ(cell.successes, 0);
      EXPECT_GT(cell.attempts, 0);
    }
}

TEST(EvalMatrix, RejectsMismatchedCheckpoints) {
  const auto cfg = small_experiment();
  const auto enc = encoder::EncoderWeights::initial(small_encoder());
  auto other_cfg = small_encoder();
  other_cfg.seed = 77;
  const auto other = encoder::EncoderWeights::initial(other_cfg);
  const auto ref = matcher::make_reference(reference_spec(cfg).frame(), other);
  EvalOptions opt;
  opt.rollout.n_enc = cfg.n_enc;
  EXPECT_THROW(eval_matrix(policy::zero_policy(small_policy()), enc, ref, cfg, opt), ConfigError);
}

TEST(EvalMatrix, EpisodeSeedsAreDistinctPerCell) {
  const auto cfg = small_experiment();
  std::set<std::uint64_t> seeds;
  for (auto f : bagsim::kAllFamilies)
    for (int i = 0; i < 9; ++i) seeds.insert(eval_episode_seed(cfg, f, i));
  EXPECT_EQ(seeds.size(), 45u);
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("pipeline"));
    tables_ = new SplitTables(Experiment(small_experiment(), *root_).run());
    ablation_ = new SuccessTable(run_ablations(small_experiment(), *root_));
  }
  static void TearDownTestSuite() {
    delete root_;
    delete tables_;
    delete ablation_;
  }
  static fs::path* root_;
  static SplitTables* tables_;
  static SuccessTable* ablation_;
};

fs::path* PipelineTest::root_ = nullptr;
SplitTables* PipelineTest::tables_ = nullptr;
SuccessTable* PipelineTest::ablation_ = nullptr;

TEST_F(PipelineTest, StagesRecordSeedsAndInputs) {
  for (const auto& s : Experiment::kStages) {
    const auto rec = io::read_json(*root_ / s / "stage.json");
    EXPECT_EQ(rec.at("stage"), s);
    EXPECT_TRUE(rec.contains("seed"));
    EXPECT_EQ(rec.at("output_hash"), file_hash(*root_ / s / "manifest.json"));
  }
  const auto pol = io::read_json(*root_ / "train-policy" / "stage.json");
  EXPECT_EQ(pol.at("inputs").at("demos"), file_hash(*root_ / "demos" / "manifest.json"));
}

TEST_F(PipelineTest, CellAttemptsMatchConfig) {
  const auto cfg = small_experiment();
  for (const auto* t : {&tables_->seen, &tables_->unseen}) {
    const auto& row = t->row("ours");
    EXPECT_EQ(row.cells[0].attempts, cfg.eval_episodes);  // VC only
    EXPECT_EQ(row.cells[1].attempts, 0);                  // DC not evaluated here
    EXPECT_EQ(row.cells[2].attempts, cfg.eval_episodes);
  }
}

TEST_F(PipelineTest, ResumeRerunsOnlyMissingStages) {
  fs::remove_all(*root_ / "eval");
  std::vector<std::string> ran;
  const auto t = Experiment(small_experiment(), *root_, [&](const std::string& s) {
                   if (s.find("] running") != std::string::npos) ran.push_back(s);
                 }).run();
  EXPECT_EQ(ran, (std::vector<std::string>{"[eval] running"}));
  EXPECT_EQ(t, *tables_);
}

TEST_F(PipelineTest, ChangedSettingInvalidatesDownstream) {
  const auto root = scratch("pipeline_copy");
  fs::copy(*root_, root, fs::copy_options::recursive);
  auto cfg = small_experiment();
  cfg.policy.lr = 5e-4;
  std::vector<std::string> ran;
  Experiment(cfg, root, [&](const std::string& s) {
    if (s.find("] running") != std::string::npos) ran.push_back(s);
  }).run();
  EXPECT_EQ(ran, (std::vector<std::string>{"[train-policy] running", "[eval] running"}));
  fs::remove_all(root);
}

TEST_F(PipelineTest, AblationLayoutAndFilter) {
  ASSERT_EQ(ablation_->rows.size(), 3u);
  EXPECT_EQ(ablation_->rows[0].method, "ours");
  EXPECT_EQ(ablation_->rows[1].method, "ours-reidentify");
  EXPECT_EQ(ablation_->rows[2].method, "ours-no-TF-IF-encoder");
  for (const auto& r : ablation_->rows) {
    ASSERT_EQ(r.cells.size(), 4u);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(r.cells[c].attempts, ablation_->rows[0].cells[c].attempts);
  }
  EXPECT_EQ(ablation_->rows[0], tables_->unseen.row("ours"));
  const auto ds = corrdata::load_dataset(*root_ / "ablate" / "pairs-no-tf-if");
  ASSERT_FALSE(ds.frames.empty());
  for (const auto& f : ds.frames) EXPECT_TRUE(f.family != Family::TF && f.family != Family::IF);
}

TEST_F(PipelineTest, SplitHygieneScan) {
  const Experiment e(small_experiment(), *root_);
  EXPECT_NO_THROW(e.check_split_hygiene());
  const auto root = scratch("pipeline_tampered");
  fs::copy(*root_, root, fs::copy_options::recursive);
  auto m = io::read_json(root / "demos" / "manifest.json");
  m["demos"][0]["template_id"] = 6;
  io::write_json(root / "demos" / "manifest.json", m);
  EXPECT_THROW(Experiment(small_experiment(), root).check_split_hygiene(), IntegrityError);
  fs::remove_all(root);
}

TEST_F(PipelineTest, ReportCollectsTables) {
  const auto r = report(*root_);
  EXPECT_EQ(SplitTables::from_json(r.json.at("eval")), *tables_);
  EXPECT_EQ(SuccessTable::from_json(r.json.at("ablate")), *ablation_);
  EXPECT_NE(r.text.find("ours-reidentify"), std::string::npos);
  EXPECT_THROW(report(scratch("empty")), NotFoundError);
}

TEST(Pipeline, RepeatedRunsAreIdentical) {
  const auto a = scratch("repeat_a");
  const auto b = scratch("repeat_b");
  const auto ta = run_experiment(small_experiment(9), a);
  const auto tb = run_experiment(small_experiment(9), b);
  EXPECT_EQ(ta, tb);
  for (const auto& s : Experiment::kStages) EXPECT_EQ(slurp(a / s / "manifest.json"), slurp(b / s / "manifest.json")) << s;
  for (const auto& f : fs::directory_iterator(a / "train-policy"))
    EXPECT_EQ(slurp(f.path()), slurp(b / "train-policy" / f.path().filename())) << f.path();
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, StageFailureNamesTheStage) {
  auto cfg = small_experiment();
  cfg.p_m = 1e-9;  // no pairs, so encoder training has nothing to learn from
  try {
    run_experiment(cfg, scratch("failing"));
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "train-encoder");
  }
}

}  // namespace
}  // namespace bagknot::harness
