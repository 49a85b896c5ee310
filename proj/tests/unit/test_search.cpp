#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

#include "celmnav/error.hpp"
#include "celmnav/search.hpp"
#include "toy_data.hpp"

using namespace celmnav;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

std::size_t count_entries(const fs::path& path, const std::string& type) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += nlohmann::json::parse(line).at("type") == type;
  return n;
}

RunRecord record(int depth, Activation a, double score, int replicate = 0) {
  RunRecord r;
  r.spec.depth = depth;
  r.spec.activation = a;
  r.replicate = replicate;
  r.ok = true;
  r.test_eps_n = score;
  r.val_eps_n = score;
  return r;
}

}  // namespace

TEST(CelmSearch, SingleRunIsSelected) {
  const SplitSet data = toy::splits(LabelStrategy::DeltaRange);
  ArchSpec s;
  s.depth = 2;
  const auto grid = with_seeds({s}, 1, 1);
  const CelmSearchResult r = run_celm_search(data, grid, {});
  EXPECT_TRUE(r.best.ok);
  EXPECT_EQ(r.best.spec.key(), s.key());
  EXPECT_EQ(r.best.seed, grid[0].seed);
}

TEST(CelmSearch, DeskGridRecordsEveryRunAndResumes) {
  const SplitSet data = toy::splits(LabelStrategy::DeltaRange);
  const auto grid = with_seeds(enumerate_specs(LabelStrategy::DeltaRange, GridAxes::desk()), 64, 2);
  ASSERT_EQ(grid.size(), 24u);
  const fs::path dir = fresh_dir("celmnav_search_desk");
  CelmSearchOptions opt;
  opt.run_dir = dir;
  opt.master_seed = 64;
  const CelmSearchResult first = run_celm_search(data, grid, opt);
  EXPECT_EQ(first.reused, 0);

  const auto rows = read_records_csv(dir / "records.csv");
  ASSERT_EQ(rows.size(), 24u);
  EXPECT_EQ(count_entries(dir / "manifest.jsonl", "celm_run"), 24u);
  EXPECT_EQ(count_entries(dir / "manifest.jsonl", "selection"), 1u);
  // The argmin recomputed from the CSV matches the selection.
  const RunRecord* best = nullptr;
  for (const auto& r : rows)
    if (r.ok && (!best || r.test_eps_n < best->test_eps_n)) best = &r;
  ASSERT_NE(best, nullptr);
  EXPECT_EQ(best->key(), first.best.key());
  EXPECT_EQ(best->test_eps_n, first.best.test_eps_n);

  const CelmSearchResult second = run_celm_search(data, grid, opt);
  EXPECT_EQ(second.reused, 24);
  EXPECT_EQ(second.best.key(), first.best.key());
  EXPECT_EQ(read_records_csv(dir / "records.csv").size(), 24u);
  fs::remove_all(dir);
}

TEST(CelmSearch, FailuresAreRecorded) {
  const SplitSet data = toy::splits(LabelStrategy::DeltaRange);
  ArchSpec good, bad;
  good.depth = 1;
  bad.depth = 2;
  bad.c_grid.clear();
  const CelmSearchResult r = run_celm_search(data, with_seeds({bad, good}, 3, 1), {});
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_FALSE(r.records[0].ok);
  EXPECT_FALSE(r.records[0].error.empty());
  EXPECT_EQ(r.best.spec.depth, 1);
  EXPECT_THROW(run_celm_search(data, with_seeds({bad}, 3, 1), {}), Error);
}

TEST(Selection, TiesGoToTheEarlierSpecThenReplicate) {
  std::vector<RunRecord> rs = {record(2, Activation::Tanh, 5.0), record(1, Activation::Tanh, 5.0),
                               record(1, Activation::Relu, 5.0, 1), record(1, Activation::Relu, 5.0, 0),
                               record(3, Activation::Relu, 6.0)};
  const RunRecord best = select_best(rs, SelectOn::Test);
  EXPECT_EQ(best.spec.depth, 1);
  EXPECT_EQ(best.spec.activation, Activation::Relu);
  EXPECT_EQ(best.replicate, 0);
  rs[4].val_eps_n = 1.0;
  EXPECT_EQ(select_best(rs, SelectOn::Val).spec.depth, 3);
  rs[4].ok = false;
  EXPECT_NE(select_best(rs, SelectOn::Val).spec.depth, 3);
}

TEST(Selection, SeededRerunIsIdentical) {
  const SplitSet data = toy::splits(LabelStrategy::WSpherical);
  const auto grid = with_seeds(enumerate_specs(LabelStrategy::WSpherical, GridAxes::desk()), 9, 1);
  const std::vector<SeededSpec> few(grid.begin(), grid.begin() + 4);
  const auto a = run_celm_search(data, few, {}), b = run_celm_search(data, few, {});
  EXPECT_EQ(a.best.key(), b.best.key());
  for (std::size_t i = 0; i < few.size(); ++i) EXPECT_EQ(a.records[i].test_eps_n, b.records[i].test_eps_n);
}

TEST(RecordsCsv, RoundTrip) {
  RunRecord r = record(2, Activation::NRelu, 12.5, 1);
  r.dataset_id = "H3";
  r.seed = 1234567890123ULL;
  r.c_star = 1e-3;
  r.solve_count = 9;
  RunRecord f = record(1, Activation::None, 0);
  f.ok = false;
  f.error = "Cholesky failed, try smaller C";
  const fs::path p = fs::temp_directory_path() / "celmnav_records.csv";
  write_records_csv({r, f}, p);
  const auto back = read_records_csv(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].key(), r.key());
  EXPECT_EQ(back[0].seed, r.seed);
  EXPECT_EQ(back[0].test_eps_n, 12.5);
  EXPECT_FALSE(back[1].ok);
  EXPECT_FALSE(back[1].error.empty());
  fs::remove(p);
}

TEST(CnnBootstrap, DeskGridPicksLowestValidationLoss) {
  const SplitSet data = toy::splits(LabelStrategy::DeltaRange);
  ArchSpec s;
  s.depth = 2;
  CnnGrid grid{{16}, {1e-3, 1e-4}, 1, 2};
  const fs::path dir = fresh_dir("celmnav_bootstrap");
  const BootstrapResult r = bootstrap_cnn(data, s, grid, 64, dir);
  ASSERT_EQ(r.runs.size(), 2u);
  const auto& low = r.runs[0].val_loss <= r.runs[1].val_loss ? r.runs[0] : r.runs[1];
  EXPECT_EQ(r.best_record.learning_rate, low.learning_rate);
  EXPECT_EQ(r.best.val_loss, low.val_loss);
  EXPECT_EQ(count_entries(dir / "manifest.jsonl", "cnn_run"), 2u);
  const BootstrapResult again = bootstrap_cnn(data, s, grid, 64);
  EXPECT_EQ(again.best.val_loss, r.best.val_loss);
  fs::remove_all(dir);
}

TEST(Hybrids, TwentyDatasetsShareThreeEncoders) {
  std::map<std::string, CnnBest> bests;
  double score = 10;
  for (const char* body : {"D", "H", "L", "P"})
    for (LabelStrategy st : kAllStrategies) {
      CnnBest b;
      b.strategy = st;
      b.score = score -= 0.25;
      bests[dataset_id(body, st)] = b;
    }
  const HybridPlan plan = plan_hybrids(bests);
  std::set<std::string> shared;
  for (const auto& [id, src] : plan.hcelm3_source) shared.insert(src);
  EXPECT_EQ(shared.size(), 3u);
  EXPECT_EQ(plan.group_best.size(), 3u);
  for (const auto& [id, src] : plan.hcelm_source) EXPECT_EQ(id, src);
  // Best (lowest) score in each group comes from body P, the last inserted.
  EXPECT_EQ(plan.group_best.at(FrameGroup::ImageObservables), "P1");
  EXPECT_EQ(plan.hcelm3_source.at("D3"), plan.hcelm3_source.at("H2"));
}

TEST(Hybrids, SingleDatasetTransfersItsOwnEncoder) {
  const SplitSet data = toy::splits(LabelStrategy::DeltaRange);
  ArchSpec s;
  s.depth = 1;
  s.activation = Activation::Tanh;
  CnnBest b;
  b.strategy = LabelStrategy::DeltaRange;
  b.checkpoint.spec = s;
  b.checkpoint.params = init_cnn(s, 5);
  const std::map<std::string, CnnBest> bests = {{data.train.id, b}};
  const auto models = build_hybrids(bests, {{data.train.id, &data}}, kPaperCGrid);
  ASSERT_EQ(models.size(), 2u);
  const HybridModel& h = models.at({data.train.id, MethodTag::HCELM});
  const HybridModel& h3 = models.at({data.train.id, MethodTag::HCELM3});
  EXPECT_EQ(h.encoder_source, h3.encoder_source);
  EXPECT_EQ(h.params.head.beta, h3.params.head.beta);
  EXPECT_EQ(h.params.layers[0].weights, b.checkpoint.params.layers[0].weights);
  EXPECT_EQ(h.params.layers[0].biases, b.checkpoint.params.layers[0].biases);
  EXPECT_EQ(h.encoder_hash, encoder_hash(b.checkpoint.params));
  EXPECT_THROW(build_hybrids({}, {{data.train.id, &data}}, kPaperCGrid), Error);
}
