#include <gtest/gtest.h>

#include <fstream>

#include "bql/experiment.hpp"
#include "support.hpp"

using namespace bql;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.model = model_preset(2);
  c.n_train = 200;
  c.n_test = 400;
  c.replications = 3;
  c.sweep = {"lambda", {0.5, 1.0}};
  LearnerSpec ridge;
  ridge.kind = LearnerKind::ridge;
  c.outcome2 = c.propensity2 = c.outcome1 = c.propensity1 = ridge;
  c.seed = 17;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("bql_test_experiment_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) { return io::read_text(p); }

}  // namespace

TEST(Experiment, OneRowPerMethodValueAndReplication) {
  auto c = small_config();
  auto rows = run_replication(c, 0);
  ASSERT_EQ(rows.size(), c.methods.size() * c.sweep.values.size());
  for (const auto& r : rows) {
    EXPECT_EQ(r.status, "ok") << r.message;
    EXPECT_EQ(r.rep, 0u);
    EXPECT_EQ(r.freq1.size(), c.model.catalog.cand1.size());
    EXPECT_EQ(r.freq2.size(), c.model.catalog.cand2.size());
    EXPECT_NEAR(r.profit, r.utility - r.value * r.cost, 1e-9);
  }
  auto again = run_replication(c, 0);
  for (std::size_t k = 0; k < rows.size(); ++k) EXPECT_EQ(rows[k].profit, again[k].profit);
}

TEST(Experiment, SummaryMatchesRawMeans) {
  auto c = small_config();
  auto out = fresh_dir("summary");
  auto res = run_experiment(c, out);
  EXPECT_EQ(res.rows.size(), 3 * 2 * 3u);
  EXPECT_EQ(res.computed_tasks, 3u);
  EXPECT_EQ(res.failed_rows, 0u);
  for (const auto& s : res.summary) {
    if (s.metric != "profit") continue;
    double sum = 0;
    std::size_t k = 0;
    for (const auto& r : res.rows)
      if (r.method == s.method && r.value == s.value) sum += r.profit, ++k;
    EXPECT_EQ(k, 3u);
    EXPECT_NEAR(s.stat.mean, sum / 3.0, 1e-12);
  }
  for (const char* f : {"results.csv", "summary.csv", "timing.csv", "config.json"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  fs::remove_all(out);
}

TEST(Experiment, ResumeSkipsFinishedTasksAndRejectsOtherConfigs) {
  auto c = small_config();
  auto out = fresh_dir("resume");
  run_experiment(c, out);
  const auto first = slurp(out / "results.csv");
  auto again = run_experiment(c, out);
  EXPECT_EQ(again.computed_tasks, 0u);
  EXPECT_EQ(again.skipped_tasks, 3u);
  EXPECT_EQ(slurp(out / "results.csv"), first);

  // Drop the last replication's rows and resume: only that task is recomputed.
  std::istringstream in(first);
  std::string line, kept;
  while (std::getline(in, line))
    if (io::split_csv_line(line)[4] != "2") kept += line + "\n";
  io::write_atomic(out / "results.csv", kept);
  auto partial = run_experiment(c, out);
  EXPECT_EQ(partial.computed_tasks, 1u);
  EXPECT_EQ(slurp(out / "results.csv"), first);

  auto other = c;
  other.seed = 18;
  EXPECT_THROW(run_experiment(other, out), ConfigError);
  fs::remove_all(out);
}

TEST(Experiment, ParallelRunsAreByteIdentical) {
  auto c = small_config();
  auto a = fresh_dir("jobs1"), b = fresh_dir("jobs3");
  run_experiment(c, a, 1);
  run_experiment(c, b, 3);
  for (const char* f : {"results.csv", "summary.csv", "config.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, NTrainSweep) {
  auto c = small_config();
  c.methods = {"bql"};
  c.replications = 2;
  c.sweep = {"n_train", {100, 200}};
  auto out = fresh_dir("ntrain");
  auto res = run_experiment(c, out);
  EXPECT_EQ(res.computed_tasks, 4u);
  EXPECT_EQ(res.rows.size(), 4u);
  fs::remove_all(out);
}

TEST(Experiment, ConfigParsing) {
  io::json j{{"model", 2},           {"methods", {"bql", "dense"}}, {"n_train", 100}, {"replications", 2},
             {"sweep", {{"parameter", "lambda"}, {"values", {1.0}}}}, {"seed", 5}};
  auto c = experiment_config_from(j);
  EXPECT_EQ(c.model.id, 2);
  EXPECT_EQ(c.methods.size(), 2u);
  EXPECT_EQ(c.seed, 5u);
  auto back = experiment_config_from(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));

  auto bad = j;
  bad.erase("seed");
  EXPECT_THROW(experiment_config_from(bad), ConfigError);
  bad = j;
  bad["replicates"] = 3;
  EXPECT_THROW(experiment_config_from(bad), ConfigError);
  bad = j;
  bad["methods"] = {"bql", "bql"};
  EXPECT_THROW(experiment_config_from(bad), ConfigError);
  bad = j;
  bad["methods"] = {"tree"};
  EXPECT_THROW(experiment_config_from(bad), ConfigError);
  bad = j;
  bad["sweep"] = {{"parameter", "n_train"}, {"values", {10.5}}};
  EXPECT_THROW(experiment_config_from(bad), ConfigError);
  bad = j;
  bad["model"] = 9;
  EXPECT_THROW(experiment_config_from(bad), ConfigError);
}
