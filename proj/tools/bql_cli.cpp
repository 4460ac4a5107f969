#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "bql/baselines.hpp"
#include "bql/bql.hpp"
#include "bql/deploy.hpp"
#include "bql/eval.hpp"
#include "bql/experiment.hpp"
#include "bql/infer.hpp"
#include "bql/io.hpp"
#include "bql/synth.hpp"

namespace fs = std::filesystem;
using bql::io::json;

namespace {

enum Exit { kOk = 0, kFail = 1, kConfig = 2, kData = 3, kNumeric = 4 };

void setup_logging() {
  auto log = spdlog::stderr_color_mt("bql");
  spdlog::set_default_logger(log);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("BQL_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

void emit(const json& j, const std::string& out) {
  if (out.empty() || out == "-") std::cout << j.dump(2) << "\n";
  else bql::io::write_json(out, j);
}

bql::ModelPreset load_preset(int model, const std::string& preset_file) {
  if (!preset_file.empty()) return bql::io::preset_from(bql::io::read_json(preset_file), preset_file);
  if (model == 0) throw bql::ConfigError("a model preset (--model) or preset file (--preset) is required");
  return bql::model_preset(model);
}

/// Subject covariates from a CSV whose header names columns s1_k and s2_k; other columns are ignored.
std::vector<std::pair<std::vector<double>, std::vector<double>>> read_subjects(const std::string& path, std::size_t d1,
                                                                                std::size_t d2) {
  std::ifstream in(path);
  if (!in) throw bql::DataError("cannot open subject file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw bql::DataError(path + ": empty file");
  auto head = bql::io::split_csv_line(line);
  std::vector<std::size_t> c1(d1, head.size()), c2(d2, head.size());
  for (std::size_t k = 0; k < head.size(); ++k) {
    for (std::size_t j = 0; j < d1; ++j)
      if (head[k] == "s1_" + std::to_string(j + 1)) c1[j] = k;
    for (std::size_t j = 0; j < d2; ++j)
      if (head[k] == "s2_" + std::to_string(j + 1)) c2[j] = k;
  }
  for (auto c : c1)
    if (c == head.size()) throw bql::DataError(path + ": missing a stage-1 covariate column s1_k");
  for (auto c : c2)
    if (c == head.size()) throw bql::DataError(path + ": missing a stage-2 covariate column s2_k");
  std::vector<std::pair<std::vector<double>, std::vector<double>>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = bql::io::split_csv_line(line);
    const std::string where = path + " line " + std::to_string(lineno);
    if (cells.size() != head.size()) throw bql::DimensionError(where + ": wrong number of fields");
    std::vector<double> s1, s2;
    for (auto c : c1) s1.push_back(bql::io::parse_double(cells[c], where));
    for (auto c : c2) s2.push_back(bql::io::parse_double(cells[c], where));
    out.emplace_back(std::move(s1), std::move(s2));
  }
  return out;
}

json frequencies_json(const bql::FrequencyTable& f) {
  return json{{"stage1", f.stage1}, {"stage2", f.stage2}, {"p_a1", f.p_a1}, {"p_a2", f.p_a2}};
}

json costs_json(const bql::PathCosts& c) {
  return json{{"c1c", c.c1c}, {"c1t", c.c1t}, {"c2c", c.c2c}, {"c2t", c.c2t}, {"total", c.total()}};
}

int run_oracle_instance(const bql::DiscreteInstance& in, double lambda, json& report) {
  auto bi = bql::backward_induction_optimal(in, lambda);
  auto bf = bql::brute_force_optimal(in, lambda);
  const double ev = bql::exact_profit(in, bi.regime, lambda).profit;
  const bool pass = std::abs(bi.profit - bf.profit) <= 1e-10 && std::abs(ev - bi.profit) <= 1e-10;
  report = json{{"backward_induction", bi.profit},
                {"brute_force", bf.profit},
                {"induced_regime_exact", ev},
                {"policies_enumerated", bf.evaluated},
                {"pass", pass}};
  return pass ? kOk : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Budget-constrained two-stage Q-learning: simulate, fit, deploy, evaluate, infer, oracle checks and experiments"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Draw a training dataset from a model preset");
  int sim_model = 0;
  std::string sim_preset, sim_out, sim_dump;
  std::size_t sim_n = 500;
  std::uint64_t sim_seed = 1;
  sim->add_option("--model", sim_model, "Model preset id (1-7)");
  sim->add_option("--preset", sim_preset, "Preset JSON file");
  sim->add_option("--n", sim_n, "Number of trajectories");
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--out", sim_out, "Dataset CSV path");
  sim->add_option("--dump-preset", sim_dump, "Write the preset as JSON to this path ('-' for stdout)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a regime to a dataset");
  std::string fit_data, fit_problem, fit_config, fit_out, fit_method = "bql";
  int fit_model = 0;
  std::optional<double> fit_lambda, fit_penalty;
  std::optional<std::uint64_t> fit_seed;
  fit->add_option("--data", fit_data, "Dataset CSV")->required();
  fit->add_option("--model", fit_model, "Take catalog and costs from this model preset");
  fit->add_option("--problem", fit_problem, "JSON file with 'catalog' and 'costs'");
  fit->add_option("--config", fit_config, "Fitting configuration JSON");
  fit->add_option("--method", fit_method, "bql, dense or sparse")->check(CLI::IsMember({"bql", "dense", "sparse"}));
  fit->add_option("--lambda", fit_lambda, "Override the cost scale");
  fit->add_option("--penalty", fit_penalty, "Sparse penalty (default: cross-validated)");
  fit->add_option("--seed", fit_seed, "Override the fitting seed");
  fit->add_option("--out", fit_out, "Regime JSON path ('-' for stdout)");

  // deploy
  auto* dep = app.add_subcommand("deploy", "Apply a regime to subjects whose covariates are available offline");
  std::string dep_regime, dep_data, dep_out;
  dep->add_option("--regime", dep_regime, "Regime JSON")->required();
  dep->add_option("--data", dep_data, "Subject CSV with columns s1_k and s2_k")->required();
  dep->add_option("--out", dep_out, "Decision CSV path (default stdout)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Profit of a regime under a model preset or by IPW on a dataset");
  std::string ev_regime, ev_preset, ev_data, ev_out;
  int ev_model = 0;
  std::size_t ev_ntest = 5000;
  std::uint64_t ev_seed = 1;
  std::optional<double> ev_oracle;
  ev->add_option("--regime", ev_regime, "Regime JSON")->required();
  ev->add_option("--model", ev_model, "Model preset id");
  ev->add_option("--preset", ev_preset, "Preset JSON file");
  ev->add_option("--data", ev_data, "Dataset CSV for IPW evaluation");
  ev->add_option("--n-test", ev_ntest, "Monte Carlo test subjects");
  ev->add_option("--seed", ev_seed, "Test seed");
  ev->add_option("--oracle-profit", ev_oracle, "Report regret against this optimal profit");
  ev->add_option("--out", ev_out, "Metrics JSON path (default stdout)");

  // infer
  auto* inf = app.add_subcommand("infer", "Plug-in covariances and confidence intervals for a fitted regime");
  std::string inf_regime, inf_data, inf_out;
  double inf_level = 0.95;
  inf->add_option("--regime", inf_regime, "Regime JSON (kind bql)")->required();
  inf->add_option("--data", inf_data, "Dataset CSV the regime was fitted on")->required();
  inf->add_option("--level", inf_level, "Confidence level");
  inf->add_option("--out", inf_out, "Report JSON path (default stdout)");

  // oracle
  auto* orc = app.add_subcommand("oracle", "Compare backward induction with brute-force search on discrete instances");
  std::string orc_instance, orc_out;
  std::size_t orc_random = 0;
  std::uint64_t orc_seed = 1;
  std::optional<double> orc_lambda;
  orc->add_option("--instance", orc_instance, "Discrete instance JSON");
  orc->add_option("--random", orc_random, "Check this many random instances");
  orc->add_option("--seed", orc_seed, "Seed for random instances");
  orc->add_option("--lambda", orc_lambda, "Override the instance's cost scale");
  orc->add_option("--out", orc_out, "Report JSON path (default stdout)");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Replicated simulation study from a JSON config");
  std::string exp_config, exp_out = "results";
  std::size_t exp_jobs = 1;
  std::optional<std::uint64_t> exp_seed;
  exp->add_option("--config", exp_config, "Experiment config JSON")->required();
  exp->add_option("--out", exp_out, "Output directory");
  exp->add_option("--jobs", exp_jobs, "Worker threads")->check(CLI::PositiveNumber);
  exp->add_option("--seed", exp_seed, "Override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) {
      auto p = load_preset(sim_model, sim_preset);
      if (!sim_dump.empty()) emit(bql::io::to_json(p), sim_dump);
      if (!sim_out.empty()) {
        auto d = bql::generate(p.spec, sim_n, sim_seed);
        bql::io::write_dataset(sim_out, d);
        spdlog::info("wrote {} trajectories to {}", d.size(), sim_out);
      } else if (sim_dump.empty()) {
        std::cout << bql::io::dataset_csv(bql::generate(p.spec, sim_n, sim_seed));
      }
      return kOk;
    }

    if (*fit) {
      auto data = bql::io::read_dataset(fit_data);
      bql::AssessmentCatalog cat;
      bql::CostSpec costs;
      if (!fit_problem.empty()) {
        const json pj = bql::io::read_json(fit_problem);
        bql::io::Fields f(pj, fit_problem);
        cat = bql::io::catalog_from(f.at("catalog"));
        costs = bql::io::costs_from(f.at("costs"));
        f.finish();
      } else if (fit_model) {
        auto p = bql::model_preset(fit_model);
        cat = p.catalog;
        costs = p.costs;
      } else {
        throw bql::ConfigError("fit needs --problem or --model for the catalog and costs");
      }
      if (fit_lambda) costs.lambda = *fit_lambda;
      bql::BqlConfig cfg = fit_config.empty() ? bql::BqlConfig{} : bql::io::config_from(bql::io::read_json(fit_config));
      if (fit_seed) cfg.seed = *fit_seed;
      json out;
      if (fit_method == "bql") {
        out = bql::io::to_json(bql::fit_bql(data, cat, costs, cfg));
      } else {
        auto r = fit_method == "dense" ? bql::fit_dense(data, cat, costs, cfg) : bql::fit_sparse(data, cat, costs, fit_penalty, cfg);
        for (const auto& w : r.warnings) spdlog::warn("{}", w);
        out = bql::io::to_json(r);
      }
      emit(out, fit_out);
      spdlog::info("fitted {} regime on {} trajectories", fit_method, data.size());
      return kOk;
    }

    if (*dep) {
      auto reg = bql::io::regime_from(bql::io::read_json(dep_regime));
      const auto& cat = reg->catalog();
      auto costs = bql::io::costs_from(bql::io::read_json(dep_regime).at("costs"));
      auto subjects = read_subjects(dep_data, cat.d1, cat.d2);
      std::string csv = "row,j1,a1,j2,a2,assessment_cost,treatment_cost,total_cost\n";
      std::size_t extrapolated = 0;
      for (std::size_t i = 0; i < subjects.size(); ++i) {
        bql::RowOracle o(subjects[i].first, subjects[i].second);
        auto r = bql::deploy(*reg, o);
        auto pc = bql::path_costs(r, costs);
        extrapolated += r.extrapolation ? 1 : 0;
        csv += std::to_string(i) + "," + std::to_string(r.j1 + 1) + "," + std::to_string(r.a1) + "," +
               std::to_string(r.j2 + 1) + "," + std::to_string(r.a2) + "," + bql::io::format_double(pc.c1c + pc.c2c) +
               "," + bql::io::format_double(pc.c1t + pc.c2t) + "," + bql::io::format_double(pc.total()) + "\n";
      }
      if (extrapolated) spdlog::warn("{} of {} subjects lie outside the training design range", extrapolated, subjects.size());
      if (dep_out.empty()) std::cout << csv;
      else bql::io::write_atomic(dep_out, csv);
      return kOk;
    }

    if (*ev) {
      const json rj = bql::io::read_json(ev_regime);
      auto reg = bql::io::regime_from(rj);
      auto costs = bql::io::costs_from(rj.at("costs"));
      json out;
      if (!ev_data.empty()) {
        auto data = bql::io::read_dataset(ev_data);
        bql::require_valid(data);
        auto d = bql::DataMatrices::from(data);
        auto cfg = bql::io::config_from(rj.at("config"));
        auto plan = bql::make_folds(data.size(), cfg.folds, bql::derive_seed(cfg.seed, "ipw"));
        auto g1 = bql::fit_crossfit(d.s1, d.a1, plan, cfg.propensity1, cfg.propensity_clip, bql::derive_seed(cfg.seed, "ipw-g1"));
        auto g2 = bql::fit_crossfit(bql::design::nuisance2(d), d.a2, plan, cfg.propensity2, cfg.propensity_clip,
                                    bql::derive_seed(cfg.seed, "ipw-g2"));
        auto e = bql::ipw_utility(data, *reg, g1.oof, g2.oof, costs);
        out = json{{"method", "ipw"},
                   {"utility", e.utility},
                   {"profit", bql::profit_lambda(e.utility, e.costs, costs.lambda)},
                   {"costs", costs_json(e.costs)},
                   {"lambda", costs.lambda}};
      } else {
        auto p = load_preset(ev_model, ev_preset);
        auto est = bql::true_profit(p.spec, *reg, costs, ev_ntest, ev_seed);
        out = json{{"method", "simulation"},
                   {"utility", est.utility.mean},
                   {"profit", est.profit.mean},
                   {"profit_se", est.profit.se},
                   {"costs", costs_json(est.mean_costs)},
                   {"frequencies", frequencies_json(est.frequencies)},
                   {"extrapolated", est.extrapolated},
                   {"lambda", costs.lambda}};
        if (ev_oracle) out["regret"] = *ev_oracle - est.profit.mean;
      }
      emit(out, ev_out);
      return kOk;
    }

    if (*inf) {
      auto stored = bql::io::fitted_from(bql::io::read_json(inf_regime));
      auto data = bql::io::read_dataset(inf_data);
      auto f = bql::fit_bql_detailed(data, stored.cat, stored.costs, stored.config);
      auto same = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return a.size() == b.size() && (a - b).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + b.cwiseAbs().maxCoeff());
      };
      bool match = same(f.regime.alpha_bar, stored.alpha_bar);
      for (std::size_t j = 0; j < stored.delta.size() && match; ++j)
        match = same(f.regime.gamma_bar[j], stored.gamma_bar[j]) && same(f.regime.delta[j], stored.delta[j]);
      if (!match) throw bql::DataError("refitting on this dataset does not reproduce the stored regime; infer needs the training data");
      bql::PluginInference p(f, data);
      json reports = json::array();
      std::size_t flagged = 0;
      for (const auto& r : p.all()) {
        json jr{{"family", r.family}, {"estimate", bql::io::to_json(r.estimate)}, {"se", bql::io::to_json(r.se)},
                {"n", r.n},           {"near_boundary", r.near_boundary}};
        if (r.j1) jr["j1"] = *r.j1;
        if (r.a1) jr["a1"] = *r.a1;
        if (r.j2) jr["j2"] = *r.j2;
        json cov = json::array();
        for (Eigen::Index k = 0; k < r.covariance.rows(); ++k)
          cov.push_back(bql::io::to_json(Eigen::VectorXd(r.covariance.row(k).transpose())));
        jr["covariance"] = cov;
        json ci = json::array();
        for (const auto& iv : bql::confidence_intervals(r, inf_level)) ci.push_back({iv.lower, iv.upper});
        jr["ci"] = ci;
        flagged += r.near_boundary ? 1 : 0;
        reports.push_back(jr);
      }
      if (flagged) spdlog::warn("{} families have more than 1% of decision scores within 1e-6 of a boundary", flagged);
      emit(json{{"level", inf_level}, {"reports", reports}}, inf_out);
      return kOk;
    }

    if (*orc) {
      json out;
      int rc = kOk;
      if (!orc_instance.empty()) {
        auto in = bql::io::instance_from(bql::io::read_json(orc_instance));
        rc = run_oracle_instance(in, orc_lambda.value_or(in.costs.lambda), out);
      } else if (orc_random > 0) {
        out = json::array();
        for (std::size_t k = 0; k < orc_random; ++k) {
          auto in = bql::random_instance(bql::derive_seed(orc_seed, "random", static_cast<std::uint64_t>(k)));
          json r;
          if (run_oracle_instance(in, orc_lambda.value_or(in.costs.lambda), r) != kOk) rc = kFail;
          r["instance"] = k;
          out.push_back(r);
        }
      } else {
        throw bql::ConfigError("oracle needs --instance or --random N");
      }
      emit(out, orc_out);
      if (rc != kOk) spdlog::error("backward induction and brute force disagree");
      return rc;
    }

    if (*exp) {
      auto cfg = bql::experiment_config_from(bql::io::read_json(exp_config), fs::path(exp_config).parent_path());
      if (exp_seed) cfg.seed = *exp_seed;
      auto res = bql::run_experiment(cfg, exp_out, exp_jobs, [](const std::string& m) { spdlog::info("{}", m); });
      spdlog::info("{} replication tasks computed, {} skipped, {} failed rows", res.computed_tasks, res.skipped_tasks,
                   res.failed_rows);
      return kOk;
    }
  } catch (const bql::ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfig;
  } catch (const bql::NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return kNumeric;
  } catch (const bql::DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kData;
  } catch (const bql::io::json::exception& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("file error: {}", e.what());
    return kData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFail;
  }
  return kOk;
}
