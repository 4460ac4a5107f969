#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bql/baselines.hpp"
#include "bql/bql.hpp"
#include "bql/io.hpp"
#include "bql/synth.hpp"

namespace bql {

inline constexpr int kResultsSchema = 1;

struct ExperimentConfig {
  ModelPreset model;
  std::vector<std::string> methods{"bql", "dense", "sparse"};
  std::size_t n_train = 500;
  std::size_t n_test = 5000;
  std::size_t replications = 200;
  Sweep sweep;
  std::size_t folds = 2;
  LearnerSpec outcome2, propensity2, outcome1, propensity1;
  bool intercept = true;
  std::optional<double> sparse_penalty;
  std::uint64_t seed = 1;

  void validate() const {
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (n_test < 1) throw ConfigError("n_test must be >= 1");
    if (sweep.values.empty()) throw ConfigError("sweep values must be nonempty");
    if (methods.empty()) throw ConfigError("methods must be nonempty");
    for (const auto& m : methods)
      if (m != "bql" && m != "dense" && m != "sparse") throw ConfigError("unknown method '" + m + "'");
    for (std::size_t a = 0; a < methods.size(); ++a)
      for (std::size_t b = 0; b < a; ++b)
        if (methods[a] == methods[b]) throw ConfigError("method '" + methods[a] + "' listed twice");
    if (sweep.parameter == "n_train")
      for (double v : sweep.values)
        if (!(v >= 1) || v != std::floor(v)) throw ConfigError("n_train sweep values must be positive integers");
    if (sparse_penalty && !(*sparse_penalty >= 0)) throw ConfigError("sparse_penalty must be >= 0");
    fit_config(0).validate();
  }

  /// Fitting configuration for one replication.
  BqlConfig fit_config(std::size_t rep) const {
    BqlConfig c;
    c.folds = folds;
    c.outcome2 = outcome2;
    c.propensity2 = propensity2;
    c.outcome1 = outcome1;
    c.propensity1 = propensity1;
    c.intercept = intercept;
    c.seed = derive_seed(seed, "fit", static_cast<std::uint64_t>(rep));
    return c;
  }
};

inline io::json to_json(const ExperimentConfig& c) {
  io::json j{{"model", io::to_json(c.model)},
             {"methods", c.methods},
             {"n_train", c.n_train},
             {"n_test", c.n_test},
             {"replications", c.replications},
             {"sweep", {{"parameter", c.sweep.parameter}, {"values", c.sweep.values}}},
             {"folds", c.folds},
             {"learners",
              {{"outcome2", io::to_json(c.outcome2)},
               {"propensity2", io::to_json(c.propensity2)},
               {"outcome1", io::to_json(c.outcome1)},
               {"propensity1", io::to_json(c.propensity1)}}},
             {"intercept", c.intercept},
             {"sparse_penalty", c.sparse_penalty ? io::json(*c.sparse_penalty) : io::json()},
             {"seed", c.seed}};
  return j;
}

/// Parses an experiment config. `model` is a preset id, an inline preset object, or a path to a
/// preset JSON file resolved against `base`.
inline ExperimentConfig experiment_config_from(const io::json& j, const std::filesystem::path& base = {}) {
  io::Fields f(j, "experiment");
  ExperimentConfig c;
  const auto& m = f.at("model");
  if (m.is_number_integer()) c.model = model_preset(m.get<int>());
  else if (m.is_object()) c.model = io::preset_from(m, "experiment.model");
  else if (m.is_string()) c.model = io::preset_from(io::read_json(base / m.get<std::string>()), m.get<std::string>());
  else throw ConfigError("experiment.model must be a preset id, a preset object, or a file path");
  c.methods = f.get_or<std::vector<std::string>>("methods", c.methods);
  c.n_train = f.get_or<std::size_t>("n_train", c.model.n_train);
  c.n_test = f.get_or<std::size_t>("n_test", c.n_test);
  c.replications = f.get_or<std::size_t>("replications", c.replications);
  c.sweep = f.has("sweep") ? io::sweep_from(f.at("sweep"), "experiment.sweep") : c.model.sweep;
  f.get_or<io::json>("sweep", io::json());
  c.folds = f.get_or<std::size_t>("folds", c.folds);
  BqlConfig lc;
  if (f.has("learners")) io::learners_into(f.at("learners"), lc, "experiment.learners");
  f.get_or<io::json>("learners", io::json());
  c.outcome2 = lc.outcome2;
  c.propensity2 = lc.propensity2;
  c.outcome1 = lc.outcome1;
  c.propensity1 = lc.propensity1;
  c.intercept = f.get_or<bool>("intercept", c.intercept);
  if (f.has("sparse_penalty")) c.sparse_penalty = f.get<double>("sparse_penalty");
  f.get_or<io::json>("sparse_penalty", io::json());
  c.seed = f.get<std::uint64_t>("seed");
  f.finish();
  c.validate();
  return c;
}

struct ResultRow {
  std::string method;
  std::size_t value_index = 0;
  double value = 0.0;
  std::size_t rep = 0;
  std::string status = "ok";
  std::string message;
  double profit = 0.0, utility = 0.0, cost = 0.0;
  std::vector<double> freq1, freq2;
  double p_a1 = 0.0, p_a2 = 0.0, extrapolated = 0.0;
};

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char ch : s) o += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return o + "\"";
}

inline std::string results_header(const ExperimentConfig& c) {
  std::string h = "model,method,sweep_param,sweep_value,rep,status,profit,utility,cost";
  for (std::size_t k = 1; k <= c.model.catalog.cand1.size(); ++k) h += ",freq_j1_" + std::to_string(k);
  for (std::size_t k = 1; k <= c.model.catalog.cand2.size(); ++k) h += ",freq_j2_" + std::to_string(k);
  return h + ",p_a1,p_a2,extrapolated,message";
}

inline std::string row_line(const ExperimentConfig& c, const ResultRow& r) {
  using io::format_double;
  std::string s = std::to_string(c.model.id) + "," + r.method + "," + c.sweep.parameter + "," + format_double(r.value) +
                  "," + std::to_string(r.rep) + "," + r.status + "," + format_double(r.profit) + "," +
                  format_double(r.utility) + "," + format_double(r.cost);
  for (std::size_t k = 0; k < c.model.catalog.cand1.size(); ++k) s += "," + format_double(k < r.freq1.size() ? r.freq1[k] : 0.0);
  for (std::size_t k = 0; k < c.model.catalog.cand2.size(); ++k) s += "," + format_double(k < r.freq2.size() ? r.freq2[k] : 0.0);
  return s + "," + format_double(r.p_a1) + "," + format_double(r.p_a2) + "," + format_double(r.extrapolated) + "," +
         csv_field(r.message);
}

/// Parses a row written by row_line; returns nullopt for rows of another layout.
inline std::optional<ResultRow> parse_row(const ExperimentConfig& c, const std::string& line) {
  std::vector<std::string> f;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
      else if (ch == '"') quoted = false;
      else cur += ch;
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      f.push_back(cur), cur.clear();
    } else {
      cur += ch;
    }
  }
  f.push_back(cur);
  const std::size_t J1 = c.model.catalog.cand1.size(), J2 = c.model.catalog.cand2.size();
  if (f.size() != 9 + J1 + J2 + 4) return std::nullopt;
  try {
    ResultRow r;
    std::size_t k = 1;
    r.method = f[k++];
    ++k;
    r.value = io::parse_double(f[k++], "results");
    r.rep = static_cast<std::size_t>(std::stoull(f[k++]));
    r.status = f[k++];
    r.profit = io::parse_double(f[k++], "results");
    r.utility = io::parse_double(f[k++], "results");
    r.cost = io::parse_double(f[k++], "results");
    for (std::size_t m = 0; m < J1; ++m) r.freq1.push_back(io::parse_double(f[k++], "results"));
    for (std::size_t m = 0; m < J2; ++m) r.freq2.push_back(io::parse_double(f[k++], "results"));
    r.p_a1 = io::parse_double(f[k++], "results");
    r.p_a2 = io::parse_double(f[k++], "results");
    r.extrapolated = io::parse_double(f[k++], "results");
    r.message = f[k++];
    auto it = std::find(c.sweep.values.begin(), c.sweep.values.end(), r.value);
    if (it == c.sweep.values.end()) return std::nullopt;
    r.value_index = static_cast<std::size_t>(it - c.sweep.values.begin());
    return r;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric_error";
  if (dynamic_cast<const DataError*>(&e)) return "data_error";
  return "error";
}

}  // namespace detail

/// One replication: a fresh training draw, shared nuisance fits, and every method at every
/// sweep value (or at one sample size when the sweep is over n_train).
inline std::vector<ResultRow> run_replication(const ExperimentConfig& c, std::size_t rep,
                                              std::optional<std::size_t> n_index = std::nullopt) {
  const auto& m = c.model;
  const bool n_sweep = c.sweep.parameter == "n_train";
  std::vector<std::size_t> values;
  if (n_index) values = {*n_index};
  else
    for (std::size_t v = 0; v < c.sweep.values.size(); ++v) values.push_back(v);
  const std::size_t n = n_sweep ? static_cast<std::size_t>(c.sweep.values[values.front()]) : c.n_train;
  const auto cfg = c.fit_config(rep);
  const auto test_seed = derive_seed(c.seed, "test", static_cast<std::uint64_t>(rep));

  std::vector<ResultRow> rows;
  auto fail_all = [&](const std::exception& e) {
    for (const auto& meth : c.methods)
      for (auto v : values) {
        ResultRow r;
        r.method = meth, r.value_index = v, r.value = c.sweep.values[v], r.rep = rep;
        r.status = detail::error_kind(e);
        r.message = e.what();
        rows.push_back(r);
      }
  };
  DataMatrices d;
  std::shared_ptr<const NuisanceFits> nf;
  try {
    auto data = generate(m.spec, n, derive_seed(c.seed, "train", static_cast<std::uint64_t>(rep)));
    require_valid(data);
    d = DataMatrices::from(data);
    nf = std::make_shared<const NuisanceFits>(fit_nuisance(d, cfg));
  } catch (const Error& e) {
    fail_all(e);
    return rows;
  }
  for (const auto& meth : c.methods)
    for (auto v : values) {
      ResultRow r;
      r.method = meth, r.value_index = v, r.value = c.sweep.values[v], r.rep = rep;
      try {
        const CostSpec costs = apply_sweep(m.costs, c.sweep.parameter, r.value);
        ProfitEstimate est;
        if (meth == "bql") {
          auto fit = fit_bql_with(d, nf, m.catalog, costs, cfg);
          est = true_profit(m.spec, fit.regime, costs, c.n_test, test_seed);
        } else {
          auto reg = fit_baseline_with(d, nf, m.catalog, costs, cfg, meth, c.sparse_penalty);
          est = true_profit(m.spec, reg, costs, c.n_test, test_seed);
          for (const auto& w : reg.warnings) r.message += (r.message.empty() ? "" : "; ") + w;
        }
        r.profit = est.profit.mean;
        r.utility = est.utility.mean;
        r.cost = est.mean_costs.total();
        r.freq1 = est.frequencies.stage1;
        r.freq2 = est.frequencies.stage2;
        r.p_a1 = est.frequencies.p_a1;
        r.p_a2 = est.frequencies.p_a2;
        r.extrapolated = static_cast<double>(est.extrapolated) / static_cast<double>(c.n_test);
      } catch (const Error& e) {
        r.status = detail::error_kind(e);
        r.message = e.what();
      }
      rows.push_back(r);
    }
  return rows;
}

struct SummaryRow {
  std::string method;
  double value = 0.0;
  std::string metric;
  MeanSe stat;
  std::size_t count = 0;
};

/// Means and Monte Carlo s.e. over successful replications, one row per measurement.
inline std::vector<SummaryRow> summarize(const ExperimentConfig& c, const std::vector<ResultRow>& rows) {
  std::vector<SummaryRow> out;
  for (const auto& meth : c.methods)
    for (std::size_t v = 0; v < c.sweep.values.size(); ++v) {
      std::vector<const ResultRow*> ok;
      std::size_t total = 0;
      for (const auto& r : rows)
        if (r.method == meth && r.value_index == v) {
          ++total;
          if (r.status == "ok") ok.push_back(&r);
        }
      if (total == 0) continue;
      auto add = [&](const std::string& metric, auto get) {
        std::vector<double> x;
        for (const auto* r : ok) x.push_back(get(*r));
        out.push_back({meth, c.sweep.values[v], metric, mean_se(x), x.size()});
      };
      add("profit", [](const ResultRow& r) { return r.profit; });
      add("utility", [](const ResultRow& r) { return r.utility; });
      add("cost", [](const ResultRow& r) { return r.cost; });
      for (std::size_t k = 0; k < c.model.catalog.cand1.size(); ++k)
        add("freq_j1_" + std::to_string(k + 1), [k](const ResultRow& r) { return r.freq1[k]; });
      for (std::size_t k = 0; k < c.model.catalog.cand2.size(); ++k)
        add("freq_j2_" + std::to_string(k + 1), [k](const ResultRow& r) { return r.freq2[k]; });
      add("p_a1", [](const ResultRow& r) { return r.p_a1; });
      add("p_a2", [](const ResultRow& r) { return r.p_a2; });
      add("extrapolated", [](const ResultRow& r) { return r.extrapolated; });
      out.push_back({meth, c.sweep.values[v], "failed",
                     {static_cast<double>(total - ok.size()) / static_cast<double>(total), 0.0}, total});
    }
  return out;
}

inline std::string summary_csv(const ExperimentConfig& c, const std::vector<SummaryRow>& rows) {
  std::string s = "model,method,sweep_param,sweep_value,metric,mean,se,count\n";
  for (const auto& r : rows)
    s += std::to_string(c.model.id) + "," + r.method + "," + c.sweep.parameter + "," + io::format_double(r.value) + "," +
         r.metric + "," + io::format_double(r.stat.mean) + "," + io::format_double(r.stat.se) + "," +
         std::to_string(r.count) + "\n";
  return s;
}

struct ExperimentOutcome {
  std::vector<ResultRow> rows;
  std::vector<SummaryRow> summary;
  std::size_t computed_tasks = 0, skipped_tasks = 0, failed_rows = 0;
};

/// Runs every replication with a pool of `jobs` workers and writes results.csv, summary.csv,
/// timing.csv and config.json to `out`. Rows already on disk are kept and their tasks skipped.
inline ExperimentOutcome run_experiment(const ExperimentConfig& c, const std::filesystem::path& out, std::size_t jobs = 1,
                                        std::function<void(const std::string&)> progress = {}) {
  c.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out);
  const auto cfg_json = to_json(c);
  const std::string cfg_text = io::json{{"schema", kResultsSchema}, {"experiment", cfg_json}}.dump(2) + "\n";
  const auto cfg_path = out / "config.json";
  if (fs::exists(cfg_path)) {
    if (io::read_text(cfg_path) != cfg_text)
      throw ConfigError("output directory '" + out.string() + "' holds results of a different configuration");
  } else {
    io::write_atomic(cfg_path, cfg_text);
  }

  using Key = std::tuple<std::size_t, std::size_t, std::size_t>;  // method, value, rep
  auto method_pos = [&](const std::string& m) {
    return static_cast<std::size_t>(std::find(c.methods.begin(), c.methods.end(), m) - c.methods.begin());
  };
  std::map<Key, ResultRow> done;
  std::map<std::size_t, double> timing;
  const auto res_path = out / "results.csv";
  const std::string header = detail::results_header(c);
  if (fs::exists(res_path)) {
    std::istringstream in(io::read_text(res_path));
    std::string line;
    std::getline(in, line);
    if (line != header) throw ConfigError("existing results.csv has a different layout");
    while (std::getline(in, line)) {
      auto r = detail::parse_row(c, line);
      if (!r || method_pos(r->method) >= c.methods.size() || r->rep >= c.replications) continue;
      done[{method_pos(r->method), r->value_index, r->rep}] = *r;
    }
  }

  struct Task {
    std::size_t rep;
    std::optional<std::size_t> n_index;
  };
  std::vector<Task> tasks;
  const bool n_sweep = c.sweep.parameter == "n_train";
  ExperimentOutcome res;
  for (std::size_t rep = 0; rep < c.replications; ++rep) {
    std::vector<std::optional<std::size_t>> groups;
    if (n_sweep)
      for (std::size_t v = 0; v < c.sweep.values.size(); ++v) groups.push_back(v);
    else
      groups.push_back(std::nullopt);
    for (auto g : groups) {
      bool complete = true;
      for (std::size_t mi = 0; mi < c.methods.size() && complete; ++mi)
        for (std::size_t v = 0; v < c.sweep.values.size() && complete; ++v)
          if ((!g || *g == v) && !done.count({mi, v, rep})) complete = false;
      if (complete) ++res.skipped_tasks;
      else tasks.push_back({rep, g});
    }
  }

  std::mutex mu;
  auto flush = [&] {
    std::string s = header + "\n";
    for (const auto& [k, r] : done) s += detail::row_line(c, r) + "\n";
    io::write_atomic(res_path, s);
  };
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  auto worker = [&] {
    while (true) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      {
        std::lock_guard lk(mu);
        if (fatal) return;
      }
      try {
        const auto t0 = std::chrono::steady_clock::now();
        auto rows = run_replication(c, tasks[t].rep, tasks[t].n_index);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::lock_guard lk(mu);
        for (auto& r : rows) done[{method_pos(r.method), r.value_index, r.rep}] = std::move(r);
        timing[tasks[t].rep] += secs;
        ++res.computed_tasks;
        flush();
        if (progress)
          progress("replication " + std::to_string(tasks[t].rep) + " done (" + std::to_string(res.computed_tasks) + "/" +
                   std::to_string(tasks.size()) + ")");
      } catch (...) {
        std::lock_guard lk(mu);
        if (!fatal) fatal = std::current_exception();
      }
    }
  };
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < nthreads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (fatal) std::rethrow_exception(fatal);
  flush();

  for (auto& [k, r] : done) {
    if (r.status != "ok") ++res.failed_rows;
    res.rows.push_back(r);
  }
  res.summary = summarize(c, res.rows);
  io::write_atomic(out / "summary.csv", summary_csv(c, res.summary));
  std::string tm = "rep,seconds\n";
  for (const auto& [rep, s] : timing) tm += std::to_string(rep) + "," + io::format_double(s) + "\n";
  io::write_atomic(out / "timing.csv", tm);
  return res;
}

}  // namespace bql
