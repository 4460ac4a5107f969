#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bql/baselines.hpp"
#include "bql/bql.hpp"
#include "bql/core.hpp"
#include "bql/eval.hpp"
#include "bql/synth.hpp"

namespace bql::io {

using json = nlohmann::json;

inline constexpr const char* kRegimeFormat = "bql-regime";
inline constexpr int kRegimeVersion = 1;

/// Object reader that records which keys were read and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  bool has(const std::string& k) const { return j_.contains(k) && !j_.at(k).is_null(); }

  const json& at(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) throw ConfigError(where_ + ": missing field '" + k + "'");
    return j_.at(k);
  }

  template <class T>
  T get(const std::string& k) {
    const json& v = at(k);
    try {
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + k + ": " + e.what());
    }
  }

  template <class T>
  T get_or(const std::string& k, T def) {
    seen_.insert(k);
    if (!has(k)) return def;
    return get<T>(k);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown field '" + k + "'");
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// ---- elementary values ----

inline json to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline VectorXd vector_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw ConfigError(where + "[" + std::to_string(k) + "]: expected a number");
    v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  }
  return v;
}

inline json to_json(const FeatureIndexSet& s) { return s.indices(); }

inline FeatureIndexSet set_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of 1-based indices");
  std::vector<std::size_t> v;
  for (const auto& e : j) {
    if (!e.is_number_integer() || e.get<long long>() < 1) throw ConfigError(where + ": indices must be positive integers");
    v.push_back(e.get<std::size_t>());
  }
  try {
    return FeatureIndexSet(v);
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline std::vector<FeatureIndexSet> sets_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of index sets");
  std::vector<FeatureIndexSet> out;
  for (std::size_t k = 0; k < j.size(); ++k) out.push_back(set_from(j[k], where + "[" + std::to_string(k) + "]"));
  return out;
}

// ---- catalog and costs ----

inline json to_json(const AssessmentCatalog& c) {
  json j;
  j["d1"] = c.d1;
  j["d2"] = c.d2;
  j["l1"] = to_json(c.l1);
  j["l2"] = to_json(c.l2);
  j["cand1"] = json::array();
  for (const auto& s : c.cand1) j["cand1"].push_back(to_json(s));
  j["cand2"] = json::array();
  for (const auto& s : c.cand2) j["cand2"].push_back(to_json(s));
  return j;
}

inline AssessmentCatalog catalog_from(const json& j, const std::string& where = "catalog") {
  Fields f(j, where);
  AssessmentCatalog c;
  c.d1 = f.get<std::size_t>("d1");
  c.d2 = f.get<std::size_t>("d2");
  c.l1 = set_from(f.at("l1"), where + ".l1");
  c.l2 = set_from(f.at("l2"), where + ".l2");
  c.cand1 = sets_from(f.at("cand1"), where + ".cand1");
  c.cand2 = sets_from(f.at("cand2"), where + ".cand2");
  f.finish();
  c.validate();
  return c;
}

inline json to_json(const CostSpec& c) {
  return json{{"c1c", c.c1c}, {"c2c", c.c2c}, {"c1t", c.c1t}, {"c2t", c.c2t}, {"lambda", c.lambda}};
}

inline CostSpec costs_from(const json& j, const std::string& where = "costs") {
  Fields f(j, where);
  CostSpec c;
  c.c1c = f.get<std::vector<double>>("c1c");
  c.c2c = f.get<std::vector<double>>("c2c");
  c.c1t = f.get<std::array<double, 2>>("c1t");
  c.c2t = f.get<std::array<double, 2>>("c2t");
  c.lambda = f.get_or<double>("lambda", 1.0);
  f.finish();
  return c;
}

// ---- learners and fitting config ----

inline json to_json(const LearnerSpec& s) {
  return json{{"kind", to_string(s.kind)},
              {"ridge_penalty", s.ridge_penalty},
              {"internal_folds", s.internal_folds},
              {"forest",
               {{"trees", s.forest.trees},
                {"max_depth", s.forest.max_depth},
                {"min_leaf", s.forest.min_leaf},
                {"feature_fraction", s.forest.feature_fraction}}}};
}

inline LearnerSpec learner_from(const json& j, const std::string& where) {
  LearnerSpec s;
  if (j.is_string()) {
    s.kind = learner_kind_from(j.get<std::string>());
    return s;
  }
  Fields f(j, where);
  s.kind = learner_kind_from(f.get<std::string>("kind"));
  s.ridge_penalty = f.get_or<double>("ridge_penalty", s.ridge_penalty);
  s.internal_folds = f.get_or<int>("internal_folds", s.internal_folds);
  if (f.has("forest")) {
    Fields g(f.at("forest"), where + ".forest");
    s.forest.trees = g.get_or<int>("trees", s.forest.trees);
    s.forest.max_depth = g.get_or<int>("max_depth", s.forest.max_depth);
    s.forest.min_leaf = g.get_or<int>("min_leaf", s.forest.min_leaf);
    s.forest.feature_fraction = g.get_or<double>("feature_fraction", s.forest.feature_fraction);
    g.finish();
  } else {
    f.get_or<json>("forest", json());
  }
  f.finish();
  s.validate();
  return s;
}

inline json to_json(const BqlConfig& c) {
  return json{{"folds", c.folds},
              {"inner_folds", c.inner_folds},
              {"intercept", c.intercept},
              {"seed", c.seed},
              {"propensity_clip", {c.propensity_clip.first, c.propensity_clip.second}},
              {"learners",
               {{"outcome2", to_json(c.outcome2)},
                {"propensity2", to_json(c.propensity2)},
                {"outcome1", to_json(c.outcome1)},
                {"propensity1", to_json(c.propensity1)}}}};
}

inline void learners_into(const json& j, BqlConfig& c, const std::string& where) {
  Fields f(j, where);
  for (auto [name, slot] : {std::pair{"outcome2", &c.outcome2}, std::pair{"propensity2", &c.propensity2},
                            std::pair{"outcome1", &c.outcome1}, std::pair{"propensity1", &c.propensity1}}) {
    if (f.has(name)) *slot = learner_from(f.at(name), where + "." + name);
    else f.get_or<json>(name, json());
  }
  f.finish();
}

inline BqlConfig config_from(const json& j, const std::string& where = "config") {
  Fields f(j, where);
  BqlConfig c;
  c.folds = f.get_or<std::size_t>("folds", c.folds);
  c.inner_folds = f.get_or<std::size_t>("inner_folds", c.inner_folds);
  c.intercept = f.get_or<bool>("intercept", c.intercept);
  c.seed = f.get_or<std::uint64_t>("seed", c.seed);
  if (f.has("propensity_clip")) {
    auto p = f.get<std::array<double, 2>>("propensity_clip");
    c.propensity_clip = {p[0], p[1]};
  }
  f.get_or<json>("propensity_clip", json());
  if (f.has("learners")) learners_into(f.at("learners"), c, where + ".learners");
  f.get_or<json>("learners", json());
  f.finish();
  c.validate();
  return c;
}

// ---- generative models ----

inline json to_json(const GenerativeSpec& g) {
  return json{{"p", g.p},           {"alpha1", g.alpha1}, {"alpha2", g.alpha2}, {"beta1", g.beta1},
              {"beta2", g.beta2},   {"beta3", g.beta3},   {"noise_sd_y", g.noise_sd_y}};
}

inline GenerativeSpec spec_from(const json& j, const std::string& where = "spec") {
  Fields f(j, where);
  GenerativeSpec g;
  g.p = f.get<std::size_t>("p");
  g.alpha1 = f.get<std::vector<double>>("alpha1");
  g.alpha2 = f.get<std::vector<double>>("alpha2");
  g.beta1 = f.get<std::vector<double>>("beta1");
  g.beta2 = f.get<std::vector<double>>("beta2");
  g.beta3 = f.get<std::vector<double>>("beta3");
  g.noise_sd_y = f.get_or<double>("noise_sd_y", g.noise_sd_y);
  f.finish();
  g.validate();
  return g;
}

inline json to_json(const ModelPreset& m) {
  return json{{"id", m.id},
              {"spec", to_json(m.spec)},
              {"catalog", to_json(m.catalog)},
              {"costs", to_json(m.costs)},
              {"sweep", {{"parameter", m.sweep.parameter}, {"values", m.sweep.values}}},
              {"n_train", m.n_train}};
}

inline Sweep sweep_from(const json& j, const std::string& where) {
  Fields f(j, where);
  Sweep s;
  s.parameter = f.get<std::string>("parameter");
  s.values = f.get<std::vector<double>>("values");
  f.finish();
  if (s.values.empty()) throw ConfigError(where + ".values must be nonempty");
  apply_sweep(CostSpec{}, s.parameter, 0.0);
  return s;
}

inline ModelPreset preset_from(const json& j, const std::string& where = "preset") {
  Fields f(j, where);
  ModelPreset m;
  m.id = f.get_or<int>("id", 0);
  m.spec = spec_from(f.at("spec"), where + ".spec");
  m.catalog = catalog_from(f.at("catalog"), where + ".catalog");
  m.costs = costs_from(f.at("costs"), where + ".costs");
  m.sweep = f.has("sweep") ? sweep_from(f.at("sweep"), where + ".sweep") : Sweep{"lambda", {m.costs.lambda}};
  f.get_or<json>("sweep", json());
  m.n_train = f.get_or<std::size_t>("n_train", m.n_train);
  f.finish();
  if (m.catalog.d1 != m.spec.p || m.catalog.d2 != m.spec.p)
    throw ConfigError(where + ": catalog dimensions must equal the covariate dimension p");
  m.costs.validate(m.catalog);
  return m;
}

// ---- discrete instances ----

inline json to_json(const DiscreteInstance& in) {
  json j{{"s1_support", in.s1_support}, {"s1_prob", in.s1_prob},   {"s2_support", in.s2_support},
         {"catalog", to_json(in.catalog)}, {"costs", to_json(in.costs)}, {"noise_sd", in.noise_sd}};
  j["transition"] = json::array();
  j["mean"] = json::array();
  for (std::size_t i = 0; i < in.n1(); ++i) {
    j["transition"].push_back({in.transition[i][0], in.transition[i][1]});
    j["mean"].push_back({in.mean[i][0], in.mean[i][1]});
  }
  if (!in.g1.empty()) {
    j["g1"] = in.g1;
    j["g2"] = json::array();
    for (const auto& g : in.g2) j["g2"].push_back({g[0], g[1]});
  }
  return j;
}

inline DiscreteInstance instance_from(const json& j, const std::string& where = "instance") {
  Fields f(j, where);
  DiscreteInstance in;
  in.s1_support = f.get<std::vector<std::vector<double>>>("s1_support");
  in.s1_prob = f.get<std::vector<double>>("s1_prob");
  in.s2_support = f.get<std::vector<std::vector<double>>>("s2_support");
  for (const auto& t : f.get<std::vector<std::vector<std::vector<double>>>>("transition")) {
    if (t.size() != 2) throw DataError(where + ".transition: each entry needs one row per a1");
    in.transition.push_back({t[0], t[1]});
  }
  for (const auto& m : f.get<std::vector<std::vector<std::vector<std::array<double, 2>>>>>("mean")) {
    if (m.size() != 2) throw DataError(where + ".mean: each entry needs one table per a1");
    in.mean.push_back({m[0], m[1]});
  }
  in.catalog = catalog_from(f.at("catalog"), where + ".catalog");
  in.costs = costs_from(f.at("costs"), where + ".costs");
  in.noise_sd = f.get_or<double>("noise_sd", in.noise_sd);
  in.g1 = f.get_or<std::vector<double>>("g1", {});
  for (const auto& g : f.get_or<std::vector<std::vector<std::vector<double>>>>("g2", {})) {
    if (g.size() != 2) throw DataError(where + ".g2: each entry needs one row per a1");
    in.g2.push_back({g[0], g[1]});
  }
  f.finish();
  in.validate();
  return in;
}

// ---- regimes ----

inline json header(const std::string& kind) {
  return json{{"format", kRegimeFormat}, {"version", kRegimeVersion}, {"kind", kind}};
}

inline json to_json(const FittedRegime& r) {
  json j = header("bql");
  j["catalog"] = to_json(r.cat);
  j["costs"] = to_json(r.costs);
  j["intercept"] = r.intercept;
  j["config"] = to_json(r.config);
  j["alpha_bar"] = to_json(r.alpha_bar);
  const auto J1 = r.cat.cand1.size(), J2 = r.cat.cand2.size();
  json alpha = json::array(), beta = json::array(), beta_bar = json::array();
  for (std::size_t a = 0; a < J1; ++a) {
    json pa = json::array(), pb = json::array(), bb = json::array();
    for (int a1 = 0; a1 < 2; ++a1) {
      json qa = json::array(), qb = json::array();
      for (std::size_t b = 0; b < J2; ++b) {
        qa.push_back(to_json(r.alpha.at(a, a1, b)));
        qb.push_back(to_json(r.beta.at(a, a1, b)));
      }
      pa.push_back(qa);
      pb.push_back(qb);
    }
    for (std::size_t b = 0; b < J2; ++b) bb.push_back(to_json(r.beta_bar[a][b]));
    alpha.push_back(pa);
    beta.push_back(pb);
    beta_bar.push_back(bb);
  }
  j["alpha"] = alpha;
  j["beta_bar"] = beta_bar;
  j["beta"] = beta;
  auto list = [](const std::vector<VectorXd>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(to_json(x));
    return a;
  };
  j["gamma_bar"] = list(r.gamma_bar);
  j["gamma"] = list(r.gamma);
  j["delta"] = list(r.delta);
  j["design_norms"] = {{"l1", r.norms.l1}, {"jbar1", r.norms.jbar1}, {"lbar2", r.norms.lbar2}, {"jbar2", r.norms.jbar2}};
  return j;
}

inline json to_json(const BaselineRegime& r) {
  json j = header(r.method);
  j["catalog"] = to_json(r.cat);
  j["costs"] = to_json(r.costs);
  j["intercept"] = r.intercept;
  j["config"] = to_json(r.config);
  j["alpha_bar"] = to_json(r.alpha_bar);
  j["gamma_bar"] = to_json(r.gamma_bar);
  j["threshold1"] = r.threshold1;
  j["threshold2"] = r.threshold2;
  j["j1"] = r.j1;
  j["j2"] = r.j2;
  j["penalty"] = r.penalty ? json(*r.penalty) : json();
  j["penalty1"] = r.penalty1;
  j["penalty2"] = r.penalty2;
  j["support1"] = to_json(r.support1);
  j["support2"] = to_json(r.support2);
  j["warnings"] = r.warnings;
  return j;
}

namespace detail {

inline std::string check_header(Fields& f) {
  if (f.get<std::string>("format") != kRegimeFormat) throw ConfigError("not a regime document");
  const int v = f.get<int>("version");
  if (v != kRegimeVersion)
    throw ConfigError("unsupported regime format version " + std::to_string(v) + " (expected " +
                      std::to_string(kRegimeVersion) + ")");
  return f.get<std::string>("kind");
}

inline std::vector<VectorXd> vectors_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<VectorXd> out;
  for (std::size_t k = 0; k < j.size(); ++k) out.push_back(vector_from(j[k], where + "[" + std::to_string(k) + "]"));
  return out;
}

inline void require_size(std::size_t got, std::size_t want, const std::string& where) {
  if (got != want)
    throw ConfigError(where + " has " + std::to_string(got) + " entries, expected " + std::to_string(want));
}

}  // namespace detail

inline FittedRegime fitted_from(const json& j) {
  Fields f(j, "regime");
  if (detail::check_header(f) != "bql") throw ConfigError("regime kind is not 'bql'");
  FittedRegime r;
  r.cat = catalog_from(f.at("catalog"), "regime.catalog");
  r.costs = costs_from(f.at("costs"), "regime.costs");
  r.costs.validate(r.cat);
  r.intercept = f.get<bool>("intercept");
  r.config = config_from(f.at("config"), "regime.config");
  r.alpha_bar = vector_from(f.at("alpha_bar"), "regime.alpha_bar");
  const auto J1 = r.cat.cand1.size(), J2 = r.cat.cand2.size();
  r.alpha = CoefGrid(J1, J2);
  r.beta = CoefGrid(J1, J2);
  const json& ja = f.at("alpha");
  const json& jb = f.at("beta");
  const json& jbb = f.at("beta_bar");
  detail::require_size(ja.size(), J1, "regime.alpha");
  detail::require_size(jb.size(), J1, "regime.beta");
  detail::require_size(jbb.size(), J1, "regime.beta_bar");
  r.beta_bar.assign(J1, std::vector<VectorXd>(J2));
  for (std::size_t a = 0; a < J1; ++a) {
    detail::require_size(ja[a].size(), 2, "regime.alpha[j1]");
    detail::require_size(jb[a].size(), 2, "regime.beta[j1]");
    for (int a1 = 0; a1 < 2; ++a1) {
      auto va = detail::vectors_from(ja[a][static_cast<std::size_t>(a1)], "regime.alpha");
      auto vb = detail::vectors_from(jb[a][static_cast<std::size_t>(a1)], "regime.beta");
      detail::require_size(va.size(), J2, "regime.alpha[j1][a1]");
      detail::require_size(vb.size(), J2, "regime.beta[j1][a1]");
      for (std::size_t b = 0; b < J2; ++b) {
        r.alpha.at(a, a1, b) = va[b];
        r.beta.at(a, a1, b) = vb[b];
      }
    }
    auto bb = detail::vectors_from(jbb[a], "regime.beta_bar");
    detail::require_size(bb.size(), J2, "regime.beta_bar[j1]");
    r.beta_bar[a] = bb;
  }
  r.gamma_bar = detail::vectors_from(f.at("gamma_bar"), "regime.gamma_bar");
  r.gamma = detail::vectors_from(f.at("gamma"), "regime.gamma");
  r.delta = detail::vectors_from(f.at("delta"), "regime.delta");
  detail::require_size(r.gamma_bar.size(), J1, "regime.gamma_bar");
  detail::require_size(r.gamma.size(), J1, "regime.gamma");
  detail::require_size(r.delta.size(), J1, "regime.delta");
  if (f.has("design_norms")) {
    Fields n(f.at("design_norms"), "regime.design_norms");
    r.norms.l1 = n.get<double>("l1");
    r.norms.jbar1 = n.get<std::vector<double>>("jbar1");
    r.norms.lbar2 = n.get<std::vector<double>>("lbar2");
    r.norms.jbar2 = n.get<std::vector<std::vector<double>>>("jbar2");
    n.finish();
  }
  f.get_or<json>("design_norms", json());
  f.finish();
  return r;
}

inline BaselineRegime baseline_from(const json& j) {
  Fields f(j, "regime");
  BaselineRegime r;
  r.method = detail::check_header(f);
  if (r.method != "dense" && r.method != "sparse") throw ConfigError("regime kind is not a baseline");
  r.cat = catalog_from(f.at("catalog"), "regime.catalog");
  r.costs = costs_from(f.at("costs"), "regime.costs");
  r.costs.validate(r.cat);
  r.intercept = f.get<bool>("intercept");
  r.config = config_from(f.at("config"), "regime.config");
  r.alpha_bar = vector_from(f.at("alpha_bar"), "regime.alpha_bar");
  r.gamma_bar = vector_from(f.at("gamma_bar"), "regime.gamma_bar");
  r.threshold1 = f.get<double>("threshold1");
  r.threshold2 = f.get<double>("threshold2");
  r.j1 = f.get<std::size_t>("j1");
  r.j2 = f.get<std::size_t>("j2");
  if (r.j1 >= r.cat.cand1.size() || r.j2 >= r.cat.cand2.size()) throw ConfigError("regime assessment position out of range");
  if (f.has("penalty")) r.penalty = f.get<double>("penalty");
  f.get_or<json>("penalty", json());
  r.penalty1 = f.get_or<double>("penalty1", 0.0);
  r.penalty2 = f.get_or<double>("penalty2", 0.0);
  r.support1 = set_from(f.at("support1"), "regime.support1");
  r.support2 = set_from(f.at("support2"), "regime.support2");
  r.warnings = f.get_or<std::vector<std::string>>("warnings", {});
  f.finish();
  return r;
}

/// Loads any regime document, dispatching on its kind tag.
inline std::unique_ptr<Regime> regime_from(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("regime document has no kind tag");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "bql") return std::make_unique<FittedRegime>(fitted_from(j));
  if (kind == "dense" || kind == "sparse") return std::make_unique<BaselineRegime>(baseline_from(j));
  throw ConfigError("unknown regime kind '" + kind + "'");
}

inline json regime_to_json(const Regime& r) {
  if (auto* b = dynamic_cast<const FittedRegime*>(&r)) return to_json(*b);
  if (auto* b = dynamic_cast<const BaselineRegime*>(&r)) return to_json(*b);
  throw ConfigError("regime kind '" + r.kind() + "' cannot be serialized");
}

// ---- files ----

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline json read_json(const std::filesystem::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

/// Writes through a temporary file in the same directory and renames it into place.
inline void write_atomic(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw ConfigError("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, p);
}

inline void write_json(const std::filesystem::path& p, const json& j) { write_atomic(p, j.dump(2) + "\n"); }

// ---- dataset CSV ----

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && e[-1] == ' ') --e;
  auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) throw DataError(where + ": cannot parse '" + s + "' as a number");
  return v;
}

inline std::string dataset_header(std::size_t d1, std::size_t d2) {
  std::string h;
  for (std::size_t k = 1; k <= d1; ++k) h += "s1_" + std::to_string(k) + ",";
  h += "a1,";
  for (std::size_t k = 1; k <= d2; ++k) h += "s2_" + std::to_string(k) + ",";
  h += "a2,y";
  return h;
}

inline std::string dataset_csv(const Dataset& d) {
  std::string out = dataset_header(d.d1, d.d2) + "\n";
  for (const auto& t : d.rows) {
    for (double v : t.s1) out += format_double(v) + ",";
    out += std::to_string(t.a1) + ",";
    for (double v : t.s2) out += format_double(v) + ",";
    out += std::to_string(t.a2) + "," + format_double(t.y) + "\n";
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& p, const Dataset& d) { write_atomic(p, dataset_csv(d)); }

inline Dataset parse_dataset(std::istream& in, const std::string& name = "dataset") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(name + ": empty file");
  auto head = split_csv_line(line);
  std::size_t d1 = 0;
  while (d1 < head.size() && head[d1] == "s1_" + std::to_string(d1 + 1)) ++d1;
  std::size_t d2 = 0;
  while (d1 + 1 + d2 < head.size() && head[d1 + 1 + d2] == "s2_" + std::to_string(d2 + 1)) ++d2;
  if (d1 == 0 || d2 == 0 || dataset_header(d1, d2) != line.substr(0, line.find_last_not_of('\r') + 1))
    throw DataError(name + ": header must be s1_1..s1_d1,a1,s2_1..s2_d2,a2,y");
  Dataset d{d1, d2, {}};
  const std::size_t width = d1 + d2 + 3;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    const std::string where = name + " line " + std::to_string(lineno);
    if (cells.size() != width)
      throw DimensionError(where + ": expected " + std::to_string(width) + " fields, found " + std::to_string(cells.size()));
    Trajectory t;
    std::size_t c = 0;
    for (std::size_t k = 0; k < d1; ++k) t.s1.push_back(parse_double(cells[c++], where));
    const double a1 = parse_double(cells[c++], where);
    for (std::size_t k = 0; k < d2; ++k) t.s2.push_back(parse_double(cells[c++], where));
    const double a2 = parse_double(cells[c++], where);
    t.y = parse_double(cells[c++], where);
    if ((a1 != 0 && a1 != 1) || (a2 != 0 && a2 != 1)) throw DataError(where + ": treatments must be 0 or 1");
    t.a1 = static_cast<int>(a1);
    t.a2 = static_cast<int>(a2);
    d.rows.push_back(std::move(t));
  }
  return d;
}

inline Dataset read_dataset(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open dataset '" + p.string() + "'");
  return parse_dataset(in, p.filename().string());
}

}  // namespace bql::io
