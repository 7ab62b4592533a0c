#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcscheck/agent.hpp"
#include "pcscheck/errors.hpp"
#include "pcscheck/perturb.hpp"
#include "pcscheck/tabular.hpp"

// Harness configuration: one JSON file, schema-validated, loss-free through
// a serialize/parse round trip.  Validation gathers every problem it can
// find before failing, so a bad config is fixed in one pass.

namespace pcscheck::config {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct DatasetSpec {
  std::string id;
  fs::path csv;
  fs::path metadata;
  std::string dependent;
  std::vector<std::string> independents;  // empty = all non-dependent columns
};

inline const std::vector<perturb::PerturbationKind>& default_pcs_kinds() {
  // The five metadata/prompt stressors; value shuffling stays reserved for
  // building the null arm and is not a default stressor itself.
  static const std::vector<perturb::PerturbationKind> kinds = {
      perturb::PerturbationKind::add_nonsignal_features,
      perturb::PerturbationKind::anonymize_feature_names,
      perturb::PerturbationKind::shuffle_feature_names,
      perturb::PerturbationKind::positive_leading_statement,
      perturb::PerturbationKind::negative_leading_statement,
  };
  return kinds;
}

struct HarnessConfig {
  std::uint64_t master_seed = 1;
  fs::path out_dir = "out";
  int jobs = 1;
  double alpha = 0.05;
  double tau = 0.2;
  int bootstrap_samples = 10000;
  int grid_points = 2048;
  int convergence_bootstrap_samples = 2000;
  bool blocked_bootstrap = false;
  int replicates = 20;
  int pve_replicates = 5;
  std::vector<double> pve_levels = {0.0, 0.01, 0.1};
  std::vector<perturb::PerturbationKind> pcs_kinds = default_pcs_kinds();
  int noise_feature_count = 5;
  int retries = 1;
  std::vector<DatasetSpec> datasets;
  agent::AgentBackend backend = agent::MockBackend{};
  std::vector<std::string> packages = {"pandas", "numpy",        "scipy",
                                       "statsmodels", "scikit-learn", "matplotlib"};
  std::string analysis_template = agent::default_analysis_template();
  std::string confidence_template = agent::default_confidence_template();
  perturb::LeadingStatements statements;
};

namespace detail {

inline json mock_params_to_json(const agent::MockArmParams& p) {
  return json{{"mean", p.mean}, {"sd", p.sd}};
}

inline agent::MockArmParams mock_params_from_json(const json& j, const std::string& where,
                                                  std::vector<std::string>& errors) {
  agent::MockArmParams p;
  if (!j.is_object() || !j.contains("mean") || !j.contains("sd") || !j["mean"].is_number() ||
      !j["sd"].is_number()) {
    errors.push_back(where + " must be an object with numeric 'mean' and 'sd'");
    return p;
  }
  p.mean = j["mean"].get<double>();
  p.sd = j["sd"].get<double>();
  return p;
}

}  // namespace detail

inline json backend_to_json(const agent::AgentBackend& backend) {
  if (const auto* mock = std::get_if<agent::MockBackend>(&backend)) {
    json alt_by_kind = json::object(), null_by_kind = json::object();
    for (const auto& [k, p] : mock->alt_by_kind) alt_by_kind[k] = detail::mock_params_to_json(p);
    for (const auto& [k, p] : mock->null_by_kind) null_by_kind[k] = detail::mock_params_to_json(p);
    return json{{"type", "mock"},
                {"alt", detail::mock_params_to_json(mock->alt)},
                {"null", detail::mock_params_to_json(mock->null_arm)},
                {"confidence", detail::mock_params_to_json(mock->confidence)},
                {"alt_by_kind", alt_by_kind},
                {"null_by_kind", null_by_kind}};
  }
  const auto& cmd = std::get<agent::CommandBackend>(backend);
  return json{{"type", "command"},
              {"command", cmd.command_template},
              {"timeout_seconds", cmd.timeout_seconds},
              {"env_allowlist", cmd.env_allowlist}};
}

inline json config_to_json(const HarnessConfig& c) {
  json datasets = json::array();
  for (const DatasetSpec& d : c.datasets)
    datasets.push_back(json{{"id", d.id},
                            {"csv", d.csv.string()},
                            {"metadata", d.metadata.string()},
                            {"dependent", d.dependent},
                            {"independents", d.independents}});
  json kinds = json::array();
  for (perturb::PerturbationKind k : c.pcs_kinds) kinds.push_back(std::string(perturb::kind_tag(k)));
  return json{{"schema_version", 1},
              {"master_seed", c.master_seed},
              {"out_dir", c.out_dir.string()},
              {"jobs", c.jobs},
              {"alpha", c.alpha},
              {"tau", c.tau},
              {"bootstrap_samples", c.bootstrap_samples},
              {"grid_points", c.grid_points},
              {"convergence_bootstrap_samples", c.convergence_bootstrap_samples},
              {"blocked_bootstrap", c.blocked_bootstrap},
              {"replicates", c.replicates},
              {"pve_replicates", c.pve_replicates},
              {"pve_levels", c.pve_levels},
              {"pcs_kinds", kinds},
              {"noise_feature_count", c.noise_feature_count},
              {"retries", c.retries},
              {"datasets", datasets},
              {"backend", backend_to_json(c.backend)},
              {"packages", c.packages},
              {"templates",
               json{{"analysis", c.analysis_template},
                    {"confidence", c.confidence_template},
                    {"positive_statement", c.statements.positive},
                    {"negative_statement", c.statements.negative}}}};
}

// Parses and validates in one pass, accumulating every problem found.
inline HarnessConfig config_from_json(const json& j) {
  std::vector<std::string> errors;
  HarnessConfig c;
  if (!j.is_object()) throw ValidationError("config must be a JSON object");

  static const std::set<std::string> known = {
      "schema_version",  "master_seed",   "out_dir",   "jobs",
      "alpha",           "tau",           "bootstrap_samples", "grid_points",
      "convergence_bootstrap_samples",    "blocked_bootstrap", "replicates",
      "pve_replicates",  "pve_levels",    "pcs_kinds", "noise_feature_count",
      "retries",         "datasets",      "backend",   "packages",
      "templates"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) errors.push_back("unknown config key '" + key + "'");

  auto take_number = [&](const char* key, auto& slot, auto check, const char* rule) {
    if (!j.contains(key)) return;
    using T = std::decay_t<decltype(slot)>;
    const bool type_ok =
        std::is_integral_v<T> ? j[key].is_number_integer() || j[key].is_number_unsigned()
                              : j[key].is_number();
    if (!type_ok) {
      errors.push_back(std::string(key) + (std::is_integral_v<T> ? " must be an integer"
                                                                 : " must be a number"));
      return;
    }
    T v = j[key].get<T>();
    if (!check(v)) {
      errors.push_back(std::string(key) + " " + rule);
      return;
    }
    slot = v;
  };

  if (j.contains("master_seed")) {
    if (j["master_seed"].is_number_unsigned() || j["master_seed"].is_number_integer())
      c.master_seed = j["master_seed"].get<std::uint64_t>();
    else
      errors.push_back("master_seed must be an unsigned integer");
  }
  if (j.contains("out_dir")) {
    if (j["out_dir"].is_string() && !j["out_dir"].get<std::string>().empty())
      c.out_dir = j["out_dir"].get<std::string>();
    else
      errors.push_back("out_dir must be a non-empty string");
  }
  take_number("jobs", c.jobs, [](int v) { return v >= 1; }, "must be >= 1");
  take_number("alpha", c.alpha, [](double v) { return v > 0.0 && v < 1.0; }, "must be in (0, 1)");
  take_number("tau", c.tau, [](double v) { return v > 0.0 && v < 1.0; }, "must be in (0, 1)");
  take_number("bootstrap_samples", c.bootstrap_samples, [](int v) { return v >= 1; },
              "must be >= 1");
  take_number("grid_points", c.grid_points, [](int v) { return v >= 2; }, "must be >= 2");
  take_number("convergence_bootstrap_samples", c.convergence_bootstrap_samples,
              [](int v) { return v >= 1; }, "must be >= 1");
  take_number("replicates", c.replicates, [](int v) { return v >= 1; }, "must be >= 1");
  take_number("pve_replicates", c.pve_replicates, [](int v) { return v >= 1; }, "must be >= 1");
  take_number("noise_feature_count", c.noise_feature_count, [](int v) { return v >= 1; },
              "must be >= 1");
  take_number("retries", c.retries, [](int v) { return v >= 0; }, "must be >= 0");
  if (j.contains("blocked_bootstrap")) {
    if (j["blocked_bootstrap"].is_boolean())
      c.blocked_bootstrap = j["blocked_bootstrap"].get<bool>();
    else
      errors.push_back("blocked_bootstrap must be a boolean");
  }

  if (j.contains("pve_levels")) {
    if (!j["pve_levels"].is_array()) {
      errors.push_back("pve_levels must be an array of numbers");
    } else {
      c.pve_levels.clear();
      for (const json& v : j["pve_levels"]) {
        if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0)
          errors.push_back("pve_levels entries must be numbers in [0, 1]");
        else
          c.pve_levels.push_back(v.get<double>());
      }
    }
  }

  if (j.contains("pcs_kinds")) {
    if (!j["pcs_kinds"].is_array()) {
      errors.push_back("pcs_kinds must be an array of perturbation tags");
    } else {
      c.pcs_kinds.clear();
      std::set<std::string> seen;
      for (const json& v : j["pcs_kinds"]) {
        if (!v.is_string()) {
          errors.push_back("pcs_kinds entries must be strings");
          continue;
        }
        const std::string tag = v.get<std::string>();
        if (!seen.insert(tag).second) {
          errors.push_back("pcs_kinds repeats '" + tag + "'");
          continue;
        }
        auto kind = perturb::kind_from_tag(tag);
        if (!kind)
          errors.push_back("pcs_kinds has unknown tag '" + tag + "'");
        else
          c.pcs_kinds.push_back(*kind);
      }
      if (c.pcs_kinds.empty()) errors.push_back("pcs_kinds must not be empty");
    }
  }

  if (j.contains("datasets")) {
    if (!j["datasets"].is_array()) {
      errors.push_back("datasets must be an array");
    } else {
      std::set<std::string> ids;
      for (const json& dj : j["datasets"]) {
        DatasetSpec d;
        if (!dj.is_object()) {
          errors.push_back("datasets entries must be objects");
          continue;
        }
        auto str = [&](const char* key, bool required) -> std::string {
          if (!dj.contains(key)) {
            if (required) errors.push_back(std::string("dataset missing '") + key + "'");
            return "";
          }
          if (!dj[key].is_string() || dj[key].get<std::string>().empty()) {
            errors.push_back(std::string("dataset '") + key + "' must be a non-empty string");
            return "";
          }
          return dj[key].get<std::string>();
        };
        d.id = str("id", true);
        d.csv = str("csv", true);
        d.metadata = str("metadata", true);
        d.dependent = str("dependent", true);
        if (!d.id.empty()) {
          if (d.id.find('/') != std::string::npos || d.id.find("__") != std::string::npos)
            errors.push_back("dataset id '" + d.id + "' may not contain '/' or '__'");
          if (!ids.insert(d.id).second) errors.push_back("dataset id '" + d.id + "' repeats");
        }
        if (dj.contains("independents")) {
          if (!dj["independents"].is_array()) {
            errors.push_back("dataset 'independents' must be an array");
          } else {
            std::set<std::string> seen;
            for (const json& v : dj["independents"]) {
              if (!v.is_string() || v.get<std::string>().empty()) {
                errors.push_back("independents entries must be non-empty strings");
                continue;
              }
              const std::string name = v.get<std::string>();
              if (name == d.dependent)
                errors.push_back("dataset '" + d.id + "' lists the dependent '" + name +
                                 "' as an independent");
              else if (!seen.insert(name).second)
                errors.push_back("dataset '" + d.id + "' repeats independent '" + name + "'");
              else
                d.independents.push_back(name);
            }
          }
        }
        static const std::set<std::string> dknown = {"id", "csv", "metadata", "dependent",
                                                     "independents"};
        for (const auto& [key, _] : dj.items())
          if (!dknown.count(key)) errors.push_back("dataset has unknown key '" + key + "'");
        c.datasets.push_back(std::move(d));
      }
    }
  }
  if (c.datasets.empty()) errors.push_back("config needs at least one dataset");

  if (j.contains("backend")) {
    const json& bj = j["backend"];
    if (!bj.is_object() || !bj.contains("type") || !bj["type"].is_string()) {
      errors.push_back("backend must be an object with a 'type' of \"mock\" or \"command\"");
    } else if (bj["type"] == "mock") {
      agent::MockBackend mock;
      if (bj.contains("alt")) mock.alt = detail::mock_params_from_json(bj["alt"], "backend.alt", errors);
      if (bj.contains("null"))
        mock.null_arm = detail::mock_params_from_json(bj["null"], "backend.null", errors);
      if (bj.contains("confidence"))
        mock.confidence =
            detail::mock_params_from_json(bj["confidence"], "backend.confidence", errors);
      for (const char* map_key : {"alt_by_kind", "null_by_kind"}) {
        if (!bj.contains(map_key)) continue;
        if (!bj[map_key].is_object()) {
          errors.push_back(std::string("backend.") + map_key + " must be an object");
          continue;
        }
        for (const auto& [tag, pj] : bj[map_key].items()) {
          if (!perturb::kind_from_tag(tag)) {
            errors.push_back(std::string("backend.") + map_key + " has unknown kind '" + tag + "'");
            continue;
          }
          auto params =
              detail::mock_params_from_json(pj, std::string("backend.") + map_key + "." + tag, errors);
          (std::string(map_key) == "alt_by_kind" ? mock.alt_by_kind : mock.null_by_kind)[tag] =
              params;
        }
      }
      try {
        mock.validate();
      } catch (const ValidationError& e) {
        errors.push_back(e.what());
      }
      c.backend = std::move(mock);
    } else if (bj["type"] == "command") {
      agent::CommandBackend cmd;
      if (bj.contains("command")) {
        if (bj["command"].is_string()) cmd.command_template = bj["command"].get<std::string>();
        else errors.push_back("backend.command must be a string");
      }
      if (bj.contains("timeout_seconds")) {
        if (bj["timeout_seconds"].is_number())
          cmd.timeout_seconds = bj["timeout_seconds"].get<double>();
        else
          errors.push_back("backend.timeout_seconds must be a number");
      }
      if (bj.contains("env_allowlist")) {
        if (bj["env_allowlist"].is_array()) {
          cmd.env_allowlist.clear();
          for (const json& v : bj["env_allowlist"]) {
            if (v.is_string()) cmd.env_allowlist.push_back(v.get<std::string>());
            else errors.push_back("backend.env_allowlist entries must be strings");
          }
        } else {
          errors.push_back("backend.env_allowlist must be an array");
        }
      }
      try {
        cmd.validate();
      } catch (const ValidationError& e) {
        errors.push_back(e.what());
      }
      c.backend = std::move(cmd);
    } else {
      errors.push_back("backend.type must be \"mock\" or \"command\"");
    }
  }

  if (j.contains("packages")) {
    if (!j["packages"].is_array()) {
      errors.push_back("packages must be an array of strings");
    } else {
      c.packages.clear();
      for (const json& v : j["packages"]) {
        if (!v.is_string()) errors.push_back("packages entries must be strings");
        else c.packages.push_back(v.get<std::string>());
      }
    }
  }

  if (j.contains("templates")) {
    const json& tj = j["templates"];
    if (!tj.is_object()) {
      errors.push_back("templates must be an object");
    } else {
      auto tmpl = [&](const char* key, std::string& slot) {
        if (!tj.contains(key)) return;
        if (!tj[key].is_string() || tj[key].get<std::string>().empty())
          errors.push_back(std::string("templates.") + key + " must be a non-empty string");
        else
          slot = tj[key].get<std::string>();
      };
      tmpl("analysis", c.analysis_template);
      tmpl("confidence", c.confidence_template);
      tmpl("positive_statement", c.statements.positive);
      tmpl("negative_statement", c.statements.negative);
      static const std::set<std::string> tknown = {"analysis", "confidence", "positive_statement",
                                                   "negative_statement"};
      for (const auto& [key, _] : tj.items())
        if (!tknown.count(key)) errors.push_back("templates has unknown key '" + key + "'");
    }
  }

  if (!errors.empty()) {
    std::string all = "config invalid:";
    for (const std::string& e : errors) all += "\n  - " + e;
    throw ValidationError(all);
  }
  return c;
}

// Loads a config file; dataset paths are resolved relative to the file's
// directory so a config travels with its data.
inline HarnessConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(tabular::read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  HarnessConfig c = config_from_json(j);
  const fs::path base = path.parent_path();
  for (DatasetSpec& d : c.datasets) {
    if (d.csv.is_relative()) d.csv = base / d.csv;
    if (d.metadata.is_relative()) d.metadata = base / d.metadata;
  }
  return c;
}

}  // namespace pcscheck::config
