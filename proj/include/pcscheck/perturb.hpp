#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcscheck/errors.hpp"
#include "pcscheck/rng.hpp"
#include "pcscheck/tabular.hpp"

// Dataset and prompt perturbations, plus the run plan that enumerates
// (dataset, perturbation, arm, replicate) conditions with derived seeds.

namespace pcscheck::perturb {

using json = nlohmann::json;
using tabular::DatasetMetadata;
using tabular::TabularDataset;

enum class PerturbationKind {
  identity,
  shuffle_feature_values,
  add_nonsignal_features,
  anonymize_feature_names,
  shuffle_feature_names,
  positive_leading_statement,
  negative_leading_statement,
};

inline constexpr std::array<PerturbationKind, 7> all_kinds = {
    PerturbationKind::identity,
    PerturbationKind::shuffle_feature_values,
    PerturbationKind::add_nonsignal_features,
    PerturbationKind::anonymize_feature_names,
    PerturbationKind::shuffle_feature_names,
    PerturbationKind::positive_leading_statement,
    PerturbationKind::negative_leading_statement,
};

inline std::string_view kind_tag(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::identity: return "identity";
    case PerturbationKind::shuffle_feature_values: return "shuffle_feature_values";
    case PerturbationKind::add_nonsignal_features: return "add_nonsignal_features";
    case PerturbationKind::anonymize_feature_names: return "anonymize_feature_names";
    case PerturbationKind::shuffle_feature_names: return "shuffle_feature_names";
    case PerturbationKind::positive_leading_statement: return "positive_leading_statement";
    case PerturbationKind::negative_leading_statement: return "negative_leading_statement";
  }
  return "identity";
}

inline std::optional<PerturbationKind> kind_from_tag(std::string_view tag) {
  for (PerturbationKind k : all_kinds)
    if (kind_tag(k) == tag) return k;
  return std::nullopt;
}

enum class Arm { alt, null_arm };

inline std::string_view arm_tag(Arm a) { return a == Arm::alt ? "alt" : "null"; }

inline std::optional<Arm> arm_from_tag(std::string_view tag) {
  if (tag == "alt") return Arm::alt;
  if (tag == "null") return Arm::null_arm;
  return std::nullopt;
}

struct LeadingStatements {
  std::string positive =
      "Before you begin: I am highly confident, based on prior experience, that the answer to "
      "this question is Yes.";
  std::string negative =
      "Before you begin: I am highly confident, based on prior experience, that the answer to "
      "this question is No.";
};

// ---------------------------------------------------------------------------
// Individual perturbations
// ---------------------------------------------------------------------------

// Independently permutes the values within each feature column, leaving the
// excluded columns (the dependent) untouched.  Each column draws from its own
// derived stream so the result does not depend on column order.
inline TabularDataset shuffle_feature_values(TabularDataset ds, std::uint64_t seed,
                                             const std::vector<std::string>& exclude = {}) {
  for (tabular::Column& col : ds.columns) {
    bool skip = false;
    for (const std::string& name : exclude) skip = skip || (name == col.name);
    if (skip) continue;
    rng::Stream stream(rng::derive(seed, "column", col.name));
    stream.shuffle(col.cells);
  }
  return ds;
}

// Appends `count` pure-noise columns, alternating standard-normal numeric and
// three-level categorical.  Names are nonsignal_1..nonsignal_count, shifted
// past any collisions with existing columns.
inline TabularDataset add_nonsignal_features(TabularDataset ds, int count, std::uint64_t seed) {
  if (count < 1) throw ValidationError("non-signal feature count must be >= 1");
  static const std::array<std::string_view, 3> levels = {"level_a", "level_b", "level_c"};
  const std::size_t rows = ds.row_count();
  int suffix = 0;
  for (int i = 0; i < count; ++i) {
    std::string name;
    do {
      ++suffix;
      name = "nonsignal_" + std::to_string(suffix);
    } while (ds.column_index(name));
    rng::Stream stream(rng::derive(seed, "noise", i));
    tabular::Column col;
    col.name = name;
    col.cells.reserve(rows);
    if (i % 2 == 0) {
      for (std::size_t r = 0; r < rows; ++r)
        col.cells.push_back(tabular::Cell::make_number(stream.next_normal()));
    } else {
      for (std::size_t r = 0; r < rows; ++r)
        col.cells.push_back(
            tabular::Cell::make_text(std::string(levels[stream.next_below(levels.size())])));
    }
    ds.columns.push_back(std::move(col));
  }
  return ds;
}

struct AnonymizedDataset {
  TabularDataset dataset;
  DatasetMetadata metadata;
  std::map<std::string, std::string> mapping;  // original name -> anonymous name
};

// Renames every column to feature1..featureN (in column order) and removes
// the column descriptions, so the agent has only the raw values to go on.
inline AnonymizedDataset anonymize_feature_names(TabularDataset ds, DatasetMetadata meta) {
  AnonymizedDataset out;
  for (std::size_t i = 0; i < ds.columns.size(); ++i) {
    std::string fresh = "feature" + std::to_string(i + 1);
    out.mapping[ds.columns[i].name] = fresh;
    ds.columns[i].name = std::move(fresh);
  }
  meta.column_descriptions.clear();
  out.dataset = std::move(ds);
  out.metadata = std::move(meta);
  return out;
}

// Permutes the header row only; the cells and the metadata stay put, so the
// names no longer line up with their columns (identity draw included).
inline TabularDataset shuffle_feature_names(TabularDataset ds, std::uint64_t seed) {
  std::vector<std::string> names = ds.column_names();
  rng::Stream stream(rng::derive(seed, "names"));
  stream.shuffle(names);
  for (std::size_t i = 0; i < ds.columns.size(); ++i) ds.columns[i].name = std::move(names[i]);
  return ds;
}

enum class Polarity { positive, negative };

inline DatasetMetadata apply_leading_statement(DatasetMetadata meta, Polarity polarity,
                                               const LeadingStatements& statements = {}) {
  const std::string& stmt =
      polarity == Polarity::positive ? statements.positive : statements.negative;
  if (stmt.empty()) throw ValidationError("leading statement template is empty");
  meta.question = stmt + " " + meta.question;
  return meta;
}

// ---------------------------------------------------------------------------
// Run plan
// ---------------------------------------------------------------------------

struct RunCondition {
  std::string dataset_id;
  PerturbationKind kind = PerturbationKind::identity;
  Arm arm = Arm::alt;
  int replicate = 0;
  std::uint64_t seed = 0;

  std::string run_id() const {
    char rep[8];
    std::snprintf(rep, sizeof rep, "r%03d", replicate);
    return dataset_id + "__" + std::string(kind_tag(kind)) + "__" + std::string(arm_tag(arm)) +
           "__" + rep;
  }
};

inline std::uint64_t condition_seed(std::uint64_t master_seed, const std::string& dataset_id,
                                    PerturbationKind kind, Arm arm, int replicate) {
  return rng::derive(master_seed, dataset_id, kind_tag(kind), arm_tag(arm), replicate);
}

// One dataset's full factorial: kinds x arms x replicates, in a fixed
// enumeration order.  Seeds depend only on the condition coordinates, so
// reordering or filtering the plan never changes any run's stream.
inline std::vector<RunCondition> build_run_plan(const std::string& dataset_id,
                                                const std::vector<PerturbationKind>& kinds,
                                                int replicates, std::uint64_t master_seed,
                                                bool include_null = true) {
  if (replicates < 1) throw ValidationError("replicates must be >= 1");
  if (kinds.empty()) throw ValidationError("perturbation kind list is empty");
  std::vector<RunCondition> plan;
  for (PerturbationKind kind : kinds) {
    for (Arm arm : {Arm::alt, Arm::null_arm}) {
      if (arm == Arm::null_arm && !include_null) continue;
      for (int r = 0; r < replicates; ++r)
        plan.push_back({dataset_id, kind, arm, r,
                        condition_seed(master_seed, dataset_id, kind, arm, r)});
    }
  }
  return plan;
}

struct PerturbationContext {
  int noise_feature_count = 5;
  LeadingStatements statements;
};

struct PerturbedInput {
  TabularDataset dataset;
  DatasetMetadata metadata;
  json details = json::object();
};

// Applies a condition: the named perturbation, then (for the null arm) an
// additional feature-value shuffle that severs any dependent/feature link.
inline PerturbedInput apply_condition(const TabularDataset& ds, const DatasetMetadata& meta,
                                      const std::string& dependent, const RunCondition& cond,
                                      const PerturbationContext& ctx = {}) {
  PerturbedInput out{ds, meta, json::object()};
  out.details["kind"] = std::string(kind_tag(cond.kind));
  out.details["arm"] = std::string(arm_tag(cond.arm));
  const std::uint64_t perturb_seed = rng::derive(cond.seed, "perturb");
  switch (cond.kind) {
    case PerturbationKind::identity:
      break;
    case PerturbationKind::shuffle_feature_values:
      out.dataset = shuffle_feature_values(std::move(out.dataset), perturb_seed, {dependent});
      break;
    case PerturbationKind::add_nonsignal_features: {
      std::size_t before = out.dataset.column_count();
      out.dataset =
          add_nonsignal_features(std::move(out.dataset), ctx.noise_feature_count, perturb_seed);
      json added = json::array();
      for (std::size_t i = before; i < out.dataset.column_count(); ++i)
        added.push_back(out.dataset.columns[i].name);
      out.details["added_columns"] = added;
      break;
    }
    case PerturbationKind::anonymize_feature_names: {
      auto anon = anonymize_feature_names(std::move(out.dataset), std::move(out.metadata));
      out.dataset = std::move(anon.dataset);
      out.metadata = std::move(anon.metadata);
      out.details["mapping"] = anon.mapping;
      break;
    }
    case PerturbationKind::shuffle_feature_names: {
      std::vector<std::string> before = out.dataset.column_names();
      out.dataset = shuffle_feature_names(std::move(out.dataset), perturb_seed);
      out.details["original_names"] = before;
      out.details["shuffled_names"] = out.dataset.column_names();
      break;
    }
    case PerturbationKind::positive_leading_statement:
      out.metadata = apply_leading_statement(std::move(out.metadata), Polarity::positive,
                                             ctx.statements);
      break;
    case PerturbationKind::negative_leading_statement:
      out.metadata = apply_leading_statement(std::move(out.metadata), Polarity::negative,
                                             ctx.statements);
      break;
  }
  if (cond.arm == Arm::null_arm) {
    std::string shuffled_dependent = dependent;
    if (cond.kind == PerturbationKind::anonymize_feature_names) {
      // After anonymization the dependent carries its fresh name.
      shuffled_dependent = out.details["mapping"].at(dependent).get<std::string>();
    } else if (cond.kind == PerturbationKind::shuffle_feature_names) {
      // Names moved but cells did not; protect the dependent's cells, which
      // now sit under whichever label landed on that column.
      auto original = out.details["original_names"].get<std::vector<std::string>>();
      for (std::size_t i = 0; i < original.size(); ++i)
        if (original[i] == dependent) shuffled_dependent = out.dataset.columns[i].name;
    }
    out.dataset = shuffle_feature_values(std::move(out.dataset),
                                         rng::derive(cond.seed, "null_shuffle"),
                                         {shuffled_dependent});
    out.details["null_shuffle"] = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plan (de)serialization
// ---------------------------------------------------------------------------

struct RunPlan {
  std::uint64_t master_seed = 0;
  std::vector<RunCondition> conditions;
  json config_snapshot = json::object();
};

inline json plan_to_json(const RunPlan& plan) {
  json conds = json::array();
  for (const RunCondition& c : plan.conditions)
    conds.push_back(json{{"dataset_id", c.dataset_id},
                         {"kind", std::string(kind_tag(c.kind))},
                         {"arm", std::string(arm_tag(c.arm))},
                         {"replicate", c.replicate},
                         {"seed", c.seed},
                         {"run_id", c.run_id()}});
  return json{{"schema_version", 1},
              {"master_seed", plan.master_seed},
              {"conditions", conds},
              {"config", plan.config_snapshot}};
}

inline RunPlan plan_from_json(const json& j) {
  if (!j.is_object() || !j.contains("conditions") || !j["conditions"].is_array())
    throw ValidationError("plan JSON needs a 'conditions' array");
  RunPlan plan;
  plan.master_seed = j.value("master_seed", std::uint64_t{0});
  if (j.contains("config")) plan.config_snapshot = j["config"];
  std::set<std::string> ids;
  for (const json& cj : j["conditions"]) {
    RunCondition c;
    c.dataset_id = cj.at("dataset_id").get<std::string>();
    auto kind = kind_from_tag(cj.at("kind").get<std::string>());
    if (!kind)
      throw ValidationError("plan has unknown perturbation kind '" +
                            cj.at("kind").get<std::string>() + "'");
    c.kind = *kind;
    auto arm = arm_from_tag(cj.at("arm").get<std::string>());
    if (!arm)
      throw ValidationError("plan has unknown arm '" + cj.at("arm").get<std::string>() + "'");
    c.arm = *arm;
    c.replicate = cj.at("replicate").get<int>();
    if (c.replicate < 0) throw ValidationError("plan has negative replicate index");
    c.seed = cj.at("seed").get<std::uint64_t>();
    if (!ids.insert(c.run_id()).second)
      throw ValidationError("plan repeats run id '" + c.run_id() + "'");
    plan.conditions.push_back(std::move(c));
  }
  if (plan.conditions.empty()) throw ValidationError("plan has no conditions");
  return plan;
}

}  // namespace pcscheck::perturb
