#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcscheck/agent.hpp"
#include "pcscheck/checks.hpp"
#include "pcscheck/errors.hpp"
#include "pcscheck/perturb.hpp"
#include "pcscheck/rng.hpp"

// Append-only JSONL run ledger.  The first line is a header binding the
// ledger to a plan fingerprint and config snapshot; every later line is a
// response or confidence record.  Replaying a ledger reconstructs exactly
// the score distributions any report was computed from.

namespace pcscheck::ledger {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string fingerprint_hex(const json& doc) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(rng::fnv1a(doc.dump())));
  return std::string(buf);
}

inline json condition_to_json(const perturb::RunCondition& c) {
  return json{{"dataset_id", c.dataset_id},
              {"kind", std::string(perturb::kind_tag(c.kind))},
              {"arm", std::string(perturb::arm_tag(c.arm))},
              {"replicate", c.replicate},
              {"seed", c.seed}};
}

inline perturb::RunCondition condition_from_json(const json& j) {
  perturb::RunCondition c;
  c.dataset_id = j.at("dataset_id").get<std::string>();
  auto kind = perturb::kind_from_tag(j.at("kind").get<std::string>());
  auto arm = perturb::arm_from_tag(j.at("arm").get<std::string>());
  if (!kind || !arm) throw ValidationError("ledger condition has unknown kind or arm");
  c.kind = *kind;
  c.arm = *arm;
  c.replicate = j.at("replicate").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline json response_to_json(const agent::ResponseRecord& r) {
  json j{{"type", "response"},
         {"run_id", r.run_id},
         {"condition", condition_to_json(r.condition)},
         {"score", r.score},
         {"explanation", r.explanation},
         {"status", std::string(agent::status_tag(r.status))},
         {"wall_time", r.wall_time},
         {"workspace", r.workspace},
         {"attempts", r.attempts}};
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.raw.empty()) j["raw"] = r.raw;
  return j;
}

inline agent::ResponseRecord response_from_json(const json& j) {
  agent::ResponseRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.condition = condition_from_json(j.at("condition"));
  r.score = j.at("score").get<int>();
  r.explanation = j.at("explanation").get<std::string>();
  auto status = agent::status_from_tag(j.at("status").get<std::string>());
  if (!status) throw ValidationError("ledger has unknown status tag");
  r.status = *status;
  r.wall_time = j.at("wall_time").get<double>();
  r.workspace = j.at("workspace").get<std::string>();
  r.attempts = j.value("attempts", 1);
  r.error = j.value("error", std::string{});
  r.raw = j.value("raw", std::string{});
  if (r.run_id != r.condition.run_id())
    throw ValidationError("ledger run_id '" + r.run_id + "' does not match its condition");
  if (r.status == agent::RunStatus::ok && (r.score < 0 || r.score > 100))
    throw ValidationError("ledger ok record with score out of range");
  return r;
}

inline json confidence_to_json(const agent::ConfidenceRecord& r) {
  json j{{"type", "confidence"},
         {"run_id", r.run_id},
         {"confidence", r.confidence},
         {"explanation", r.explanation},
         {"status", std::string(agent::status_tag(r.status))},
         {"wall_time", r.wall_time},
         {"attempts", r.attempts}};
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.raw.empty()) j["raw"] = r.raw;
  return j;
}

inline agent::ConfidenceRecord confidence_from_json(const json& j) {
  agent::ConfidenceRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.confidence = j.at("confidence").get<int>();
  r.explanation = j.at("explanation").get<std::string>();
  auto status = agent::status_from_tag(j.at("status").get<std::string>());
  if (!status) throw ValidationError("ledger has unknown status tag");
  r.status = *status;
  r.wall_time = j.at("wall_time").get<double>();
  r.attempts = j.value("attempts", 1);
  r.error = j.value("error", std::string{});
  r.raw = j.value("raw", std::string{});
  return r;
}

struct LedgerContents {
  json header;  // null when the file had none
  std::vector<agent::ResponseRecord> responses;
  std::vector<agent::ConfidenceRecord> confidences;

  bool has_response(const std::string& run_id) const {
    for (const auto& r : responses)
      if (r.run_id == run_id) return true;
    return false;
  }
};

inline json make_header(std::uint64_t master_seed, const json& plan_json,
                        const json& config_snapshot) {
  return json{{"type", "header"},
              {"schema_version", 1},
              {"master_seed", master_seed},
              {"plan_fingerprint", fingerprint_hex(plan_json)},
              {"config", config_snapshot}};
}

inline void append_line(const fs::path& path, const json& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw HarnessError("cannot append to ledger " + path.string());
  const std::string text = line.dump() + "\n";
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw HarnessError("short write to ledger " + path.string());
}

inline LedgerContents read_ledger(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open ledger " + path.string());
  LedgerContents contents;
  std::set<std::string> response_ids, confidence_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError("ledger " + path.string() + " line " + std::to_string(lineno) +
                            " is not valid JSON: " + e.what());
    }
    const std::string type = j.value("type", std::string{});
    if (type == "header") {
      if (!contents.header.is_null())
        throw ValidationError("ledger has more than one header line");
      contents.header = j;
    } else if (type == "response") {
      agent::ResponseRecord r = response_from_json(j);
      if (!response_ids.insert(r.run_id).second)
        throw ValidationError("ledger repeats response run_id '" + r.run_id + "'");
      contents.responses.push_back(std::move(r));
    } else if (type == "confidence") {
      agent::ConfidenceRecord r = confidence_from_json(j);
      if (!confidence_ids.insert(r.run_id).second)
        throw ValidationError("ledger repeats confidence run_id '" + r.run_id + "'");
      contents.confidences.push_back(std::move(r));
    } else {
      throw ValidationError("ledger line " + std::to_string(lineno) + " has unknown type '" +
                            type + "'");
    }
  }
  return contents;
}

// ---------------------------------------------------------------------------
// Replay: ledger -> per-dataset distribution pairs
// ---------------------------------------------------------------------------

struct ArmCounts {
  int ok = 0;
  int agent_error = 0;
  int parse_error = 0;
  int timeout = 0;

  void add(agent::RunStatus s) {
    switch (s) {
      case agent::RunStatus::ok: ++ok; break;
      case agent::RunStatus::agent_error: ++agent_error; break;
      case agent::RunStatus::parse_error: ++parse_error; break;
      case agent::RunStatus::timeout: ++timeout; break;
    }
  }
};

struct AssembledDataset {
  checks::DistributionPair pair;
  ArmCounts alt_counts;
  ArmCounts null_counts;
};

// Groups ok-status scores into per-dataset alt/null samples, blocked by
// perturbation kind.  Records are taken in run_id order, so the result is a
// pure function of the ledger's record set, not of append order.
inline std::map<std::string, AssembledDataset> assemble(const LedgerContents& contents) {
  std::vector<const agent::ResponseRecord*> sorted;
  sorted.reserve(contents.responses.size());
  for (const auto& r : contents.responses) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->run_id < b->run_id; });

  std::map<std::string, AssembledDataset> out;
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<std::size_t>>>>
      block_index;  // dataset -> arm -> kind -> indices
  for (const agent::ResponseRecord* r : sorted) {
    AssembledDataset& slot = out[r->condition.dataset_id];
    slot.pair.dataset_id = r->condition.dataset_id;
    const bool is_alt = r->condition.arm == perturb::Arm::alt;
    (is_alt ? slot.alt_counts : slot.null_counts).add(r->status);
    if (r->status != agent::RunStatus::ok) continue;
    stats::ScoreSample& sample = is_alt ? slot.pair.alt : slot.pair.null_sample;
    auto& ids = is_alt ? slot.pair.alt_run_ids : slot.pair.null_run_ids;
    block_index[r->condition.dataset_id][std::string(perturb::arm_tag(r->condition.arm))]
               [std::string(perturb::kind_tag(r->condition.kind))]
                   .push_back(sample.scores.size());
    sample.scores.push_back(static_cast<double>(r->score));
    ids.push_back(r->run_id);
  }
  for (auto& [dataset_id, slot] : out) {
    for (const char* arm : {"alt", "null"}) {
      stats::ScoreSample& sample =
          std::string(arm) == "alt" ? slot.pair.alt : slot.pair.null_sample;
      for (auto& [kind, indices] : block_index[dataset_id][arm]) {
        sample.block_labels.push_back(kind);
        sample.blocks.push_back(std::move(indices));
      }
      if (sample.blocks.size() <= 1) {
        sample.blocks.clear();
        sample.block_labels.clear();
      }
    }
  }
  return out;
}

}  // namespace pcscheck::ledger
