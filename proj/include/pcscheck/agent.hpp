#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "pcscheck/errors.hpp"
#include "pcscheck/perturb.hpp"
#include "pcscheck/rng.hpp"
#include "pcscheck/tabular.hpp"

// Agent execution: per-run workspaces, prompt rendering, a pluggable backend
// (external command or deterministic mock), and conclusion/confidence
// parsing.

namespace pcscheck::agent {

namespace fs = std::filesystem;
using json = nlohmann::json;
using perturb::RunCondition;

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

// Default instruction file for the analyst agent.  `{dataset_name}`,
// `{subdirectory_path}`, `{question}` and `{packages_note}` are the
// recognized placeholders; custom templates may use any subset.  The
// `poetry run python` line and packages.txt reference are opaque template
// text, not semantics this harness enforces.
inline const std::string& default_analysis_template() {
  static const std::string text = R"PROMPT(You are an expert data scientist tasked with analyzing a dataset to answer a specific research question.
The research question is contained in the 'info.json' file along with metadata about the dataset.
Use the metadata from 'info.json' to understand the dataset structure and context.
The dataset itself is provided in the '{dataset_name}.csv' file.
You only have access to the '{subdirectory_path}' subdirectory and its contents - no other files or directories.
Create a data analysis that answers the research question.
You are allowed to import packages that are listed in the provided 'packages.txt' file (along with their installed versions) to help with your analysis.
When executing Python scripts, ALWAYS use the command 'poetry run python <filename.py>'. Never use 'python' or 'python3' directly.
Your data analysis should result in two outputs:
(1) an integer scalar that places your "Yes" or "No" response on a Likert scale from 0 to 100,
where 0 represents a strong "No" answer and 100 represents a strong "Yes" answer, and
(2) an explanation of the reasoning and evidence that led you to your conclusion.
When asked if a relationship between two variables exist, follow best practices taking into account
statistical significance when determining the Yes/No answer as well as its strength on the Likert scale.
For example, two variables which lack evidence of a relationship (though consistent statistical significance) should receive a "No" answer
with a scale value reflecting the lack of such evidence, while relationships that are consistently statistically significant
should receive "Yes" answers with scale values reflecting the strength of their relationship.
These outputs must be written to a file called 'conclusion.txt' in JSON format, with the integer scalar stored under the key "response" and the explanation stored under the key "explanation".
The 'conclusion.txt' file must contain ONLY this JSON object, with no additional text or lines.

Research question: {question}
)PROMPT";
  return text;
}

// Default instruction file for the supervising agent that scores confidence
// in an existing conclusion.
inline const std::string& default_confidence_template() {
  static const std::string text = R"PROMPT(You are an expert data scientist tasked with reviewing an analysis of a dataset to answer a specific research question.
The research question is contained in the 'info.json' file along with metadata about the dataset, which is itself provided in the '{dataset_name}.csv' file.
You only have access to the '{subdirectory_path}' subdirectory and its contents - no other files or directories.
Your task is to evaluate your confidence in the conclusion of the analysis, which is contained in the 'conclusion.txt' file in the subdirectory.
The 'conclusion.txt' file contains two pieces of information: (1) the "response", an integer scalar that represents the analyst's answer on a Likert scale from 0 to 100, where 0 represents a strong "No" answer and 100 represents a strong "Yes" answer,
and (2) the "explanation", a text string that provides the analyst's reasoning and evidence that led them to their conclusion.
You are NOT to run any analyses of your own to evaluate the confidence of the conclusion.
Your task is only to evaluate the confidence of the conclusion based on your knowledge of data science and the information provided in the subdirectory, including the conclusion itself.
This confidence must be an integer from 0 to 100, where the number represents:
- If you were to reconduct this analysis 100 times with slightly different reasonable decisions in the data science pipeline, how many times would you expect to get an answer more positive (larger on the Likert scale) than the seen in the conclusion?
Your confidence must be written to a file called 'confidence.txt' in JSON format, with the integer scalar stored under the key "confidence" and your explanation stored under the key "explanation".
The 'confidence.txt' file must contain ONLY this JSON object, with no additional text or lines.
)PROMPT";
  return text;
}

namespace detail {

inline bool placeholder_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Substitutes {name} tokens.  Tokens not in `values` are collected so the
// caller can either reject them (prompts) or leave them alone (shell text).
inline std::string substitute(std::string_view tmpl,
                              const std::map<std::string, std::string>& values,
                              std::vector<std::string>* unresolved) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      std::size_t j = i + 1;
      while (j < tmpl.size() && placeholder_char(tmpl[j])) ++j;
      if (j > i + 1 && j < tmpl.size() && tmpl[j] == '}') {
        std::string name(tmpl.substr(i + 1, j - i - 1));
        auto it = values.find(name);
        if (it != values.end()) {
          out += it->second;
        } else {
          if (unresolved &&
              std::find(unresolved->begin(), unresolved->end(), name) == unresolved->end())
            unresolved->push_back(name);
          out += tmpl.substr(i, j - i + 1);
        }
        i = j + 1;
        continue;
      }
    }
    out += tmpl[i++];
  }
  return out;
}

inline std::string render_prompt(std::string_view tmpl,
                                 const std::map<std::string, std::string>& values) {
  std::vector<std::string> unresolved;
  std::string out = substitute(tmpl, values, &unresolved);
  if (!unresolved.empty()) {
    std::string names;
    for (const std::string& n : unresolved) {
      if (!names.empty()) names += ", ";
      names += "{" + n + "}";
    }
    throw ValidationError("prompt template has unresolved placeholders: " + names);
  }
  return out;
}

}  // namespace detail

inline std::string render_analysis_prompt(const tabular::DatasetMetadata& metadata,
                                          const std::string& dataset_name,
                                          const std::string& workspace_path,
                                          const std::string& packages_note = "",
                                          const std::string& tmpl = default_analysis_template()) {
  return detail::render_prompt(tmpl, {{"dataset_name", dataset_name},
                                      {"subdirectory_path", workspace_path},
                                      {"question", metadata.question},
                                      {"packages_note", packages_note}});
}

inline std::string render_confidence_prompt(const tabular::DatasetMetadata& metadata,
                                            const std::string& dataset_name,
                                            const std::string& workspace_path,
                                            const std::string& tmpl = default_confidence_template()) {
  return detail::render_prompt(tmpl, {{"dataset_name", dataset_name},
                                      {"subdirectory_path", workspace_path},
                                      {"question", metadata.question}});
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

struct MockArmParams {
  double mean = 50.0;
  double sd = 5.0;
};

// Deterministic stand-in for a real agent: scores are
// clamp(round(Normal(mu(arm, kind), sigma(arm, kind))), 0, 100) drawn from a
// stream derived from the condition seed, so re-execution reproduces the
// conclusion file byte for byte.
struct MockBackend {
  MockArmParams alt{70.0, 5.0};
  MockArmParams null_arm{25.0, 5.0};
  std::map<std::string, MockArmParams> alt_by_kind;    // perturbation tag -> override
  std::map<std::string, MockArmParams> null_by_kind;
  MockArmParams confidence{50.0, 10.0};

  const MockArmParams& params_for(const RunCondition& cond) const {
    const auto& by_kind = cond.arm == perturb::Arm::alt ? alt_by_kind : null_by_kind;
    auto it = by_kind.find(std::string(perturb::kind_tag(cond.kind)));
    if (it != by_kind.end()) return it->second;
    return cond.arm == perturb::Arm::alt ? alt : null_arm;
  }

  void validate() const {
    auto check = [](const MockArmParams& p, const char* where) {
      if (!(p.sd >= 0.0)) throw ValidationError(std::string("mock sd must be >= 0 (") + where + ")");
      if (!std::isfinite(p.mean)) throw ValidationError(std::string("mock mean must be finite (") + where + ")");
    };
    check(alt, "alt");
    check(null_arm, "null");
    check(confidence, "confidence");
    for (const auto& [k, p] : alt_by_kind) check(p, k.c_str());
    for (const auto& [k, p] : null_by_kind) check(p, k.c_str());
  }
};

struct CommandBackend {
  std::string command_template =
      "npx codex exec --cd {workspace} --config model_reasoning_effort=\"high\" "
      "--sandbox workspace-write \"Follow the instructions given in 'AGENTS.md'\"";
  double timeout_seconds = 1800.0;
  std::vector<std::string> env_allowlist = {"PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "TERM"};

  void validate() const {
    if (command_template.find("{workspace}") == std::string::npos)
      throw ValidationError("command template must contain the {workspace} placeholder");
    if (!(timeout_seconds > 0.0)) throw ValidationError("timeout must be positive");
  }
};

using AgentBackend = std::variant<MockBackend, CommandBackend>;

inline void validate_backend(const AgentBackend& backend) {
  std::visit([](const auto& b) { b.validate(); }, backend);
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

enum class RunStatus { ok, agent_error, parse_error, timeout };

inline std::string_view status_tag(RunStatus s) {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::agent_error: return "agent_error";
    case RunStatus::parse_error: return "parse_error";
    case RunStatus::timeout: return "timeout";
  }
  return "agent_error";
}

inline std::optional<RunStatus> status_from_tag(std::string_view tag) {
  for (RunStatus s :
       {RunStatus::ok, RunStatus::agent_error, RunStatus::parse_error, RunStatus::timeout})
    if (status_tag(s) == tag) return s;
  return std::nullopt;
}

struct ResponseRecord {
  std::string run_id;
  RunCondition condition;
  int score = -1;
  std::string explanation;
  RunStatus status = RunStatus::agent_error;
  double wall_time = 0.0;
  std::string workspace;  // relative to the output root where possible
  int attempts = 1;
  std::string error;      // parse/spawn detail when status != ok
  std::string raw;        // offending file content preserved for audit
};

struct ConfidenceRecord {
  std::string run_id;
  int confidence = -1;
  std::string explanation;
  RunStatus status = RunStatus::agent_error;
  double wall_time = 0.0;
  int attempts = 1;
  std::string error;
  std::string raw;
};

// ---------------------------------------------------------------------------
// Workspace preparation
// ---------------------------------------------------------------------------

struct WorkspaceOptions {
  std::vector<std::string> packages;  // one line each in packages.txt
  std::string analysis_template = default_analysis_template();
  std::string packages_note;
  bool resume = false;
};

// Creates root/<run_id>/ with exactly: <dataset_name>.csv, info.json,
// AGENTS.md, packages.txt.  The dataset passed here is the already-perturbed
// one for the condition.  An existing workspace is an error unless resuming,
// in which case it is left untouched.
inline fs::path prepare_workspace(const tabular::TabularDataset& dataset,
                                  const tabular::DatasetMetadata& metadata,
                                  const RunCondition& condition, const fs::path& root,
                                  const WorkspaceOptions& opts = {}) {
  const fs::path ws = root / condition.run_id();
  if (fs::exists(ws)) {
    if (opts.resume) return ws;
    throw ValidationError("workspace already exists for run '" + condition.run_id() +
                          "'; pass the resume flag to reuse it");
  }
  std::error_code ec;
  fs::create_directories(ws, ec);
  if (ec) throw HarnessError("cannot create workspace " + ws.string() + ": " + ec.message());
  tabular::write_dataset(dataset, metadata, ws);
  tabular::write_file(ws / "AGENTS.md",
                      render_analysis_prompt(metadata, dataset.name, ws.string(),
                                             opts.packages_note, opts.analysis_template));
  std::string pkgs;
  for (const std::string& p : opts.packages) pkgs += p + "\n";
  tabular::write_file(ws / "packages.txt", pkgs);
  return ws;
}

// Swaps the instruction file for the supervisor prompt ahead of the
// confidence pass.  Everything the analyst produced stays in place.
inline void stage_confidence_prompt(const fs::path& workspace,
                                    const tabular::DatasetMetadata& metadata,
                                    const std::string& dataset_name,
                                    const std::string& tmpl = default_confidence_template()) {
  tabular::write_file(workspace / "AGENTS.md",
                      render_confidence_prompt(metadata, dataset_name, workspace.string(), tmpl));
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

enum class Phase { analysis, confidence };

struct ExecOutcome {
  int exit_status = -1;       // 128+signal if killed
  bool timed_out = false;
  bool spawn_failed = false;
  double duration = 0.0;      // seconds; 0 for the mock
  std::string message;
};

namespace detail {

inline ExecOutcome run_command(const std::string& command, const fs::path& cwd,
                               double timeout_seconds,
                               const std::vector<std::string>& env_allowlist) {
  ExecOutcome out;
  std::vector<std::string> env_strings;
  for (const std::string& name : env_allowlist)
    if (const char* v = std::getenv(name.c_str())) env_strings.push_back(name + "=" + v);
  std::vector<char*> envp;
  envp.reserve(env_strings.size() + 1);
  for (std::string& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);

  const std::string log_path = (cwd / "agent.log").string();
  const auto start = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0) {
    out.spawn_failed = true;
    out.message = "fork failed";
    return out;
  }
  if (pid == 0) {
    // Child: own process group so the whole command tree can be signalled.
    ::setpgid(0, 0);
    if (::chdir(cwd.c_str()) != 0) ::_exit(127);
    int logfd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (logfd >= 0) {
      ::dup2(logfd, STDOUT_FILENO);
      ::dup2(logfd, STDERR_FILENO);
      if (logfd > STDERR_FILENO) ::close(logfd);
    }
    const char* argv[] = {"/bin/sh", "-c", command.c_str(), nullptr};
    ::execve("/bin/sh", const_cast<char* const*>(argv), envp.data());
    ::_exit(127);
  }

  const auto deadline = start + std::chrono::duration<double>(timeout_seconds);
  int wstatus = 0;
  bool reaped = false;
  while (true) {
    pid_t r = ::waitpid(pid, &wstatus, WNOHANG);
    if (r == pid) {
      reaped = true;
      break;
    }
    if (r < 0) break;
    if (std::chrono::steady_clock::now() >= deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  if (!reaped) {
    out.timed_out = true;
    ::kill(-pid, SIGTERM);
    const auto grace = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    while (std::chrono::steady_clock::now() < grace) {
      if (::waitpid(pid, &wstatus, WNOHANG) == pid) {
        reaped = true;
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
    if (!reaped) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &wstatus, 0);
    }
  }
  out.duration = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (WIFEXITED(wstatus)) out.exit_status = WEXITSTATUS(wstatus);
  else if (WIFSIGNALED(wstatus)) out.exit_status = 128 + WTERMSIG(wstatus);
  if (out.timed_out) out.message = "timed out after " + std::to_string(timeout_seconds) + " s";
  else if (out.exit_status != 0) out.message = "exit status " + std::to_string(out.exit_status);
  return out;
}

inline int mock_draw(const MockArmParams& params, std::uint64_t seed) {
  rng::Stream stream(seed);
  const double v = stream.next_normal(params.mean, params.sd);
  const double clamped = std::clamp(std::round(v), 0.0, 100.0);
  return static_cast<int>(clamped);
}

}  // namespace detail

inline std::string render_command(const CommandBackend& backend, const fs::path& workspace,
                                  const std::string& dataset_name) {
  // Unknown {tokens} are left verbatim: braces are legitimate shell syntax.
  return detail::substitute(backend.command_template,
                            {{"workspace", workspace.string()}, {"dataset_name", dataset_name}},
                            nullptr);
}

inline ExecOutcome execute_agent(const AgentBackend& backend, const fs::path& workspace,
                                 const RunCondition& condition, Phase phase = Phase::analysis,
                                 const std::string& dataset_name = "") {
  if (const MockBackend* mock = std::get_if<MockBackend>(&backend)) {
    ExecOutcome out;
    out.exit_status = 0;
    if (phase == Phase::analysis) {
      const int score =
          detail::mock_draw(mock->params_for(condition), rng::derive(condition.seed, "mock_score"));
      json doc{{"response", score},
               {"explanation",
                "Mock analysis for run " + condition.run_id() +
                    ": score drawn from the configured arm model."}};
      tabular::write_file(workspace / "conclusion.txt", doc.dump() + "\n");
    } else {
      const int conf =
          detail::mock_draw(mock->confidence, rng::derive(condition.seed, "mock_conf"));
      json doc{{"confidence", conf},
               {"explanation",
                "Mock confidence for run " + condition.run_id() +
                    ": drawn from the configured confidence model."}};
      tabular::write_file(workspace / "confidence.txt", doc.dump() + "\n");
    }
    return out;
  }
  const CommandBackend& cmd = std::get<CommandBackend>(backend);
  return detail::run_command(render_command(cmd, workspace, dataset_name), workspace,
                             cmd.timeout_seconds, cmd.env_allowlist);
}

// ---------------------------------------------------------------------------
// Output parsing
// ---------------------------------------------------------------------------

namespace detail {

struct ParsedScalar {
  bool ok = false;
  int value = -1;
  std::string explanation;
  std::string error;
  std::string raw;
};

// Strict read of {"<key>": <int 0..100>, "explanation": <non-empty string>}
// with nothing before, after, or besides those two members.
inline ParsedScalar parse_scalar_file(const fs::path& path, const std::string& key) {
  ParsedScalar out;
  if (!fs::exists(path)) {
    out.error = path.filename().string() + " missing";
    return out;
  }
  std::string content = tabular::read_file(path);
  out.raw = content.size() > 4096 ? content.substr(0, 4096) + "...[truncated]" : content;
  json doc;
  try {
    doc = json::parse(content);  // rejects trailing non-whitespace content
  } catch (const json::parse_error& e) {
    out.error = std::string("invalid JSON: ") + e.what();
    return out;
  }
  if (!doc.is_object()) {
    out.error = "top-level value is not an object";
    return out;
  }
  for (const auto& [k, _] : doc.items()) {
    if (k != key && k != "explanation") {
      out.error = "unexpected key '" + k + "'";
      return out;
    }
  }
  if (!doc.contains(key)) {
    out.error = "missing key '" + key + "'";
    return out;
  }
  if (!doc[key].is_number_integer()) {
    out.error = "'" + key + "' is not an integer";
    return out;
  }
  const auto v = doc[key].get<std::int64_t>();
  if (v < 0 || v > 100) {
    out.error = "'" + key + "' out of range: " + std::to_string(v);
    return out;
  }
  if (!doc.contains("explanation") || !doc["explanation"].is_string()) {
    out.error = "missing string 'explanation'";
    return out;
  }
  out.explanation = doc["explanation"].get<std::string>();
  if (out.explanation.empty()) {
    out.error = "'explanation' is empty";
    return out;
  }
  out.ok = true;
  out.value = static_cast<int>(v);
  return out;
}

}  // namespace detail

inline ResponseRecord parse_conclusion(const fs::path& workspace, const RunCondition& condition) {
  ResponseRecord rec;
  rec.run_id = condition.run_id();
  rec.condition = condition;
  rec.workspace = workspace.string();
  auto parsed = detail::parse_scalar_file(workspace / "conclusion.txt", "response");
  if (parsed.ok) {
    rec.status = RunStatus::ok;
    rec.score = parsed.value;
    rec.explanation = std::move(parsed.explanation);
  } else {
    rec.status = RunStatus::parse_error;
    rec.error = std::move(parsed.error);
    rec.raw = std::move(parsed.raw);
  }
  return rec;
}

inline ConfidenceRecord parse_confidence(const fs::path& workspace, const RunCondition& condition) {
  ConfidenceRecord rec;
  rec.run_id = condition.run_id();
  auto parsed = detail::parse_scalar_file(workspace / "confidence.txt", "confidence");
  if (parsed.ok) {
    rec.status = RunStatus::ok;
    rec.confidence = parsed.value;
    rec.explanation = std::move(parsed.explanation);
  } else {
    rec.status = RunStatus::parse_error;
    rec.error = std::move(parsed.error);
    rec.raw = std::move(parsed.raw);
  }
  return rec;
}

}  // namespace pcscheck::agent
