#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "pcscheck/ledger.hpp"
#include "pcscheck/tabular.hpp"

using namespace pcscheck;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(PCSCHECK_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -2;
}

struct Fixture {
  fs::path root;
  fs::path config_path;
  fs::path log;

  explicit Fixture(const std::string& name) {
    root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    fs::create_directories(root / "data");
    log = root / "cli.log";

    // 40 rows with real signal: y = 2x + small periodic wobble.
    std::string csv = "y,x,grp\n";
    for (int i = 0; i < 40; ++i)
      csv += std::to_string(2 * i + (i % 7)) + "," + std::to_string(i) + "," +
             (i % 2 == 0 ? "even" : "odd") + "\n";
    tabular::write_file(root / "data" / "demo.csv", csv);
    tabular::write_file(root / "data" / "info.json",
                        json{{"schema_version", 1},
                             {"dataset_name", "demo"},
                             {"question", "Does x predict y?"},
                             {"column_descriptions",
                              json::array({json{{"name", "y"}, {"description", "outcome"}},
                                           json{{"name", "x"}, {"description", "driver"}},
                                           json{{"name", "grp"}, {"description", "parity"}}})}}
                                .dump(2) +
                            "\n");

    const json cfg{{"master_seed", 7},
                   {"out_dir", (root / "out").string()},
                   {"replicates", 3},
                   {"bootstrap_samples", 1500},
                   {"convergence_bootstrap_samples", 300},
                   {"pve_replicates", 2},
                   {"datasets", json::array({json{{"id", "demo"},
                                                  {"csv", "data/demo.csv"},
                                                  {"metadata", "data/info.json"},
                                                  {"dependent", "y"}}})}};
    config_path = root / "config.json";
    tabular::write_file(config_path, cfg.dump(2) + "\n");
  }

  std::string common(const fs::path& out) const {
    return "--config '" + config_path.string() + "' --out '" + out.string() + "'";
  }
};

std::string slurp(const fs::path& p) { return tabular::read_file(p); }

}  // namespace

TEST_CASE("full pipeline on the mock backend") {
  Fixture fx("pcscheck_pipeline_e2e");
  const fs::path out = fx.root / "out";

  SECTION("plan, run, analyze, downstream commands") {
    REQUIRE(run_cli("plan " + fx.common(out), fx.log) == 0);
    const json plan = json::parse(slurp(out / "plan.json"));
    REQUIRE(plan.at("conditions").size() == 30);  // 5 kinds x 2 arms x 3 replicates
    std::set<std::string> ids;
    for (const auto& c : plan["conditions"]) ids.insert(c.at("run_id").get<std::string>());
    CHECK(ids.size() == 30);
    CHECK(plan.at("master_seed") == 7);
    CHECK(plan.contains("config"));

    REQUIRE(run_cli("run " + fx.common(out), fx.log) == 0);
    const auto contents = ledger::read_ledger(out / "ledger.jsonl");
    REQUIRE_FALSE(contents.header.is_null());
    CHECK(contents.header.at("master_seed") == 7);
    REQUIRE(contents.responses.size() == 30);
    for (const auto& r : contents.responses) {
      CHECK(r.status == agent::RunStatus::ok);
      CHECK(r.attempts == 1);
      CHECK(r.wall_time == 0.0);
      CHECK(fs::exists(out / r.workspace / "conclusion.txt"));
      CHECK(fs::exists(out / r.workspace / "info.json"));
    }

    // A second run without --resume refuses to touch the ledger.
    CHECK(run_cli("run " + fx.common(out), fx.log) == 2);

    REQUIRE(run_cli("analyze " + fx.common(out), fx.log) == 0);
    const json report = json::parse(slurp(out / "reports" / "report_demo.json"));
    CHECK(report.at("schema_version") == 1);
    CHECK(report.at("dataset_id") == "demo");
    CHECK(report.at("variant") == "standard");
    CHECK(report.at("regime") == "passed_both");
    CHECK(report.at("regime_display") == "Passed both checks");
    CHECK(report.at("checks_passed") == "Both");
    CHECK(report.at("precise_null_override") == false);
    CHECK(report.at("bootstrap").at("samples") == 1500);
    CHECK(report.at("bootstrap").at("p_value").get<double>() < 0.05);
    CHECK(report.at("overlap").at("ovl").get<double>() < 0.2);
    CHECK(report.at("alt").at("n") == 15);
    CHECK(report.at("null").at("n") == 15);
    CHECK(report.at("alt").at("counts").at("ok") == 15);
    CHECK(report.at("eta_squared_alt").is_number());
    CHECK(report.at("null_source").is_null());

    const std::string summary = slurp(out / "reports" / "summary.md");
    CHECK(summary.find("| Dataset | Null Mean (SD) | Alt Mean (SD) | p-Value | OVL | Checks "
                       "Passed |") != std::string::npos);
    CHECK(summary.find("| demo |") != std::string::npos);
    CHECK(summary.find("| Both |") != std::string::npos);

    const std::string kde = slurp(out / "plots" / "kde_demo.csv");
    CHECK(kde.rfind("x,density_alt,density_null\n", 0) == 0);
    CHECK(std::count(kde.begin(), kde.end(), '\n') == 2049);  // header + 2048 grid rows
    const std::string scatter = slurp(out / "plots" / "scatter.csv");
    CHECK(scatter.find("demo,") != std::string::npos);
    CHECK(scatter.find(",passed_both") != std::string::npos);

    REQUIRE(run_cli("calibrate " + fx.common(out) + " --replicates 40", fx.log) == 0);
    const json calib = json::parse(slurp(out / "calibrate" / "calibration_demo.json"));
    CHECK(calib.at("replicates") == 40);
    CHECK(calib.at("rejection_rate_unblocked").get<double>() <= 1.0);
    CHECK(calib.at("blocks").size() == 5);  // one block per stressor kind
    const std::string qq = slurp(out / "calibrate" / "qq_demo.csv");
    CHECK(std::count(qq.begin(), qq.end(), '\n') == 41);

    REQUIRE(run_cli("converge " + fx.common(out) + " --sizes 2 3 --mode alt_only", fx.log) == 0);
    const json conv = json::parse(slurp(out / "converge" / "convergence_demo.json"));
    CHECK(conv.at("mode") == "alt_only");
    CHECK(conv.at("component") == "full");
    CHECK(conv.at("reference_regime") == "passed_both");
    CHECK(conv.at("bootstrap_samples") == 300);
    REQUIRE(conv.at("points").size() == 2);
    CHECK(conv.at("points")[0].at("repetitions") == 1000);
    const std::string conv_csv = slurp(out / "converge" / "convergence_demo.csv");
    CHECK(conv_csv.rfind("mode,component,size,repetitions,agreement\n", 0) == 0);

    REQUIRE(run_cli("confidence " + fx.common(out), fx.log) == 0);
    const auto with_conf = ledger::read_ledger(out / "ledger.jsonl");
    CHECK(with_conf.confidences.size() == 30);
    const json conf = json::parse(slurp(out / "confidence" / "confidence_demo.json"));
    CHECK(conf.at("pairs") == 30);
    CHECK(conf.at("unmatched") == json::array());
    const std::string pairs = slurp(out / "confidence" / "pairs_demo.csv");
    CHECK(pairs.rfind("run_id,arm,confidence_fraction,exceedance\n", 0) == 0);
    CHECK(std::count(pairs.begin(), pairs.end(), '\n') == 31);

    // The confidence pass is idempotent.
    REQUIRE(run_cli("confidence " + fx.common(out), fx.log) == 0);
    CHECK(slurp(fx.log).find("0 new confidence runs") != std::string::npos);
    CHECK(ledger::read_ledger(out / "ledger.jsonl").confidences.size() == 30);
  }
}

TEST_CASE("pipeline determinism and resumption") {
  Fixture fx("pcscheck_pipeline_determinism");
  const fs::path out1 = fx.root / "out1";
  const fs::path out2 = fx.root / "out2";

  for (const fs::path& out : {out1, out2}) {
    REQUIRE(run_cli("plan " + fx.common(out), fx.log) == 0);
    REQUIRE(run_cli("run " + fx.common(out), fx.log) == 0);
    REQUIRE(run_cli("analyze " + fx.common(out), fx.log) == 0);
  }
  CHECK(slurp(out1 / "reports" / "report_demo.json") ==
        slurp(out2 / "reports" / "report_demo.json"));
  CHECK(slurp(out1 / "reports" / "summary.md") == slurp(out2 / "reports" / "summary.md"));
  CHECK(slurp(out1 / "plots" / "kde_demo.csv") == slurp(out2 / "plots" / "kde_demo.csv"));

  // Interrupt-and-resume reproduces the uninterrupted ledger byte for byte.
  const std::string full_ledger = slurp(out1 / "ledger.jsonl");
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < full_ledger.size()) {
    const std::size_t nl = full_ledger.find('\n', pos);
    lines.push_back(full_ledger.substr(pos, nl - pos + 1));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == 31);  // header + 30 responses
  std::string truncated;
  for (std::size_t i = 0; i < 11; ++i) truncated += lines[i];
  {
    std::ofstream rewrite(out1 / "ledger.jsonl", std::ios::binary | std::ios::trunc);
    rewrite << truncated;
  }
  REQUIRE(run_cli("run " + fx.common(out1) + " --resume", fx.log) == 0);
  CHECK(slurp(out1 / "ledger.jsonl") == full_ledger);

  // Resuming a complete ledger is a no-op.
  REQUIRE(run_cli("run " + fx.common(out1) + " --resume", fx.log) == 0);
  CHECK(slurp(fx.log).find("nothing to do") != std::string::npos);
  CHECK(slurp(out1 / "ledger.jsonl") == full_ledger);
}

TEST_CASE("simulate-pve emits synthetic datasets and alt-only plans") {
  Fixture fx("pcscheck_pipeline_pve");
  const fs::path out = fx.root / "out";
  REQUIRE(run_cli("simulate-pve " + fx.common(out) + " --pve 0 0.5 1", fx.log) == 0);

  for (const std::string& tag : {std::string("0"), std::string("0.5"), std::string("1")}) {
    const std::string id = "demo@pve" + tag;
    CHECK(fs::exists(out / "pve" / "datasets" / id / (id + ".csv")));
    CHECK(fs::exists(out / "pve" / "datasets" / id / "info.json"));
    const json plan = json::parse(slurp(out / "pve" / ("plan_pve" + tag + ".json")));
    REQUIRE(plan.at("conditions").size() == 10);  // 5 kinds x 2 replicates, alt only
    for (const auto& c : plan["conditions"]) CHECK(c.at("arm") == "alt");
  }
  const json derived = json::parse(slurp(out / "pve" / "config_pve.json"));
  CHECK(derived.at("datasets").size() == 3);
  CHECK(derived.at("replicates") == 2);

  // PVE = 1 keeps the fitted values exactly: refit residuals are zero, so
  // the synthetic outcome column must be a deterministic function of x.
  const json info = json::parse(slurp(out / "pve" / "datasets" / "demo@pve1" / "info.json"));
  CHECK(info.at("extra").at("synthetic").at("pve") == 1.0);
  CHECK(info.at("extra").at("synthetic").at("source_dataset") == "demo");

  // The derived config itself drives the pipeline end to end.
  REQUIRE(run_cli("plan --config '" + (out / "pve" / "config_pve.json").string() + "'", fx.log) ==
          0);
  const json plan = json::parse(slurp(out / "pve" / "plan.json"));
  CHECK(plan.at("conditions").size() == 60);  // 3 datasets x 5 kinds x 2 arms x 2 replicates
}

TEST_CASE("cli maps failures to documented exit codes") {
  Fixture fx("pcscheck_pipeline_exits");
  const fs::path out = fx.root / "out";

  // Unparseable config -> validation error.
  tabular::write_file(fx.root / "broken.json", "{\n");
  CHECK(run_cli("plan --config '" + (fx.root / "broken.json").string() + "'", fx.log) == 2);

  // Missing plan / missing ledger -> validation error.
  CHECK(run_cli("run " + fx.common(out), fx.log) == 2);
  CHECK(run_cli("analyze " + fx.common(out), fx.log) == 2);
  CHECK(run_cli("converge " + fx.common(out), fx.log) == 2);

  // A ledger whose null arm is empty -> insufficient data, naming the arm.
  fs::create_directories(out);
  const fs::path thin = out / "ledger.jsonl";
  ledger::append_line(thin, ledger::make_header(7, json::object(), json::object()));
  for (int i = 0; i < 3; ++i) {
    perturb::RunCondition cond{"demo", perturb::PerturbationKind::identity, perturb::Arm::alt, i,
                               77u + static_cast<std::uint64_t>(i)};
    agent::ResponseRecord rec;
    rec.run_id = cond.run_id();
    rec.condition = cond;
    rec.score = 70 + i;
    rec.explanation = "stub";
    rec.status = agent::RunStatus::ok;
    ledger::append_line(thin, ledger::response_to_json(rec));
  }
  CHECK(run_cli("analyze " + fx.common(out), fx.log) == 3);
  CHECK(slurp(fx.log).find("null arm") != std::string::npos);

  // Unknown variant flag value -> CLI-level usage error.
  CHECK(run_cli("analyze " + fx.common(out) + " --variant sideways", fx.log) != 0);
}

TEST_CASE("seed and alpha overrides flow through analyze") {
  Fixture fx("pcscheck_pipeline_overrides");
  const fs::path out = fx.root / "out";
  REQUIRE(run_cli("plan " + fx.common(out), fx.log) == 0);
  REQUIRE(run_cli("run " + fx.common(out), fx.log) == 0);
  REQUIRE(run_cli("analyze " + fx.common(out) + " --alpha 0.01 --tau 0.35", fx.log) == 0);
  const json report = json::parse(slurp(out / "reports" / "report_demo.json"));
  CHECK(report.at("alpha") == 0.01);
  CHECK(report.at("tau") == 0.35);
}
