#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "moseslab/cli.hpp"
#include "moseslab/data.hpp"
#include "moseslab/metrics.hpp"
#include "moseslab/model.hpp"
#include "moseslab/tuner.hpp"

using namespace moseslab;
namespace fs = std::filesystem;

namespace {

// One scratch tree per suite run; tests share the artifacts built earlier in
// the fixture to keep the expensive steps (pretraining) to one pass.
struct CliSandbox {
  fs::path dir;

  CliSandbox() : dir(fs::temp_directory_path() / "moseslab_cli_test") {
    fs::remove_all(dir);
    fs::create_directories(dir);
    write(device_path(), R"({
      "id": "dev",
      "peak_gflops": 2000.0,
      "parallel_units": 32.0,
      "vector_lanes": 8.0,
      "cache_bytes": 2.0e6,
      "measure_overhead_ms": 1.5,
      "noise_std": 0.05,
      "repeats": 3
    })");
    write(tasks_path(), R"({
      "tasks": [
        {"id": "ta", "work_gflops": 1.0, "bytes_per_unit": 4.0,
         "ideal_log2_tiles": 6.0, "ideal_log2_unroll": 3.0}
      ]
    })");
    write(two_tasks_path(), R"({
      "tasks": [
        {"id": "ta", "work_gflops": 1.0, "bytes_per_unit": 4.0,
         "ideal_log2_tiles": 6.0, "ideal_log2_unroll": 3.0},
        {"id": "tb", "work_gflops": 0.5, "bytes_per_unit": 6.0,
         "ideal_log2_tiles": 9.0, "ideal_log2_unroll": 5.0}
      ]
    })");
  }
  ~CliSandbox() { fs::remove_all(dir); }

  std::string device_path() const { return (dir / "device.json").string(); }
  std::string tasks_path() const { return (dir / "tasks.json").string(); }
  std::string two_tasks_path() const { return (dir / "tasks2.json").string(); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write(const std::string& p, const std::string& text) const {
    std::ofstream out(p, std::ios::binary);
    out << text;
  }
  std::string read(const std::string& p) const {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }
};

const CliSandbox& sandbox() {
  static CliSandbox box;
  return box;
}

int run(std::vector<std::string> args) { return run_command(args); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help exits cleanly, missing subcommand does not") {
  CHECK(run({"--help"}) == 0);
  CHECK(run({}) == 1);
  CHECK(run({"frobnicate"}) == 1);
}

TEST_CASE("partition flags are mutually exclusive and moses demands one") {
  CHECK(run({"tune", "--device", "x", "--tasks", "x", "--strategy", "moses", "--report", "x",
             "--ratio", "0.5", "--threshold", "0.2"}) == 1);
  CHECK(run({"tune", "--device", "x", "--tasks", "x", "--strategy", "moses", "--report", "x"}) ==
        1);
  CHECK(run({"tune", "--device", "x", "--tasks", "x", "--strategy", "zen", "--report", "x"}) ==
        1);
}

TEST_CASE("gen-dataset writes a readable record file") {
  const CliSandbox& box = sandbox();
  const std::string out = box.path("source.jsonl");
  CHECK(run({"gen-dataset", "--device", box.device_path(), "--tasks", box.two_tasks_path(),
             "--samples", "12", "--seed", "1", "--out", out}) == 0);
  const RecordStore store = read_records(out);
  CHECK(store.records.size() == 24);
  CHECK(store.records.front().device_id == "dev");
}

TEST_CASE("gen-dataset surfaces file problems as exit 2") {
  const CliSandbox& box = sandbox();
  box.write(box.path("broken.json"), "{ not json");
  CHECK(run({"gen-dataset", "--device", box.path("broken.json"), "--tasks", box.tasks_path(),
             "--out", box.path("x.jsonl")}) == 2);
  CHECK(run({"gen-dataset", "--device", box.path("absent.json"), "--tasks", box.tasks_path(),
             "--out", box.path("x.jsonl")}) == 2);
}

TEST_CASE("pretrain writes a loadable model and a log with echoed defaults") {
  const CliSandbox& box = sandbox();
  const std::string model = box.path("model.bin");
  const std::string log = box.path("train_log.json");
  REQUIRE(fs::exists(box.path("source.jsonl")));
  CHECK(run({"pretrain", "--dataset", box.path("source.jsonl"), "--tasks", box.two_tasks_path(),
             "--seed", "2", "--out", model, "--log", log}) == 0);
  const CostModelParams params = load_model(model);
  CHECK(param_count(params) == 271873);
  const nlohmann::json doc = nlohmann::json::parse(box.read(log));
  CHECK(doc["config_echo"]["epochs"].get<int>() == 30);
  CHECK(doc["config_echo"]["lr"].get<double>() == 0.001);
  CHECK(doc["config_echo"]["momentum"].get<double>() == 0.9);
  CHECK(doc["epoch_mean_loss"].size() == 30);
  CHECK(doc["epoch_mean_loss"][0].get<double>() > 0.5);
  CHECK(doc["dropped_singletons"].get<std::int64_t>() == 0);
}

TEST_CASE("tune raw needs no model and echoes the default budget") {
  const CliSandbox& box = sandbox();
  const std::string report_path = box.path("report_raw.json");
  CHECK(run({"tune", "--device", box.device_path(), "--tasks", box.two_tasks_path(),
             "--strategy", "raw", "--seed", "3", "--report", report_path}) == 0);
  const TuneReport report = report_from_json(box.read(report_path), report_path);
  CHECK(report.strategy == "raw");
  CHECK(report.seed == 3);
  REQUIRE(report.tasks.size() == 2);
  CHECK(report.tasks[0].records.size() == 1);
  const nlohmann::json echo = nlohmann::json::parse(report.config_echo_json);
  CHECK(echo["budget"]["trials"].get<int>() == 64);
  CHECK(echo["budget"]["lr"].get<double>() == 0.001);
  CHECK(echo["budget"]["cv_threshold"].get<double>() == 0.05);
  CHECK(echo["budget"]["search"]["population"].get<int>() == 128);
}

TEST_CASE("tune strategies that finetune require a model file") {
  const CliSandbox& box = sandbox();
  CHECK(run({"tune", "--device", box.device_path(), "--tasks", box.tasks_path(), "--strategy",
             "vanilla-finetune", "--report", box.path("r.json")}) == 1);
  CHECK(run({"tune", "--device", box.device_path(), "--tasks", box.tasks_path(), "--strategy",
             "vanilla-finetune", "--model", box.path("missing_model.bin"), "--report",
             box.path("r.json")}) == 2);
}

TEST_CASE("tune vanilla-finetune produces a report") {
  const CliSandbox& box = sandbox();
  REQUIRE(fs::exists(box.path("model.bin")));
  const std::string report_path = box.path("report_vf.json");
  CHECK(run({"tune", "--device", box.device_path(), "--tasks", box.two_tasks_path(),
             "--strategy", "vanilla-finetune", "--model", box.path("model.bin"), "--seed", "3",
             "--trials", "8", "--batches", "2", "--train-fraction", "0.8", "--report",
             report_path}) == 0);
  const TuneReport report = report_from_json(box.read(report_path), report_path);
  CHECK(report.strategy == "vanilla-finetune");
  REQUIRE(report.tasks.size() == 2);
  const ControllerTrace& trace = report.tasks[0].trace;
  CHECK(trace.measured_trials + trace.prediction_trials + trace.unspent_trials == 8);
}

TEST_CASE("tune moses wires the adversary from the source dataset") {
  const CliSandbox& box = sandbox();
  // Adversary on but no source records: a usage error.
  CHECK(run({"tune", "--device", box.device_path(), "--tasks", box.two_tasks_path(),
             "--strategy", "moses", "--model", box.path("model.bin"), "--ratio", "0.5",
             "--report", box.path("r.json")}) == 1);
  const std::string report_path = box.path("report_moses.json");
  CHECK(run({"tune", "--device", box.device_path(), "--tasks", box.two_tasks_path(),
             "--strategy", "moses", "--model", box.path("model.bin"), "--source-dataset",
             box.path("source.jsonl"), "--seed", "3", "--trials", "8", "--batches", "2",
             "--train-fraction", "0.8", "--ratio", "0.5", "--replay-size", "8", "--report",
             report_path}) == 0);
  const TuneReport report = report_from_json(box.read(report_path), report_path);
  CHECK(report.strategy == "moses");
  CHECK(report.source_device_id == "dev");
  const nlohmann::json echo = nlohmann::json::parse(report.config_echo_json);
  CHECK(echo["budget"]["partition_mode"].get<std::string>() == "ratio");
  CHECK(echo["budget"]["partition_value"].get<double>() == 0.5);
  // And --no-adversarial lifts the source requirement.
  CHECK(run({"tune", "--device", box.device_path(), "--tasks", box.two_tasks_path(),
             "--strategy", "moses", "--model", box.path("model.bin"), "--seed", "3", "--trials",
             "8", "--batches", "2", "--train-fraction", "0.8", "--ratio", "0.5",
             "--no-adversarial", "--report", box.path("report_moses_noadv.json")}) == 0);
}

TEST_CASE("report renders the three formats against the vanilla reference") {
  const CliSandbox& box = sandbox();
  REQUIRE(fs::exists(box.path("report_vf.json")));
  REQUIRE(fs::exists(box.path("report_moses.json")));
  const std::string csv_path = box.path("metrics.csv");
  CHECK(run({"report", "--in", box.path("report_vf.json"), box.path("report_moses.json"),
             "--format", "csv", "--out", csv_path}) == 0);
  const std::vector<MetricRow> rows = parse_metrics_csv(box.read(csv_path));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].strategy == "vanilla-finetune");
  CHECK(rows[0].gain == 1.0);
  CHECK(rows[0].reduction == 1.0);
  CHECK(rows[1].strategy == "moses");
  CHECK(rows[1].gain > 0.0);

  CHECK(run({"report", "--in", box.path("report_vf.json"), box.path("report_moses.json"),
             "--format", "markdown", "--out", box.path("metrics.md")}) == 0);
  CHECK(box.read(box.path("metrics.md")).front() == '|');
  CHECK(run({"report", "--in", box.path("report_vf.json"), "--format", "plot-data", "--out",
             box.path("metrics.dat")}) == 0);
  CHECK(box.read(box.path("metrics.dat")).rfind("# vanilla-finetune\n", 0) == 0);

  CHECK(run({"report", "--in", box.path("report_vf.json"), "--format", "yaml", "--out",
             box.path("x.yaml")}) == 1);
  // No vanilla run among the inputs: nothing to anchor against.
  CHECK(run({"report", "--in", box.path("report_moses.json"), "--format", "csv", "--out",
             box.path("x.csv")}) == 2);
}

TEST_CASE("compare writes per-run reports and both csv summaries") {
  const CliSandbox& box = sandbox();
  const std::string out_dir = box.path("cmp");
  CHECK(run({"compare", "--source-device", box.device_path(), "--target-device",
             box.device_path(), "--tasks", box.tasks_path(), "--strategies",
             "vanilla-finetune,raw", "--seeds", "1,2", "--samples", "80", "--epochs", "1",
             "--trials", "8", "--batches", "2", "--train-fraction", "0.8", "--out-dir",
             out_dir}) == 0);
  for (const char* name :
       {"report_vanilla-finetune_seed1.json", "report_vanilla-finetune_seed2.json",
        "report_raw_seed1.json", "report_raw_seed2.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(fs::path(out_dir) / name));
  }
  const std::vector<MetricRow> rows =
      parse_metrics_csv(box.read((fs::path(out_dir) / "metrics.csv").string()));
  REQUIRE(rows.size() == 4);
  for (const auto& row : rows)
    if (row.strategy == "vanilla-finetune") CHECK(row.cmat_percent == 0.0);
  const std::string medians = box.read((fs::path(out_dir) / "medians.csv").string());
  CHECK(medians.find("vanilla-finetune") != std::string::npos);
  CHECK(medians.find("raw") != std::string::npos);
  // The per-run report files feed the report subcommand unchanged.
  CHECK(run({"report", "--in", (fs::path(out_dir) / "report_vanilla-finetune_seed1.json").string(),
             (fs::path(out_dir) / "report_raw_seed1.json").string(), "--format", "csv", "--out",
             box.path("cmp_again.csv")}) == 0);
}

TEST_CASE("compare requires the vanilla reference strategy") {
  const CliSandbox& box = sandbox();
  CHECK(run({"compare", "--source-device", box.device_path(), "--target-device",
             box.device_path(), "--tasks", box.tasks_path(), "--strategies", "raw", "--seeds",
             "1", "--samples", "40", "--epochs", "1", "--trials", "8", "--batches", "2",
             "--out-dir", box.path("cmp2")}) == 2);
}

}  // TEST_SUITE
