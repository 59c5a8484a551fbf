#include "moseslab/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "moseslab/data.hpp"
#include "moseslab/errors.hpp"
#include "moseslab/metrics.hpp"
#include "moseslab/model.hpp"
#include "moseslab/oracle.hpp"
#include "moseslab/rng.hpp"
#include "moseslab/space.hpp"
#include "moseslab/tuner.hpp"

namespace moseslab {

namespace {

using nlohmann::json;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) fail(ErrorCode::IoError, "cannot read " + path);
  return buf.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << content;
  out.flush();
  if (!out.good()) fail(ErrorCode::IoError, "cannot write " + path);
}

void echo_config(const json& echo) { std::cout << echo.dump(2) << "\n"; }

// Flags shared by tune and compare that shape the per-task budget.
struct BudgetFlags {
  int trials = 64;
  double train_fraction = 0.9;
  int num_batches = 5;
  double cv_threshold = 0.05;
  double lr = 0.001;
  double weight_decay = 0.01;
  double beta = 0.01;
  int replay_size = 256;
  bool no_adversarial = false;
  double ratio = 0.0;
  double threshold = 0.0;
  CLI::Option* ratio_opt = nullptr;
  CLI::Option* threshold_opt = nullptr;
};

void add_budget_flags(CLI::App* cmd, BudgetFlags& f) {
  cmd->add_option("--trials", f.trials, "trial budget per task");
  cmd->add_option("--train-fraction", f.train_fraction, "measured share of the budget");
  cmd->add_option("--batches", f.num_batches, "measured batch count");
  cmd->add_option("--cv-threshold", f.cv_threshold, "early-termination CV threshold");
  cmd->add_option("--lr", f.lr, "online learning rate");
  cmd->add_option("--weight-decay", f.weight_decay, "variant decay coefficient");
  cmd->add_option("--beta", f.beta, "adversarial confusion coefficient");
  cmd->add_option("--replay-size", f.replay_size, "source replay rows for the adversary");
  cmd->add_flag("--no-adversarial", f.no_adversarial, "drop the adversarial term");
  f.ratio_opt = cmd->add_option("--ratio", f.ratio, "transferable share, ratio partition");
  f.threshold_opt =
      cmd->add_option("--threshold", f.threshold, "saliency cut, threshold partition");
}

// Moses runs demand an explicit partition unless defaulting is allowed;
// passing both is always a conflict.
LotterySettings resolve_lottery(const BudgetFlags& f, bool moses_selected, bool allow_default) {
  const bool has_ratio = f.ratio_opt->count() > 0;
  const bool has_threshold = f.threshold_opt->count() > 0;
  if (has_ratio && has_threshold)
    fail(ErrorCode::UsageError, "--ratio and --threshold are mutually exclusive");
  LotterySettings lottery;
  if (has_ratio) {
    lottery.mode = PartitionMode::Ratio;
    lottery.value = f.ratio;
  } else if (has_threshold) {
    lottery.mode = PartitionMode::Threshold;
    lottery.value = f.threshold;
  } else if (moses_selected && !allow_default) {
    fail(ErrorCode::UsageError, "strategy moses needs exactly one of --ratio or --threshold");
  }
  return lottery;
}

TuneBudget make_budget(const BudgetFlags& f, const LotterySettings& lottery, std::uint64_t seed) {
  TuneBudget budget;
  budget.trials_per_task = f.trials;
  budget.train_fraction = f.train_fraction;
  budget.num_batches = f.num_batches;
  budget.cv_threshold = f.cv_threshold;
  budget.hyper.learning_rate = f.lr;
  budget.hyper.weight_decay = f.weight_decay;
  budget.hyper.adversary_beta = f.beta;
  budget.hyper.seed = seed;
  budget.lottery = lottery;
  budget.adversary = !f.no_adversarial;
  budget.replay_size = f.replay_size;
  return budget;
}

json budget_echo(const TuneBudget& b) {
  return json{{"trials", b.trials_per_task},
              {"train_fraction", b.train_fraction},
              {"batches", b.num_batches},
              {"cv_threshold", b.cv_threshold},
              {"lr", b.hyper.learning_rate},
              {"weight_decay", b.hyper.weight_decay},
              {"beta", b.hyper.adversary_beta},
              {"replay_size", b.replay_size},
              {"adversarial", b.adversary},
              {"partition_mode", b.lottery.mode == PartitionMode::Ratio ? "ratio" : "threshold"},
              {"partition_value", b.lottery.value},
              {"search",
               json{{"population", b.search.population},
                    {"generations", b.search.generations},
                    {"mutation_count", b.search.mutation_count},
                    {"survivors", b.search.survivors},
                    {"epsilon_random", b.search.epsilon_random}}}};
}

int cmd_gen_dataset(const std::string& device_path, const std::string& tasks_path, int samples,
                    std::uint64_t seed, const std::string& out_path) {
  const DeviceSpec device = load_device(device_path);
  const std::vector<TaskSpec> tasks = load_tasks(tasks_path);
  const RecordStore store = generate_dataset(device, tasks, samples, seed);
  write_records(store, out_path);
  echo_config(json{{"command", "gen-dataset"},
                   {"device", device_path},
                   {"tasks", tasks_path},
                   {"samples", samples},
                   {"seed", seed},
                   {"out", out_path},
                   {"records", store.records.size()}});
  return 0;
}

int cmd_pretrain(const std::string& dataset_path, const std::string& tasks_path, int epochs,
                 double lr, int batch_size, double momentum, double weight_decay,
                 std::uint64_t seed, const std::string& out_path, const std::string& log_path) {
  const RecordStore store = read_records(dataset_path);
  const std::vector<TaskSpec> tasks = load_tasks(tasks_path);
  TrainHyper hyper;
  hyper.learning_rate = lr;
  hyper.weight_decay = weight_decay;
  hyper.max_epochs = epochs;
  hyper.batch_size = batch_size;
  hyper.momentum = momentum;
  hyper.seed = seed;
  PretrainLog log;
  const CostModelParams params = pretrain(store, tasks, hyper, &log);
  save_model(params, out_path);
  const json echo{{"command", "pretrain"},     {"dataset", dataset_path},
                  {"tasks", tasks_path},       {"epochs", epochs},
                  {"lr", lr},                  {"batch_size", batch_size},
                  {"momentum", momentum},      {"weight_decay", weight_decay},
                  {"seed", seed},              {"out", out_path}};
  if (!log_path.empty()) {
    write_text(log_path, json{{"config_echo", echo},
                              {"epoch_mean_loss", log.epoch_mean_loss},
                              {"dropped_singletons", log.dropped_singletons}}
                             .dump(2) +
                             "\n");
  }
  echo_config(echo);
  return 0;
}

int cmd_tune(const std::string& model_path, const std::string& device_path,
             const std::string& tasks_path, const std::string& strategy_name_arg,
             const std::string& source_dataset_path, std::uint64_t seed,
             const BudgetFlags& flags, const std::string& report_path) {
  const StrategyKind strategy = parse_strategy(strategy_name_arg);
  const LotterySettings lottery =
      resolve_lottery(flags, strategy == StrategyKind::Moses, /*allow_default=*/false);
  const TuneBudget budget = make_budget(flags, lottery, seed);

  const DeviceSpec device = load_device(device_path);
  const std::vector<TaskSpec> tasks = load_tasks(tasks_path);

  const bool needs_model = strategy == StrategyKind::PretrainOnly ||
                           strategy == StrategyKind::VanillaFinetune ||
                           strategy == StrategyKind::Moses;
  if (needs_model && model_path.empty())
    fail(ErrorCode::UsageError, "--model is required for strategy " + strategy_name_arg);
  CostModelParams model =
      needs_model
          ? load_model(model_path)
          : init_random({kFeatureDim, 512, 512, 1},
                        KeyBuilder().add(seed).add("random-init").value());

  RecordStore source_store;
  const RecordStore* source_ptr = nullptr;
  std::string source_device_id;
  if (strategy == StrategyKind::Moses && budget.adversary) {
    if (source_dataset_path.empty())
      fail(ErrorCode::UsageError,
           "strategy moses with the adversary on needs --source-dataset (or --no-adversarial)");
    source_store = read_records(source_dataset_path);
    source_ptr = &source_store;
    if (!source_store.records.empty()) source_device_id = source_store.records.front().device_id;
  }

  const json echo{{"command", "tune"},
                  {"model", model_path},
                  {"device", device_path},
                  {"tasks", tasks_path},
                  {"strategy", strategy_name_arg},
                  {"source_dataset", source_dataset_path},
                  {"seed", seed},
                  {"report", report_path},
                  {"budget", budget_echo(budget)}};
  TuneReport report =
      tune_all(strategy, model, source_device_id, device, tasks, budget, seed, source_ptr);
  report.config_echo_json = echo.dump();
  write_text(report_path, report_to_json(report));
  echo_config(echo);
  return 0;
}

int cmd_compare(const std::string& source_device_path, const std::string& target_device_path,
                const std::string& tasks_path, const std::vector<std::string>& strategy_names,
                const std::vector<std::uint64_t>& seeds, int samples, int epochs,
                const BudgetFlags& flags, const std::string& out_dir) {
  CompareSettings settings;
  bool moses_selected = false;
  for (const auto& name : strategy_names) {
    const StrategyKind kind = parse_strategy(name);
    if (kind == StrategyKind::Moses) moses_selected = true;
    settings.strategies.push_back(kind);
  }
  // Compare sweeps ship a canonical half split, so the partition flags are
  // optional here; an explicit flag still wins.
  LotterySettings lottery = resolve_lottery(flags, moses_selected, /*allow_default=*/true);
  if (flags.ratio_opt->count() == 0 && flags.threshold_opt->count() == 0) {
    lottery.mode = PartitionMode::Ratio;
    lottery.value = 0.5;
  }
  settings.source_device = load_device(source_device_path);
  settings.target_device = load_device(target_device_path);
  settings.tasks = load_tasks(tasks_path);
  settings.budget = make_budget(flags, lottery, seeds.empty() ? 0 : seeds.front());
  settings.budget.hyper.max_epochs = epochs;
  settings.seeds = seeds;
  settings.samples_per_task = samples;

  const json echo{{"command", "compare"},
                  {"source_device", source_device_path},
                  {"target_device", target_device_path},
                  {"tasks", tasks_path},
                  {"strategies", strategy_names},
                  {"seeds", seeds},
                  {"samples", samples},
                  {"epochs", epochs},
                  {"out_dir", out_dir},
                  {"budget", budget_echo(settings.budget)}};
  settings.config_echo_json = echo.dump();

  const ComparisonReport report = compare_strategies(settings);

  std::filesystem::create_directories(out_dir);
  for (const auto& run : report.runs) {
    const std::string path =
        out_dir + "/report_" + run.strategy + "_seed" + std::to_string(run.seed) + ".json";
    write_text(path, report_to_json(run));
  }
  write_text(out_dir + "/metrics.csv", build_report(report.rows, ReportFormat::Csv));
  std::string medians = "strategy,gain,reduction,cmat_percent,end_latency_ms,search_cost_ms\n";
  for (const auto& m : report.medians) {
    std::ostringstream row;
    row << m.strategy << "," << m.gain << "," << m.reduction << "," << m.cmat_percent << ","
        << m.end_latency_ms << "," << m.search_cost_ms << "\n";
    medians += row.str();
  }
  write_text(out_dir + "/medians.csv", medians);
  echo_config(echo);
  return 0;
}

int cmd_report(const std::vector<std::string>& in_paths, const std::string& format_name,
               const std::string& out_path) {
  ReportFormat format;
  if (format_name == "csv") format = ReportFormat::Csv;
  else if (format_name == "markdown") format = ReportFormat::Markdown;
  else if (format_name == "plot-data") format = ReportFormat::PlotData;
  else fail(ErrorCode::UsageError, "unknown --format '" + format_name + "'");

  std::vector<TuneReport> reports;
  reports.reserve(in_paths.size());
  for (const auto& path : in_paths) reports.push_back(report_from_json(read_text(path), path));

  const std::string reference_name = strategy_name(StrategyKind::VanillaFinetune);
  auto reference_for = [&](std::uint64_t seed) -> const TuneReport& {
    for (const auto& r : reports)
      if (r.seed == seed && r.strategy == reference_name) return r;
    fail(ErrorCode::MissingReferenceStrategy,
         "no vanilla-finetune report for seed " + std::to_string(seed));
  };
  std::vector<MetricRow> rows;
  for (const auto& r : reports) {
    const auto [gain, reduction] = gain_and_reduction(reference_for(r.seed), r);
    MetricRow row;
    row.strategy = r.strategy;
    row.seed = r.seed;
    row.search_cost_ms = r.search_cost_ms;
    row.end_latency_ms = r.end_latency_ms;
    row.gain = gain;
    row.reduction = reduction;
    row.cmat_percent = cmat(gain, reduction);
    rows.push_back(std::move(row));
  }
  write_text(out_path, build_report(rows, format));
  echo_config(json{{"command", "report"},
                   {"in", in_paths},
                   {"format", format_name},
                   {"out", out_path}});
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale auto-tuning laboratory"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-dataset", "measure random configurations into a record file");
  std::string gen_device, gen_tasks, gen_out;
  int gen_samples = 6000;
  std::uint64_t gen_seed = 0;
  gen->add_option("--device", gen_device, "device spec file")->required();
  gen->add_option("--tasks", gen_tasks, "task set file")->required();
  gen->add_option("--samples", gen_samples, "records per task");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output record file")->required();

  auto* pre = app.add_subcommand("pretrain", "fit the cost model on a record file");
  std::string pre_dataset, pre_tasks, pre_out, pre_log;
  int pre_epochs = 30;
  double pre_lr = 0.001;
  int pre_batch = 512;
  double pre_momentum = 0.9;
  double pre_decay = 0.01;
  std::uint64_t pre_seed = 0;
  pre->add_option("--dataset", pre_dataset, "record file")->required();
  pre->add_option("--tasks", pre_tasks, "task set file")->required();
  pre->add_option("--epochs", pre_epochs, "training epochs");
  pre->add_option("--lr", pre_lr, "learning rate");
  pre->add_option("--batch-size", pre_batch, "records per batch");
  pre->add_option("--momentum", pre_momentum, "momentum coefficient");
  pre->add_option("--weight-decay", pre_decay, "decay coefficient echoed into the model config");
  pre->add_option("--seed", pre_seed, "rng seed");
  pre->add_option("--out", pre_out, "output model file")->required();
  pre->add_option("--log", pre_log, "optional JSON training log");

  auto* tune = app.add_subcommand("tune", "tune one device's tasks under a single strategy");
  std::string tune_model, tune_device, tune_tasks, tune_strategy, tune_source, tune_report;
  std::uint64_t tune_seed = 0;
  BudgetFlags tune_flags;
  tune->add_option("--model", tune_model, "pretrained model file");
  tune->add_option("--device", tune_device, "target device spec file")->required();
  tune->add_option("--tasks", tune_tasks, "task set file")->required();
  tune->add_option("--strategy", tune_strategy,
                   "raw | random-init | pretrain-only | vanilla-finetune | moses")
      ->required();
  tune->add_option("--source-dataset", tune_source, "source records for the adversary replay");
  tune->add_option("--seed", tune_seed, "rng seed");
  tune->add_option("--report", tune_report, "output report file")->required();
  add_budget_flags(tune, tune_flags);

  auto* cmp = app.add_subcommand("compare", "run a strategy grid and score it");
  std::string cmp_source, cmp_target, cmp_tasks, cmp_out;
  std::vector<std::string> cmp_strategies;
  std::vector<std::uint64_t> cmp_seeds;
  int cmp_samples = 6000;
  int cmp_epochs = 30;
  BudgetFlags cmp_flags;
  cmp->add_option("--source-device", cmp_source, "source device spec file")->required();
  cmp->add_option("--target-device", cmp_target, "target device spec file")->required();
  cmp->add_option("--tasks", cmp_tasks, "task set file")->required();
  cmp->add_option("--strategies", cmp_strategies, "strategy list")
      ->required()
      ->delimiter(',');
  cmp->add_option("--seeds", cmp_seeds, "seed list")->required()->delimiter(',');
  cmp->add_option("--samples", cmp_samples, "source records per task");
  cmp->add_option("--epochs", cmp_epochs, "pretraining epochs");
  cmp->add_option("--out-dir", cmp_out, "output directory")->required();
  add_budget_flags(cmp, cmp_flags);

  auto* rep = app.add_subcommand("report", "render metric rows from run reports");
  std::vector<std::string> rep_in;
  std::string rep_format = "csv";
  std::string rep_out;
  rep->add_option("--in", rep_in, "run report files")->required();
  rep->add_option("--format", rep_format, "csv | markdown | plot-data");
  rep->add_option("--out", rep_out, "output file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (gen->parsed())
      return cmd_gen_dataset(gen_device, gen_tasks, gen_samples, gen_seed, gen_out);
    if (pre->parsed())
      return cmd_pretrain(pre_dataset, pre_tasks, pre_epochs, pre_lr, pre_batch, pre_momentum,
                          pre_decay, pre_seed, pre_out, pre_log);
    if (tune->parsed())
      return cmd_tune(tune_model, tune_device, tune_tasks, tune_strategy, tune_source, tune_seed,
                      tune_flags, tune_report);
    if (cmp->parsed())
      return cmd_compare(cmp_source, cmp_target, cmp_tasks, cmp_strategies, cmp_seeds,
                         cmp_samples, cmp_epochs, cmp_flags, cmp_out);
    if (rep->parsed()) return cmd_report(rep_in, rep_format, rep_out);
    fail(ErrorCode::UsageError, "no subcommand given");
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UsageError) {
      std::cerr << "usage error: " << e.what() << "\n";
      return 1;
    }
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace moseslab
