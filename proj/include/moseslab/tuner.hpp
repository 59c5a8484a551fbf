#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moseslab/controller.hpp"
#include "moseslab/data.hpp"
#include "moseslab/lottery.hpp"
#include "moseslab/metrics.hpp"
#include "moseslab/model.hpp"
#include "moseslab/oracle.hpp"
#include "moseslab/search.hpp"
#include "moseslab/space.hpp"

namespace moseslab {

// Raw measures one default configuration and stops. RandomInit searches from
// a fresh random model with unmasked updates. PretrainOnly searches with the
// transferred model frozen. VanillaFinetune searches with unmasked updates
/// on the transferred model. Moses searches with partitioned updates: masked
// gradient steps plus variant decay, optionally the adversarial term.
enum class StrategyKind { Raw, RandomInit, PretrainOnly, VanillaFinetune, Moses };

std::string strategy_name(StrategyKind kind);
StrategyKind parse_strategy(const std::string& name);

struct LotterySettings {
  PartitionMode mode = PartitionMode::Ratio;
  double value = 0.5;  // rho or theta
};

struct TuneBudget {
  int trials_per_task = 64;
  double train_fraction = 0.9;  // controller p
  int num_batches = 5;          // controller q
  double cv_threshold = 0.05;   // controller tau
  SearchParams search;          // seed field ignored; streams derive per batch
  TrainHyper hyper;
  LotterySettings lottery;
  bool adversary = true;  // Moses only
  int replay_size = 256;
};

struct ControllerTrace {
  std::vector<double> batch_means;
  std::vector<double> cvs;  // NaN where fewer than two means existed
  int termination_batch = -1;  // measured-batch count when the flag latched
  int measured_trials = 0;
  int prediction_trials = 0;
  int unspent_trials = 0;
  std::vector<double> predicted_scores;  // prediction-only trials
};

struct TaskResult {
  std::string task_id;
  Configuration best_config;
  double best_latency_ms = 0.0;
  double wall_cost_ms = 0.0;
  std::vector<MeasurementRecord> records;
  ControllerTrace trace;
};

struct TuneReport {
  std::string strategy;
  std::string source_device_id;
  std::string target_device_id;
  std::uint64_t seed = 0;
  std::vector<TaskResult> tasks;
  double end_latency_ms = 0.0;  // sum of per-task bests
  double search_cost_ms = 0.0;  // sum of per-task wall costs
  std::string config_echo_json;
};

struct PretrainLog {
  std::vector<double> epoch_mean_loss;
  std::int64_t dropped_singletons = 0;
};

// Offline source-model training: momentum gradient descent on per-task
// ranking batches, re-shuffled every epoch off the seed.
CostModelParams pretrain(const RecordStore& store, const std::vector<TaskSpec>& tasks,
                         const TrainHyper& hyper, PretrainLog* log = nullptr);

// One task's online loop: per measured batch evolve, pick unseen candidates,
// measure them, feed the controller the batch's mean predicted score, then
// update the model per strategy. Once the controller latches, the remaining
// measured batches are left unspent; the prediction-only tail is scored but
// never measured. Moses with the adversary on needs the source records the
// replay buffer is drawn from.
TaskResult tune_task(StrategyKind strategy, const CostModelParams& initial_model,
                     const DeviceSpec& device, const TaskSpec& task, const TuneBudget& budget,
                     std::uint64_t seed, const RecordStore* source_store = nullptr,
                     const std::vector<TaskSpec>* source_tasks = nullptr);

// All tasks on one device under one strategy.
TuneReport tune_all(StrategyKind strategy, const CostModelParams& initial_model,
                    const std::string& source_device_id, const DeviceSpec& target,
                    const std::vector<TaskSpec>& tasks, const TuneBudget& budget,
                    std::uint64_t seed, const RecordStore* source_store = nullptr);

struct StrategyMedians {
  std::string strategy;
  double gain = 0.0;
  double reduction = 0.0;
  double cmat_percent = 0.0;
  double end_latency_ms = 0.0;
  double search_cost_ms = 0.0;
};

struct ComparisonReport {
  std::vector<TuneReport> runs;          // strategy-major, then seed order
  std::vector<MetricRow> rows;           // one per run, reference = VanillaFinetune
  std::vector<StrategyMedians> medians;  // across seeds, per strategy
  std::string config_echo_json;
};

struct CompareSettings {
  std::vector<StrategyKind> strategies;
  DeviceSpec source_device;
  DeviceSpec target_device;
  std::vector<TaskSpec> tasks;
  TuneBudget budget;
  std::vector<std::uint64_t> seeds;
  int samples_per_task = 6000;
  std::string config_echo_json;  // carried into every run report
};

// Generates the source dataset, pretrains once, then fans the strategy x
// seed grid out over a worker pool capped by MOSES_LAB_THREADS. VanillaFinetune
// must be in the strategy list: it anchors gain and reduction.
ComparisonReport compare_strategies(const CompareSettings& settings);

std::string report_to_json(const TuneReport& report);
TuneReport report_from_json(const std::string& text, const std::string& origin);

}  // namespace moseslab
