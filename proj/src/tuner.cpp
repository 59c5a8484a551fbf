#include "moseslab/tuner.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <unordered_set>
#include <utility>

#include "moseslab/errors.hpp"
#include "moseslab/rng.hpp"

namespace moseslab {

namespace {

using nlohmann::json;

Configuration median_default_config(const TaskSpec& task) {
  Configuration config;
  for (const auto& knob : task.knobs)
    config.values.push_back(knob.domain[(knob.domain.size() - 1) / 2]);
  return config;
}

double guarded_cv(const std::vector<double>& means) {
  if (means.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double v : means) mean += v;
  if (mean == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return batch_cv(means);
}

RankingBatch batch_from_measurements(const TaskSpec& task,
                                     const std::vector<MeasurementRecord>& recs,
                                     std::size_t first) {
  RankingBatch batch;
  batch.task_id = task.id;
  const std::size_t n = recs.size() - first;
  std::vector<Configuration> configs;
  configs.reserve(n);
  batch.labels = Eigen::VectorXd(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    configs.push_back(Configuration{recs[first + i].values});
    batch.labels(static_cast<Eigen::Index>(i)) = recs[first + i].throughput_gflops;
  }
  batch.features = encode_batch(task, configs);
  return batch;
}

int thread_budget(std::size_t jobs) {
  unsigned threads = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("MOSES_LAB_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 0)
      fail(ErrorCode::InvalidConfig, std::string("bad MOSES_LAB_THREADS value '") + env + "'");
    if (v > 0) threads = static_cast<unsigned>(v);
  }
  if (threads == 0) threads = 1;
  if (threads > jobs) threads = static_cast<unsigned>(jobs);
  return static_cast<int>(threads);
}

json trace_to_json(const ControllerTrace& trace) {
  json cvs = json::array();
  for (double v : trace.cvs) {
    if (std::isnan(v)) cvs.push_back(nullptr);
    else cvs.push_back(v);
  }
  return json{{"batch_means", trace.batch_means},
              {"cvs", cvs},
              {"termination_batch", trace.termination_batch},
              {"measured_trials", trace.measured_trials},
              {"prediction_trials", trace.prediction_trials},
              {"unspent_trials", trace.unspent_trials},
              {"predicted_scores", trace.predicted_scores}};
}

const json& need(const json& obj, const char* field, const std::string& origin) {
  auto it = obj.find(field);
  if (it == obj.end())
    fail(ErrorCode::MissingField, origin + ": missing field '" + field + "'");
  return *it;
}

ControllerTrace trace_from_json(const json& obj, const std::string& origin) {
  ControllerTrace trace;
  trace.batch_means = need(obj, "batch_means", origin).get<std::vector<double>>();
  for (const auto& v : need(obj, "cvs", origin)) {
    if (v.is_null()) trace.cvs.push_back(std::numeric_limits<double>::quiet_NaN());
    else trace.cvs.push_back(v.get<double>());
  }
  trace.termination_batch = need(obj, "termination_batch", origin).get<int>();
  trace.measured_trials = need(obj, "measured_trials", origin).get<int>();
  trace.prediction_trials = need(obj, "prediction_trials", origin).get<int>();
  trace.unspent_trials = need(obj, "unspent_trials", origin).get<int>();
  trace.predicted_scores = need(obj, "predicted_scores", origin).get<std::vector<double>>();
  return trace;
}

}  // namespace

std::string strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Raw: return "raw";
    case StrategyKind::RandomInit: return "random-init";
    case StrategyKind::PretrainOnly: return "pretrain-only";
    case StrategyKind::VanillaFinetune: return "vanilla-finetune";
    case StrategyKind::Moses: return "moses";
  }
  fail(ErrorCode::InvalidConfig, "unknown strategy kind");
}

StrategyKind parse_strategy(const std::string& name) {
  if (name == "raw") return StrategyKind::Raw;
  if (name == "random-init") return StrategyKind::RandomInit;
  if (name == "pretrain-only") return StrategyKind::PretrainOnly;
  if (name == "vanilla-finetune") return StrategyKind::VanillaFinetune;
  if (name == "moses") return StrategyKind::Moses;
  fail(ErrorCode::UsageError, "unknown strategy '" + name + "'");
}

CostModelParams pretrain(const RecordStore& store, const std::vector<TaskSpec>& tasks,
                         const TrainHyper& hyper, PretrainLog* log) {
  if (store.records.empty()) fail(ErrorCode::EmptyDataset, "no records to pretrain on");
  CostModelParams params = init_random({kFeatureDim, 512, 512, 1}, hyper.seed);
  for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    const std::uint64_t epoch_seed = KeyBuilder()
                                         .add(hyper.seed)
                                         .add("epoch")
                                         .add(static_cast<std::uint64_t>(epoch))
                                         .value();
    BatchPlan plan = make_ranking_batches(store, tasks, hyper.batch_size, epoch_seed);
    if (log != nullptr && epoch == 0) log->dropped_singletons = plan.dropped_singletons;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (const auto& batch : plan.batches) {
      double loss = 0.0;
      GradientSet grads = gradients(params, batch, nullptr, 0.0, &loss);
      apply_update(params, grads, hyper, nullptr, true);
      loss_sum += loss;
      ++loss_count;
    }
    if (log != nullptr)
      log->epoch_mean_loss.push_back(loss_count == 0 ? 0.0
                                                     : loss_sum / static_cast<double>(loss_count));
  }
  return params;
}

TaskResult tune_task(StrategyKind strategy, const CostModelParams& initial_model,
                     const DeviceSpec& device, const TaskSpec& task, const TuneBudget& budget,
                     std::uint64_t seed, const RecordStore* source_store,
                     const std::vector<TaskSpec>* source_tasks) {
  validate_device(device);
  validate_task(task);
  TaskResult result;
  result.task_id = task.id;

  if (strategy == StrategyKind::Raw) {
    const Configuration config = median_default_config(task);
    MeasurementRecord rec = measure(device, task, config, seed, 0);
    result.best_config = config;
    result.best_latency_ms = rec.latency_ms;
    result.wall_cost_ms = rec.wall_cost_ms;
    result.records.push_back(std::move(rec));
    result.trace.measured_trials = 1;
    result.trace.unspent_trials = budget.trials_per_task - 1;
    return result;
  }

  const MeasurementPlan plan =
      plan_split(budget.trials_per_task, budget.train_fraction, budget.num_batches);
  const ConfigSpace space = build_space(task);

  CostModelParams params = initial_model;
  ControllerState ctrl;
  ctrl.cv_threshold = budget.cv_threshold;

  // Moses wires the source replay buffer into a fresh discriminator; the
  // other strategies never touch the adversary.
  AdversaryState adversary{};
  bool use_adversary = false;
  if (strategy == StrategyKind::Moses && budget.adversary) {
    if (source_store == nullptr || source_tasks == nullptr)
      fail(ErrorCode::AdversaryDisabled,
           "adversarial term needs source records; pass them or turn the adversary off");
    const std::uint64_t replay_seed = KeyBuilder().add(seed).add("replay").add(task.id).value();
    Eigen::MatrixXd replay =
        sample_replay_features(*source_store, *source_tasks, budget.replay_size, replay_seed);
    const std::uint64_t adv_seed = KeyBuilder().add(seed).add("adv").add(task.id).value();
    adversary = make_adversary(replay, params.dims[2], adv_seed);
    use_adversary = true;
  }

  std::unordered_set<std::uint64_t> measured_hashes;
  std::uint64_t seq = 0;
  double best_latency = std::numeric_limits<double>::infinity();
  Configuration best_config;
  int unspent = 0;

  for (int b = 0; b < plan.num_batches; ++b) {
    const int want = plan.batch_sizes[static_cast<std::size_t>(b)];
    if (ctrl.terminated) {
      unspent += want;
      continue;
    }
    SearchParams sp = budget.search;
    sp.seed = KeyBuilder()
                  .add(seed)
                  .add("evolve")
                  .add(task.id)
                  .add(static_cast<std::uint64_t>(b))
                  .value();
    const std::vector<ScoredCandidate> population = evolve(params, space, sp);
    const std::vector<ScoredCandidate> batch = select_batch(population, measured_hashes, want);
    unspent += want - static_cast<int>(batch.size());
    if (batch.empty()) continue;

    const std::size_t first = result.records.size();
    double score_sum = 0.0;
    for (const auto& cand : batch) {
      MeasurementRecord rec = measure(device, task, cand.config, seed, seq++);
      result.wall_cost_ms += rec.wall_cost_ms;
      if (rec.latency_ms < best_latency) {
        best_latency = rec.latency_ms;
        best_config = cand.config;
      }
      measured_hashes.insert(config_hash(cand.config));
      result.records.push_back(std::move(rec));
      score_sum += cand.score;
    }
    should_terminate(ctrl, score_sum / static_cast<double>(batch.size()));
    result.trace.cvs.push_back(guarded_cv(ctrl.batch_means));
    if (ctrl.terminated && result.trace.termination_batch < 0)
      result.trace.termination_batch = static_cast<int>(ctrl.batch_means.size());

    if (strategy == StrategyKind::PretrainOnly) continue;
    if (batch.size() < 2) continue;  // no ranking pair to learn from
    const RankingBatch rb = batch_from_measurements(task, result.records, first);
    if (strategy == StrategyKind::Moses) {
      const AdversaryState* advp = use_adversary ? &adversary : nullptr;
      const double beta = use_adversary ? budget.hyper.adversary_beta : 0.0;
      GradientSet grads = gradients(params, rb, advp, beta);
      if (use_adversary && beta != 0.0) {
        const Eigen::MatrixXd hidden_source =
            penultimate_activations(params, adversary.replay_features);
        const Eigen::MatrixXd hidden_target = penultimate_activations(params, rb.features);
        adversarial_term(adversary, hidden_source, hidden_target, beta);
      }
      const bool normalize = budget.lottery.mode == PartitionMode::Threshold;
      const XiScores xi = xi_scores(params, grads, normalize);
      const ParamMask mask = partition(xi, budget.lottery.mode, budget.lottery.value, b);
      transferable_step(params, grads, mask, budget.hyper.learning_rate);
      variant_decay(params, mask, budget.hyper.learning_rate, budget.hyper.weight_decay);
    } else {
      GradientSet grads = gradients(params, rb, nullptr, 0.0);
      apply_update(params, grads, budget.hyper, nullptr, false);
    }
  }
  result.trace.batch_means = ctrl.batch_means;
  result.trace.measured_trials = static_cast<int>(seq);

  SearchParams sp = budget.search;
  sp.seed = KeyBuilder().add(seed).add("predict").add(task.id).value();
  const std::vector<ScoredCandidate> population = evolve(params, space, sp);
  const std::vector<ScoredCandidate> tail =
      select_batch(population, measured_hashes, plan.prediction_trials);
  unspent += plan.prediction_trials - static_cast<int>(tail.size());
  for (const auto& cand : tail) result.trace.predicted_scores.push_back(cand.score);
  result.trace.prediction_trials = static_cast<int>(tail.size());
  result.trace.unspent_trials = unspent;

  if (result.records.empty())
    fail(ErrorCode::InvalidConfig, "no configuration was measured for task " + task.id);
  result.best_config = best_config;
  result.best_latency_ms = best_latency;
  return result;
}

TuneReport tune_all(StrategyKind strategy, const CostModelParams& initial_model,
                    const std::string& source_device_id, const DeviceSpec& target,
                    const std::vector<TaskSpec>& tasks, const TuneBudget& budget,
                    std::uint64_t seed, const RecordStore* source_store) {
  TuneReport report;
  report.strategy = strategy_name(strategy);
  report.source_device_id = source_device_id;
  report.target_device_id = target.id;
  report.seed = seed;
  for (const auto& task : tasks) {
    TaskResult tr =
        tune_task(strategy, initial_model, target, task, budget, seed, source_store, &tasks);
    report.end_latency_ms += tr.best_latency_ms;
    report.search_cost_ms += tr.wall_cost_ms;
    report.tasks.push_back(std::move(tr));
  }
  return report;
}

ComparisonReport compare_strategies(const CompareSettings& settings) {
  if (settings.seeds.empty()) fail(ErrorCode::InvalidConfig, "need at least one seed");
  if (settings.tasks.empty()) fail(ErrorCode::InvalidConfig, "need at least one task");
  if (settings.strategies.empty()) fail(ErrorCode::InvalidConfig, "need at least one strategy");
  bool has_reference = false;
  for (StrategyKind s : settings.strategies)
    if (s == StrategyKind::VanillaFinetune) has_reference = true;
  if (!has_reference)
    fail(ErrorCode::MissingReferenceStrategy,
         "vanilla-finetune anchors gain and reduction and must be in the strategy list");
  validate_device(settings.source_device);
  validate_device(settings.target_device);

  if (settings.samples_per_task < 10 * settings.budget.trials_per_task)
    std::fprintf(stderr,
                 "warning: %d source samples per task is under 10x the %d online trials; "
                 "the offline store should dwarf the online set\n",
                 settings.samples_per_task, settings.budget.trials_per_task);

  const RecordStore store = generate_dataset(settings.source_device, settings.tasks,
                                             settings.samples_per_task,
                                             settings.budget.hyper.seed);
  const CostModelParams pretrained = pretrain(store, settings.tasks, settings.budget.hyper);

  struct Job {
    StrategyKind strategy;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (StrategyKind s : settings.strategies)
    for (std::uint64_t seed : settings.seeds) jobs.push_back({s, seed});

  std::vector<TuneReport> runs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        const Job& job = jobs[i];
        CostModelParams model = pretrained;
        if (job.strategy == StrategyKind::RandomInit) {
          const std::uint64_t init_seed =
              KeyBuilder().add(job.seed).add("random-init").value();
          model = init_random(pretrained.dims, init_seed);
        }
        runs[i] = tune_all(job.strategy, model, settings.source_device.id,
                           settings.target_device, settings.tasks, settings.budget, job.seed,
                           &store);
        runs[i].config_echo_json = settings.config_echo_json;
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const int threads = thread_budget(jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  ComparisonReport report;
  report.config_echo_json = settings.config_echo_json;
  report.runs = std::move(runs);

  auto reference_for = [&](std::uint64_t seed) -> const TuneReport& {
    for (const auto& run : report.runs)
      if (run.seed == seed && run.strategy == strategy_name(StrategyKind::VanillaFinetune))
        return run;
    fail(ErrorCode::MissingReferenceStrategy,
         "no vanilla-finetune run for seed " + std::to_string(seed));
  };
  for (const auto& run : report.runs) {
    const TuneReport& ref = reference_for(run.seed);
    const auto [gain, reduction] = gain_and_reduction(ref, run);
    MetricRow row;
    row.strategy = run.strategy;
    row.seed = run.seed;
    row.search_cost_ms = run.search_cost_ms;
    row.end_latency_ms = run.end_latency_ms;
    row.gain = gain;
    row.reduction = reduction;
    row.cmat_percent = cmat(gain, reduction);
    report.rows.push_back(std::move(row));
  }
  for (StrategyKind s : settings.strategies) {
    const std::string name = strategy_name(s);
    std::vector<double> gains, reductions, cmats, latencies, costs;
    for (const auto& row : report.rows) {
      if (row.strategy != name) continue;
      gains.push_back(row.gain);
      reductions.push_back(row.reduction);
      cmats.push_back(row.cmat_percent);
      latencies.push_back(row.end_latency_ms);
      costs.push_back(row.search_cost_ms);
    }
    StrategyMedians med;
    med.strategy = name;
    med.gain = median(gains);
    med.reduction = median(reductions);
    med.cmat_percent = median(cmats);
    med.end_latency_ms = median(latencies);
    med.search_cost_ms = median(costs);
    report.medians.push_back(std::move(med));
  }
  return report;
}

std::string report_to_json(const TuneReport& report) {
  json tasks = json::array();
  for (const auto& tr : report.tasks) {
    json records = json::array();
    for (const auto& rec : tr.records) records.push_back(json::parse(record_to_json_line(rec)));
    tasks.push_back(json{{"task_id", tr.task_id},
                         {"best_values", tr.best_config.values},
                         {"best_latency_ms", tr.best_latency_ms},
                         {"wall_cost_ms", tr.wall_cost_ms},
                         {"records", records},
                         {"trace", trace_to_json(tr.trace)}});
  }
  json obj{{"strategy", report.strategy},
           {"source_device_id", report.source_device_id},
           {"target_device_id", report.target_device_id},
           {"seed", report.seed},
           {"end_latency_ms", report.end_latency_ms},
           {"search_cost_ms", report.search_cost_ms},
           {"tasks", tasks}};
  if (report.config_echo_json.empty()) obj["config_echo"] = nullptr;
  else obj["config_echo"] = json::parse(report.config_echo_json);
  return obj.dump(2) + "\n";
}

TuneReport report_from_json(const std::string& text, const std::string& origin) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, origin + ": " + e.what());
  }
  try {
    TuneReport report;
    report.strategy = need(obj, "strategy", origin).get<std::string>();
    report.source_device_id = need(obj, "source_device_id", origin).get<std::string>();
    report.target_device_id = need(obj, "target_device_id", origin).get<std::string>();
    report.seed = need(obj, "seed", origin).get<std::uint64_t>();
    report.end_latency_ms = need(obj, "end_latency_ms", origin).get<double>();
    report.search_cost_ms = need(obj, "search_cost_ms", origin).get<double>();
    const json& echo = need(obj, "config_echo", origin);
    if (!echo.is_null()) report.config_echo_json = echo.dump();
    for (const auto& t : need(obj, "tasks", origin)) {
      TaskResult tr;
      tr.task_id = need(t, "task_id", origin).get<std::string>();
      tr.best_config.values = need(t, "best_values", origin).get<std::vector<std::int64_t>>();
      tr.best_latency_ms = need(t, "best_latency_ms", origin).get<double>();
      tr.wall_cost_ms = need(t, "wall_cost_ms", origin).get<double>();
      for (const auto& r : need(t, "records", origin))
        tr.records.push_back(record_from_json_line(r.dump(), origin));
      tr.trace = trace_from_json(need(t, "trace", origin), origin);
      report.tasks.push_back(std::move(tr));
    }
    return report;
  } catch (const json::type_error& e) {
    fail(ErrorCode::ParseError, origin + ": " + e.what());
  }
}

}  // namespace moseslab
