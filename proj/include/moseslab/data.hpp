#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "moseslab/model.hpp"
#include "moseslab/oracle.hpp"
#include "moseslab/space.hpp"

namespace moseslab {

// Append-only sequence of measurements. Task grouping is recovered by scan;
// stores here stay small enough that no index is worth maintaining.
struct RecordStore {
  std::vector<MeasurementRecord> records;
};

// Task ids in first-appearance order.
std::vector<std::string> store_task_ids(const RecordStore& store);
std::vector<std::size_t> store_task_rows(const RecordStore& store, const std::string& task_id);

// Uniform random configurations per task, measured through the oracle, with
// a store-global seq. Deterministic per seed.
RecordStore generate_dataset(const DeviceSpec& device, const std::vector<TaskSpec>& tasks,
                             int samples_per_task, std::uint64_t seed);

// Line-delimited records: one object per line with fields task_id, values,
// throughput_gflops, latency_ms, wall_cost_ms, device_id, seq. UTF-8, LF.
void write_records(const RecordStore& store, const std::string& path);
RecordStore read_records(const std::string& path);

// Single-record JSON forms, shared by the record file and run reports.
std::string record_to_json_line(const MeasurementRecord& rec);
MeasurementRecord record_from_json_line(const std::string& line, const std::string& origin);

struct BatchPlan {
  std::vector<RankingBatch> batches;
  std::int64_t dropped_singletons = 0;
};

// One epoch's batches: per task, records are shuffled and chunked to
// batch_size; chunks of one row are dropped (nothing to rank); finally the
// batch order itself is shuffled. Every kept record appears exactly once.
BatchPlan make_ranking_batches(const RecordStore& store, const std::vector<TaskSpec>& tasks,
                               int batch_size, std::uint64_t seed);

// Feature rows of `size` records sampled without replacement (the whole
// store if it is smaller), for the adversary's replay buffer.
Eigen::MatrixXd sample_replay_features(const RecordStore& store,
                                       const std::vector<TaskSpec>& tasks, int size,
                                       std::uint64_t seed);

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, const std::string& id);

}  // namespace moseslab
