#include "moseslab/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "moseslab/errors.hpp"
#include "moseslab/rng.hpp"

namespace moseslab {
namespace {

// Fisher-Yates off one stream; the draw count is fixed by n.
template <class T>
void shuffle_with(std::vector<T>& items, RngStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace

std::vector<std::string> store_task_ids(const RecordStore& store) {
  std::vector<std::string> ids;
  for (const auto& rec : store.records) {
    if (std::find(ids.begin(), ids.end(), rec.task_id) == ids.end()) ids.push_back(rec.task_id);
  }
  return ids;
}

std::vector<std::size_t> store_task_rows(const RecordStore& store, const std::string& task_id) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < store.records.size(); ++i) {
    if (store.records[i].task_id == task_id) rows.push_back(i);
  }
  return rows;
}

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, const std::string& id) {
  for (const auto& task : tasks) {
    if (task.id == id) return task;
  }
  fail(ErrorCode::InvalidTask, "unknown task id " + id);
}

RecordStore generate_dataset(const DeviceSpec& device, const std::vector<TaskSpec>& tasks,
                             int samples_per_task, std::uint64_t seed) {
  if (samples_per_task < 1) fail(ErrorCode::InvalidConfig, "samples_per_task must be positive");
  RecordStore store;
  std::uint64_t seq = 0;
  for (const auto& task : tasks) {
    const ConfigSpace space = build_space(task);
    KeyBuilder key;
    key.add(seed).add("gen").add(task.id);
    RngStream rng(key.value());
    for (int s = 0; s < samples_per_task; ++s) {
      const Configuration cfg = sample_config(space, rng);
      store.records.push_back(measure(device, task, cfg, seed, seq++));
    }
  }
  return store;
}

std::string record_to_json_line(const MeasurementRecord& rec) {
  nlohmann::json j;
  j["task_id"] = rec.task_id;
  j["values"] = rec.values;
  j["throughput_gflops"] = rec.throughput_gflops;
  j["latency_ms"] = rec.latency_ms;
  j["wall_cost_ms"] = rec.wall_cost_ms;
  j["device_id"] = rec.device_id;
  j["seq"] = rec.seq;
  return j.dump();
}

MeasurementRecord record_from_json_line(const std::string& line, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, origin + ": " + e.what());
  }
  const auto need = [&](const char* field) -> const nlohmann::json& {
    if (!j.contains(field))
      fail(ErrorCode::MissingField, origin + ": record missing field '" + std::string(field) + "'");
    return j.at(field);
  };
  MeasurementRecord rec;
  try {
    rec.task_id = need("task_id").get<std::string>();
    rec.values = need("values").get<std::vector<std::int64_t>>();
    rec.throughput_gflops = need("throughput_gflops").get<double>();
    rec.latency_ms = need("latency_ms").get<double>();
    rec.wall_cost_ms = need("wall_cost_ms").get<double>();
    rec.device_id = need("device_id").get<std::string>();
    rec.seq = need("seq").get<std::uint64_t>();
  } catch (const nlohmann::json::type_error& e) {
    fail(ErrorCode::ParseError, origin + ": " + e.what());
  }
  return rec;
}

void write_records(const RecordStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  for (const auto& rec : store.records) out << record_to_json_line(rec) << '\n';
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

RecordStore read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open record file " + path);
  RecordStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    store.records.push_back(
        record_from_json_line(line, path + ":line " + std::to_string(lineno)));
  }
  return store;
}

BatchPlan make_ranking_batches(const RecordStore& store, const std::vector<TaskSpec>& tasks,
                               int batch_size, std::uint64_t seed) {
  if (batch_size < 2) fail(ErrorCode::InvalidConfig, "batch size must be at least 2");
  BatchPlan plan;
  for (const auto& task_id : store_task_ids(store)) {
    const TaskSpec& task = find_task(tasks, task_id);
    std::vector<std::size_t> rows = store_task_rows(store, task_id);
    KeyBuilder key;
    key.add(seed).add("shuffle").add(task_id);
    RngStream rng(key.value());
    shuffle_with(rows, rng);
    for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(rows.size(), start + static_cast<std::size_t>(batch_size));
      const std::size_t n = stop - start;
      if (n < 2) {
        ++plan.dropped_singletons;
        continue;
      }
      RankingBatch batch;
      batch.task_id = task_id;
      batch.features.resize(static_cast<Eigen::Index>(n), kFeatureDim);
      batch.labels.resize(static_cast<Eigen::Index>(n));
      for (std::size_t k = 0; k < n; ++k) {
        const MeasurementRecord& rec = store.records[rows[start + k]];
        batch.features.row(static_cast<Eigen::Index>(k)) =
            encode_features(task, Configuration{rec.values}).transpose();
        batch.labels[static_cast<Eigen::Index>(k)] = rec.throughput_gflops;
      }
      plan.batches.push_back(std::move(batch));
    }
  }
  KeyBuilder okey;
  okey.add(seed).add("order");
  RngStream orng(okey.value());
  shuffle_with(plan.batches, orng);
  return plan;
}

Eigen::MatrixXd sample_replay_features(const RecordStore& store,
                                       const std::vector<TaskSpec>& tasks, int size,
                                       std::uint64_t seed) {
  if (store.records.empty()) fail(ErrorCode::EmptyDataset, "empty record store");
  if (size < 1) fail(ErrorCode::InvalidConfig, "replay size must be positive");
  std::vector<std::size_t> rows(store.records.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  KeyBuilder key;
  key.add(seed).add("replay");
  RngStream rng(key.value());
  shuffle_with(rows, rng);
  const std::size_t n = std::min<std::size_t>(rows.size(), static_cast<std::size_t>(size));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), kFeatureDim);
  for (std::size_t k = 0; k < n; ++k) {
    const MeasurementRecord& rec = store.records[rows[k]];
    const TaskSpec& task = find_task(tasks, rec.task_id);
    out.row(static_cast<Eigen::Index>(k)) =
        encode_features(task, Configuration{rec.values}).transpose();
  }
  return out;
}

}  // namespace moseslab
