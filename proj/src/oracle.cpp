#include "moseslab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "moseslab/errors.hpp"
#include "moseslab/rng.hpp"

namespace moseslab {

void validate_device(const DeviceSpec& device) {
  if (device.id.empty()) fail(ErrorCode::InvalidConfig, "device id must be non-empty");
  const auto positive = [&](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v))
      fail(ErrorCode::InvalidConfig, "device " + device.id + ": " + what + " must be positive");
  };
  positive(device.peak_gflops, "peak_gflops");
  positive(device.parallel_units, "parallel_units");
  positive(device.vector_lanes, "vector_lanes");
  positive(device.cache_bytes, "cache_bytes");
  if (device.measure_overhead_ms < 0.0 || !std::isfinite(device.measure_overhead_ms))
    fail(ErrorCode::InvalidConfig, "device " + device.id + ": measure_overhead_ms must be non-negative");
  if (device.noise_std < 0.0 || !std::isfinite(device.noise_std))
    fail(ErrorCode::InvalidConfig, "device " + device.id + ": noise_std must be non-negative");
  if (device.repeats < 1)
    fail(ErrorCode::InvalidConfig, "device " + device.id + ": repeats must be at least 1");
}

double shared_factor(const TaskSpec& task, const Configuration& config) {
  const KnobView v = knob_view(task, config);
  const double log_tiles = std::log2(static_cast<double>(v.tile_x * v.tile_y));
  const double tile_term = std::exp(-std::pow(log_tiles - task.ideal_log2_tiles, 2.0) / 8.0);
  const double log_unroll = std::log2(1.0 + static_cast<double>(v.unroll));
  const double unroll_term =
      0.8 + 0.2 * std::exp(-std::pow(log_unroll - task.ideal_log2_unroll, 2.0) / 4.0);
  return tile_term * unroll_term;
}

double device_factor(const DeviceSpec& device, const TaskSpec& task, const Configuration& config) {
  const KnobView v = knob_view(task, config);
  const double p = static_cast<double>(v.parallel);
  const double vec = static_cast<double>(v.vectorize);
  const double u = device.parallel_units;
  const double l = device.vector_lanes;
  const double parallel_term = std::min(p / u, u / p);
  const double vector_term = std::sqrt(std::min(vec / l, l / vec));
  const double footprint = task.bytes_per_unit * static_cast<double>(v.tile_x) *
                           static_cast<double>(v.tile_y) *
                           std::max<double>(1.0, static_cast<double>(v.unroll));
  const double cache_term = footprint <= device.cache_bytes ? 1.0 : device.cache_bytes / footprint;
  return parallel_term * vector_term * cache_term;
}

double clean_latency_ms(const DeviceSpec& device, const TaskSpec& task,
                        const Configuration& config) {
  const double throughput =
      device.peak_gflops * shared_factor(task, config) * device_factor(device, task, config);
  return task.work_gflops / throughput * 1000.0;
}

MeasurementRecord measure(const DeviceSpec& device, const TaskSpec& task,
                          const Configuration& config, std::uint64_t seed, std::uint64_t seq) {
  validate_device(device);
  validate_config(task, config);
  KeyBuilder key;
  key.add(seed);
  key.add(device.id);
  key.add(task.id);
  key.add(config_hash(config));
  RngStream rng(key.value());
  const double eps = rng.gaussian() * device.noise_std;
  const double noise = std::max(0.05, 1.0 + eps);

  MeasurementRecord rec;
  rec.task_id = task.id;
  rec.values = config.values;
  rec.throughput_gflops = device.peak_gflops * shared_factor(task, config) *
                          device_factor(device, task, config) * noise;
  rec.latency_ms = task.work_gflops / rec.throughput_gflops * 1000.0;
  rec.wall_cost_ms = device.measure_overhead_ms + static_cast<double>(device.repeats) * rec.latency_ms;
  rec.device_id = device.id;
  rec.seq = seq;
  return rec;
}

BestConfig true_best(const DeviceSpec& device, const TaskSpec& task, std::uint64_t cap) {
  validate_device(device);
  const ConfigSpace space = build_space(task);
  const auto configs = enumerate_configs(space, cap);
  BestConfig best;
  best.latency_ms = std::numeric_limits<double>::infinity();
  for (const auto& cfg : configs) {
    const double lat = clean_latency_ms(device, task, cfg);
    // Enumeration is lexicographic, so strict < keeps the smallest tie.
    if (lat < best.latency_ms) {
      best.latency_ms = lat;
      best.config = cfg;
    }
  }
  return best;
}

DeviceSpec parse_device(const std::string& text, const std::string& origin) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, origin + ": " + e.what());
  }
  const auto need = [&](const char* field) -> const nlohmann::json& {
    if (!doc.contains(field))
      fail(ErrorCode::MissingField, origin + ": device missing field '" + std::string(field) + "'");
    return doc.at(field);
  };
  DeviceSpec device;
  device.id = need("id").get<std::string>();
  device.peak_gflops = need("peak_gflops").get<double>();
  device.parallel_units = need("parallel_units").get<double>();
  device.vector_lanes = need("vector_lanes").get<double>();
  device.cache_bytes = need("cache_bytes").get<double>();
  device.measure_overhead_ms = need("measure_overhead_ms").get<double>();
  device.noise_std = need("noise_std").get<double>();
  device.repeats = need("repeats").get<int>();
  validate_device(device);
  return device;
}

DeviceSpec load_device(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open device file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_device(buf.str(), path);
}

}  // namespace moseslab
